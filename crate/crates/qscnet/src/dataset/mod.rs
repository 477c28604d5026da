//! Source material handling: taxonomy and vocabularies, directory
//! scanning, stem assembly, clip/query pools, the random-mix training
//! sampler, and a miniature synthetic corpus for tests and smoke runs.

pub mod pools;
pub mod sampler;
pub mod scan;
pub mod stems;
pub mod taxonomy;
pub mod toy;

pub use pools::{build_clip_pool, build_query_pool, ClipRef, Pool, PoolParams};
pub use sampler::{SampleMode, SamplerConfig, TrainingExample, TrainingSampler};
pub use scan::{scan_dataset, ScanReport, SongManifest, Split, SplitLists};
pub use stems::{build_stem_tracks, SongStems, StemStore};
pub use taxonomy::Vocabulary;
pub use toy::{generate_corpus, ToyConfig};
