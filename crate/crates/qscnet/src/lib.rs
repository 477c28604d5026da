//! Query-conditioned music source separation.
//!
//! The crate implements two spectral-masking separators sharing one UNet
//! body: a band-split encoder over complex STFT input, a dual-path recurrent
//! neck that alternates plain and Fourier-domain blocks, and a mirrored
//! decoder emitting unbounded complex masks. The conditioned variant injects
//! a 768-d instrument query through a single FiLM modulation at the encoder
//! output and emits one mask; the multi-stem variant emits one mask per
//! vocabulary stem. Around the models sit the dataset tooling (taxonomy,
//! clip/query pools, seeded augmentation sampler, miniature synthetic
//! corpus), the training loop (RMSE on reconstructed waveforms, Adam, EMA
//! weight averaging) and median-SNR evaluation with chunked inference.
//!
//! Start with the `examples/` directory; each file there exercises one
//! capability end to end. The same flows are reachable through the `qscnet`
//! binary's subcommands.

pub mod audio;
pub mod checkpoint;
pub mod cli;
pub mod conditioning;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod nn;
pub mod spectral;
pub mod training;

pub use audio::{Waveform, SAMPLE_RATE};
pub use error::{Error, Result};
pub use model::config::{HeadKind, ModelConfig};
