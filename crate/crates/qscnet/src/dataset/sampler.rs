//! The random-mix training sampler.
//!
//! Each training example is synthesized, not read from a song: one clip is
//! drawn uniformly per category and the augmented clips are summed into a
//! cacophonous mixture. Augmentations run per stem in a fixed order —
//! channel swap (p = 0.5), sign flip (p = 0.5), gain ~ U(0.25, 1.25) — so
//! the rng stream is stable. In conditioned mode a target category is
//! drawn first (uniform over categories with query material) and a query
//! clip is drawn from its query pool, unaugmented.
//!
//! Randomness is counter-based: example `i` of a run seeds its own
//! ChaCha8 stream from (seed, i), which makes any example reproducible in
//! isolation and lets workers draw disjoint indices without coordination.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::Waveform;
use crate::dataset::pools::{ClipRef, Pool};
use crate::dataset::stems::StemStore;
use crate::error::{bail_data, ensure_input, Result};

#[derive(Debug, Clone, Copy)]
pub struct SamplerConfig {
    pub seed: u64,
    pub swap_prob: f64,
    pub sign_prob: f64,
    pub gain_range: (f32, f32),
    /// Draw the query from a different song than the target clip when the
    /// query pool allows it.
    pub exclude_same_song: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            seed: 0,
            swap_prob: 0.5,
            sign_prob: 0.5,
            gain_range: (0.25, 1.25),
            exclude_same_song: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    MultiStem,
    Conditioned,
}

/// One synthesized training example. `targets` is in vocabulary order for
/// multi-stem mode (absent categories as silence) and a single waveform in
/// conditioned mode.
pub struct TrainingExample {
    pub mixture: Waveform,
    pub targets: Vec<Waveform>,
    /// Conditioned mode: (query audio, target category index).
    pub query: Option<(Waveform, usize)>,
}

pub struct TrainingSampler<'a> {
    store: &'a StemStore,
    clips: &'a Pool,
    queries: &'a Pool,
    cfg: SamplerConfig,
    mode: SampleMode,
    clip_len: usize,
}

impl<'a> TrainingSampler<'a> {
    pub fn new(
        store: &'a StemStore,
        clips: &'a Pool,
        queries: &'a Pool,
        cfg: SamplerConfig,
        mode: SampleMode,
    ) -> Result<Self> {
        ensure_input!(
            clips.per_category.len() == store.vocab.len(),
            "clip pool has {} categories, vocabulary {} has {}",
            clips.per_category.len(),
            store.vocab.name(),
            store.vocab.len()
        );
        ensure_input!(clips.total() > 0, "clip pool is empty");
        let clip_len = clips
            .per_category
            .iter()
            .flatten()
            .map(|c| c.len)
            .next()
            .expect("non-empty pool");
        ensure_input!(
            clips.per_category.iter().flatten().all(|c| c.len == clip_len),
            "clip pool mixes clip lengths"
        );
        if mode == SampleMode::Conditioned {
            ensure_input!(queries.total() > 0, "query pool is empty");
        }
        Ok(TrainingSampler { store, clips, queries, cfg, mode, clip_len })
    }

    pub fn clip_len(&self) -> usize {
        self.clip_len
    }

    pub fn mode(&self) -> SampleMode {
        self.mode
    }

    fn cut(&self, clip: &ClipRef) -> Result<Waveform> {
        let song = self
            .store
            .index_of(&clip.song_id)
            .ok_or_else(|| crate::Error::Data(format!("pool references unknown song {}", clip.song_id)))?;
        let stem = self.store.songs[song].stems[clip.category]
            .as_ref()
            .ok_or_else(|| crate::Error::Data(format!("pool references absent stem in {}", clip.song_id)))?;
        stem.slice(clip.start, clip.len)
    }

    /// Stem augmentation in its fixed order. Consumes rng draws even for
    /// the branches not taken, keeping the stream layout independent of
    /// the outcomes.
    fn augment(&self, w: &mut Waveform, rng: &mut ChaCha8Rng) {
        let swap = rng.gen_bool(self.cfg.swap_prob);
        let flip = rng.gen_bool(self.cfg.sign_prob);
        let (lo, hi) = self.cfg.gain_range;
        let gain = if lo < hi { rng.gen_range(lo..hi) } else { lo };
        if swap {
            w.swap_channels();
        }
        let factor = if flip { -gain } else { gain };
        w.scale(factor);
    }

    /// Build example `index` of the run. Deterministic in (seed, index).
    pub fn example(&self, index: u64) -> Result<TrainingExample> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(index);

        // conditioned mode draws its category before any stem material
        let target_category = match self.mode {
            SampleMode::MultiStem => None,
            SampleMode::Conditioned => {
                let usable = self.queries.usable_categories();
                let mut chosen = None;
                for _ in 0..64 {
                    let cat = rng.gen_range(0..self.store.vocab.len());
                    if usable.contains(&cat) {
                        chosen = Some(cat);
                        break;
                    }
                }
                let Some(cat) = chosen else {
                    bail_data!("no query-capable category found in 64 draws");
                };
                Some(cat)
            }
        };

        let mut mixture = Waveform::zeros(self.clip_len);
        let mut stems: Vec<Waveform> = Vec::with_capacity(self.store.vocab.len());
        let mut stem_sources: Vec<Option<&ClipRef>> = Vec::with_capacity(self.store.vocab.len());
        for cat in 0..self.store.vocab.len() {
            let pool = &self.clips.per_category[cat];
            if pool.is_empty() {
                stems.push(Waveform::zeros(self.clip_len));
                stem_sources.push(None);
                continue;
            }
            let clip = &pool[rng.gen_range(0..pool.len())];
            let mut w = self.cut(clip)?;
            self.augment(&mut w, &mut rng);
            mixture.add_scaled(&w, 1.0)?;
            stems.push(w);
            stem_sources.push(Some(clip));
        }

        match self.mode {
            SampleMode::MultiStem => Ok(TrainingExample { mixture, targets: stems, query: None }),
            SampleMode::Conditioned => {
                let cat = target_category.expect("drawn above");
                let target = stems.swap_remove(cat);
                let candidates = &self.queries.per_category[cat];
                let target_song = stem_sources[cat].map(|c| c.song_id.as_str());
                let filtered: Vec<&ClipRef> = if self.cfg.exclude_same_song {
                    let f: Vec<&ClipRef> = candidates
                        .iter()
                        .filter(|c| Some(c.song_id.as_str()) != target_song)
                        .collect();
                    if f.is_empty() { candidates.iter().collect() } else { f }
                } else {
                    candidates.iter().collect()
                };
                let query_clip = filtered[rng.gen_range(0..filtered.len())];
                let query = self.cut(query_clip)?;
                Ok(TrainingExample { mixture, targets: vec![target], query: Some((query, cat)) })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::pools::{build_clip_pool, build_query_pool, PoolParams};
    use crate::dataset::stems::SongStems;
    use crate::dataset::taxonomy::Vocabulary;

    /// Two songs with four active categories of distinctive content.
    fn store() -> StemStore {
        let vocab = Vocabulary::coarse6();
        let n = 3000;
        let mk = |song: usize, cat: usize| -> Waveform {
            let l: Vec<f32> = (0..n)
                .map(|i| ((i * (cat + 2) + song * 31) as f32 * 0.013).sin() * 0.4 + 0.01)
                .collect();
            let r: Vec<f32> = l.iter().map(|v| v * 0.8 + 0.002).collect();
            Waveform::new(l, r).unwrap()
        };
        let songs = (0..2)
            .map(|song| {
                let stems = (0..vocab.len())
                    .map(|cat| (cat < 4).then(|| mk(song, cat)))
                    .collect();
                SongStems { song_id: format!("song{song}"), stems, len: n }
            })
            .collect();
        StemStore::from_songs(vocab, songs)
    }

    fn params() -> PoolParams {
        PoolParams {
            clip_seconds: 1000.0 / 44100.0,
            spacing_seconds: 500.0 / 44100.0,
            ..PoolParams::default()
        }
    }

    fn pools(store: &StemStore) -> (Pool, Pool) {
        let clips = build_clip_pool(store, &params());
        let queries = build_query_pool(&clips, &params());
        (clips, queries)
    }

    #[test]
    fn examples_are_deterministic_in_seed_and_index() {
        let store = store();
        let (clips, queries) = pools(&store);
        let cfg = SamplerConfig { seed: 11, ..Default::default() };
        let s = TrainingSampler::new(&store, &clips, &queries, cfg, SampleMode::Conditioned).unwrap();
        let a = s.example(5).unwrap();
        let b = s.example(5).unwrap();
        assert_eq!(a.mixture.channel(0), b.mixture.channel(0));
        assert_eq!(a.targets[0].channel(1), b.targets[0].channel(1));
        let (qa, ca) = a.query.as_ref().unwrap();
        let (qb, cb) = b.query.as_ref().unwrap();
        assert_eq!(ca, cb);
        assert_eq!(qa.channel(0), qb.channel(0));
        // a different index diverges
        let c = s.example(6).unwrap();
        assert_ne!(a.mixture.channel(0), c.mixture.channel(0));
    }

    #[test]
    fn mixture_is_exactly_the_target_sum() {
        let store = store();
        let (clips, queries) = pools(&store);
        let s = TrainingSampler::new(
            &store,
            &clips,
            &queries,
            SamplerConfig::default(),
            SampleMode::MultiStem,
        )
        .unwrap();
        for idx in 0..20 {
            let ex = s.example(idx).unwrap();
            assert_eq!(ex.targets.len(), store.vocab.len());
            for c in 0..2 {
                for i in 0..s.clip_len() {
                    let mut acc = 0f32;
                    for t in &ex.targets {
                        acc += t.channel(c)[i];
                    }
                    assert_eq!(ex.mixture.channel(c)[i].to_bits(), acc.to_bits());
                }
            }
        }
    }

    #[test]
    fn neutral_augmentation_returns_raw_clips() {
        let store = store();
        let (clips, queries) = pools(&store);
        let cfg = SamplerConfig {
            swap_prob: 0.0,
            sign_prob: 0.0,
            gain_range: (1.0, 1.0),
            ..Default::default()
        };
        let s = TrainingSampler::new(&store, &clips, &queries, cfg, SampleMode::MultiStem).unwrap();
        let ex = s.example(0).unwrap();
        // each emitted target must be literally a pool slice
        for (cat, target) in ex.targets.iter().enumerate().take(4) {
            let found = clips.per_category[cat].iter().any(|clip| {
                let idx = store.index_of(&clip.song_id).unwrap();
                let stem = store.songs[idx].stems[cat].as_ref().unwrap();
                let sliced = stem.slice(clip.start, clip.len).unwrap();
                sliced.channel(0) == target.channel(0) && sliced.channel(1) == target.channel(1)
            });
            assert!(found, "category {cat} target is not a raw pool clip");
        }
    }

    #[test]
    fn conditioned_query_is_unaugmented_pool_audio_of_the_target_category() {
        let store = store();
        let (clips, queries) = pools(&store);
        let s = TrainingSampler::new(
            &store,
            &clips,
            &queries,
            SamplerConfig { seed: 3, ..Default::default() },
            SampleMode::Conditioned,
        )
        .unwrap();
        for idx in 0..10 {
            let ex = s.example(idx).unwrap();
            let (query, cat) = ex.query.as_ref().unwrap();
            assert!(*cat < 4, "only the first four categories have material");
            let found = queries.per_category[*cat].iter().any(|clip| {
                let i = store.index_of(&clip.song_id).unwrap();
                let stem = store.songs[i].stems[*cat].as_ref().unwrap();
                let sliced = stem.slice(clip.start, clip.len).unwrap();
                sliced.channel(0) == query.channel(0) && sliced.channel(1) == query.channel(1)
            });
            assert!(found, "query is not an unaugmented query-pool clip");
            assert_eq!(ex.targets.len(), 1);
        }
    }

    #[test]
    fn empty_categories_contribute_silence() {
        let store = store();
        let (clips, queries) = pools(&store);
        let s = TrainingSampler::new(
            &store,
            &clips,
            &queries,
            SamplerConfig::default(),
            SampleMode::MultiStem,
        )
        .unwrap();
        let ex = s.example(1).unwrap();
        for cat in 4..store.vocab.len() {
            assert!(ex.targets[cat].channel(0).iter().all(|v| *v == 0.0));
        }
    }

    /// Songs distinguishable from any augmented clip: song0 concentrates
    /// energy on even sample indices, song1 on odd. Gain, sign and channel
    /// swap all preserve that parity signature.
    fn parity_store() -> StemStore {
        let vocab = Vocabulary::coarse6();
        let n = 3000;
        let songs = (0..2)
            .map(|song| {
                let stems = (0..vocab.len())
                    .map(|cat| {
                        (cat < 4).then(|| {
                            let l: Vec<f32> = (0..n)
                                .map(|i| {
                                    let loud = 0.3 + 0.1 * ((i * (cat + 3)) as f32 * 0.01).sin();
                                    if i % 2 == song { loud } else { 1e-6 }
                                })
                                .collect();
                            Waveform::new(l.clone(), l).unwrap()
                        })
                    })
                    .collect();
                SongStems { song_id: format!("song{song}"), stems, len: n }
            })
            .collect();
        StemStore::from_songs(vocab, songs)
    }

    #[test]
    fn same_song_exclusion_respected_when_possible() {
        let store = parity_store();
        let (clips, queries) = pools(&store);
        let cfg = SamplerConfig { exclude_same_song: true, seed: 9, ..Default::default() };
        let s = TrainingSampler::new(&store, &clips, &queries, cfg, SampleMode::Conditioned).unwrap();
        let parity_of = |w: &Waveform| -> usize {
            let even: f32 = w.channel(0).iter().step_by(2).map(|v| v.abs()).sum();
            let odd: f32 = w.channel(0).iter().skip(1).step_by(2).map(|v| v.abs()).sum();
            usize::from(odd > even)
        };
        for idx in 0..12 {
            let ex = s.example(idx).unwrap();
            let (query, _) = ex.query.as_ref().unwrap();
            // clip grid spacing is even, so slices keep the song parity
            assert_ne!(
                parity_of(&ex.targets[0]),
                parity_of(query),
                "query drawn from the target's song despite exclusion (index {idx})"
            );
        }
    }
}
