//! Clip and query pools.
//!
//! Candidate clips are cut from each stem track on a fixed grid (10 s
//! windows spaced 1 s apart by default). A clip survives into the clip
//! pool unless more than half its samples are exactly zero; the query pool
//! keeps the subset with less than 20% zeros. Thresholds follow that
//! wording strictly: 50% zeros passes the clip filter, 20% fails the query
//! filter. Zero means sample == 0.0 unless an epsilon is configured for
//! material that has been through a lossy pipeline.
//!
//! Pools are pure functions of (audio bytes, parameters); a text cache
//! avoids rescanning per run.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::SAMPLE_RATE;
use crate::dataset::stems::StemStore;
use crate::error::{bail_data, ensure_input, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PoolParams {
    pub clip_seconds: f64,
    pub spacing_seconds: f64,
    /// Clip-pool rule: reject when zero_fraction > this.
    pub max_zero_fraction: f64,
    /// Query-pool rule: keep when zero_fraction < this.
    pub query_zero_fraction: f64,
    /// Treat |sample| <= eps as zero; 0.0 counts exact zeros only.
    pub zero_eps: f32,
}

impl Default for PoolParams {
    fn default() -> Self {
        PoolParams {
            clip_seconds: 10.0,
            spacing_seconds: 1.0,
            max_zero_fraction: 0.5,
            query_zero_fraction: 0.2,
            zero_eps: 0.0,
        }
    }
}

impl PoolParams {
    pub fn clip_samples(&self) -> usize {
        (self.clip_seconds * SAMPLE_RATE as f64).round() as usize
    }

    pub fn spacing_samples(&self) -> usize {
        (self.spacing_seconds * SAMPLE_RATE as f64).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRef {
    pub song_id: String,
    pub category: usize,
    pub start: usize,
    pub len: usize,
    pub zero_fraction: f64,
}

/// Per-category clip lists, indexed by vocabulary category position.
#[derive(Debug, Clone)]
pub struct Pool {
    pub vocabulary: String,
    pub per_category: Vec<Vec<ClipRef>>,
}

impl Pool {
    pub fn total(&self) -> usize {
        self.per_category.iter().map(Vec::len).sum()
    }

    pub fn category_counts(&self) -> Vec<usize> {
        self.per_category.iter().map(Vec::len).collect()
    }

    /// Categories with at least one clip.
    pub fn usable_categories(&self) -> Vec<usize> {
        self.per_category
            .iter()
            .enumerate()
            .filter_map(|(i, v)| (!v.is_empty()).then_some(i))
            .collect()
    }
}

/// Cut every present stem on the grid and apply the silence filter.
pub fn build_clip_pool(store: &StemStore, params: &PoolParams) -> Pool {
    let clip = params.clip_samples();
    let spacing = params.spacing_samples().max(1);
    let mut per_category = vec![vec![]; store.vocab.len()];
    for song in &store.songs {
        for (cat, stem) in song.present() {
            if stem.len() < clip {
                continue;
            }
            let mut start = 0;
            while start + clip <= stem.len() {
                let zf = stem.slice(start, clip).expect("grid stays in bounds").zero_fraction(params.zero_eps);
                if zf <= params.max_zero_fraction {
                    per_category[cat].push(ClipRef {
                        song_id: song.song_id.clone(),
                        category: cat,
                        start,
                        len: clip,
                        zero_fraction: zf,
                    });
                }
                start += spacing;
            }
        }
    }
    Pool { vocabulary: store.vocab.name().to_string(), per_category }
}

/// Strict subset of the clip pool suitable as query audio.
pub fn build_query_pool(clips: &Pool, params: &PoolParams) -> Pool {
    Pool {
        vocabulary: clips.vocabulary.clone(),
        per_category: clips
            .per_category
            .iter()
            .map(|v| {
                v.iter()
                    .filter(|c| c.zero_fraction < params.query_zero_fraction)
                    .cloned()
                    .collect()
            })
            .collect(),
    }
}

// ── text cache ──

const POOL_CACHE_VERSION: &str = "pool-cache-v1";

impl Pool {
    /// One header line (version, vocabulary, category count), then one
    /// tab-separated line per clip. Floats print in shortest round-trip
    /// form, so save/load/save is byte-stable.
    pub fn save_tsv(&self, path: &Path) -> Result<()> {
        let mut out = format!(
            "{POOL_CACHE_VERSION}\t{}\t{}\n",
            self.vocabulary,
            self.per_category.len()
        );
        for clips in &self.per_category {
            for c in clips {
                out.push_str(&format!(
                    "{}\t{}\t{}\t{}\t{}\n",
                    c.song_id, c.category, c.start, c.len, c.zero_fraction
                ));
            }
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load_tsv(path: &Path) -> Result<Pool> {
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header = lines.next().unwrap_or("");
        let parts: Vec<&str> = header.split('\t').collect();
        if parts.len() != 3 || parts[0] != POOL_CACHE_VERSION {
            bail_data!("{}: not a pool cache (header {header:?})", path.display());
        }
        let vocabulary = parts[1].to_string();
        let categories: usize = parts[2]
            .parse()
            .map_err(|_| crate::Error::Data(format!("{}: bad category count", path.display())))?;
        let mut per_category = vec![vec![]; categories];
        for (num, line) in lines.enumerate() {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 5 {
                bail_data!("{}: line {}: expected 5 fields", path.display(), num + 2);
            }
            let clip = ClipRef {
                song_id: f[0].to_string(),
                category: f[1].parse().map_err(|_| bad_field(path, num, "category"))?,
                start: f[2].parse().map_err(|_| bad_field(path, num, "start"))?,
                len: f[3].parse().map_err(|_| bad_field(path, num, "len"))?,
                zero_fraction: f[4].parse().map_err(|_| bad_field(path, num, "zero_fraction"))?,
            };
            ensure_input!(
                clip.category < categories,
                "{}: line {}: category {} out of range",
                path.display(),
                num + 2,
                clip.category
            );
            per_category[clip.category].push(clip);
        }
        Ok(Pool { vocabulary, per_category })
    }
}

fn bad_field(path: &Path, line: usize, field: &str) -> crate::Error {
    crate::Error::Data(format!("{}: line {}: bad {field}", path.display(), line + 2))
}
