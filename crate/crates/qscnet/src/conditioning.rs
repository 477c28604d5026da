//! Query conditioning: embedding acquisition and FiLM modulation.
//!
//! A query clip (up to 10 s of the wanted instrument) becomes a fixed-width
//! embedding, two small MLPs map that embedding to per-channel scale and
//! shift, and the scale/shift modulate the encoder output feature-wise:
//! `E' = gamma * E + beta`, broadcast over frequency and time. This is the
//! single conditioning site in the whole network.
//!
//! Embeddings normally come from an external instrument-recognition model
//! through [`ExternalEmbedder`]; [`MockEmbedder`] is a deterministic,
//! dependency-free stand-in (banded spectral statistics pushed through a
//! seeded random projection) that keeps the full pipeline runnable and
//! testable offline. [`EmbeddingCache`] memoizes either by content hash.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::Command;

use candle_core::Tensor;
use candle_nn::{Linear, Module, VarBuilder};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::audio::{Waveform, SAMPLE_RATE};
use crate::error::{bail_data, bail_input, ensure_input, Result};
use crate::spectral::{stft, StftConfig};

/// Longest query clip an embedder accepts, in seconds.
pub const MAX_QUERY_SECONDS: f64 = 10.0;

// ── FiLM ──

/// Two independent 2-layer MLPs (ELU in between) mapping a query embedding
/// to per-channel scale and shift for the encoder output.
pub struct FilmModule {
    gamma1: Linear,
    gamma2: Linear,
    beta1: Linear,
    beta2: Linear,
}

pub fn film_module(embedding_dim: usize, hidden: usize, channels: usize, vb: VarBuilder) -> Result<FilmModule> {
    Ok(FilmModule {
        gamma1: candle_nn::linear(embedding_dim, hidden, vb.pp("gamma").pp("fc1"))?,
        gamma2: candle_nn::linear(hidden, channels, vb.pp("gamma").pp("fc2"))?,
        beta1: candle_nn::linear(embedding_dim, hidden, vb.pp("beta").pp("fc1"))?,
        beta2: candle_nn::linear(hidden, channels, vb.pp("beta").pp("fc2"))?,
    })
}

impl FilmModule {
    /// Embeddings [B, q] -> (gamma [B, C], beta [B, C]).
    pub fn forward(&self, emb: &Tensor) -> Result<(Tensor, Tensor)> {
        let gamma = self.gamma2.forward(&self.gamma1.forward(emb)?.elu(1.0)?)?;
        let beta = self.beta2.forward(&self.beta1.forward(emb)?.elu(1.0)?)?;
        Ok((gamma, beta))
    }
}

/// `gamma * x + beta` with gamma, beta [B, C] broadcast over [B, C, F, T].
pub fn film_apply(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<Tensor> {
    let (b, c, _, _) = x.dims4()?;
    let gamma = gamma.reshape((b, c, 1, 1))?;
    let beta = beta.reshape((b, c, 1, 1))?;
    Ok(x.broadcast_mul(&gamma)?.broadcast_add(&beta)?)
}

// ── embedders ──

pub trait Embedder {
    fn embedding_dim(&self) -> usize;
    /// Embed a query clip of at most [`MAX_QUERY_SECONDS`].
    fn embed(&self, query: &Waveform) -> Result<Vec<f32>>;
}

fn check_query_length(query: &Waveform) -> Result<()> {
    ensure_input!(query.len() > 0, "empty query clip");
    ensure_input!(
        query.duration_seconds() <= MAX_QUERY_SECONDS + 1e-9,
        "query clip is {:.2}s, embedder accepts at most {MAX_QUERY_SECONDS}s",
        query.duration_seconds()
    );
    Ok(())
}

/// Deterministic offline embedder: 48 triangular mel-spaced band energies
/// (log scale), summarized by per-band mean and standard deviation over
/// frames, then projected to the target dimension by a seed-fixed Gaussian
/// matrix and L2-normalized. Content-sensitive, hardware-independent, and
/// cheap; not a trained recognizer.
pub struct MockEmbedder {
    dim: usize,
    seed: u64,
}

const MEL_BANDS: usize = 48;

impl MockEmbedder {
    pub fn new(seed: u64) -> Self {
        Self { dim: 768, seed }
    }

    pub fn with_dim(dim: usize, seed: u64) -> Self {
        Self { dim, seed }
    }

    fn band_stats(query: &Waveform) -> Result<Vec<f32>> {
        let mono = query.to_mono();
        // short analysis frames keep this cheap on clips from ~0.1 s up
        let cfg = StftConfig::new(1024, 256)?;
        let spec = stft(&Waveform::new(mono.clone(), mono)?, cfg)?;
        let bins = spec.bins;
        let frames = spec.frames;

        let mel = |hz: f64| 2595.0 * (1.0 + hz / 700.0).log10();
        let mel_lo = mel(40.0);
        let mel_hi = mel(16000.0);
        let hz_per_bin = SAMPLE_RATE as f64 / 1024.0;
        // triangular filters with 50% overlap on the mel axis
        let edges: Vec<f64> = (0..MEL_BANDS + 2)
            .map(|i| mel_lo + (mel_hi - mel_lo) * i as f64 / (MEL_BANDS + 1) as f64)
            .collect();

        let mut stats = vec![0f32; 2 * MEL_BANDS];
        let mut band_frames = vec![0f64; frames];
        for band in 0..MEL_BANDS {
            let (lo, mid, hi) = (edges[band], edges[band + 1], edges[band + 2]);
            band_frames.iter_mut().for_each(|v| *v = 0.0);
            for bin in 0..bins {
                let m = mel(bin as f64 * hz_per_bin);
                if m <= lo || m >= hi {
                    continue;
                }
                let w = if m <= mid { (m - lo) / (mid - lo) } else { (hi - m) / (hi - mid) };
                for (t, acc) in band_frames.iter_mut().enumerate() {
                    let v = spec.channels[0][bin * frames + t];
                    *acc += w * (v.re as f64 * v.re as f64 + v.im as f64 * v.im as f64);
                }
            }
            let logs: Vec<f64> = band_frames.iter().map(|e| (e + 1e-10).ln()).collect();
            let mean = logs.iter().sum::<f64>() / logs.len() as f64;
            let var = logs.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / logs.len() as f64;
            stats[band] = mean as f32;
            stats[MEL_BANDS + band] = var.sqrt() as f32;
        }
        Ok(stats)
    }
}

impl Embedder for MockEmbedder {
    fn embedding_dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, query: &Waveform) -> Result<Vec<f32>> {
        check_query_length(query)?;
        let stats = Self::band_stats(query)?;
        // fixed projection: the seed, not the clip, decides the matrix
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let scale = 1.0 / (stats.len() as f64).sqrt();
        let mut out = vec![0f32; self.dim];
        for row in out.iter_mut() {
            let mut acc = 0f64;
            for &s in &stats {
                // Box-Muller from two uniform draws
                let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                let g = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                acc += g * scale * s as f64;
            }
            *row = acc as f32;
        }
        let norm = out.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
        if norm > 1e-12 {
            let inv = (1.0 / norm) as f32;
            out.iter_mut().for_each(|v| *v *= inv);
        }
        Ok(out)
    }
}

/// Embedder that shells out to an external program. The command template
/// must contain `{input}` and `{output}`; the program reads a wav file at
/// `{input}` and writes `dim` little-endian f32 values to `{output}`.
pub struct ExternalEmbedder {
    template: String,
    dim: usize,
    work_dir: PathBuf,
}

impl ExternalEmbedder {
    pub fn new(template: &str, dim: usize, work_dir: &Path) -> Result<Self> {
        ensure_input!(
            template.contains("{input}") && template.contains("{output}"),
            "embedder command template must contain {{input}} and {{output}}"
        );
        Ok(Self { template: template.to_string(), dim, work_dir: work_dir.to_path_buf() })
    }
}

impl Embedder for ExternalEmbedder {
    fn embedding_dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, query: &Waveform) -> Result<Vec<f32>> {
        check_query_length(query)?;
        std::fs::create_dir_all(&self.work_dir)?;
        let input = self.work_dir.join("query.wav");
        let output = self.work_dir.join("embedding.f32");
        crate::audio::write_wav(&input, query, crate::audio::WavEncoding::Float32)?;
        let _ = std::fs::remove_file(&output);

        let cmd = self
            .template
            .replace("{input}", &input.to_string_lossy())
            .replace("{output}", &output.to_string_lossy());
        let status = Command::new("sh").arg("-c").arg(&cmd).status()?;
        if !status.success() {
            bail_data!("embedder command failed with {status}: {cmd}");
        }

        let mut bytes = Vec::new();
        std::fs::File::open(&output)?.read_to_end(&mut bytes)?;
        if bytes.len() != self.dim * 4 {
            bail_data!(
                "embedder wrote {} bytes, expected {} ({} f32 values)",
                bytes.len(),
                self.dim * 4,
                self.dim
            );
        }
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
    }
}

// ── cache ──

/// Content-addressed embedding store: `manifest.txt` maps sha-256 of the
/// raw sample bytes to a row index in `table.bin` (dim f32 values per row,
/// little endian). Appending is the only mutation, so a cache directory can
/// be rebuilt or extended at any time and never goes stale on re-reads.
pub struct EmbeddingCache {
    dir: PathBuf,
    dim: usize,
    index: HashMap<String, usize>,
    rows: usize,
}

impl EmbeddingCache {
    pub fn open(dir: &Path, dim: usize) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let manifest = dir.join("manifest.txt");
        let mut index = HashMap::new();
        let mut rows = 0;
        if manifest.exists() {
            let text = std::fs::read_to_string(&manifest)?;
            for (lineno, line) in text.lines().enumerate() {
                if line.is_empty() {
                    continue;
                }
                let Some((hash, idx)) = line.split_once('\t') else {
                    bail_data!("malformed cache manifest line {}: {line:?}", lineno + 1);
                };
                let idx: usize = idx
                    .parse()
                    .map_err(|_| crate::Error::Data(format!("bad row index in manifest: {line:?}")))?;
                index.insert(hash.to_string(), idx);
                rows = rows.max(idx + 1);
            }
            let table_len = std::fs::metadata(dir.join("table.bin")).map(|m| m.len()).unwrap_or(0);
            if table_len != (rows * dim * 4) as u64 {
                bail_data!(
                    "embedding table is {table_len} bytes but the manifest expects {} rows of {dim} f32",
                    rows
                );
            }
        }
        Ok(Self { dir: dir.to_path_buf(), dim, index, rows })
    }

    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn content_hash(query: &Waveform) -> String {
        let mut hasher = Sha256::new();
        hasher.update(query.content_bytes());
        format!("{:x}", hasher.finalize())
    }

    pub fn lookup(&self, hash: &str) -> Result<Option<Vec<f32>>> {
        let Some(&row) = self.index.get(hash) else {
            return Ok(None);
        };
        let mut file = std::fs::File::open(self.dir.join("table.bin"))?;
        let mut bytes = vec![0u8; self.dim * 4];
        use std::io::Seek;
        file.seek(std::io::SeekFrom::Start((row * self.dim * 4) as u64))?;
        file.read_exact(&mut bytes)?;
        Ok(Some(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect()))
    }

    pub fn insert(&mut self, hash: &str, embedding: &[f32]) -> Result<()> {
        if embedding.len() != self.dim {
            bail_input!("embedding has {} values, cache stores {}", embedding.len(), self.dim);
        }
        if self.index.contains_key(hash) {
            return Ok(());
        }
        let mut table = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.dir.join("table.bin"))?;
        for v in embedding {
            table.write_all(&v.to_le_bytes())?;
        }
        table.flush()?;
        let mut manifest = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.dir.join("manifest.txt"))?;
        writeln!(manifest, "{hash}\t{}", self.rows)?;
        manifest.flush()?;
        self.index.insert(hash.to_string(), self.rows);
        self.rows += 1;
        Ok(())
    }

    /// Cached embedding for `query`, computing and storing through
    /// `embedder` on a miss.
    pub fn get_or_embed(&mut self, query: &Waveform, embedder: &dyn Embedder) -> Result<Vec<f32>> {
        let hash = Self::content_hash(query);
        if let Some(hit) = self.lookup(&hash)? {
            return Ok(hit);
        }
        let embedding = embedder.embed(query)?;
        self.insert(&hash, &embedding)?;
        Ok(embedding)
    }
}
