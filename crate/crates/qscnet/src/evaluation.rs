//! SNR metric, per-category median aggregation, and test-set evaluation.
//!
//! The score for one (track, category) pair is
//! `10 * log10(||y||^2 / ||y - s||^2)` with ground truth `y` and estimate
//! `s`, capped at +100 dB once the error energy drops below 1e-10 of the
//! signal energy, where the formula stops being meaningful. Per category the
//! median over tracks is reported; the headline number is the mean of those
//! medians over every category except `others`.
//!
//! Tracks that do not contain a category's stem are excluded from that
//! category's median by default: a median "across all tracks of the same
//! instrument" presumes the instrument is there. `include_absent_as_silence`
//! flips this for sensitivity analysis, scoring absent stems at the cap when
//! the estimate is silent too and at the negative cap otherwise.
//!
//! Full tracks are separated in 10 s chunks with 50% overlap and a
//! triangular cross-fade, normalized so the chunk windows partition unity;
//! a track that fits in one chunk is separated in a single pass.

use serde::{Deserialize, Serialize};

use crate::audio::{Waveform, SAMPLE_RATE};
use crate::dataset::StemStore;
use crate::error::{bail_input, ensure_input, Result};
use crate::model::{HeadKind, SeparationModel};
use crate::nn::synthesis::packed_to_tensor;
use crate::spectral::{pack_spectrogram, stft, StftConfig};
use crate::training::separated_waveforms;

pub const SNR_CAP_DB: f64 = 100.0;

// ── metric ──

fn energies(reference: &Waveform, estimate: &Waveform) -> Result<(f64, f64)> {
    ensure_input!(reference.len() == estimate.len(), "waveform lengths differ");
    let mut signal = 0f64;
    let mut error = 0f64;
    for ch in 0..2 {
        for (y, s) in reference.channel(ch).iter().zip(estimate.channel(ch)) {
            let y = *y as f64;
            let d = y - *s as f64;
            signal += y * y;
            error += d * d;
        }
    }
    Ok((signal, error))
}

/// Signal-to-noise ratio of an estimate against ground truth, in dB.
pub fn snr_db(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    let (signal, error) = energies(reference, estimate)?;
    ensure_input!(signal > 0.0, "reference track is silent; no signal to score against");
    if error < 1e-10 * signal {
        return Ok(SNR_CAP_DB);
    }
    Ok(10.0 * (signal / error).log10())
}

/// Median of a value list; the mean of the two middle values for even
/// counts. Empty input gives none.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    Some(if n % 2 == 1 { sorted[n / 2] } else { (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0 })
}

// ── separators ──

/// Anything that turns a mixture into per-category estimates. The slot for
/// a category the separator cannot produce (say, no query audio exists for
/// it) stays `None`; every produced estimate has the mixture's length.
/// `song_id` is a lookup key for reference-backed separators and ignored by
/// real models.
pub trait Separator {
    fn category_count(&self) -> usize;
    fn separate(&mut self, song_id: &str, mixture: &Waveform) -> Result<Vec<Option<Waveform>>>;
}

/// Returns the ground-truth stems themselves; the evaluation upper bound.
pub struct OracleSeparator<'a> {
    pub store: &'a StemStore,
}

impl Separator for OracleSeparator<'_> {
    fn category_count(&self) -> usize {
        self.store.vocab.len()
    }

    fn separate(&mut self, song_id: &str, mixture: &Waveform) -> Result<Vec<Option<Waveform>>> {
        let Some(idx) = self.store.index_of(song_id) else {
            bail_input!("oracle knows no song {song_id}");
        };
        let song = &self.store.songs[idx];
        song.stems
            .iter()
            .map(|s| {
                s.as_ref()
                    .map(|w| if w.len() == mixture.len() { Ok(w.clone()) } else { w.slice(0, mixture.len()) })
                    .transpose()
            })
            .collect()
    }
}

/// Estimates silence for every category; the SNR floor of 0 dB.
pub struct ZeroSeparator {
    pub categories: usize,
}

impl Separator for ZeroSeparator {
    fn category_count(&self) -> usize {
        self.categories
    }

    fn separate(&mut self, _song_id: &str, mixture: &Waveform) -> Result<Vec<Option<Waveform>>> {
        Ok(vec![Some(Waveform::zeros(mixture.len())); self.categories])
    }
}

/// Overlap-add chunked separation: chunks start every `chunk_samples / 2`,
/// each weighted by a strictly positive triangle, and the accumulated
/// estimates are renormalized by the accumulated weight. A separator that
/// acts per-sample (gain, oracle) passes through chunking bit-for-bit up to
/// rounding; a track no longer than one chunk skips chunking entirely.
pub fn separate_chunked(
    mixture: &Waveform,
    chunk_samples: usize,
    run: &mut dyn FnMut(&Waveform) -> Result<Vec<Option<Waveform>>>,
) -> Result<Vec<Option<Waveform>>> {
    ensure_input!(chunk_samples >= 2, "chunk of {chunk_samples} samples is no chunk");
    let n = mixture.len();
    if n <= chunk_samples {
        return run(mixture);
    }
    let hop = chunk_samples / 2;

    let mut acc: Option<Vec<Option<[Vec<f64>; 2]>>> = None;
    let mut weight = vec![0f64; n];
    let mut start = 0usize;
    loop {
        let len = chunk_samples.min(n - start);
        let chunk = mixture.slice(start, len)?;
        let estimates = run(&chunk)?;
        let acc = acc.get_or_insert_with(|| {
            estimates
                .iter()
                .map(|e| e.as_ref().map(|_| [vec![0f64; n], vec![0f64; n]]))
                .collect()
        });
        ensure_input!(acc.len() == estimates.len(), "separator changed its category count");
        for i in 0..len {
            weight[start + i] += triangle(i, len);
        }
        for (slot, est) in acc.iter_mut().zip(&estimates) {
            match (slot, est) {
                (Some(sums), Some(w)) => {
                    ensure_input!(w.len() == len, "estimate length differs from chunk length");
                    for ch in 0..2 {
                        let data = w.channel(ch);
                        for i in 0..len {
                            sums[ch][start + i] += data[i] as f64 * triangle(i, len);
                        }
                    }
                }
                (None, None) => {}
                _ => bail_input!("separator produced a category inconsistently across chunks"),
            }
        }
        if start + len >= n {
            break;
        }
        start += hop;
    }

    let acc = acc.expect("at least one chunk ran");
    acc.into_iter()
        .map(|slot| {
            slot.map(|sums| {
                let norm = |v: &[f64]| -> Vec<f32> {
                    v.iter().zip(&weight).map(|(s, w)| (s / w) as f32).collect()
                };
                Waveform::new(norm(&sums[0]), norm(&sums[1]))
            })
            .transpose()
        })
        .collect()
}

fn triangle(i: usize, len: usize) -> f64 {
    (i + 1).min(len - i) as f64
}

/// A trained model behind the `Separator` interface. Conditioned models
/// carry one pre-embedded query per category (`None` where no query audio
/// exists); multi-stem models emit their whole vocabulary per pass. Either
/// way the spectral masks of one chunk come from a single encoder pass.
pub struct ModelSeparator<'a> {
    model: &'a SeparationModel,
    mode: SeparatorMode,
    chunk_samples: usize,
}

enum SeparatorMode {
    MultiStem,
    Conditioned { embeddings: Vec<Option<Vec<f32>>> },
}

impl<'a> ModelSeparator<'a> {
    pub fn multi_stem(model: &'a SeparationModel, chunk_seconds: f64) -> Result<Self> {
        ensure_input!(
            model.config().head == HeadKind::MultiStem,
            "multi-stem separator needs a multi-stem head"
        );
        Ok(ModelSeparator {
            model,
            mode: SeparatorMode::MultiStem,
            chunk_samples: chunk_len(chunk_seconds)?,
        })
    }

    /// `embeddings[c]` conditions the mask for category `c`; a `None` slot
    /// leaves that category unseparated.
    pub fn conditioned(
        model: &'a SeparationModel,
        embeddings: Vec<Option<Vec<f32>>>,
        chunk_seconds: f64,
    ) -> Result<Self> {
        ensure_input!(
            model.config().head == HeadKind::Conditioned,
            "conditioned separator needs a conditioning head"
        );
        let dim = model.config().embedding_dim;
        for e in embeddings.iter().flatten() {
            ensure_input!(e.len() == dim, "embedding has {} dims, model wants {dim}", e.len());
        }
        ensure_input!(
            embeddings.iter().any(|e| e.is_some()),
            "no queries at all; nothing to separate"
        );
        Ok(ModelSeparator {
            model,
            mode: SeparatorMode::Conditioned { embeddings },
            chunk_samples: chunk_len(chunk_seconds)?,
        })
    }

    /// One forward pass over a single chunk.
    fn run_chunk(&self, chunk: &Waveform) -> Result<Vec<Option<Waveform>>> {
        let cfg = self.model.config();
        let spec = stft(chunk, StftConfig::new(cfg.frame_length, cfg.hop())?)?;
        let mix = packed_to_tensor(&pack_spectrogram(&spec), self.model.dtype(), self.model.device())?
            .unsqueeze(0)?;
        match &self.mode {
            SeparatorMode::MultiStem => {
                let masks = self.model.forward_multi(&mix)?;
                let waves = separated_waveforms(self.model, &masks, &mix, chunk.len())?;
                let stems = unstack_waves(&waves)?;
                Ok(stems.into_iter().map(Some).collect())
            }
            SeparatorMode::Conditioned { embeddings } => {
                let active: Vec<usize> =
                    (0..embeddings.len()).filter(|&c| embeddings[c].is_some()).collect();
                let dim = cfg.embedding_dim;
                let mut flat = Vec::with_capacity(active.len() * dim);
                for &c in &active {
                    flat.extend_from_slice(embeddings[c].as_ref().unwrap());
                }
                let emb = candle_core::Tensor::from_vec(flat, (active.len(), dim), self.model.device())?
                    .to_dtype(self.model.dtype())?;
                // [K, 1, 4, F, T] masks from one encoder pass; fold the K
                // queries into the stem axis for resynthesis
                let masks = self.model.forward_queries_shared(&mix, &emb)?;
                let (k, one, ch, f, t) = masks.dims5()?;
                ensure_input!(one == 1, "conditioned head emitted {one} masks per query");
                let masks = masks.reshape((1, k, ch, f, t))?;
                let waves = separated_waveforms(self.model, &masks, &mix, chunk.len())?;
                let stems = unstack_waves(&waves)?;
                let mut out: Vec<Option<Waveform>> = vec![None; embeddings.len()];
                for (w, &c) in stems.into_iter().zip(&active) {
                    out[c] = Some(w);
                }
                Ok(out)
            }
        }
    }
}

fn chunk_len(chunk_seconds: f64) -> Result<usize> {
    ensure_input!(
        chunk_seconds.is_finite() && chunk_seconds > 0.0,
        "bad chunk length {chunk_seconds}"
    );
    Ok((chunk_seconds * SAMPLE_RATE as f64).round() as usize)
}

/// [1, S, 2, N] -> S waveforms.
fn unstack_waves(waves: &candle_core::Tensor) -> Result<Vec<Waveform>> {
    let (b, s, _, n) = waves.dims4()?;
    ensure_input!(b == 1, "expected a single item, got batch {b}");
    let flat = waves
        .to_dtype(candle_core::DType::F32)?
        .flatten_all()?
        .to_vec1::<f32>()?;
    let mut out = Vec::with_capacity(s);
    for i in 0..s {
        let base = i * 2 * n;
        out.push(Waveform::new(
            flat[base..base + n].to_vec(),
            flat[base + n..base + 2 * n].to_vec(),
        )?);
    }
    Ok(out)
}

impl Separator for ModelSeparator<'_> {
    fn category_count(&self) -> usize {
        match &self.mode {
            SeparatorMode::MultiStem => self.model.config().stems.len(),
            SeparatorMode::Conditioned { embeddings } => embeddings.len(),
        }
    }

    fn separate(&mut self, _song_id: &str, mixture: &Waveform) -> Result<Vec<Option<Waveform>>> {
        separate_chunked(mixture, self.chunk_samples, &mut |chunk| self.run_chunk(chunk))
    }
}

// ── reports ──

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrackScore {
    pub song_id: String,
    pub snr_db: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CategoryResult {
    pub category: String,
    pub tracks: Vec<TrackScore>,
    pub median_db: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvaluationReport {
    pub vocabulary: String,
    /// Vocabulary order, `others` last.
    pub categories: Vec<CategoryResult>,
    /// "Avg5", "Avg9", ... mean of the non-others medians.
    pub aggregate_name: String,
    pub aggregate_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub query_seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub checkpoint: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct EvalParams {
    /// Score only the first `excerpt_seconds` of every track instead of the
    /// full length.
    pub excerpt_seconds: Option<f64>,
    /// Score absent stems as silent ground truth instead of skipping them.
    pub include_absent_as_silence: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ReportMeta {
    pub query_seed: Option<u64>,
    pub checkpoint: Option<String>,
}

/// Mean of the non-others category medians; none when no category has one.
fn aggregate(categories: &[CategoryResult], others: &str) -> Option<f64> {
    let medians: Vec<f64> = categories
        .iter()
        .filter(|c| c.category != others)
        .filter_map(|c| c.median_db)
        .collect();
    if medians.is_empty() {
        None
    } else {
        Some(medians.iter().sum::<f64>() / medians.len() as f64)
    }
}

/// Runs `separator` over every song in `store` and aggregates SNR medians.
pub fn evaluate_testset(
    separator: &mut dyn Separator,
    store: &StemStore,
    params: &EvalParams,
    meta: &ReportMeta,
) -> Result<EvaluationReport> {
    let vocab = &store.vocab;
    ensure_input!(
        separator.category_count() == vocab.len(),
        "separator emits {} categories, vocabulary {} has {}",
        separator.category_count(),
        vocab.name(),
        vocab.len()
    );
    ensure_input!(!store.songs.is_empty(), "no songs to evaluate");

    let mut per_category: Vec<Vec<TrackScore>> = vec![Vec::new(); vocab.len()];
    let mut notes = Vec::new();
    for song in &store.songs {
        let mut mixture = song.mixture();
        if let Some(seconds) = params.excerpt_seconds {
            let cut = chunk_len(seconds)?.min(mixture.len());
            mixture = mixture.slice(0, cut)?;
        }
        let n = mixture.len();
        let estimates = separator.separate(&song.song_id, &mixture)?;
        ensure_input!(
            estimates.len() == vocab.len(),
            "separator returned {} estimates for {} categories",
            estimates.len(),
            vocab.len()
        );
        for (c, estimate) in estimates.iter().enumerate() {
            let reference = match &song.stems[c] {
                Some(w) => Some(if w.len() == n { w.clone() } else { w.slice(0, n)? }),
                None => None,
            };
            match (reference, estimate) {
                (Some(reference), Some(estimate)) => {
                    per_category[c].push(TrackScore {
                        song_id: song.song_id.clone(),
                        snr_db: snr_db(&reference, estimate)?,
                    });
                }
                (None, Some(estimate)) if params.include_absent_as_silence => {
                    // silent ground truth: score the cap when the estimate
                    // is silent too, its negative when energy leaks in
                    let silence = Waveform::zeros(n);
                    let (_, error) = energies(&silence, estimate)?;
                    let snr = if error < 1e-12 { SNR_CAP_DB } else { -SNR_CAP_DB };
                    per_category[c].push(TrackScore { song_id: song.song_id.clone(), snr_db: snr });
                }
                (Some(_), None) => notes.push(format!(
                    "{}: no estimate for {}",
                    song.song_id,
                    vocab.categories()[c]
                )),
                _ => {}
            }
        }
    }

    let categories: Vec<CategoryResult> = per_category
        .into_iter()
        .enumerate()
        .map(|(c, tracks)| {
            let snrs: Vec<f64> = tracks.iter().map(|t| t.snr_db).collect();
            CategoryResult {
                category: vocab.categories()[c].clone(),
                median_db: median(&snrs),
                tracks,
            }
        })
        .collect();
    for c in &categories {
        if c.median_db.is_none() {
            notes.push(format!("{}: no scored tracks, omitted from the aggregate", c.category));
        }
    }

    let others = vocab.categories().last().cloned().unwrap_or_default();
    Ok(EvaluationReport {
        vocabulary: vocab.name().to_string(),
        aggregate_name: vocab.aggregate_name(),
        aggregate_db: aggregate(&categories, &others),
        categories,
        query_seed: meta.query_seed,
        checkpoint: meta.checkpoint.clone(),
        notes,
    })
}

impl EvaluationReport {
    pub fn category(&self, name: &str) -> Option<&CategoryResult> {
        self.categories.iter().find(|c| c.category == name)
    }

    pub fn others_median_db(&self) -> Option<f64> {
        self.categories.last().and_then(|c| c.median_db)
    }

    /// One-row table in the published column order, plus per-category track
    /// counts underneath.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("vocabulary: {}\n", self.vocabulary));
        if let Some(seed) = self.query_seed {
            out.push_str(&format!("query seed: {seed}\n"));
        }
        if let Some(ckpt) = &self.checkpoint {
            out.push_str(&format!("checkpoint: {ckpt}\n"));
        }
        out.push_str(&render_table(
            &self.vocabulary,
            &self.categories.iter().map(|c| (c.category.as_str(), c.median_db)).collect::<Vec<_>>(),
            &self.aggregate_name,
            self.aggregate_db,
            "median dB",
        ));
        out.push('\n');
        for c in &self.categories {
            out.push_str(&format!(
                "  {:<28} {:>3} track{}\n",
                c.category,
                c.tracks.len(),
                if c.tracks.len() == 1 { "" } else { "s" }
            ));
        }
        for note in &self.notes {
            out.push_str(&format!("note: {note}\n"));
        }
        out
    }
}

// ── comparison ──

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ComparisonReport {
    pub vocabulary: String,
    pub aggregate_name: String,
    /// (category, a, b, b - a); deltas only where both sides scored.
    pub rows: Vec<ComparisonRow>,
    pub aggregate_a: Option<f64>,
    pub aggregate_b: Option<f64>,
    pub aggregate_delta: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ComparisonRow {
    pub category: String,
    pub a_db: Option<f64>,
    pub b_db: Option<f64>,
    pub delta_db: Option<f64>,
}

/// Per-category and aggregate differences, `b` relative to `a`.
pub fn compare_reports(a: &EvaluationReport, b: &EvaluationReport) -> Result<ComparisonReport> {
    ensure_input!(
        a.vocabulary == b.vocabulary,
        "cannot compare a {} report with a {} report",
        a.vocabulary,
        b.vocabulary
    );
    ensure_input!(
        a.categories.len() == b.categories.len()
            && a.categories.iter().zip(&b.categories).all(|(x, y)| x.category == y.category),
        "reports disagree on the category list"
    );
    let rows = a
        .categories
        .iter()
        .zip(&b.categories)
        .map(|(x, y)| ComparisonRow {
            category: x.category.clone(),
            a_db: x.median_db,
            b_db: y.median_db,
            delta_db: match (x.median_db, y.median_db) {
                (Some(p), Some(q)) => Some(q - p),
                _ => None,
            },
        })
        .collect();
    let aggregate_delta = match (a.aggregate_db, b.aggregate_db) {
        (Some(p), Some(q)) => Some(q - p),
        _ => None,
    };
    Ok(ComparisonReport {
        vocabulary: a.vocabulary.clone(),
        aggregate_name: a.aggregate_name.clone(),
        rows,
        aggregate_a: a.aggregate_db,
        aggregate_b: b.aggregate_db,
        aggregate_delta,
    })
}

impl ComparisonReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("vocabulary: {}\n", self.vocabulary));
        let a: Vec<(&str, Option<f64>)> =
            self.rows.iter().map(|r| (r.category.as_str(), r.a_db)).collect();
        let b: Vec<(&str, Option<f64>)> =
            self.rows.iter().map(|r| (r.category.as_str(), r.b_db)).collect();
        let d: Vec<(&str, Option<f64>)> =
            self.rows.iter().map(|r| (r.category.as_str(), r.delta_db)).collect();
        out.push_str(&render_table(&self.vocabulary, &a, &self.aggregate_name, self.aggregate_a, "a"));
        out.push_str(&render_table(&self.vocabulary, &b, &self.aggregate_name, self.aggregate_b, "b"));
        out.push_str(&render_table(&self.vocabulary, &d, &self.aggregate_name, self.aggregate_delta, "delta"));
        out
    }
}

// ── table rendering ──

/// Column order of the published tables: bass first for the coarse
/// vocabulary, the fine vocabulary as listed; aggregate column before
/// `others`, which always sits last.
fn display_order(vocabulary: &str, non_others: usize) -> Vec<usize> {
    match vocabulary {
        "coarse6" => vec![1, 0, 2, 3, 4],
        _ => (0..non_others).collect(),
    }
}

fn display_label(category: &str) -> &str {
    match category {
        "vocals" => "Vocals",
        "bass" => "Bass",
        "drums" => "Drums",
        "guitar" => "Guitar",
        "piano" => "Piano",
        "male_vocals" => "Male",
        "female_vocals" => "Female",
        "acoustic_guitar" => "Acoust.",
        "clean_electric_guitar" => "Clean",
        "distorted_electric_guitar" => "Dist.",
        "grand_piano" => "Grand",
        "electric_piano" => "Elec.",
        "others" => "Others",
        other => other,
    }
}

fn render_table(
    vocabulary: &str,
    values: &[(&str, Option<f64>)],
    aggregate_name: &str,
    aggregate: Option<f64>,
    row_label: &str,
) -> String {
    let non_others = values.len().saturating_sub(1);
    let order = display_order(vocabulary, non_others);
    let mut headers: Vec<String> = Vec::new();
    let mut cells: Vec<String> = Vec::new();
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.1}"));
    for &i in &order {
        headers.push(display_label(values[i].0).to_string());
        cells.push(fmt(values[i].1));
    }
    headers.push(aggregate_name.to_string());
    cells.push(fmt(aggregate));
    if let Some(last) = values.last() {
        headers.push(display_label(last.0).to_string());
        cells.push(fmt(last.1));
    }

    let label_width = row_label.len().max("category".len());
    let widths: Vec<usize> =
        headers.iter().zip(&cells).map(|(h, c)| h.len().max(c.len()) + 2).collect();
    let mut out = String::new();
    out.push_str(&format!("{:<label_width$}", ""));
    for (h, w) in headers.iter().zip(&widths) {
        out.push_str(&format!("{h:>w$}"));
    }
    out.push('\n');
    out.push_str(&format!("{row_label:<label_width$}"));
    for (c, w) in cells.iter().zip(&widths) {
        out.push_str(&format!("{c:>w$}"));
    }
    out.push('\n');
    out
}

// ── tests ──
