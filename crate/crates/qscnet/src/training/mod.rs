//! The training loop: waveform-domain RMSE through the differentiable
//! synthesis path, Adam on every parameter, weight averaging per epoch, and
//! a run directory with resumable checkpoints.
//!
//! Each step draws a batch from the counter-based sampler at the global
//! example index `epoch * samples_per_epoch + offset`, so the data stream is
//! a pure function of (seed, index) and resuming at epoch k replays nothing.
//! Optimizer moments are not part of the checkpoint format; a resumed run
//! restarts Adam from zero moments, which costs a brief re-warmup and keeps
//! checkpoints half the size.

pub mod ema;
pub mod optim;

pub use ema::EmaSet;
pub use optim::{Adam, AdamParams};

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use candle_core::{DType, Tensor};
use candle_nn::VarMap;
use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::checkpoint::{
    snapshot_varmap, BestRecord, Checkpoint, NamedTensor, TrainingProgress,
};
use crate::dataset::{SampleMode, TrainingSampler};
use crate::error::{bail_data, ensure_config, ensure_input, Result};
use crate::model::{HeadKind, SeparationModel};
use crate::nn::synthesis::{apply_mask_graph, istft_graph, packed_to_tensor};
use crate::spectral::{pack_spectrogram, stft, StftConfig};

// ── configuration ──

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainConfig {
    pub mode: SampleMode,
    pub batch_size: usize,
    /// Examples per epoch; must divide evenly into batches.
    pub samples_per_epoch: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Global-norm gradient clip; none by default.
    pub grad_clip: Option<f64>,
    /// Weight-average decays, one shadow table per entry.
    pub ema_decays: Vec<f64>,
    /// Training clip length drawn by the sampler.
    pub clip_seconds: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: SampleMode::Conditioned,
            batch_size: 8,
            samples_per_epoch: 32_000,
            epochs: 300,
            learning_rate: 3e-4,
            grad_clip: None,
            ema_decays: vec![0.99, 0.999],
            clip_seconds: 10.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_config!(self.batch_size > 0, "batch_size must be positive");
        ensure_config!(self.samples_per_epoch > 0, "samples_per_epoch must be positive");
        ensure_config!(
            self.samples_per_epoch % self.batch_size == 0,
            "samples_per_epoch {} is not a multiple of batch_size {}",
            self.samples_per_epoch,
            self.batch_size
        );
        ensure_config!(self.epochs > 0, "epochs must be positive");
        ensure_config!(
            self.learning_rate.is_finite() && self.learning_rate >= 0.0,
            "bad learning rate {}",
            self.learning_rate
        );
        for &d in &self.ema_decays {
            ensure_config!((0.0..=1.0).contains(&d), "ema decay {d} outside [0, 1]");
        }
        ensure_config!(
            self.clip_seconds.is_finite() && self.clip_seconds > 0.0,
            "bad clip length {} s",
            self.clip_seconds
        );
        Ok(())
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.samples_per_epoch / self.batch_size
    }
}

// ── loss ──

/// Root-mean-square error over both channels of a waveform pair, accumulated
/// in f64. The reference against which the graph version is tested.
pub fn rmse(pred: &Waveform, target: &Waveform) -> Result<f64> {
    ensure_input!(pred.len() == target.len(), "waveform lengths differ");
    let mut sq = 0f64;
    for ch in 0..2 {
        for (p, t) in pred.channel(ch).iter().zip(target.channel(ch)) {
            let d = *p as f64 - *t as f64;
            sq += d * d;
        }
    }
    Ok((sq / (2 * pred.len()) as f64).sqrt())
}

/// Mean of per-stem RMSE values over waveform lists of equal layout.
pub fn rmse_multi(preds: &[Waveform], targets: &[Waveform]) -> Result<f64> {
    ensure_input!(preds.len() == targets.len() && !preds.is_empty(), "stem count mismatch");
    let mut acc = 0f64;
    for (p, t) in preds.iter().zip(targets) {
        acc += rmse(p, t)?;
    }
    Ok(acc / preds.len() as f64)
}

/// Differentiable RMSE. `[B, S, 2, N]` inputs give the mean over stems of
/// the per-stem RMSE (taken across batch, channels and samples); `[B, 2, N]`
/// inputs are treated as a single stem.
pub fn rmse_graph(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    ensure_input!(pred.dims() == target.dims(), "prediction and target shapes differ");
    let diff = (pred - target)?.sqr()?;
    let per_stem = match diff.rank() {
        3 => diff.flatten_all()?.unsqueeze(0)?,
        4 => diff.transpose(0, 1)?.contiguous()?.flatten_from(1)?,
        r => {
            return Err(crate::Error::InvalidInput(format!(
                "rmse expects rank 3 or 4 waveform tensors, got rank {r}"
            )))
        }
    };
    Ok(per_stem.mean(1)?.sqrt()?.mean_all()?)
}

/// Masks applied to a mixture and resynthesized to waveforms, on the graph.
/// `masks` is `[B, S, 4, F, T]`, `mix` `[B, 4, F, T]`; returns
/// `[B, S, 2, original_length]`.
pub fn separated_waveforms(
    model: &SeparationModel,
    masks: &Tensor,
    mix: &Tensor,
    original_length: usize,
) -> Result<Tensor> {
    let (b, s, ch, f, t) = masks.dims5()?;
    let flat_masks = masks.reshape((b * s, ch, f, t))?;
    let flat_mix = mix
        .unsqueeze(1)?
        .broadcast_as((b, s, ch, f, t))?
        .contiguous()?
        .reshape((b * s, ch, f, t))?;
    let applied = apply_mask_graph(&flat_masks, &flat_mix)?;
    let cfg = model.config();
    let waves = istft_graph(&applied, cfg.frame_length, cfg.hop(), original_length, model.fourier_cache())?;
    Ok(waves.reshape((b, s, 2, original_length))?)
}

// ── batch assembly ──

pub type EmbedFn<'a> = &'a mut dyn FnMut(&Waveform) -> Result<Vec<f32>>;

struct TrainBatch {
    /// Packed mixture spectra [B, 4, F, T].
    mixture: Tensor,
    /// Target stems [B, S, 2, N] in the model dtype.
    targets: Tensor,
    /// Query embeddings [B, q] for conditioned batches.
    embeddings: Option<Tensor>,
}

fn waveform_block(waves: &[&Waveform], dtype: DType, dev: &candle_core::Device) -> Result<Tensor> {
    let n = waves[0].len();
    let mut flat = Vec::with_capacity(waves.len() * 2 * n);
    for w in waves {
        ensure_input!(w.len() == n, "ragged waveform lengths in batch");
        flat.extend_from_slice(w.channel(0));
        flat.extend_from_slice(w.channel(1));
    }
    Ok(Tensor::from_vec(flat, (waves.len(), 2, n), dev)?.to_dtype(dtype)?)
}

fn assemble_batch(
    model: &SeparationModel,
    sampler: &TrainingSampler,
    embed: Option<&mut (dyn FnMut(&Waveform) -> Result<Vec<f32>> + '_)>,
    first_index: u64,
    batch_size: usize,
) -> Result<TrainBatch> {
    let cfg = model.config();
    let stft_cfg = StftConfig::new(cfg.frame_length, cfg.hop())?;
    let dev = model.device();

    let mut specs = Vec::with_capacity(batch_size);
    let mut stems: Vec<Vec<Waveform>> = Vec::with_capacity(batch_size);
    let mut queries = Vec::with_capacity(batch_size);
    for j in 0..batch_size as u64 {
        let ex = sampler.example(first_index + j)?;
        let spec = stft(&ex.mixture, stft_cfg)?;
        specs.push(packed_to_tensor(&pack_spectrogram(&spec), model.dtype(), dev)?);
        stems.push(ex.targets);
        if let Some((query, _category)) = ex.query {
            queries.push(query);
        }
    }
    let mixture = Tensor::stack(&specs, 0)?;

    let stem_count = stems[0].len();
    let n = stems[0][0].len();
    let mut per_item = Vec::with_capacity(batch_size);
    for item in &stems {
        ensure_input!(item.len() == stem_count, "ragged stem counts in batch");
        per_item.push(waveform_block(&item.iter().collect::<Vec<_>>(), model.dtype(), dev)?);
    }
    let targets = Tensor::stack(&per_item, 0)?.reshape((batch_size, stem_count, 2, n))?;

    let embeddings = match (sampler.mode(), embed) {
        (SampleMode::Conditioned, Some(embed)) => {
            let dim = cfg.embedding_dim;
            let mut flat = Vec::with_capacity(batch_size * dim);
            for q in &queries {
                let e = embed(q)?;
                ensure_input!(e.len() == dim, "embedder returned {} dims, model wants {dim}", e.len());
                flat.extend_from_slice(&e);
            }
            Some(Tensor::from_vec(flat, (batch_size, dim), dev)?.to_dtype(model.dtype())?)
        }
        (SampleMode::Conditioned, None) => {
            bail_data!("conditioned training needs a query embedder");
        }
        (SampleMode::MultiStem, _) => None,
    };

    Ok(TrainBatch { mixture, targets, embeddings })
}

// ── epoch loop ──

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochOutcome {
    /// 1-based ordinal of the completed epoch.
    pub epoch: u64,
    pub steps: u64,
    pub mean_loss: f64,
    pub final_loss: f64,
    pub seconds: f64,
}

fn check_modes(model: &SeparationModel, sampler: &TrainingSampler, cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    ensure_input!(sampler.mode() == cfg.mode, "sampler and train config disagree on mode");
    let want = match cfg.mode {
        SampleMode::Conditioned => HeadKind::Conditioned,
        SampleMode::MultiStem => HeadKind::MultiStem,
    };
    ensure_input!(model.config().head == want, "model head does not match training mode");
    Ok(())
}

/// One pass of `cfg.samples_per_epoch` examples. `epoch_index` is 0-based
/// and fixes which slice of the sample stream this epoch consumes. A
/// non-finite loss aborts immediately rather than training on garbage.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch(
    model: &SeparationModel,
    sampler: &TrainingSampler,
    mut embed: Option<&mut (dyn FnMut(&Waveform) -> Result<Vec<f32>> + '_)>,
    cfg: &TrainConfig,
    opt: &mut Adam,
    epoch_index: u64,
    mut on_step: Option<&mut (dyn FnMut(u64, f64) + '_)>,
) -> Result<EpochOutcome> {
    check_modes(model, sampler, cfg)?;
    let started = Instant::now();
    let steps = cfg.steps_per_epoch() as u64;
    let mut loss_sum = 0f64;
    let mut last_loss = f64::NAN;

    for step in 0..steps {
        let first = epoch_index * cfg.samples_per_epoch as u64 + step * cfg.batch_size as u64;
        let batch = assemble_batch(
            model,
            sampler,
            embed.as_deref_mut(),
            first,
            cfg.batch_size,
        )?;
        let masks = match &batch.embeddings {
            Some(emb) => model.forward_conditioned(&batch.mixture, emb)?,
            None => model.forward_multi(&batch.mixture)?,
        };
        let clip_len = batch.targets.dims4()?.3;
        let separated = separated_waveforms(model, &masks, &batch.mixture, clip_len)?;
        let loss = rmse_graph(&separated, &batch.targets)?;
        let loss_value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        if !loss_value.is_finite() {
            return Err(crate::Error::Numerical(format!(
                "loss {loss_value} at epoch {} step {step} (examples {first}..{}); aborting",
                epoch_index + 1,
                first + cfg.batch_size as u64
            )));
        }
        let grads = loss.backward()?;
        opt.step(&grads)?;
        loss_sum += loss_value;
        last_loss = loss_value;
        if let Some(cb) = on_step.as_deref_mut() {
            cb(step, loss_value);
        }
    }

    Ok(EpochOutcome {
        epoch: epoch_index + 1,
        steps,
        mean_loss: loss_sum / steps as f64,
        final_loss: last_loss,
        seconds: started.elapsed().as_secs_f64(),
    })
}

// ── candidate selection ──

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CandidateScore {
    /// "raw" or "ema@<decay>".
    pub source: String,
    pub score_db: f64,
}

pub type ScoreFn<'a> = &'a mut dyn FnMut(&SeparationModel) -> Result<f64>;

/// Overwrite every live variable from a named-tensor table; the table must
/// cover the varmap exactly.
pub fn write_params(varmap: &VarMap, params: &[NamedTensor]) -> Result<()> {
    let data = varmap.data().lock().unwrap();
    ensure_input!(
        data.len() == params.len(),
        "parameter set size mismatch: {} vs {}",
        params.len(),
        data.len()
    );
    for entry in params {
        let Some(var) = data.get(&entry.name) else {
            bail_data!("no model parameter named {}", entry.name);
        };
        let t = Tensor::from_vec(entry.data.clone(), entry.shape.clone(), var.device())?
            .to_dtype(var.dtype())?;
        var.set(&t)?;
    }
    Ok(())
}

/// Scores the live weights and every averaged shadow with `score` (higher
/// is better), restores the live weights, and returns all scores plus the
/// winner's index and materialized parameters. Ties go to the earlier
/// candidate, raw first, so the outcome does not depend on score noise
/// ordering tricks.
pub fn select_best(
    model: &SeparationModel,
    varmap: &VarMap,
    ema: &EmaSet,
    score: &mut (dyn FnMut(&SeparationModel) -> Result<f64> + '_),
) -> Result<(Vec<CandidateScore>, usize, Vec<NamedTensor>)> {
    let raw = snapshot_varmap(varmap)?;
    let mut scores = vec![CandidateScore { source: "raw".into(), score_db: score(model)? }];
    let mut snapshots = vec![raw.clone()];
    for (i, label) in ema.labels().iter().enumerate() {
        ema.load_shadow_into(i, varmap)?;
        scores.push(CandidateScore { source: format!("ema@{label}"), score_db: score(model)? });
        snapshots.push(snapshot_varmap(varmap)?);
    }
    write_params(varmap, &raw)?;

    let mut winner = 0;
    for (i, c) in scores.iter().enumerate().skip(1) {
        if c.score_db > scores[winner].score_db {
            winner = i;
        }
    }
    let params = std::mem::take(&mut snapshots[winner]);
    Ok((scores, winner, params))
}

// ── run directory ──

pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: impl Into<PathBuf>) -> RunPaths {
        RunPaths { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.jsonl")
    }

    pub fn latest(&self) -> PathBuf {
        self.root.join("checkpoints").join("latest.ckpt")
    }

    pub fn best(&self) -> PathBuf {
        self.root.join("checkpoints").join("best.ckpt")
    }

    pub fn prepare(&self) -> Result<()> {
        fs::create_dir_all(self.root.join("checkpoints"))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u64,
    pub mean_loss: f64,
    pub final_loss: f64,
    pub steps: u64,
    pub seconds: f64,
    pub candidates: Vec<CandidateScore>,
    pub best_source: Option<String>,
    pub best_score_db: Option<f64>,
}

fn append_metrics(path: &Path, record: &EpochRecord) -> Result<()> {
    let mut file = fs::OpenOptions::new().create(true).append(true).open(path)?;
    let line = serde_json::to_string(record)?;
    writeln!(file, "{line}")?;
    Ok(())
}

/// Everything a full run needs beyond the config: data, optional embedder,
/// optional validation scorer, optional per-step progress callback.
pub struct TrainHooks<'a> {
    pub embed: Option<EmbedFn<'a>>,
    pub validate: Option<ScoreFn<'a>>,
    pub on_step: Option<&'a mut dyn FnMut(u64, u64, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: u64,
    pub resumed_from: Option<u64>,
    pub final_mean_loss: f64,
    pub best: Option<BestRecord>,
}

/// Trains to `cfg.epochs`, writing per-epoch metrics and checkpoints under
/// `run_dir`. If `run_dir` already holds a latest checkpoint for the same
/// model config and seed, training resumes after its last completed epoch.
/// With a validation hook, each epoch scores the raw weights and every
/// shadow; the best-scoring candidate seen so far is kept as `best.ckpt`.
pub fn run_training(
    model: &SeparationModel,
    varmap: &VarMap,
    sampler: &TrainingSampler,
    cfg: &TrainConfig,
    run_dir: impl Into<PathBuf>,
    mut hooks: TrainHooks,
) -> Result<TrainReport> {
    check_modes(model, sampler, cfg)?;
    let paths = RunPaths::new(run_dir);
    paths.prepare()?;

    let mut ema = EmaSet::new(varmap, &cfg.ema_decays)?;
    let mut start_epoch = 0u64;
    let mut global_step = 0u64;
    let mut best: Option<BestRecord> = None;
    let mut resumed_from = None;

    if paths.latest().exists() {
        let ckpt = Checkpoint::read_file(&paths.latest())?;
        if ckpt.header.model != *model.config() {
            bail_data!(
                "run directory {} holds a checkpoint for a different model config",
                paths.root.display()
            );
        }
        if ckpt.header.progress.seed != cfg.seed {
            bail_data!(
                "run was started with seed {}, cannot resume with seed {}",
                ckpt.header.progress.seed,
                cfg.seed
            );
        }
        ckpt.load_strict(varmap)?;
        ema.restore(&ckpt)?;
        start_epoch = ckpt.header.progress.epoch;
        global_step = ckpt.header.progress.global_step;
        best = ckpt.header.progress.best.clone();
        resumed_from = Some(start_epoch);
    }

    let snapshot = serde_json::json!({ "model": model.config(), "train": cfg });
    fs::write(paths.config(), serde_json::to_string_pretty(&snapshot)? + "\n")?;

    let mut opt = Adam::new(
        varmap,
        AdamParams { learning_rate: cfg.learning_rate, grad_clip: cfg.grad_clip, ..Default::default() },
    )?;

    let mut final_mean_loss = f64::NAN;
    for epoch_index in start_epoch..cfg.epochs as u64 {
        let mut step_cb = hooks.on_step.as_deref_mut().map(|cb| {
            move |step: u64, loss: f64| cb(epoch_index + 1, step, loss)
        });
        let outcome = train_epoch(
            model,
            sampler,
            hooks.embed.as_deref_mut().map(|e| e as _),
            cfg,
            &mut opt,
            epoch_index,
            step_cb.as_mut().map(|cb| cb as _),
        )?;
        ema.update(varmap)?;
        global_step += outcome.steps;
        final_mean_loss = outcome.mean_loss;

        let mut candidates = Vec::new();
        if let Some(validate) = hooks.validate.as_deref_mut() {
            let (scores, winner, params) = select_best(model, varmap, &ema, validate)?;
            let top = &scores[winner];
            let improved = best.as_ref().map_or(true, |b| top.score_db > b.score_db);
            if improved {
                best = Some(BestRecord {
                    score_db: top.score_db,
                    source: top.source.clone(),
                    epoch: outcome.epoch,
                });
                let progress = TrainingProgress {
                    epoch: outcome.epoch,
                    global_step,
                    samples_seen: outcome.epoch * cfg.samples_per_epoch as u64,
                    seed: cfg.seed,
                    best: best.clone(),
                };
                Checkpoint::new(model.config().clone(), params, ema.tables()?, progress)
                    .write_file(&paths.best())?;
            }
            candidates = scores;
        }

        let progress = TrainingProgress {
            epoch: outcome.epoch,
            global_step,
            samples_seen: outcome.epoch * cfg.samples_per_epoch as u64,
            seed: cfg.seed,
            best: best.clone(),
        };
        Checkpoint::new(model.config().clone(), snapshot_varmap(varmap)?, ema.tables()?, progress)
            .write_file(&paths.latest())?;

        append_metrics(
            &paths.metrics(),
            &EpochRecord {
                epoch: outcome.epoch,
                mean_loss: outcome.mean_loss,
                final_loss: outcome.final_loss,
                steps: outcome.steps,
                seconds: outcome.seconds,
                candidates,
                best_source: best.as_ref().map(|b| b.source.clone()),
                best_score_db: best.as_ref().map(|b| b.score_db),
            },
        )?;
    }

    Ok(TrainReport {
        epochs_run: (cfg.epochs as u64).saturating_sub(start_epoch),
        resumed_from,
        final_mean_loss,
        best,
    })
}

// ── tests ──
