//! Command-line front end.
//!
//! Every subcommand is a thin wrapper over library flows: `scan` walks a
//! dataset, `pools` caches clip/query pools, `embed-cache` fills the
//! embedding store, `train` runs the training loop, `separate` and
//! `evaluate` drive inference, `compare` diffs two evaluation reports, and
//! `toy-gen` renders the synthetic corpus. Commands never write into the
//! dataset directory; artifacts land in caller-chosen output paths, each
//! with a `run-config.json` echo of the arguments so a run can be repeated
//! from its outputs alone.
//!
//! Exit codes: 0 success, 1 usage or configuration, 2 data or I/O,
//! 3 numerical failure.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::audio::{read_wav, write_wav, WavEncoding, Waveform};
use crate::checkpoint::{Checkpoint, NamedTensor};
use crate::conditioning::{Embedder, EmbeddingCache, ExternalEmbedder, MockEmbedder};
use crate::dataset::pools::{build_clip_pool, build_query_pool, ClipRef, Pool, PoolParams};
use crate::dataset::sampler::{SampleMode, SamplerConfig, TrainingSampler};
use crate::dataset::scan::{scan_dataset, ScanReport, Split, SplitLists, SPLITS_DIR};
use crate::dataset::stems::StemStore;
use crate::dataset::taxonomy::Vocabulary;
use crate::dataset::toy::{default_labels, extended_labels, generate_corpus, ToyConfig};
use crate::error::{bail_data, bail_input, ensure_config, ensure_input, Error, Result};
use crate::evaluation::{
    compare_reports, evaluate_testset, EvalParams, EvaluationReport, ModelSeparator,
    OracleSeparator, ReportMeta,
};
use crate::model::{build_with_varmap, HeadKind, ModelConfig, SeparationModel};
use crate::training::{
    run_training, write_params, TrainConfig, TrainHooks,
};

use candle_core::{DType, Device};
use candle_nn::VarMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

// ── argument surface ──

#[derive(Debug, Parser)]
#[command(name = "qscnet", version, about = "Query-conditioned music source separation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Walk a dataset directory and report its songs, splits and problems.
    Scan(ScanArgs),
    /// Build clip and query pools for one split and cache them as TSV.
    Pools(PoolsArgs),
    /// Embed every query-pool clip into an on-disk embedding cache.
    EmbedCache(EmbedCacheArgs),
    /// Train a separator and write checkpoints plus per-epoch metrics.
    Train(TrainArgs),
    /// Separate one mixture file with a trained checkpoint.
    Separate(SeparateArgs),
    /// Score a checkpoint on a dataset split and render the median-SNR table.
    Evaluate(EvaluateArgs),
    /// Diff two evaluation reports category by category.
    Compare(CompareArgs),
    /// Render the miniature synthetic corpus.
    ToyGen(ToyGenArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum VocabArg {
    Coarse6,
    Fine10,
}

impl VocabArg {
    pub fn vocabulary(self) -> Vocabulary {
        match self {
            VocabArg::Coarse6 => Vocabulary::coarse6(),
            VocabArg::Fine10 => Vocabulary::fine10(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitArg {
    Train,
    Valid,
    Test,
}

impl SplitArg {
    fn split(self) -> Split {
        match self {
            SplitArg::Train => Split::Train,
            SplitArg::Valid => Split::Valid,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    Conditioned,
    MultiStem,
}

impl ModeArg {
    fn mode(self) -> SampleMode {
        match self {
            ModeArg::Conditioned => SampleMode::Conditioned,
            ModeArg::MultiStem => SampleMode::MultiStem,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PresetArg {
    /// Published model size.
    Default,
    /// Reduced body for CPU experiments on small corpora.
    Small,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbedderArg {
    /// Deterministic offline embedder; content-sensitive but untrained.
    Mock,
    /// Shell out to an external embedder via a command template.
    External,
}

/// Query-embedder selection, shared by every command that embeds audio.
#[derive(Debug, Clone, Args, Serialize)]
pub struct EmbedderOpts {
    /// Which embedder produces query embeddings.
    #[arg(long, value_enum, default_value = "mock")]
    pub embedder: EmbedderArg,
    /// External command template containing {input} and {output}.
    #[arg(long)]
    pub embed_cmd: Option<String>,
    /// Embedding width; defaults to the model's embedding_dim.
    #[arg(long)]
    pub embed_dim: Option<usize>,
    /// Seed for the mock embedder's projection matrix.
    #[arg(long, default_value_t = 0)]
    pub embed_seed: u64,
}

impl EmbedderOpts {
    fn build(&self, dim: usize, work_dir: &Path) -> Result<Box<dyn Embedder>> {
        match self.embedder {
            EmbedderArg::Mock => Ok(Box::new(MockEmbedder::with_dim(dim, self.embed_seed))),
            EmbedderArg::External => {
                let Some(cmd) = &self.embed_cmd else {
                    bail_input!("--embedder external needs --embed-cmd");
                };
                Ok(Box::new(ExternalEmbedder::new(cmd, dim, work_dir)?))
            }
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct ScanArgs {
    /// Dataset root: one directory per song, optional splits/ lists.
    pub root: PathBuf,
    /// Exit nonzero when any song is excluded, unknown or missing.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct PoolsArgs {
    /// Dataset root.
    #[arg(long)]
    pub data: PathBuf,
    /// Directory receiving clips.tsv and queries.tsv.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "coarse6")]
    pub vocab: VocabArg,
    #[arg(long, value_enum, default_value = "train")]
    pub split: SplitArg,
    /// Clip length in seconds.
    #[arg(long, default_value_t = 10.0)]
    pub clip_seconds: f64,
    /// Candidate start spacing in seconds.
    #[arg(long, default_value_t = 1.0)]
    pub spacing_seconds: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct EmbedCacheArgs {
    /// Dataset root.
    #[arg(long)]
    pub data: PathBuf,
    /// Embedding cache directory (created if absent).
    #[arg(long)]
    pub cache: PathBuf,
    #[arg(long, value_enum, default_value = "coarse6")]
    pub vocab: VocabArg,
    #[arg(long, value_enum, default_value = "train")]
    pub split: SplitArg,
    /// Query clip length in seconds.
    #[arg(long, default_value_t = 10.0)]
    pub clip_seconds: f64,
    /// Candidate start spacing in seconds.
    #[arg(long, default_value_t = 1.0)]
    pub spacing_seconds: f64,
    /// Parallel embedder processes; inserts stay ordered regardless.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[command(flatten)]
    pub embed: EmbedderOpts,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Dataset root.
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory for config, metrics and checkpoints; resumes if it
    /// already holds a checkpoint.
    #[arg(long)]
    pub run_dir: PathBuf,
    #[arg(long, value_enum, default_value = "coarse6")]
    pub vocab: VocabArg,
    /// Training mode; must match the model head.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// TOML file with optional [model] and [train] sections; flags override
    /// its fields, which override the built-in defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model size when the config file has no [model] section.
    #[arg(long, value_enum, default_value = "default")]
    pub preset: PresetArg,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub samples_per_epoch: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Global-norm gradient clip.
    #[arg(long)]
    pub grad_clip: Option<f64>,
    /// Comma-separated weight-average decays.
    #[arg(long, value_delimiter = ',')]
    pub ema_decays: Option<Vec<f64>>,
    /// Keep no weight averages at all.
    #[arg(long)]
    pub no_ema: bool,
    #[arg(long)]
    pub clip_seconds: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Query clip length for conditioned training and validation.
    #[arg(long, default_value_t = 10.0)]
    pub query_seconds: f64,
    /// Cache embeddings here instead of recomputing per draw.
    #[arg(long)]
    pub embed_cache: Option<PathBuf>,
    /// Skip per-epoch validation even when a valid split exists.
    #[arg(long)]
    pub no_validate: bool,
    /// Score only the first seconds of each validation song.
    #[arg(long)]
    pub valid_excerpt_seconds: Option<f64>,
    #[command(flatten)]
    pub embed: EmbedderOpts,
}

#[derive(Debug, Args, Serialize)]
pub struct SeparateArgs {
    /// Checkpoint file.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Mixture wav to separate.
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory for the separated stems.
    #[arg(long)]
    pub out: PathBuf,
    /// Query wav for a conditioned checkpoint; repeat to extract several
    /// sources from one encoding pass.
    #[arg(long = "query")]
    pub queries: Vec<PathBuf>,
    /// Stem name for a multi-stem checkpoint; repeat for several, default
    /// all.
    #[arg(long = "stem")]
    pub stems: Vec<String>,
    /// "raw" or "ema@<decay>": which stored weights to run.
    #[arg(long, default_value = "raw")]
    pub weights: String,
    /// Length of overlapping inference windows.
    #[arg(long, default_value_t = 10.0)]
    pub chunk_seconds: f64,
    #[command(flatten)]
    pub embed: EmbedderOpts,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    /// Checkpoint file; not needed with --oracle.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Dataset root.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "coarse6")]
    pub vocab: VocabArg,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Split whose stems supply the per-category queries; defaults to the
    /// evaluated split.
    #[arg(long, value_enum)]
    pub query_split: Option<SplitArg>,
    /// Seed for the per-category query draw, recorded in the report.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Query clip length in seconds.
    #[arg(long, default_value_t = 10.0)]
    pub query_seconds: f64,
    /// Write the report as JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// "raw" or "ema@<decay>": which stored weights to run.
    #[arg(long, default_value = "raw")]
    pub weights: String,
    /// Length of overlapping inference windows.
    #[arg(long, default_value_t = 10.0)]
    pub chunk_seconds: f64,
    /// Score only the first seconds of every song.
    #[arg(long)]
    pub excerpt_seconds: Option<f64>,
    /// Score absent stems against silence instead of skipping them.
    #[arg(long)]
    pub absent_as_silence: bool,
    /// Replace the model with the ground-truth oracle (metric check).
    #[arg(long)]
    pub oracle: bool,
    #[command(flatten)]
    pub embed: EmbedderOpts,
}

#[derive(Debug, Args, Serialize)]
pub struct CompareArgs {
    /// Baseline report JSON.
    pub a: PathBuf,
    /// Candidate report JSON.
    pub b: PathBuf,
    /// Write the comparison as JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ToyGenArgs {
    /// Corpus root to create.
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub songs: usize,
    #[arg(long, default_value_t = 16.0)]
    pub seconds: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Six-instrument label set instead of the four-instrument core.
    #[arg(long)]
    pub extended: bool,
}

// ── entry points ──

/// Parse the process arguments and run; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}

pub fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Scan(args) => cmd_scan(&args),
        Command::Pools(args) => cmd_pools(&args),
        Command::EmbedCache(args) => cmd_embed_cache(&args),
        Command::Train(args) => cmd_train(&args),
        Command::Separate(args) => cmd_separate(&args),
        Command::Evaluate(args) => cmd_evaluate(&args),
        Command::Compare(args) => cmd_compare(&args),
        Command::ToyGen(args) => cmd_toy_gen(&args),
    }
}

// ── shared plumbing ──

fn scan_with_splits(root: &Path) -> Result<ScanReport> {
    let splits_dir = root.join(SPLITS_DIR);
    let splits = if splits_dir.is_dir() { Some(SplitLists::load_dir(&splits_dir)?) } else { None };
    scan_dataset(root, splits.as_ref())
}

fn load_split_store(root: &Path, split: Split, vocab: &Vocabulary) -> Result<StemStore> {
    let report = scan_with_splits(root)?;
    let store = StemStore::load(&report, split, vocab)?;
    if store.songs.is_empty() {
        bail_data!("no songs in the {} split of {}", split.as_str(), root.display());
    }
    Ok(store)
}

fn write_run_config(dir: &Path, value: &impl Serialize) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(dir.join("run-config.json"), text + "\n")?;
    Ok(())
}

#[derive(Serialize)]
struct RunRecord<'a, T: Serialize> {
    command: &'a str,
    args: &'a T,
}

/// Cut the referenced clip out of its stored stem.
fn materialize_clip(store: &StemStore, clip: &ClipRef) -> Result<Waveform> {
    let Some(idx) = store.index_of(&clip.song_id) else {
        bail_data!("clip references unknown song {}", clip.song_id);
    };
    let Some(stem) = store.songs[idx].stems[clip.category].as_ref() else {
        bail_data!("clip references absent stem {} of {}", clip.category, clip.song_id);
    };
    stem.slice(clip.start, clip.len)
}

/// One query per category, drawn uniformly from the query pool with a
/// per-category seed stream. Categories with no usable clips come back
/// `None`.
pub fn draw_category_queries(
    store: &StemStore,
    queries: &Pool,
    seed: u64,
) -> Result<Vec<Option<Waveform>>> {
    let mut out = Vec::with_capacity(queries.per_category.len());
    for (cat, clips) in queries.per_category.iter().enumerate() {
        if clips.is_empty() {
            out.push(None);
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(cat as u64);
        let clip = &clips[rng.gen_range(0..clips.len())];
        out.push(Some(materialize_clip(store, clip)?));
    }
    Ok(out)
}

fn embed_queries(
    queries: &[Option<Waveform>],
    embedder: &dyn Embedder,
    mut cache: Option<&mut EmbeddingCache>,
) -> Result<Vec<Option<Vec<f32>>>> {
    queries
        .iter()
        .map(|q| {
            q.as_ref()
                .map(|w| match cache.as_mut() {
                    Some(c) => c.get_or_embed(w, embedder),
                    None => embedder.embed(w),
                })
                .transpose()
        })
        .collect()
}

fn load_checkpoint_model(
    path: &Path,
    weights: &str,
) -> Result<(Checkpoint, SeparationModel, VarMap)> {
    let ckpt = Checkpoint::read_file(path)?;
    let (model, varmap) = build_with_varmap(&ckpt.header.model, DType::F32, &Device::Cpu)?;
    ckpt.load_strict(&varmap)?;
    apply_weight_choice(&ckpt, &varmap, weights)?;
    Ok((ckpt, model, varmap))
}

/// Select which stored weights run: the raw parameters or one of the
/// averaged shadow tables.
fn apply_weight_choice(ckpt: &Checkpoint, varmap: &VarMap, choice: &str) -> Result<()> {
    if choice == "raw" {
        return Ok(());
    }
    let Some(label) = choice.strip_prefix("ema@") else {
        bail_input!("--weights takes \"raw\" or \"ema@<decay>\", got {choice:?}");
    };
    let Some(table) = ckpt.ema_table(label) else {
        let have: Vec<&str> = ckpt.header.ema.iter().map(|t| t.decay.as_str()).collect();
        bail_input!("checkpoint has no weight average {label:?}; available: {have:?}");
    };
    ensure_input!(
        table.update_count > 0,
        "weight average {label:?} was never updated; refusing the all-zero shadow"
    );
    let tensors: Vec<NamedTensor> = table
        .tensors
        .iter()
        .map(|e| NamedTensor {
            name: e.name.clone(),
            shape: e.shape.clone(),
            data: ckpt.tensor_data(e).to_vec(),
        })
        .collect();
    write_params(varmap, &tensors)
}

fn checkpoint_label(path: &Path, ckpt: &Checkpoint, weights: &str) -> String {
    let epoch = ckpt.header.progress.epoch;
    if weights == "raw" {
        format!("{} (epoch {epoch})", path.display())
    } else {
        format!("{} (epoch {epoch}, {weights})", path.display())
    }
}

// ── scan ──

pub fn cmd_scan(args: &ScanArgs) -> Result<()> {
    let report = scan_with_splits(&args.root)?;
    print!("{}", report.render());
    if args.strict && report.has_problems() {
        let n = report.excluded.len() + report.unknown_labels.len() + report.missing.len();
        bail_data!("strict scan found {n} problem(s)");
    }
    Ok(())
}

// ── pools ──

pub fn cmd_pools(args: &PoolsArgs) -> Result<()> {
    let vocab = args.vocab.vocabulary();
    let store = load_split_store(&args.data, args.split.split(), &vocab)?;
    let params = PoolParams {
        clip_seconds: args.clip_seconds,
        spacing_seconds: args.spacing_seconds,
        ..PoolParams::default()
    };
    let clips = build_clip_pool(&store, &params);
    let queries = build_query_pool(&clips, &params);

    std::fs::create_dir_all(&args.out)?;
    clips.save_tsv(&args.out.join("clips.tsv"))?;
    queries.save_tsv(&args.out.join("queries.tsv"))?;
    write_run_config(&args.out, &RunRecord { command: "pools", args })?;

    println!("split {} of {}:", args.split.split().as_str(), args.data.display());
    for (cat, (nc, nq)) in vocab
        .categories()
        .iter()
        .zip(clips.category_counts().into_iter().zip(queries.category_counts()))
    {
        println!("  {cat:<24} {nc:>5} clips  {nq:>5} queries");
    }
    println!("cached under {}", args.out.display());
    Ok(())
}

// ── embed-cache ──

pub fn cmd_embed_cache(args: &EmbedCacheArgs) -> Result<()> {
    ensure_config!(args.workers >= 1, "--workers must be at least 1");
    let vocab = args.vocab.vocabulary();
    let store = load_split_store(&args.data, args.split.split(), &vocab)?;
    let params = PoolParams {
        clip_seconds: args.clip_seconds,
        spacing_seconds: args.spacing_seconds,
        ..PoolParams::default()
    };
    let queries = build_query_pool(&build_clip_pool(&store, &params), &params);

    let dim = args.embed.embed_dim.unwrap_or(768);
    let mut cache = EmbeddingCache::open(&args.cache, dim)?;
    let work_root = args.cache.join("work");

    // materialize once, skip what the cache already holds
    let mut pending: Vec<(String, Waveform)> = Vec::new();
    let mut total = 0usize;
    for clips in &queries.per_category {
        for clip in clips {
            total += 1;
            let wave = materialize_clip(&store, clip)?;
            let hash = EmbeddingCache::content_hash(&wave);
            if cache.lookup(&hash)?.is_none() && !pending.iter().any(|(h, _)| *h == hash) {
                pending.push((hash, wave));
            }
        }
    }

    let embeddings = embed_batch(&args.embed, dim, &work_root, args.workers, &pending)?;
    for ((hash, _), emb) in pending.iter().zip(&embeddings) {
        cache.insert(hash, emb)?;
    }
    write_run_config(&args.cache, &RunRecord { command: "embed-cache", args })?;

    println!(
        "{} query clips, {} new embeddings, cache now holds {} rows of {}",
        total,
        pending.len(),
        cache.len(),
        dim
    );
    Ok(())
}

/// Embed `pending` in order, fanning out over `workers` embedder instances.
/// Each worker gets its own scratch directory so external commands never
/// share temp files.
fn embed_batch(
    opts: &EmbedderOpts,
    dim: usize,
    work_root: &Path,
    workers: usize,
    pending: &[(String, Waveform)],
) -> Result<Vec<Vec<f32>>> {
    if workers <= 1 || pending.len() <= 1 {
        let embedder = opts.build(dim, &work_root.join("w0"))?;
        return pending.iter().map(|(_, w)| embedder.embed(w)).collect();
    }
    let per_worker = (pending.len() + workers - 1) / workers;
    let chunk_results: Vec<Result<Vec<Vec<f32>>>> = std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for (wi, slice) in pending.chunks(per_worker).enumerate() {
            let work = work_root.join(format!("w{wi}"));
            handles.push(scope.spawn(move || -> Result<Vec<Vec<f32>>> {
                let embedder = opts.build(dim, &work)?;
                slice.iter().map(|(_, w)| embedder.embed(w)).collect()
            }));
        }
        handles.into_iter().map(|h| h.join().expect("embed worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(pending.len());
    for chunk in chunk_results {
        out.extend(chunk?);
    }
    Ok(out)
}

// ── train ──

/// Optional `[model]` and `[train]` sections of a TOML config file. The
/// model section, when present, is a complete [`ModelConfig`]; the train
/// section overrides individual fields.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    model: Option<ModelConfig>,
    train: Option<TrainOverrides>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainOverrides {
    mode: Option<SampleMode>,
    batch_size: Option<usize>,
    samples_per_epoch: Option<usize>,
    epochs: Option<usize>,
    learning_rate: Option<f64>,
    grad_clip: Option<f64>,
    ema_decays: Option<Vec<f64>>,
    clip_seconds: Option<f64>,
    seed: Option<u64>,
}

fn load_file_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else { return Ok(FileConfig::default()) };
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text)
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
}

/// Defaults, then the config file, then the command line, most specific
/// last. With a [model] section and no explicit mode anywhere, the mode
/// follows the model head.
fn resolve_train_config(args: &TrainArgs, file: &FileConfig) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if args.mode.is_none() && file.train.as_ref().map_or(true, |t| t.mode.is_none()) {
        if let Some(model) = &file.model {
            cfg.mode = match model.head {
                HeadKind::Conditioned => SampleMode::Conditioned,
                HeadKind::MultiStem => SampleMode::MultiStem,
            };
        }
    }
    if let Some(o) = &file.train {
        if let Some(v) = o.mode {
            cfg.mode = v;
        }
        if let Some(v) = o.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = o.samples_per_epoch {
            cfg.samples_per_epoch = v;
        }
        if let Some(v) = o.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = o.learning_rate {
            cfg.learning_rate = v;
        }
        if let Some(v) = o.grad_clip {
            cfg.grad_clip = Some(v);
        }
        if let Some(v) = &o.ema_decays {
            cfg.ema_decays = v.clone();
        }
        if let Some(v) = o.clip_seconds {
            cfg.clip_seconds = v;
        }
        if let Some(v) = o.seed {
            cfg.seed = v;
        }
    }
    if let Some(v) = args.mode {
        cfg.mode = v.mode();
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.samples_per_epoch {
        cfg.samples_per_epoch = v;
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.grad_clip {
        cfg.grad_clip = Some(v);
    }
    if let Some(v) = &args.ema_decays {
        cfg.ema_decays = v.clone();
    }
    if args.no_ema {
        cfg.ema_decays.clear();
    }
    if let Some(v) = args.clip_seconds {
        cfg.clip_seconds = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn resolve_model_config(
    args: &TrainArgs,
    file: &FileConfig,
    vocab: &Vocabulary,
    mode: SampleMode,
) -> Result<ModelConfig> {
    let head = match mode {
        SampleMode::Conditioned => HeadKind::Conditioned,
        SampleMode::MultiStem => HeadKind::MultiStem,
    };
    if let Some(model) = &file.model {
        ensure_config!(
            model.head == head,
            "config file declares a {:?} head but training mode wants {:?}",
            model.head,
            head
        );
        model.validate()?;
        return Ok(model.clone());
    }
    let stems = vocab.categories().to_vec();
    let mut cfg = match head {
        HeadKind::Conditioned => ModelConfig::conditioned_default(stems),
        HeadKind::MultiStem => ModelConfig::multi_stem_default(stems),
    };
    if args.preset == PresetArg::Small {
        cfg.frame_length = 1024;
        cfg.base_channels = 16;
        cfg.neck_blocks = 4;
        cfg.neck_hidden = 64;
        cfg.mask_kernel = 7;
        cfg.film_hidden = 64;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct TrainRunRecord<'a> {
    command: &'a str,
    args: &'a TrainArgs,
    model: &'a ModelConfig,
    train: &'a TrainConfig,
    /// Seed of the per-category validation query draw.
    validation_query_seed: u64,
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let file = load_file_config(args.config.as_deref())?;
    let cfg = resolve_train_config(args, &file)?;
    let vocab = args.vocab.vocabulary();
    let model_cfg = resolve_model_config(args, &file, &vocab, cfg.mode)?;

    let report = scan_with_splits(&args.data)?;
    let store = StemStore::load(&report, Split::Train, &vocab)?;
    if store.songs.is_empty() {
        bail_data!("no songs in the train split of {}", args.data.display());
    }
    let pool_params = PoolParams {
        clip_seconds: cfg.clip_seconds,
        spacing_seconds: PoolParams::default().spacing_seconds,
        ..PoolParams::default()
    };
    let clips = build_clip_pool(&store, &pool_params);
    let query_params = PoolParams { clip_seconds: args.query_seconds, ..pool_params };
    let queries = build_query_pool(&build_clip_pool(&store, &query_params), &query_params);
    let sampler = TrainingSampler::new(
        &store,
        &clips,
        &queries,
        SamplerConfig { seed: cfg.seed, ..SamplerConfig::default() },
        cfg.mode,
    )?;

    let (model, varmap) = build_with_varmap(&model_cfg, DType::F32, &Device::Cpu)?;
    println!(
        "{:?} model, {} parameters, {} steps/epoch x {} epochs",
        model_cfg.head,
        crate::model::parameter_count(&varmap),
        cfg.steps_per_epoch(),
        cfg.epochs
    );

    // query embedding path, conditioned mode only
    let embedder: Option<Box<dyn Embedder>> = match cfg.mode {
        SampleMode::Conditioned => {
            Some(args.embed.build(model_cfg.embedding_dim, &args.run_dir.join("embed-work"))?)
        }
        SampleMode::MultiStem => None,
    };
    if let Some(e) = &embedder {
        ensure_config!(
            e.embedding_dim() == model_cfg.embedding_dim,
            "embedder emits {} values but the model wants {}",
            e.embedding_dim(),
            model_cfg.embedding_dim
        );
    }
    let mut cache = match (&args.embed_cache, &embedder) {
        (Some(dir), Some(e)) => Some(EmbeddingCache::open(dir, e.embedding_dim())?),
        _ => None,
    };
    let mut embed_closure = embedder.as_ref().map(|e| {
        move |w: &Waveform| -> Result<Vec<f32>> {
            match cache.as_mut() {
                Some(c) => c.get_or_embed(w, e.as_ref()),
                None => e.embed(w),
            }
        }
    });

    // validation on the valid split's full songs, when one exists
    let valid_store = if args.no_validate {
        None
    } else {
        let s = StemStore::load(&report, Split::Valid, &vocab)?;
        if s.songs.is_empty() {
            println!("no valid split; epochs keep the latest weights only");
            None
        } else {
            Some(s)
        }
    };
    let eval_params =
        EvalParams { excerpt_seconds: args.valid_excerpt_seconds, include_absent_as_silence: false };
    let validation_query_seed = cfg.seed;
    let valid_embeddings = match (&valid_store, cfg.mode) {
        (Some(vs), SampleMode::Conditioned) => {
            let vq = build_query_pool(&build_clip_pool(vs, &query_params), &query_params);
            let drawn = draw_category_queries(vs, &vq, validation_query_seed)?;
            let e = embedder.as_ref().expect("conditioned mode built an embedder");
            Some(embed_queries(&drawn, e.as_ref(), None)?)
        }
        _ => None,
    };
    let mut validate_closure: Option<Box<dyn FnMut(&SeparationModel) -> Result<f64> + '_>> =
        match &valid_store {
            Some(vs) => {
                let mode = cfg.mode;
                let embeddings = valid_embeddings.clone();
                let params = eval_params.clone();
                Some(Box::new(move |m: &SeparationModel| -> Result<f64> {
                    let meta = ReportMeta::default();
                    let mut sep = match mode {
                        SampleMode::MultiStem => ModelSeparator::multi_stem(m, 10.0)?,
                        SampleMode::Conditioned => ModelSeparator::conditioned(
                            m,
                            embeddings.clone().expect("conditioned validation embeds queries"),
                            10.0,
                        )?,
                    };
                    let rep = evaluate_testset(&mut sep, vs, &params, &meta)?;
                    rep.aggregate_db.ok_or_else(|| {
                        Error::Data("validation scored no tracks; aggregate is empty".into())
                    })
                }))
            }
            None => None,
        };

    let steps_per_epoch = cfg.steps_per_epoch() as u64;
    let mut on_step = |epoch: u64, step: u64, loss: f64| {
        let s = step + 1;
        if s == 1 || s % 100 == 0 || s == steps_per_epoch {
            println!("epoch {epoch} step {s}/{steps_per_epoch} loss {loss:.5}");
        }
    };

    write_run_config(
        &args.run_dir,
        &TrainRunRecord {
            command: "train",
            args,
            model: &model_cfg,
            train: &cfg,
            validation_query_seed,
        },
    )?;

    let hooks = TrainHooks {
        embed: embed_closure.as_mut().map(|c| c as _),
        validate: validate_closure.as_deref_mut().map(|c| c as _),
        on_step: Some(&mut on_step),
    };
    let report = run_training(&model, &varmap, &sampler, &cfg, &args.run_dir, hooks)?;

    if let Some(from) = report.resumed_from {
        println!("resumed after epoch {from}");
    }
    match &report.best {
        Some(best) => println!(
            "done: {} epochs, final mean loss {:.5}, best {} at epoch {} ({:.2} dB)",
            report.epochs_run, report.final_mean_loss, best.source, best.epoch, best.score_db
        ),
        None => println!(
            "done: {} epochs, final mean loss {:.5}",
            report.epochs_run, report.final_mean_loss
        ),
    }
    Ok(())
}

// ── separate ──

pub fn cmd_separate(args: &SeparateArgs) -> Result<()> {
    let (ckpt, model, _varmap) = load_checkpoint_model(&args.checkpoint, &args.weights)?;
    let mixture = read_wav(&args.input)?;
    std::fs::create_dir_all(&args.out)?;

    let outputs: Vec<(String, Waveform)> = match model.config().head {
        HeadKind::Conditioned => {
            if args.queries.is_empty() {
                bail_input!("a conditioned checkpoint needs at least one --query wav");
            }
            ensure_input!(args.stems.is_empty(), "--stem only applies to multi-stem checkpoints");
            let embedder = args
                .embed
                .build(model.config().embedding_dim, &args.out.join("embed-work"))?;
            let mut embeddings = Vec::new();
            for path in &args.queries {
                embeddings.push(Some(embedder.embed(&read_wav(path)?)?));
            }
            let mut sep = ModelSeparator::conditioned(&model, embeddings, args.chunk_seconds)?;
            let estimates = crate::evaluation::Separator::separate(&mut sep, "input", &mixture)?;
            args.queries
                .iter()
                .zip(estimates)
                .map(|(path, est)| {
                    let name = path
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_else(|| "query".into());
                    (name, est.expect("every query slot is active"))
                })
                .collect()
        }
        HeadKind::MultiStem => {
            ensure_input!(args.queries.is_empty(), "--query only applies to conditioned checkpoints");
            let stems = &model.config().stems;
            let wanted: Vec<usize> = if args.stems.is_empty() {
                (0..stems.len()).collect()
            } else {
                args.stems
                    .iter()
                    .map(|name| {
                        stems.iter().position(|s| s == name).ok_or_else(|| {
                            Error::InvalidInput(format!(
                                "checkpoint has no stem {name:?}; it holds {stems:?}"
                            ))
                        })
                    })
                    .collect::<Result<_>>()?
            };
            let mut sep = ModelSeparator::multi_stem(&model, args.chunk_seconds)?;
            let estimates = crate::evaluation::Separator::separate(&mut sep, "input", &mixture)?;
            wanted
                .into_iter()
                .map(|i| {
                    (stems[i].clone(), estimates[i].clone().expect("multi-stem fills every slot"))
                })
                .collect()
        }
    };

    let mut written = Vec::new();
    for (i, (name, wave)) in outputs.iter().enumerate() {
        ensure_input!(
            wave.len() == mixture.len(),
            "separated output length {} differs from input {}",
            wave.len(),
            mixture.len()
        );
        let mut file = args.out.join(format!("{name}.wav"));
        if written.contains(&file) {
            file = args.out.join(format!("{name}-{i}.wav"));
        }
        write_wav(&file, wave, WavEncoding::Float32)?;
        written.push(file);
    }
    write_run_config(&args.out, &RunRecord { command: "separate", args })?;

    println!(
        "separated {} ({} weights, epoch {}):",
        args.input.display(),
        args.weights,
        ckpt.header.progress.epoch
    );
    for file in &written {
        println!("  {}", file.display());
    }
    Ok(())
}

// ── evaluate ──

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let vocab = args.vocab.vocabulary();
    let store = load_split_store(&args.data, args.split.split(), &vocab)?;
    let params = EvalParams {
        excerpt_seconds: args.excerpt_seconds,
        include_absent_as_silence: args.absent_as_silence,
    };

    let report = if args.oracle {
        ensure_input!(args.checkpoint.is_none(), "--oracle runs without a checkpoint");
        let mut sep = OracleSeparator { store: &store };
        evaluate_testset(&mut sep, &store, &params, &ReportMeta::default())?
    } else {
        let Some(ckpt_path) = &args.checkpoint else {
            bail_input!("--checkpoint is required unless --oracle is set");
        };
        let (ckpt, model, _varmap) = load_checkpoint_model(ckpt_path, &args.weights)?;
        let meta_ckpt = checkpoint_label(ckpt_path, &ckpt, &args.weights);
        match model.config().head {
            HeadKind::MultiStem => {
                ensure_input!(
                    model.config().stems == vocab.categories(),
                    "multi-stem checkpoint emits {:?} but the {} vocabulary wants {:?}",
                    model.config().stems,
                    vocab.name(),
                    vocab.categories()
                );
                let meta = ReportMeta { query_seed: None, checkpoint: Some(meta_ckpt) };
                let mut sep = ModelSeparator::multi_stem(&model, args.chunk_seconds)?;
                evaluate_testset(&mut sep, &store, &params, &meta)?
            }
            HeadKind::Conditioned => {
                let query_split = args.query_split.unwrap_or(args.split).split();
                let query_store;
                let qs: &StemStore = if query_split == args.split.split() {
                    &store
                } else {
                    query_store = load_split_store(&args.data, query_split, &vocab)?;
                    &query_store
                };
                let qparams =
                    PoolParams { clip_seconds: args.query_seconds, ..PoolParams::default() };
                let qpool = build_query_pool(&build_clip_pool(qs, &qparams), &qparams);
                let drawn = draw_category_queries(qs, &qpool, args.seed)?;
                let embedder = args.embed.build(
                    model.config().embedding_dim,
                    &std::env::temp_dir().join("qscnet-embed-work"),
                )?;
                let embeddings = embed_queries(&drawn, embedder.as_ref(), None)?;
                let meta =
                    ReportMeta { query_seed: Some(args.seed), checkpoint: Some(meta_ckpt) };
                let mut sep =
                    ModelSeparator::conditioned(&model, embeddings, args.chunk_seconds)?;
                evaluate_testset(&mut sep, &store, &params, &meta)?
            }
        }
    };

    print!("{}", report.render());
    if let Some(out) = &args.out {
        if let Some(parent) = out.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        std::fs::write(out, serde_json::to_string_pretty(&report)? + "\n")?;
        println!("report written to {}", out.display());
    }
    Ok(())
}

// ── compare ──

pub fn cmd_compare(args: &CompareArgs) -> Result<()> {
    let load = |path: &Path| -> Result<EvaluationReport> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    };
    let a = load(&args.a)?;
    let b = load(&args.b)?;
    let cmp = compare_reports(&a, &b)?;
    print!("{}", cmp.render());
    if let Some(out) = &args.out {
        std::fs::write(out, serde_json::to_string_pretty(&cmp)? + "\n")?;
        println!("comparison written to {}", out.display());
    }
    Ok(())
}

// ── toy-gen ──

pub fn cmd_toy_gen(args: &ToyGenArgs) -> Result<()> {
    let labels = if args.extended { extended_labels() } else { default_labels() };
    let cfg = ToyConfig {
        songs: args.songs,
        seconds: args.seconds,
        labels: labels.clone(),
        seed: args.seed,
    };
    generate_corpus(&args.out, &cfg)?;
    println!(
        "{} songs x {:.1}s with stems {:?} under {} (seed {})",
        args.songs,
        args.seconds,
        labels,
        args.out.display(),
        args.seed
    );
    Ok(())
}

// ── tests ──

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::SNR_CAP_DB;
    use clap::CommandFactory;

    fn parse(line: &[&str]) -> Cli {
        Cli::try_parse_from(line).expect("argument line parses")
    }

    #[test]
    fn clap_definition_is_internally_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn usage_errors_exit_with_one() {
        let err = Cli::try_parse_from(["qscnet", "separate"]).unwrap_err();
        assert!(err.use_stderr());
        // and a conditioned checkpoint without --query is a usage error too,
        // covered end to end in the training round trip below
    }

    fn toy(dir: &Path, songs: usize, seconds: f64) {
        cmd_toy_gen(&ToyGenArgs {
            out: dir.to_path_buf(),
            songs,
            seconds,
            seed: 0,
            extended: false,
        })
        .unwrap();
    }

    #[test]
    fn toy_corpus_scans_clean_even_strictly() {
        let dir = tempfile::tempdir().unwrap();
        toy(dir.path(), 4, 2.0);
        let args = ScanArgs { root: dir.path().to_path_buf(), strict: true };
        cmd_scan(&args).unwrap();
    }

    #[test]
    fn scan_strict_fails_on_a_stray_song() {
        let dir = tempfile::tempdir().unwrap();
        toy(dir.path(), 3, 2.0);
        // a song directory not listed in any split
        std::fs::create_dir_all(dir.path().join("stray/kick_drum")).unwrap();
        std::fs::write(dir.path().join("stray/kick_drum/1.wav"), b"junk").unwrap();
        let lax = ScanArgs { root: dir.path().to_path_buf(), strict: false };
        cmd_scan(&lax).unwrap();
        let strict = ScanArgs { root: dir.path().to_path_buf(), strict: true };
        let err = cmd_scan(&strict).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn pools_command_caches_loadable_tsv() {
        let dir = tempfile::tempdir().unwrap();
        toy(dir.path(), 3, 4.0);
        let out = dir.path().join("pools");
        cmd_pools(&PoolsArgs {
            data: dir.path().to_path_buf(),
            out: out.clone(),
            vocab: VocabArg::Coarse6,
            split: SplitArg::Train,
            clip_seconds: 2.0,
            spacing_seconds: 1.0,
        })
        .unwrap();
        let clips = Pool::load_tsv(&out.join("clips.tsv")).unwrap();
        let queries = Pool::load_tsv(&out.join("queries.tsv")).unwrap();
        assert_eq!(clips.per_category.len(), 6);
        assert!(clips.total() > 0);
        assert!(queries.total() > 0);
        assert!(out.join("run-config.json").exists());
    }

    #[test]
    fn embed_cache_is_idempotent_and_worker_count_invariant() {
        let dir = tempfile::tempdir().unwrap();
        toy(dir.path(), 3, 4.0);
        let args = |cache: PathBuf, workers: usize| EmbedCacheArgs {
            data: dir.path().to_path_buf(),
            cache,
            vocab: VocabArg::Coarse6,
            split: SplitArg::Train,
            clip_seconds: 0.5,
            spacing_seconds: 1.0,
            workers,
            embed: EmbedderOpts {
                embedder: EmbedderArg::Mock,
                embed_cmd: None,
                embed_dim: Some(16),
                embed_seed: 0,
            },
        };
        let solo = dir.path().join("cache-1");
        cmd_embed_cache(&args(solo.clone(), 1)).unwrap();
        let table = std::fs::read(solo.join("table.bin")).unwrap();
        let manifest = std::fs::read(solo.join("manifest.txt")).unwrap();
        assert!(!table.is_empty());

        // second run adds nothing
        cmd_embed_cache(&args(solo.clone(), 1)).unwrap();
        assert_eq!(std::fs::read(solo.join("table.bin")).unwrap(), table);

        // parallel fill produces byte-identical cache files
        let duo = dir.path().join("cache-2");
        cmd_embed_cache(&args(duo.clone(), 3)).unwrap();
        assert_eq!(std::fs::read(duo.join("table.bin")).unwrap(), table);
        assert_eq!(std::fs::read(duo.join("manifest.txt")).unwrap(), manifest);
    }

    /// Complete tiny TOML config: a desk-size conditioned model plus a
    /// two-step training schedule.
    fn tiny_toml(mode: &str) -> String {
        format!(
            r#"
[model]
frame_length = 48
num_stages = 2
base_channels = 4
neck_blocks = 2
neck_hidden = 5
mask_kernel = 3
group_norm_groups = 2
head = "{mode}"
stems = ["vocals", "bass", "drums", "guitar", "piano", "others"]
embedding_dim = 9
film_hidden = 6

[model.band_scheme]
ratios = [0.3, 0.3, 0.4]
strides = [1, 2, 2]
kernel_sizes = [3, 2, 2]
channel_growth = [1, 1, 1]

[train]
batch_size = 1
samples_per_epoch = 2
epochs = 1
learning_rate = 0.001
ema_decays = [0.5]
clip_seconds = 0.05
seed = 7
"#
        )
    }

    fn tiny_train_args(data: &Path, run_dir: &Path, config: &Path) -> TrainArgs {
        TrainArgs {
            data: data.to_path_buf(),
            run_dir: run_dir.to_path_buf(),
            vocab: VocabArg::Coarse6,
            mode: None,
            config: Some(config.to_path_buf()),
            preset: PresetArg::Default,
            epochs: None,
            batch_size: None,
            samples_per_epoch: None,
            learning_rate: None,
            grad_clip: None,
            ema_decays: None,
            no_ema: false,
            clip_seconds: None,
            seed: None,
            query_seconds: 0.05,
            embed_cache: None,
            no_validate: false,
            valid_excerpt_seconds: Some(0.05),
            embed: EmbedderOpts {
                embedder: EmbedderArg::Mock,
                embed_cmd: None,
                embed_dim: None,
                embed_seed: 0,
            },
        }
    }

    #[test]
    fn train_separate_evaluate_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        toy(&data, 2, 4.0); // split: 1 train song, 1 valid song
        let config = dir.path().join("tiny.toml");
        std::fs::write(&config, tiny_toml("conditioned")).unwrap();
        let run_dir = dir.path().join("run");

        // fresh run: config, metrics, checkpoints, run record
        cmd_train(&tiny_train_args(&data, &run_dir, &config)).unwrap();
        assert!(run_dir.join("config.json").exists());
        assert!(run_dir.join("run-config.json").exists());
        assert!(run_dir.join("checkpoints/latest.ckpt").exists());
        assert!(run_dir.join("checkpoints/best.ckpt").exists());
        let metrics = std::fs::read_to_string(run_dir.join("metrics.jsonl")).unwrap();
        assert_eq!(metrics.lines().count(), 1);

        // second invocation resumes past the finished epoch
        let mut resumed = tiny_train_args(&data, &run_dir, &config);
        resumed.epochs = Some(2);
        cmd_train(&resumed).unwrap();
        let metrics = std::fs::read_to_string(run_dir.join("metrics.jsonl")).unwrap();
        assert_eq!(metrics.lines().count(), 2);

        // separate a short mixture with the trained checkpoint
        let ckpt = run_dir.join("checkpoints/latest.ckpt");
        let song = StemStore::load(
            &scan_with_splits(&data).unwrap(),
            Split::Valid,
            &Vocabulary::coarse6(),
        )
        .unwrap();
        let mixture = song.songs[0].mixture().slice(0, 8820).unwrap();
        let mix_path = dir.path().join("mix.wav");
        write_wav(&mix_path, &mixture, WavEncoding::Float32).unwrap();
        let query = mixture.slice(0, 2205).unwrap();
        let query_path = dir.path().join("bass-query.wav");
        write_wav(&query_path, &query, WavEncoding::Float32).unwrap();

        let sep_out = dir.path().join("sep");
        let sep_args = |queries: Vec<PathBuf>, weights: &str| SeparateArgs {
            checkpoint: ckpt.clone(),
            input: mix_path.clone(),
            out: sep_out.clone(),
            queries,
            stems: vec![],
            weights: weights.into(),
            chunk_seconds: 10.0,
            embed: EmbedderOpts {
                embedder: EmbedderArg::Mock,
                embed_cmd: None,
                embed_dim: None,
                embed_seed: 0,
            },
        };

        // conditioned checkpoint without a query is a usage error
        let err = cmd_separate(&sep_args(vec![], "raw")).unwrap_err();
        assert_eq!(err.exit_code(), 1);

        cmd_separate(&sep_args(vec![query_path.clone()], "raw")).unwrap();
        let est = read_wav(&sep_out.join("bass-query.wav")).unwrap();
        assert_eq!(est.len(), mixture.len());

        // averaged weights are selectable, and an unknown label is refused
        cmd_separate(&sep_args(vec![query_path.clone()], "ema@0.5")).unwrap();
        let err = cmd_separate(&sep_args(vec![query_path], "ema@0.9")).unwrap_err();
        assert_eq!(err.exit_code(), 1);

        // evaluate the checkpoint on the valid split, twice, identically
        let eval_args = |out: PathBuf| EvaluateArgs {
            checkpoint: Some(ckpt.clone()),
            data: data.clone(),
            vocab: VocabArg::Coarse6,
            split: SplitArg::Valid,
            query_split: None,
            seed: 3,
            query_seconds: 0.05,
            out: Some(out),
            weights: "raw".into(),
            chunk_seconds: 10.0,
            excerpt_seconds: Some(0.05),
            absent_as_silence: false,
            oracle: false,
            embed: EmbedderOpts {
                embedder: EmbedderArg::Mock,
                embed_cmd: None,
                embed_dim: None,
                embed_seed: 0,
            },
        };
        let rep_a = dir.path().join("a.json");
        let rep_b = dir.path().join("b.json");
        cmd_evaluate(&eval_args(rep_a.clone())).unwrap();
        cmd_evaluate(&eval_args(rep_b.clone())).unwrap();
        assert_eq!(
            std::fs::read(&rep_a).unwrap(),
            std::fs::read(&rep_b).unwrap(),
            "same seed, same checkpoint, same report bytes"
        );
        let report: EvaluationReport =
            serde_json::from_str(&std::fs::read_to_string(&rep_a).unwrap()).unwrap();
        assert_eq!(report.query_seed, Some(3));
        assert!(report.checkpoint.as_deref().unwrap().contains("latest.ckpt"));

        // identical reports compare to zero everywhere
        cmd_compare(&CompareArgs { a: rep_a.clone(), b: rep_b, out: None }).unwrap();
    }

    #[test]
    fn multi_stem_training_and_stem_selection() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        toy(&data, 2, 4.0);
        let config = dir.path().join("tiny.toml");
        std::fs::write(&config, tiny_toml("multi_stem")).unwrap();
        let run_dir = dir.path().join("run");
        let mut train = tiny_train_args(&data, &run_dir, &config);
        train.no_validate = true; // mode comes from the file's model head
        cmd_train(&train).unwrap();
        let ckpt = run_dir.join("checkpoints/latest.ckpt");

        let store = StemStore::load(
            &scan_with_splits(&data).unwrap(),
            Split::Valid,
            &Vocabulary::coarse6(),
        )
        .unwrap();
        let mixture = store.songs[0].mixture().slice(0, 4410).unwrap();
        let mix_path = dir.path().join("mix.wav");
        write_wav(&mix_path, &mixture, WavEncoding::Float32).unwrap();

        let sep_args = |stems: Vec<String>| SeparateArgs {
            checkpoint: ckpt.clone(),
            input: mix_path.clone(),
            out: dir.path().join("sep"),
            queries: vec![],
            stems,
            weights: "raw".into(),
            chunk_seconds: 10.0,
            embed: EmbedderOpts {
                embedder: EmbedderArg::Mock,
                embed_cmd: None,
                embed_dim: None,
                embed_seed: 0,
            },
        };
        cmd_separate(&sep_args(vec!["bass".into()])).unwrap();
        let out_dir = dir.path().join("sep");
        assert!(out_dir.join("bass.wav").exists());
        assert!(!out_dir.join("vocals.wav").exists(), "only the asked-for stem is written");
        assert_eq!(read_wav(&out_dir.join("bass.wav")).unwrap().len(), mixture.len());

        let err = cmd_separate(&sep_args(vec!["theremin".into()])).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn oracle_evaluation_caps_and_mismatched_reports_refuse_to_compare() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        toy(&data, 3, 4.0); // 1 train, 1 valid, 1 test song
        let eval_args = |vocab, out: PathBuf| EvaluateArgs {
            checkpoint: None,
            data: data.clone(),
            vocab,
            split: SplitArg::Test,
            query_split: None,
            seed: 0,
            query_seconds: 0.5,
            out: Some(out),
            weights: "raw".into(),
            chunk_seconds: 10.0,
            excerpt_seconds: None,
            absent_as_silence: false,
            oracle: true,
            embed: EmbedderOpts {
                embedder: EmbedderArg::Mock,
                embed_cmd: None,
                embed_dim: None,
                embed_seed: 0,
            },
        };
        let coarse = dir.path().join("coarse.json");
        let fine = dir.path().join("fine.json");
        cmd_evaluate(&eval_args(VocabArg::Coarse6, coarse.clone())).unwrap();
        cmd_evaluate(&eval_args(VocabArg::Fine10, fine.clone())).unwrap();

        let report: EvaluationReport =
            serde_json::from_str(&std::fs::read_to_string(&coarse).unwrap()).unwrap();
        assert_eq!(report.aggregate_db, Some(SNR_CAP_DB), "oracle hits the cap");

        let err = cmd_compare(&CompareArgs { a: coarse, b: fine, out: None }).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn config_layering_lets_flags_override_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let config = dir.path().join("tiny.toml");
        std::fs::write(&config, tiny_toml("conditioned")).unwrap();
        let mut args = tiny_train_args(Path::new("x"), Path::new("y"), &config);
        args.epochs = Some(11);
        args.seed = Some(42);
        let file = load_file_config(Some(&config)).unwrap();
        let cfg = resolve_train_config(&args, &file).unwrap();
        // flag beats file
        assert_eq!(cfg.epochs, 11);
        assert_eq!(cfg.seed, 42);
        // file beats default
        assert_eq!(cfg.batch_size, 1);
        assert_eq!(cfg.clip_seconds, 0.05);
        assert_eq!(cfg.ema_decays, vec![0.5]);
        // untouched default survives
        assert_eq!(cfg.learning_rate, 0.001);
        assert!(cfg.grad_clip.is_none());

        let model = resolve_model_config(&args, &file, &Vocabulary::coarse6(), cfg.mode).unwrap();
        assert_eq!(model.frame_length, 48);
        assert_eq!(model.head, HeadKind::Conditioned);

        // a typo in the file is a config error, not a silent ignore
        std::fs::write(&config, "[train]\nbatchsize = 3\n").unwrap();
        let err = load_file_config(Some(&config)).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn mode_and_file_head_must_agree() {
        let dir = tempfile::tempdir().unwrap();
        let config = dir.path().join("tiny.toml");
        std::fs::write(&config, tiny_toml("multi_stem")).unwrap();
        let mut args = tiny_train_args(Path::new("x"), Path::new("y"), &config);
        args.mode = Some(ModeArg::Conditioned);
        let file = load_file_config(Some(&config)).unwrap();
        let cfg = resolve_train_config(&args, &file).unwrap();
        let err = resolve_model_config(&args, &file, &Vocabulary::coarse6(), cfg.mode).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn small_preset_builds_a_lighter_model() {
        let config = PathBuf::from("unused");
        let mut args = tiny_train_args(Path::new("x"), Path::new("y"), &config);
        args.config = None;
        args.preset = PresetArg::Small;
        let file = FileConfig::default();
        let small =
            resolve_model_config(&args, &file, &Vocabulary::coarse6(), SampleMode::Conditioned)
                .unwrap();
        let full = ModelConfig::conditioned_default(Vocabulary::coarse6().categories().to_vec());
        assert!(small.frame_length < full.frame_length);
        let (_m, varmap) = build_with_varmap(&small, DType::F32, &Device::Cpu).unwrap();
        let n = crate::model::parameter_count(&varmap);
        assert!(n > 0 && n < 4_000_000, "small preset is {n} parameters");
    }

    #[test]
    fn command_lines_parse_into_the_expected_shapes() {
        let cli = parse(&[
            "qscnet", "train", "--data", "d", "--run-dir", "r", "--mode", "multi-stem",
            "--ema-decays", "0.9,0.99", "--epochs", "3",
        ]);
        let Command::Train(t) = cli.command else { panic!("expected train") };
        assert_eq!(t.mode, Some(ModeArg::MultiStem));
        assert_eq!(t.ema_decays, Some(vec![0.9, 0.99]));
        assert_eq!(t.epochs, Some(3));

        let cli = parse(&[
            "qscnet", "separate", "--checkpoint", "c", "--input", "m.wav", "--out", "o",
            "--query", "q1.wav", "--query", "q2.wav",
        ]);
        let Command::Separate(s) = cli.command else { panic!("expected separate") };
        assert_eq!(s.queries.len(), 2);
        assert_eq!(s.weights, "raw");

        let cli = parse(&["qscnet", "evaluate", "--data", "d", "--oracle", "--vocab", "fine10"]);
        let Command::Evaluate(e) = cli.command else { panic!("expected evaluate") };
        assert!(e.oracle);
        assert_eq!(e.vocab, VocabArg::Fine10);
    }
}
