//! A miniature end-to-end training run.
//!
//! Toy corpus in, a desk-size conditioned model, a few optimizer steps, and
//! the run directory artifacts (config snapshot, metrics log, checkpoints)
//! that a real run would leave behind. The model is far too small to
//! separate anything; the point is the loop.

use candle_core::{DType, Device};
use qscnet::conditioning::{Embedder, MockEmbedder};
use qscnet::dataset::toy::extended_labels;
use qscnet::dataset::scan::{Split, SPLITS_DIR};
use qscnet::dataset::{
    build_clip_pool, build_query_pool, generate_corpus, scan_dataset, PoolParams, SampleMode,
    SamplerConfig, SplitLists, StemStore, ToyConfig, TrainingSampler, Vocabulary,
};
use qscnet::model::config::BandScheme;
use qscnet::model::{build_with_varmap, HeadKind, ModelConfig};
use qscnet::training::{run_training, TrainConfig, TrainHooks};
use qscnet::{Result, Waveform};

fn main() -> Result<()> {
    let dir = tempfile::tempdir()?;
    let root = dir.path().join("toy");
    generate_corpus(
        &root,
        &ToyConfig { songs: 2, seconds: 4.0, labels: extended_labels(), seed: 0 },
    )?;

    let vocab = Vocabulary::coarse6();
    let splits = SplitLists::load_dir(&root.join(SPLITS_DIR))?;
    let report = scan_dataset(&root, Some(&splits))?;
    let store = StemStore::load(&report, Split::Train, &vocab)?;

    let train_cfg = TrainConfig {
        mode: SampleMode::Conditioned,
        batch_size: 1,
        samples_per_epoch: 4,
        epochs: 2,
        learning_rate: 1e-3,
        ema_decays: vec![0.9],
        clip_seconds: 0.05,
        ..TrainConfig::default()
    };
    let params = PoolParams {
        clip_seconds: train_cfg.clip_seconds,
        spacing_seconds: 0.5,
        ..PoolParams::default()
    };
    let clips = build_clip_pool(&store, &params);
    let queries = build_query_pool(&clips, &params);
    let sampler = TrainingSampler::new(
        &store,
        &clips,
        &queries,
        SamplerConfig { seed: train_cfg.seed, ..SamplerConfig::default() },
        train_cfg.mode,
    )?;

    let model_cfg = ModelConfig {
        frame_length: 48,
        num_stages: 2,
        base_channels: 4,
        band_scheme: BandScheme {
            ratios: [0.3, 0.3, 0.4],
            strides: [1, 2, 2],
            kernel_sizes: [3, 2, 2],
            channel_growth: [1, 1, 1],
        },
        neck_blocks: 2,
        neck_hidden: 5,
        mask_kernel: 3,
        group_norm_groups: 2,
        head: HeadKind::Conditioned,
        stems: vocab.categories().to_vec(),
        embedding_dim: 16,
        film_hidden: 8,
    };
    let (model, varmap) = build_with_varmap(&model_cfg, DType::F32, &Device::Cpu)?;

    let embedder = MockEmbedder::with_dim(model_cfg.embedding_dim, 0);
    let mut embed = |w: &Waveform| embedder.embed(w);
    let mut on_step =
        |epoch: u64, step: u64, loss: f64| println!("epoch {epoch} step {} loss {loss:.5}", step + 1);

    let run_dir = dir.path().join("run");
    let report = run_training(
        &model,
        &varmap,
        &sampler,
        &train_cfg,
        &run_dir,
        TrainHooks { embed: Some(&mut embed), validate: None, on_step: Some(&mut on_step) },
    )?;

    println!("\n{} epochs, final mean loss {:.5}", report.epochs_run, report.final_mean_loss);
    println!("run directory artifacts:");
    for name in ["config.json", "metrics.jsonl", "checkpoints/latest.ckpt"] {
        let path = run_dir.join(name);
        println!("  {name:<24} {} bytes", std::fs::metadata(&path)?.len());
    }
    Ok(())
}
