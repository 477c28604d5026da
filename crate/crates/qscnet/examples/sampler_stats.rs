//! Statistics of the seeded training sampler on a toy corpus.
//!
//! Conditioned draws pick the target category uniformly from the usable
//! ones, gains stay inside the configured range, and a multi-stem example's
//! mixture is exactly the sum of its targets.

use qscnet::dataset::{
    build_clip_pool, build_query_pool, generate_corpus, scan_dataset, PoolParams, SampleMode,
    SamplerConfig, SplitLists, StemStore, ToyConfig, TrainingSampler, Vocabulary,
};
use qscnet::dataset::toy::extended_labels;
use qscnet::dataset::scan::{Split, SPLITS_DIR};
use qscnet::Result;

fn main() -> Result<()> {
    let dir = tempfile::tempdir()?;
    let root = dir.path().join("toy");
    generate_corpus(
        &root,
        &ToyConfig { songs: 3, seconds: 4.0, labels: extended_labels(), seed: 0 },
    )?;

    let vocab = Vocabulary::coarse6();
    let splits = SplitLists::load_dir(&root.join(SPLITS_DIR))?;
    let report = scan_dataset(&root, Some(&splits))?;
    let store = StemStore::load(&report, Split::Train, &vocab)?;

    let params = PoolParams { clip_seconds: 1.0, spacing_seconds: 0.5, ..PoolParams::default() };
    let clips = build_clip_pool(&store, &params);
    let queries = build_query_pool(&clips, &params);
    println!("clip pool per category: {:?}", clips.category_counts());

    // conditioned mode: category histogram over a few thousand draws
    let sampler = TrainingSampler::new(
        &store,
        &clips,
        &queries,
        SamplerConfig { seed: 7, ..SamplerConfig::default() },
        SampleMode::Conditioned,
    )?;
    let draws = 3000u64;
    let mut histogram = vec![0usize; vocab.len()];
    for i in 0..draws {
        let ex = sampler.example(i)?;
        let (_, category) = ex.query.expect("conditioned examples carry a query");
        histogram[category] += 1;
    }
    println!("category draws over {draws}:");
    for (name, count) in vocab.categories().iter().zip(&histogram) {
        let share = *count as f64 / draws as f64;
        println!("  {name:<10} {count:>5}  ({share:.3})");
    }

    // multi-stem mode: the mixture is the sum of the targets, by construction
    let sampler = TrainingSampler::new(
        &store,
        &clips,
        &queries,
        SamplerConfig { seed: 7, ..SamplerConfig::default() },
        SampleMode::MultiStem,
    )?;
    let mut worst = 0f32;
    for i in 0..50 {
        let ex = sampler.example(i)?;
        for ch in 0..2 {
            let mix = ex.mixture.channel(ch);
            for (s, &m) in mix.iter().enumerate() {
                let sum: f32 = ex.targets.iter().map(|t| t.channel(ch)[s]).sum();
                worst = worst.max((m - sum).abs());
            }
        }
    }
    println!("max |mixture - sum(targets)| over 50 multi-stem examples: {worst:.1e}");
    Ok(())
}
