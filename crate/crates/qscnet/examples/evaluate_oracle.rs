//! The evaluation pipeline scored against ground truth.
//!
//! Feeding the reference stems back as "estimates" drives every SNR to the
//! +100 dB cap, which pins down the metric plumbing: per-category medians,
//! the aggregate over non-others categories, absent-stem handling, and the
//! rendered table. A zero separator sits at the opposite end.

use qscnet::dataset::toy::extended_labels;
use qscnet::dataset::scan::{Split, SPLITS_DIR};
use qscnet::dataset::{
    generate_corpus, scan_dataset, SplitLists, StemStore, ToyConfig, Vocabulary,
};
use qscnet::evaluation::{
    evaluate_testset, EvalParams, OracleSeparator, ReportMeta, ZeroSeparator,
};
use qscnet::Result;

fn main() -> Result<()> {
    let dir = tempfile::tempdir()?;
    let root = dir.path().join("toy");
    generate_corpus(
        &root,
        &ToyConfig { songs: 4, seconds: 3.0, labels: extended_labels(), seed: 0 },
    )?;

    let vocab = Vocabulary::coarse6();
    let splits = SplitLists::load_dir(&root.join(SPLITS_DIR))?;
    let report = scan_dataset(&root, Some(&splits))?;
    let store = StemStore::load(&report, Split::Test, &vocab)?;
    let params = EvalParams::default();
    let meta = ReportMeta::default();

    let mut oracle = OracleSeparator { store: &store };
    let perfect = evaluate_testset(&mut oracle, &store, &params, &meta)?;
    println!("ground truth as the estimate:\n{}", perfect.render());

    let mut zero = ZeroSeparator { categories: vocab.len() };
    let silent = evaluate_testset(&mut zero, &store, &params, &meta)?;
    println!("silence as the estimate:\n{}", silent.render());
    Ok(())
}
