//! Report rendering and run-to-run comparison.
//!
//! Two hand-built reports stand in for a baseline and an improved run on
//! the six-category vocabulary. Tables print in the conventional column
//! order (Bass first, aggregate before Others), and the comparison lists
//! per-category deltas of the candidate over the baseline.

use qscnet::dataset::Vocabulary;
use qscnet::evaluation::{compare_reports, CategoryResult, EvaluationReport};
use qscnet::Result;

fn report(vocab: &Vocabulary, medians: &[Option<f64>], label: &str) -> EvaluationReport {
    let categories: Vec<CategoryResult> = vocab
        .categories()
        .iter()
        .zip(medians)
        .map(|(name, m)| CategoryResult {
            category: name.clone(),
            tracks: vec![],
            median_db: *m,
        })
        .collect();
    let others = vocab.categories().last().cloned().unwrap_or_default();
    let scored: Vec<f64> = categories
        .iter()
        .filter(|c| c.category != others)
        .filter_map(|c| c.median_db)
        .collect();
    EvaluationReport {
        vocabulary: vocab.name().to_string(),
        categories,
        aggregate_name: vocab.aggregate_name(),
        aggregate_db: (!scored.is_empty())
            .then(|| scored.iter().sum::<f64>() / scored.len() as f64),
        query_seed: None,
        checkpoint: Some(label.to_string()),
        notes: vec![],
    }
}

fn main() -> Result<()> {
    let vocab = Vocabulary::coarse6();
    // vocabulary order: vocals, bass, drums, guitar, piano, others
    let baseline = report(
        &vocab,
        &[Some(8.0), Some(11.0), Some(9.5), Some(3.3), Some(2.5), None],
        "baseline.ckpt",
    );
    let candidate = report(
        &vocab,
        &[Some(9.8), Some(11.9), Some(11.7), Some(5.7), Some(3.4), Some(1.3)],
        "candidate.ckpt",
    );

    println!("{}", baseline.render());
    println!("{}", candidate.render());
    println!("{}", compare_reports(&baseline, &candidate)?.render());
    Ok(())
}
