//! Parameter budgets of the two default separators.
//!
//! The conditioned model stays small because one mask head and one FiLM
//! layer serve every instrument; the multi-stem baseline pays for a wider
//! final decoder stage and one mask head per stem.

use candle_core::{DType, Device};
use qscnet::dataset::Vocabulary;
use qscnet::model::{build_with_varmap, parameter_count, ModelConfig};
use qscnet::Result;

fn main() -> Result<()> {
    let stems = Vocabulary::coarse6().categories().to_vec();

    let conditioned = ModelConfig::conditioned_default(stems.clone());
    let (_m, vars) = build_with_varmap(&conditioned, DType::F32, &Device::Cpu)?;
    let n_cond = parameter_count(&vars);

    let multi = ModelConfig::multi_stem_default(stems);
    let (_m, vars) = build_with_varmap(&multi, DType::F32, &Device::Cpu)?;
    let n_multi = parameter_count(&vars);

    println!("conditioned separator: {:>11} parameters ({:.1}M)", n_cond, n_cond as f64 / 1e6);
    println!("multi-stem baseline:   {:>11} parameters ({:.1}M)", n_multi, n_multi as f64 / 1e6);
    println!("ratio: {:.2}x", n_multi as f64 / n_cond as f64);
    Ok(())
}
