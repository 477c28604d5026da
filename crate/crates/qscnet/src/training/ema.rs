//! Exponential moving averages of model weights.
//!
//! One shadow table per decay. Shadows start at zero and follow
//! `shadow = d * shadow + (1 - d) * param`, with no bias correction: after k
//! updates on a constant parameter c the shadow sits at `c * (1 - d^k)`, which
//! warms up from zero over roughly `1 / (1 - d)` epochs. The update is meant
//! to run once per epoch, not per step.

use std::collections::BTreeMap;

use candle_core::{DType, Tensor};
use candle_nn::VarMap;

use crate::checkpoint::{Checkpoint, NamedTensor};
use crate::error::{bail_data, ensure_input, Result};

pub struct EmaSet {
    decays: Vec<f64>,
    /// Decay rendered exactly as configured, used as the table key.
    labels: Vec<String>,
    shadows: Vec<BTreeMap<String, Tensor>>,
    update_count: u64,
}

impl EmaSet {
    pub fn new(varmap: &VarMap, decays: &[f64]) -> Result<EmaSet> {
        for &d in decays {
            ensure_input!((0.0..=1.0).contains(&d), "ema decay {d} outside [0, 1]");
        }
        let data = varmap.data().lock().unwrap();
        let mut shadows = Vec::with_capacity(decays.len());
        for _ in decays {
            let mut table = BTreeMap::new();
            for (name, var) in data.iter() {
                table.insert(
                    name.clone(),
                    Tensor::zeros(var.shape(), var.dtype(), var.device())?,
                );
            }
            shadows.push(table);
        }
        Ok(EmaSet {
            decays: decays.to_vec(),
            labels: decays.iter().map(|d| d.to_string()).collect(),
            shadows,
            update_count: 0,
        })
    }

    pub fn decays(&self) -> &[f64] {
        &self.decays
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn update_count(&self) -> u64 {
        self.update_count
    }

    pub fn update(&mut self, varmap: &VarMap) -> Result<()> {
        let data = varmap.data().lock().unwrap();
        for (shadow, &d) in self.shadows.iter_mut().zip(&self.decays) {
            for (name, var) in data.iter() {
                let Some(s) = shadow.get_mut(name) else {
                    bail_data!("ema shadow missing parameter {name}");
                };
                *s = ((&*s * d)? + (var.as_tensor() * (1.0 - d))?)?;
            }
        }
        self.update_count += 1;
        Ok(())
    }

    pub fn shadow(&self, index: usize) -> &BTreeMap<String, Tensor> {
        &self.shadows[index]
    }

    /// Copies shadow `index` into the live parameters. The caller is expected
    /// to have snapshotted the raw weights first if it wants them back.
    pub fn load_shadow_into(&self, index: usize, varmap: &VarMap) -> Result<()> {
        let data = varmap.data().lock().unwrap();
        for (name, var) in data.iter() {
            let Some(s) = self.shadows[index].get(name) else {
                bail_data!("ema shadow missing parameter {name}");
            };
            let value = s.to_dtype(var.dtype())?.to_device(var.device())?;
            var.set(&value)?;
        }
        Ok(())
    }

    /// Tables in checkpoint form: `(decay label, update count, tensors)`.
    pub fn tables(&self) -> Result<Vec<(String, u64, Vec<NamedTensor>)>> {
        let mut out = Vec::with_capacity(self.shadows.len());
        for (shadow, label) in self.shadows.iter().zip(&self.labels) {
            let mut tensors = Vec::with_capacity(shadow.len());
            for (name, t) in shadow {
                tensors.push(NamedTensor {
                    name: name.clone(),
                    shape: t.dims().to_vec(),
                    data: t.flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()?,
                });
            }
            out.push((label.clone(), self.update_count, tensors));
        }
        Ok(out)
    }

    /// Restores shadows and the update count from a checkpoint; every decay
    /// configured here must have a table there.
    pub fn restore(&mut self, ckpt: &Checkpoint) -> Result<()> {
        let mut count = None;
        for (i, label) in self.labels.clone().iter().enumerate() {
            let Some(table) = ckpt.ema_table(label) else {
                bail_data!("checkpoint has no ema table for decay {label}");
            };
            match count {
                None => count = Some(table.update_count),
                Some(c) if c != table.update_count => {
                    bail_data!("ema tables disagree on update count");
                }
                _ => {}
            }
            for entry in &table.tensors {
                let Some(slot) = self.shadows[i].get_mut(&entry.name) else {
                    bail_data!("checkpoint ema table {label} has unknown parameter {}", entry.name);
                };
                let data = ckpt.tensor_data(entry);
                let restored = Tensor::from_vec(data.to_vec(), entry.shape.clone(), slot.device())?
                    .to_dtype(slot.dtype())?;
                ensure_input!(
                    restored.dims() == slot.dims(),
                    "ema tensor {} shape mismatch",
                    entry.name
                );
                *slot = restored;
            }
        }
        self.update_count = count.unwrap_or(0);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{Device, Var};
    use crate::checkpoint::{snapshot_varmap, TrainingProgress};
    use crate::model::ModelConfig;

    fn map_with(values: &[(&str, f64)]) -> VarMap {
        let varmap = VarMap::new();
        let data = varmap.data();
        for (name, value) in values {
            let var = Var::from_tensor(&Tensor::new(&[*value], &Device::Cpu).unwrap()).unwrap();
            data.lock().unwrap().insert((*name).into(), var);
        }
        varmap
    }

    fn scalar(t: &Tensor) -> f64 {
        t.to_vec1::<f64>().unwrap()[0]
    }

    #[test]
    fn decay_zero_tracks_parameters_exactly() {
        let varmap = map_with(&[("w", 1.25)]);
        let mut ema = EmaSet::new(&varmap, &[0.0]).unwrap();
        ema.update(&varmap).unwrap();
        assert_eq!(scalar(&ema.shadow(0)["w"]).to_bits(), 1.25f64.to_bits());
    }

    #[test]
    fn half_decay_matches_the_geometric_series() {
        let c = 0.8;
        let varmap = map_with(&[("w", c)]);
        let mut ema = EmaSet::new(&varmap, &[0.5]).unwrap();
        for k in 1..=10u32 {
            ema.update(&varmap).unwrap();
            let expect = c * (1.0 - 0.5f64.powi(k as i32));
            assert!((scalar(&ema.shadow(0)["w"]) - expect).abs() < 1e-12, "k={k}");
        }
        assert_eq!(ema.update_count(), 10);
    }

    #[test]
    fn decay_one_never_moves_off_the_zero_init() {
        let varmap = map_with(&[("w", 2.5)]);
        let mut ema = EmaSet::new(&varmap, &[1.0]).unwrap();
        for _ in 0..4 {
            ema.update(&varmap).unwrap();
        }
        assert_eq!(scalar(&ema.shadow(0)["w"]), 0.0);
    }

    #[test]
    fn shadows_start_at_zero() {
        let varmap = map_with(&[("w", 3.0)]);
        let ema = EmaSet::new(&varmap, &[0.99, 0.999]).unwrap();
        assert_eq!(scalar(&ema.shadow(0)["w"]), 0.0);
        assert_eq!(scalar(&ema.shadow(1)["w"]), 0.0);
        assert_eq!(ema.labels(), &["0.99".to_string(), "0.999".to_string()]);
    }

    #[test]
    fn load_shadow_overwrites_live_weights() {
        let varmap = map_with(&[("w", 2.0)]);
        let mut ema = EmaSet::new(&varmap, &[0.5]).unwrap();
        ema.update(&varmap).unwrap(); // shadow = 1.0
        ema.load_shadow_into(0, &varmap).unwrap();
        let data = varmap.data();
        let guard = data.lock().unwrap();
        assert_eq!(scalar(guard["w"].as_tensor()), 1.0);
    }

    #[test]
    fn checkpoint_roundtrip_restores_shadows_and_count() {
        let varmap = map_with(&[("a", 0.3), ("b", -1.0)]);
        let mut ema = EmaSet::new(&varmap, &[0.5, 0.9]).unwrap();
        for _ in 0..3 {
            ema.update(&varmap).unwrap();
        }
        let model = ModelConfig::conditioned_default(vec![]);
        let progress = TrainingProgress { epoch: 3, global_step: 9, samples_seen: 9, seed: 0, best: None };
        let ckpt = Checkpoint::new(
            model,
            snapshot_varmap(&varmap).unwrap(),
            ema.tables().unwrap(),
            progress,
        );

        let mut fresh = EmaSet::new(&varmap, &[0.5, 0.9]).unwrap();
        fresh.restore(&ckpt).unwrap();
        assert_eq!(fresh.update_count(), 3);
        for i in 0..2 {
            for name in ["a", "b"] {
                let want = scalar(&ema.shadow(i)[name]);
                let got = scalar(&fresh.shadow(i)[name]);
                assert!((want - got).abs() < 1e-7, "table {i} param {name}");
            }
        }

        let mut wrong = EmaSet::new(&varmap, &[0.25]).unwrap();
        assert!(wrong.restore(&ckpt).is_err());
    }
}
