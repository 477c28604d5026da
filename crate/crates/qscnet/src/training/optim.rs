//! Adam with bias correction over a var map's parameters.
//!
//! Parameters are taken in name order, so two processes stepping the same
//! weights with the same gradients stay in lockstep. A parameter without a
//! gradient is an error rather than a silent skip: every weight in these
//! models lies on the loss path, so a missing gradient means a detached
//! graph, which is a bug worth crashing on.

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};
use candle_nn::VarMap;

use crate::error::{ensure_input, Result};

pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global-norm gradient clip, applied before the moment updates.
    pub grad_clip: Option<f64>,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams { learning_rate: 3e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, grad_clip: None }
    }
}

impl AdamParams {
    pub fn with_lr(learning_rate: f64) -> Self {
        AdamParams { learning_rate, ..Default::default() }
    }
}

struct Slot {
    name: String,
    var: Var,
    m: Tensor,
    v: Tensor,
}

pub struct Adam {
    params: AdamParams,
    step: u64,
    slots: Vec<Slot>,
}

impl Adam {
    pub fn new(varmap: &VarMap, params: AdamParams) -> Result<Adam> {
        ensure_input!(params.learning_rate >= 0.0, "negative learning rate");
        ensure_input!(
            (0.0..1.0).contains(&params.beta1) && (0.0..1.0).contains(&params.beta2),
            "betas must lie in [0, 1)"
        );
        let data = varmap.data().lock().unwrap();
        let mut slots = Vec::with_capacity(data.len());
        for (name, var) in data.iter() {
            let zeros = Tensor::zeros(var.shape(), var.dtype(), var.device())?;
            slots.push(Slot { name: name.clone(), var: var.clone(), m: zeros.clone(), v: zeros });
        }
        slots.sort_by(|a, b| a.name.cmp(&b.name));
        Ok(Adam { params, step: 0, slots })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn names(&self) -> Vec<&str> {
        self.slots.iter().map(|s| s.name.as_str()).collect()
    }

    /// Global L2 norm of the gradients for every slot.
    pub fn grad_norm(&self, grads: &GradStore) -> Result<f64> {
        let mut sq = 0f64;
        for slot in &self.slots {
            if let Some(g) = grads.get(slot.var.as_tensor()) {
                sq += g.sqr()?.sum_all()?.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
            }
        }
        Ok(sq.sqrt())
    }

    pub fn step(&mut self, grads: &GradStore) -> Result<()> {
        let scale = match self.params.grad_clip {
            Some(max) if max > 0.0 => {
                let norm = self.grad_norm(grads)?;
                if norm > max { max / norm } else { 1.0 }
            }
            _ => 1.0,
        };

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.params.beta1.powi(t);
        let bc2 = 1.0 - self.params.beta2.powi(t);

        for slot in &mut self.slots {
            let Some(grad) = grads.get(slot.var.as_tensor()) else {
                return Err(crate::Error::Numerical(format!(
                    "no gradient for parameter {}: the graph is detached",
                    slot.name
                )));
            };
            let grad = if scale != 1.0 { (grad * scale)? } else { grad.clone() };
            slot.m = ((&slot.m * self.params.beta1)? + (&grad * (1.0 - self.params.beta1))?)?;
            slot.v = ((&slot.v * self.params.beta2)? + (grad.sqr()? * (1.0 - self.params.beta2))?)?;
            let m_hat = (&slot.m / bc1)?;
            let v_hat = (&slot.v / bc2)?;
            let update = (m_hat * self.params.learning_rate)?
                .div(&(v_hat.sqrt()? + self.params.eps)?)?;
            slot.var.set(&slot.var.as_tensor().sub(&update)?)?;
        }
        Ok(())
    }
}
