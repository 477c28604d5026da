//! Dual-path recurrent neck.
//!
//! The latent feature [B, C, F, T] passes through an even number of blocks.
//! Odd-numbered blocks (1-based) run directly on the latent; even-numbered
//! blocks run on its real-FFT representation along the temporal axis, with
//! real and imaginary parts stacked into twice the channels, and transform
//! back afterwards. Every block sweeps a bidirectional LSTM along time and
//! then along frequency, each sweep wrapped as residual:
//! `x + proj(bilstm(layernorm(x)))`.

use std::sync::Arc;

use candle_core::{DType, Tensor};
use candle_nn::{Linear, Module, VarBuilder};

use crate::error::Result;
use crate::nn::fourier::{FourierCache, RfftBasis};
use crate::nn::lstm::{bi_lstm, BiLstm};
use crate::nn::{layer_norm, LayerNorm};

struct Sweep {
    norm: LayerNorm,
    lstm: BiLstm,
    proj: Linear,
}

fn sweep(channels: usize, hidden: usize, vb: VarBuilder) -> Result<Sweep> {
    Ok(Sweep {
        norm: layer_norm(channels, vb.pp("norm"))?,
        lstm: bi_lstm(channels, hidden, vb.pp("lstm"))?,
        proj: candle_nn::linear(2 * hidden, channels, vb.pp("proj"))?,
    })
}

impl Sweep {
    /// Residual recurrence over the middle axis of [N, S, C].
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.norm.forward(x)?;
        let h = self.lstm.forward(&h)?;
        let h = self.proj.forward(&h)?;
        Ok((x + h)?)
    }
}

/// One dual-path block over channels-last [B, F, T, C].
struct DualPathBlock {
    time: Sweep,
    freq: Sweep,
}

fn dual_path_block(channels: usize, hidden: usize, vb: VarBuilder) -> Result<DualPathBlock> {
    Ok(DualPathBlock {
        time: sweep(channels, hidden, vb.pp("time"))?,
        freq: sweep(channels, hidden, vb.pp("freq"))?,
    })
}

impl DualPathBlock {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, f, t, c) = x.dims4()?;
        // time sweep: each frequency bin is a sequence over T
        let h = x.reshape((b * f, t, c))?;
        let h = self.time.forward(&h)?;
        let h = h.reshape((b, f, t, c))?;
        // frequency sweep: each frame is a sequence over F
        let h = h.permute((0, 2, 1, 3))?.contiguous()?.reshape((b * t, f, c))?;
        let h = self.freq.forward(&h)?;
        Ok(h.reshape((b, t, f, c))?.permute((0, 2, 1, 3))?.contiguous()?)
    }
}

enum NeckBlock {
    Plain(DualPathBlock),
    Fourier(DualPathBlock),
}

pub struct Neck {
    blocks: Vec<NeckBlock>,
    cache: FourierCache,
    dtype: DType,
}

pub fn neck(channels: usize, hidden: usize, num_blocks: usize, dtype: DType, vb: VarBuilder) -> Result<Neck> {
    let mut blocks = Vec::with_capacity(num_blocks);
    for i in 0..num_blocks {
        let vb = vb.pp(format!("block{}", i + 1));
        // odd position: plain; even position: fourier-wrapped on 2C channels
        if i % 2 == 0 {
            blocks.push(NeckBlock::Plain(dual_path_block(channels, hidden, vb)?));
        } else {
            blocks.push(NeckBlock::Fourier(dual_path_block(2 * channels, hidden, vb)?));
        }
    }
    Ok(Neck { blocks, cache: FourierCache::new(), dtype })
}

impl Neck {
    /// Shape-preserving transform of the latent [B, C, F, T].
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, _, _, t) = x.dims4()?;
        let mut h = x.permute((0, 2, 3, 1))?.contiguous()?; // [B, F, T, C]
        let basis = self.cache.basis(t, self.dtype, x.device())?;
        for block in &self.blocks {
            h = match block {
                NeckBlock::Plain(block) => block.forward(&h)?,
                NeckBlock::Fourier(block) => Self::fourier_pass(block, &h, &basis)?,
            };
        }
        Ok(h.permute((0, 3, 1, 2))?.contiguous()?)
    }

    /// Run `block` on the temporal real-FFT of [B, F, T, C]: transform along
    /// T, stack (re, im) into 2C channels, sweep, transform back.
    fn fourier_pass(block: &DualPathBlock, x: &Tensor, basis: &Arc<RfftBasis>) -> Result<Tensor> {
        let (b, f, t, c) = x.dims4()?;
        let xt = x.permute((0, 1, 3, 2))?.contiguous()?; // [B, F, C, T]
        let (re, im) = basis.forward(&xt)?; // each [B, F, C, bins]
        let spec = Tensor::cat(&[re, im], 2)?; // [B, F, 2C, bins]
        let spec = spec.permute((0, 1, 3, 2))?.contiguous()?; // [B, F, bins, 2C]
        let spec = block.forward(&spec)?;
        let spec = spec.permute((0, 1, 3, 2))?.contiguous()?; // [B, F, 2C, bins]
        let re = spec.narrow(2, 0, c)?;
        let im = spec.narrow(2, c, c)?;
        let back = basis.inverse(&re, &im)?; // [B, F, C, T]
        debug_assert_eq!(back.dims(), &[b, f, c, t]);
        Ok(back.permute((0, 1, 3, 2))?.contiguous()?)
    }

    pub fn cache(&self) -> &FourierCache {
        &self.cache
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;
    use candle_nn::VarMap;

    #[test]
    fn neck_preserves_shape() {
        let dev = Device::Cpu;
        let varmap = VarMap::new();
        let vb = VarBuilder::from_varmap(&varmap, DType::F32, &dev);
        let neck = neck(6, 5, 4, DType::F32, vb).unwrap();
        for (b, f, t) in [(1usize, 4usize, 7usize), (2, 3, 8), (1, 1, 3)] {
            let x = Tensor::randn(0f32, 1.0, (b, 6, f, t), &dev).unwrap();
            let y = neck.forward(&x).unwrap();
            assert_eq!(y.dims(), x.dims(), "b={b} f={f} t={t}");
        }
    }

    #[test]
    fn alternation_doubles_fourier_block_width() {
        let dev = Device::Cpu;
        let varmap = VarMap::new();
        let vb = VarBuilder::from_varmap(&varmap, DType::F32, &dev);
        let _ = neck(6, 5, 2, DType::F32, vb).unwrap();
        let mut dims = std::collections::HashMap::new();
        let data = varmap.data().lock().unwrap();
        for (name, var) in data.iter() {
            dims.insert(name.clone(), var.dims().to_vec());
        }
        // plain block normalizes C=6, fourier block 2C=12
        assert_eq!(dims["block1.time.norm.weight"], vec![6]);
        assert_eq!(dims["block2.time.norm.weight"], vec![12]);
        assert_eq!(dims["block1.freq.lstm.w_ih"], vec![2, 6, 20]);
        assert_eq!(dims["block2.freq.lstm.w_ih"], vec![2, 12, 20]);
    }

    /// With all-zero projection weights every sweep is an identity residual,
    /// so the whole neck (fourier round trips included) must reproduce its
    /// input to transform precision.
    #[test]
    fn zeroed_projections_make_identity() {
        let dev = Device::Cpu;
        let varmap = VarMap::new();
        let vb = VarBuilder::from_varmap(&varmap, DType::F64, &dev);
        let neck = neck(4, 3, 4, DType::F64, vb).unwrap();
        {
            let data = varmap.data().lock().unwrap();
            for (name, var) in data.iter() {
                if name.ends_with("proj.weight") || name.ends_with("proj.bias") {
                    let zeros = Tensor::zeros(var.dims(), DType::F64, &dev).unwrap();
                    var.set(&zeros).unwrap();
                }
            }
        }
        let x = Tensor::randn(0f64, 1.0, (2, 4, 3, 9), &dev).unwrap();
        let y = neck.forward(&x).unwrap();
        let diff = (&y - &x).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert!(diff < 1e-10, "identity diff {diff}");
    }

    #[test]
    fn f64_backward_through_neck() {
        let dev = Device::Cpu;
        let varmap = VarMap::new();
        let vb = VarBuilder::from_varmap(&varmap, DType::F64, &dev);
        let neck = neck(4, 3, 2, DType::F64, vb).unwrap();
        let x = Tensor::randn(0f64, 1.0, (1, 4, 3, 6), &dev).unwrap();
        let y = neck.forward(&x).unwrap();
        let loss = y.sqr().unwrap().sum_all().unwrap();
        let grads = loss.backward().unwrap();
        for var in varmap.all_vars() {
            assert!(grads.get(&var).is_some(), "missing grad");
        }
    }
}
