//! Banded-downsampling encoder stages.
//!
//! A stage splits the frequency axis into three bands, gives each band its
//! own convolutional processing (same-pad conv, group norm, GELU), then
//! downsamples each band along frequency with a learned stride. The
//! processed-but-not-yet-downsampled bands, regathered by concatenation,
//! become the stage's skip feature for the decoder; the downsampled bands,
//! regathered the same way, feed the next stage.
//!
//! The temporal axis folds into the batch ahead of the frequency convs, so
//! group-norm statistics are per time frame (over a group's channels and the
//! band's frequencies). Each frame therefore normalizes independently of its
//! neighbors, which keeps chunked inference consistent with full passes.

use candle_core::Tensor;
use candle_nn::{Conv1d, Module, VarBuilder};

use crate::error::Result;
use crate::model::config::{ModelConfig, StageShape};
use crate::nn::{fold_time, freq_downsample, same_pad_last, unfold_time};

struct BandLayer {
    conv: Conv1d,
    norm: candle_nn::GroupNorm,
    down: Conv1d,
    kernel: usize,
    stride: usize,
}

pub struct EncoderStage {
    bands: Vec<BandLayer>,
    pub shape: StageShape,
}

pub fn encoder_stage(shape: StageShape, cfg: &ModelConfig, vb: VarBuilder) -> Result<EncoderStage> {
    let scheme = &cfg.band_scheme;
    let mut bands = Vec::with_capacity(3);
    for b in 0..3 {
        let vb = vb.pp(format!("band{}", b + 1));
        let kernel = scheme.kernel_sizes[b];
        let stride = scheme.strides[b];
        let conv = candle_nn::conv1d(shape.c_in, shape.c_skip, kernel, Default::default(), vb.pp("conv"))?;
        let norm = candle_nn::group_norm(cfg.group_norm_groups, shape.c_skip, 1e-5, vb.pp("norm"))?;
        let down = candle_nn::conv1d(shape.c_skip * stride, shape.c_out, 1, Default::default(), vb.pp("down"))?;
        bands.push(BandLayer { conv, norm, down, kernel, stride });
    }
    Ok(EncoderStage { bands, shape })
}

impl EncoderStage {
    /// [B, C_in, F_in, T] -> (skip [B, C_skip, F_in, T], out [B, C_out, F_out, T]).
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let (folded, b, t) = fold_time(x)?;
        let mut skips = Vec::with_capacity(3);
        let mut outs = Vec::with_capacity(3);
        let mut offset = 0;
        for (band, layer) in self.bands.iter().enumerate() {
            let width = self.shape.widths[band];
            let slice = folded.narrow(2, offset, width)?;
            offset += width;
            let h = layer.conv.forward(&same_pad_last(&slice, layer.kernel)?)?;
            let h = layer.norm.forward(&h)?.gelu()?;
            skips.push(h.clone());
            let padded = h.pad_with_zeros(2, 0, self.shape.padded[band] - width)?;
            outs.push(freq_downsample(&padded, layer.stride, &layer.down)?);
        }
        let skip = unfold_time(&Tensor::cat(&skips, 2)?, b, t)?;
        let out = unfold_time(&Tensor::cat(&outs, 2)?, b, t)?;
        Ok((skip, out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};
    use candle_nn::VarMap;

    fn small_cfg() -> ModelConfig {
        let mut cfg = ModelConfig::conditioned_default(vec!["a".into()]);
        cfg.frame_length = 64; // 33 bins
        cfg.num_stages = 2;
        cfg.base_channels = 8;
        cfg.group_norm_groups = 2;
        cfg.band_scheme.ratios = [0.25, 0.35, 0.4];
        cfg.band_scheme.strides = [1, 2, 4];
        cfg.band_scheme.kernel_sizes = [3, 2, 4];
        cfg
    }

    #[test]
    fn stage_shapes_and_band_partition() {
        let cfg = small_cfg();
        cfg.validate().unwrap();
        let sched = cfg.schedule().unwrap();
        let varmap = VarMap::new();
        let vb = VarBuilder::from_varmap(&varmap, DType::F32, &Device::Cpu);
        let stage = encoder_stage(sched[0].clone(), &cfg, vb).unwrap();

        let x = Tensor::randn(0f32, 1.0, (2, 4, 33, 5), &Device::Cpu).unwrap();
        let (skip, out) = stage.forward(&x).unwrap();
        // widths: floor(33*.25)=8, floor(33*.35)=11, rest 14
        assert_eq!(sched[0].widths, [8, 11, 14]);
        assert_eq!(skip.dims(), &[2, 4, 33, 5]);
        // downs: 8/1 + ceil(11/2) + ceil(14/4) = 8+6+4
        assert_eq!(out.dims(), &[2, 8, 18, 5]);
    }

    /// A single stage against a direct per-band oracle built from the same
    /// weights: slice the band, run the conv/norm/act by hand through the
    /// same primitives on unfolded tensors, downsample with an explicit
    /// gather of stride phases.
    #[test]
    fn matches_per_band_oracle() {
        let cfg = small_cfg();
        let sched = cfg.schedule().unwrap();
        let shape = sched[0].clone();
        let varmap = VarMap::new();
        let vb = VarBuilder::from_varmap(&varmap, DType::F32, &Device::Cpu);
        let stage = encoder_stage(shape.clone(), &cfg, vb).unwrap();

        let dev = Device::Cpu;
        let x = Tensor::randn(0f32, 1.0, (1, 4, 33, 3), &dev).unwrap();
        let (skip, out) = stage.forward(&x).unwrap();
        let skip_v: Vec<f32> = skip.flatten_all().unwrap().to_vec1().unwrap();
        let out_v: Vec<f32> = out.flatten_all().unwrap().to_vec1().unwrap();

        // oracle: per time step, per band, run the layers on a 3D slice
        let mut oracle_skip = vec![0f32; skip_v.len()];
        let mut oracle_out = vec![0f32; out_v.len()];
        let (c_skip, c_out, f_out) = (shape.c_skip, shape.c_out, shape.f_out);
        for tt in 0..3 {
            let xt = x.narrow(3, tt, 1).unwrap().squeeze(3).unwrap(); // [1, 4, 33]
            let mut f_off = 0;
            let mut fo_off = 0;
            for (b, layer) in stage.bands.iter().enumerate() {
                let w = shape.widths[b];
                let slice = xt.narrow(2, f_off, w).unwrap();
                let h = layer.conv.forward(&same_pad_last(&slice, layer.kernel).unwrap()).unwrap();
                let h = layer.norm.forward(&h).unwrap().gelu().unwrap();
                let hv: Vec<f32> = h.flatten_all().unwrap().to_vec1().unwrap();
                for c in 0..c_skip {
                    for f in 0..w {
                        oracle_skip[(c * 33 + f_off + f) * 3 + tt] = hv[c * w + f];
                    }
                }
                // downsample: out[o, f] = bias[o] + sum_{c,j} W[o, c*s+j] * h[c, f*s+j]
                let wv: Vec<f32> = layer.down.weight().flatten_all().unwrap().to_vec1().unwrap();
                let bv: Vec<f32> = layer.down.bias().unwrap().to_vec1().unwrap();
                let s = layer.stride;
                let dw = shape.down[b];
                for o in 0..c_out {
                    for f in 0..dw {
                        let mut v = bv[o];
                        for c in 0..c_skip {
                            for j in 0..s {
                                let fj = f * s + j;
                                if fj < w {
                                    v += wv[o * c_skip * s + c * s + j] * hv[c * w + fj];
                                }
                            }
                        }
                        oracle_out[(o * f_out + fo_off + f) * 3 + tt] = v;
                    }
                }
                f_off += w;
                fo_off += dw;
            }
        }
        let worst_skip = skip_v.iter().zip(&oracle_skip).map(|(a, b)| (a - b).abs()).fold(0f32, f32::max);
        let worst_out = out_v.iter().zip(&oracle_out).map(|(a, b)| (a - b).abs()).fold(0f32, f32::max);
        assert!(worst_skip < 1e-5, "skip diff {worst_skip}");
        assert!(worst_out < 1e-5, "out diff {worst_out}");
    }

    #[test]
    fn zero_input_yields_bias_response_constant_in_time() {
        let cfg = small_cfg();
        let sched = cfg.schedule().unwrap();
        let varmap = VarMap::new();
        let vb = VarBuilder::from_varmap(&varmap, DType::F32, &Device::Cpu);
        let stage = encoder_stage(sched[0].clone(), &cfg, vb).unwrap();
        let x = Tensor::zeros((1, 4, 33, 4), DType::F32, &Device::Cpu).unwrap();
        let (_, out) = stage.forward(&x).unwrap();
        // every time step sees the same bias response
        let t0: Vec<f32> = out.narrow(3, 0, 1).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        for tt in 1..4 {
            let tv: Vec<f32> = out.narrow(3, tt, 1).unwrap().flatten_all().unwrap().to_vec1().unwrap();
            assert_eq!(t0, tv);
        }
    }

    #[test]
    fn f64_backward_through_stage() {
        let cfg = small_cfg();
        let sched = cfg.schedule().unwrap();
        let varmap = VarMap::new();
        let vb = VarBuilder::from_varmap(&varmap, DType::F64, &Device::Cpu);
        let stage = encoder_stage(sched[0].clone(), &cfg, vb).unwrap();
        let x = Tensor::randn(0f64, 1.0, (1, 4, 33, 3), &Device::Cpu).unwrap();
        let (skip, out) = stage.forward(&x).unwrap();
        let loss = (skip.sqr().unwrap().sum_all().unwrap() + out.sqr().unwrap().sum_all().unwrap()).unwrap();
        let grads = loss.backward().unwrap();
        for var in varmap.all_vars() {
            assert!(grads.get(&var).is_some(), "var missing grad");
        }
    }
}
