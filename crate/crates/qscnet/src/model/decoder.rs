//! Fusion-and-upsampling decoder stages.
//!
//! Each stage exactly inverts one encoder stage's frequency schedule: the
//! three bands upsample back to their pre-downsampling widths (learned
//! per-band expansion, cropping the padding phases), the regathered result
//! fuses with the matching encoder skip (channel concat, pointwise conv,
//! group norm, GELU), and a final same-pad conv per band refines the fused
//! feature. Output width equals the encoder stage's input width.

use candle_core::Tensor;
use candle_nn::{Conv1d, Module, VarBuilder};

use crate::error::Result;
use crate::model::config::{ModelConfig, StageShape};
use crate::nn::{fold_time, freq_upsample, same_pad_last, unfold_time};

struct UpBand {
    up: Conv1d,
    conv: Conv1d,
    kernel: usize,
    stride: usize,
}

pub struct DecoderStage {
    bands: Vec<UpBand>,
    fuse_conv: Conv1d,
    fuse_norm: candle_nn::GroupNorm,
    pub shape: StageShape,
    pub c_dec: usize,
}

/// Build the decoder stage inverting encoder stage `shape`. `c_in` is the
/// channel count arriving from below (the neck, or the previous decoder
/// stage); `c_dec` is this stage's output width.
pub fn decoder_stage(
    shape: StageShape,
    c_in: usize,
    c_dec: usize,
    cfg: &ModelConfig,
    vb: VarBuilder,
) -> Result<DecoderStage> {
    let scheme = &cfg.band_scheme;
    let mut bands = Vec::with_capacity(3);
    for b in 0..3 {
        let vb = vb.pp(format!("band{}", b + 1));
        let kernel = scheme.kernel_sizes[b];
        let stride = scheme.strides[b];
        let up = candle_nn::conv1d(c_in, c_dec * stride, 1, Default::default(), vb.pp("up"))?;
        let conv = candle_nn::conv1d(c_dec, c_dec, kernel, Default::default(), vb.pp("conv"))?;
        bands.push(UpBand { up, conv, kernel, stride });
    }
    let fuse_conv = candle_nn::conv1d(c_dec + shape.c_skip, c_dec, 1, Default::default(), vb.pp("fuse").pp("conv"))?;
    let fuse_norm = candle_nn::group_norm(cfg.group_norm_groups, c_dec, 1e-5, vb.pp("fuse").pp("norm"))?;
    Ok(DecoderStage { bands, fuse_conv, fuse_norm, shape, c_dec })
}

impl DecoderStage {
    /// (x [B, C_in, F_out, T], skip [B, C_skip, F_in, T]) -> [B, C_dec, F_in, T].
    pub fn forward(&self, x: &Tensor, skip: &Tensor) -> Result<Tensor> {
        let (folded, b, t) = fold_time(x)?;
        let (skip_folded, _, _) = fold_time(skip)?;

        let mut ups = Vec::with_capacity(3);
        let mut offset = 0;
        for (band, layer) in self.bands.iter().enumerate() {
            let down_width = self.shape.down[band];
            let slice = folded.narrow(2, offset, down_width)?;
            offset += down_width;
            ups.push(freq_upsample(&slice, layer.stride, &layer.up, self.shape.widths[band])?);
        }
        let up = Tensor::cat(&ups, 2)?; // [B*T, C_dec, F_in]

        let fused = Tensor::cat(&[up, skip_folded], 1)?;
        let fused = self.fuse_conv.forward(&fused)?;
        let fused = self.fuse_norm.forward(&fused)?.gelu()?;

        let mut outs = Vec::with_capacity(3);
        let mut f_off = 0;
        for (band, layer) in self.bands.iter().enumerate() {
            let width = self.shape.widths[band];
            let slice = fused.narrow(2, f_off, width)?;
            f_off += width;
            outs.push(layer.conv.forward(&same_pad_last(&slice, layer.kernel)?)?);
        }
        Ok(unfold_time(&Tensor::cat(&outs, 2)?, b, t)?)
    }
}
