//! Small neural building blocks on top of candle primitives.
//!
//! Everything here is written against ops whose CPU kernels support both f32
//! and f64 with working autodiff, since the gradient checks run the whole
//! model in f64. That rules out candle-nn's fused layer norm (f32-only) and
//! conv_transpose1d (no backward); layer norm is hand-rolled and frequency
//! resampling is expressed as reshape + pointwise convolution instead.

pub mod fourier;
pub mod lstm;
pub mod synthesis;

use candle_core::{Result, Tensor, D};
use candle_nn::{Init, Module, VarBuilder};

/// Layer normalization over the last dimension, from mean/variance
/// primitives.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    weight: Tensor,
    bias: Tensor,
    eps: f64,
}

pub fn layer_norm(dim: usize, vb: VarBuilder) -> Result<LayerNorm> {
    let weight = vb.get_with_hints(dim, "weight", Init::Const(1.0))?;
    let bias = vb.get_with_hints(dim, "bias", Init::Const(0.0))?;
    Ok(LayerNorm { weight, bias, eps: 1e-5 })
}

impl LayerNorm {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mu = x.mean_keepdim(D::Minus1)?;
        let xc = x.broadcast_sub(&mu)?;
        let var = xc.sqr()?.mean_keepdim(D::Minus1)?;
        let xn = xc.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        xn.broadcast_mul(&self.weight)?.broadcast_add(&self.bias)
    }
}

/// Zero-pad the last dimension so a kernel-`k` stride-1 conv keeps its
/// length ("same" padding; even kernels pad one extra on the right).
pub fn same_pad_last(x: &Tensor, k: usize) -> Result<Tensor> {
    if k <= 1 {
        return Ok(x.clone());
    }
    x.pad_with_zeros(D::Minus1, (k - 1) / 2, k / 2)
}

/// Fold the temporal axis of [B, C, F, T] into the batch so frequency-axis
/// convolutions run as conv1d on [B*T, C, F]. Returns the folded tensor with
/// the (b, t) extents needed to unfold.
pub fn fold_time(x: &Tensor) -> Result<(Tensor, usize, usize)> {
    let (b, c, f, t) = x.dims4()?;
    let y = x.permute((0, 3, 1, 2))?.contiguous()?.reshape((b * t, c, f))?;
    Ok((y, b, t))
}

/// Inverse of [`fold_time`]: [B*T, C, F] back to [B, C, F, T].
pub fn unfold_time(y: &Tensor, b: usize, t: usize) -> Result<Tensor> {
    let (bt, c, f) = y.dims3()?;
    debug_assert_eq!(bt, b * t);
    y.reshape((b, t, c, f))?.permute((0, 2, 3, 1))?.contiguous()
}

/// Downsample the last axis of [N, C, Fp] by integer factor `s` with a
/// learned kernel-`s` stride-`s` convolution, phrased as a phase reshape
/// followed by the pointwise conv `conv` (which must map C*s channels to
/// its output width). Fp must be a multiple of `s`.
pub fn freq_downsample(x: &Tensor, s: usize, conv: &candle_nn::Conv1d) -> Result<Tensor> {
    let y = if s == 1 {
        x.clone()
    } else {
        let (n, c, fp) = x.dims3()?;
        x.reshape((n, c, fp / s, s))?
            .permute((0, 1, 3, 2))?
            .contiguous()?
            .reshape((n, c * s, fp / s))?
    };
    conv.forward(&y)
}

/// Upsample the last axis of [N, C, F'] by integer factor `s`: the pointwise
/// conv `conv` expands channels to C_out*s, phases interleave back onto the
/// frequency axis, and the result is cropped to `width` (undoing the
/// downsample path's right padding).
pub fn freq_upsample(x: &Tensor, s: usize, conv: &candle_nn::Conv1d, width: usize) -> Result<Tensor> {
    let y = conv.forward(x)?;
    let y = if s == 1 {
        y
    } else {
        let (n, cs, f) = y.dims3()?;
        y.reshape((n, cs / s, s, f))?
            .permute((0, 1, 3, 2))?
            .contiguous()?
            .reshape((n, cs / s, f * s))?
    };
    y.narrow(D::Minus1, 0, width)
}
