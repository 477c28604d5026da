//! Mask projection head.
//!
//! Masks come from a frequency-unshared linear map: every output bin owns
//! its own weights over a `kernel`-bin neighborhood of the decoder feature,
//! emitting the 4 packed mask channels (stereo complex) per stem. Giving
//! each bin private weights is what puts most of a stem's parameter budget
//! into the head, and lets the projection specialize across the very
//! differently-behaved regions of the spectrum.

use candle_core::Tensor;
use candle_nn::{Init, VarBuilder};

use crate::error::Result;

pub struct MaskHead {
    /// [F, kernel * C_in, 4 * stems]
    weight: Tensor,
    /// [F, 1, 4 * stems]
    bias: Tensor,
    bins: usize,
    kernel: usize,
    c_in: usize,
    stems: usize,
}

pub fn mask_head(bins: usize, kernel: usize, c_in: usize, stems: usize, vb: VarBuilder) -> Result<MaskHead> {
    debug_assert!(kernel % 2 == 1);
    let fan_in = kernel * c_in;
    let bound = 1.0 / (fan_in as f64).sqrt();
    let init = Init::Uniform { lo: -bound, up: bound };
    let weight = vb.get_with_hints((bins, fan_in, 4 * stems), "weight", init)?;
    let bias = vb.get_with_hints((bins, 1, 4 * stems), "bias", init)?;
    Ok(MaskHead { weight, bias, bins, kernel, c_in, stems })
}

impl MaskHead {
    /// [B, C_in, F, T] -> masks [B, stems, 4, F, T].
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, f, t) = x.dims4()?;
        debug_assert_eq!(c, self.c_in);
        debug_assert_eq!(f, self.bins);
        let half = (self.kernel - 1) / 2;
        // gather the frequency neighborhood: feats[b, d, c, f, t] = x[b, c, f + d - half, t]
        let padded = x.pad_with_zeros(2, half, half)?;
        let mut shifts = Vec::with_capacity(self.kernel);
        for d in 0..self.kernel {
            shifts.push(padded.narrow(2, d, f)?);
        }
        let feats = Tensor::stack(&shifts, 1)?; // [B, k, C, F, T]
        // one matmul per bin: [F, B*T, k*C] x [F, k*C, 4*stems]
        let feats = feats
            .reshape((b, self.kernel * c, f, t))?
            .permute((2, 0, 3, 1))?
            .contiguous()?
            .reshape((f, b * t, self.kernel * c))?;
        let out = feats.matmul(&self.weight)?.broadcast_add(&self.bias)?; // [F, B*T, 4*stems]
        let out = out
            .reshape((f, b, t, self.stems, 4))?
            .permute((1, 3, 4, 0, 2))?
            .contiguous()?;
        Ok(out)
    }

    pub fn stems(&self) -> usize {
        self.stems
    }
}
