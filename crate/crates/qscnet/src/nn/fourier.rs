//! Real DFT as differentiable matrix products.
//!
//! candle has no FFT op, so the Fourier-domain neck blocks and the in-graph
//! synthesis path multiply by precomputed cos/sin bases instead. The lengths
//! involved are a few hundred (temporal axis) or one frame (synthesis), so
//! the dense form is cheap, exact, and autodiff-friendly. Bases are cached
//! per (length, dtype).

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use candle_core::{DType, Device, Result, Tensor, D};

/// Forward and inverse bases for a real DFT of a fixed length.
#[derive(Debug)]
pub struct RfftBasis {
    pub len: usize,
    pub bins: usize, // len/2 + 1
    cos: Tensor,     // [len, bins]
    msin: Tensor,    // [len, bins], negated sine
    icos: Tensor,    // [bins, len], hermitian-weighted cos / len
    misin: Tensor,   // [bins, len], negated hermitian-weighted sin / len
}

impl RfftBasis {
    fn build(len: usize, dtype: DType, dev: &Device) -> Result<Self> {
        assert!(len >= 2, "rfft length must be at least 2");
        let bins = len / 2 + 1;
        let tau = 2.0 * std::f64::consts::PI;
        let mut cos = Vec::with_capacity(len * bins);
        let mut msin = Vec::with_capacity(len * bins);
        for t in 0..len {
            for k in 0..bins {
                let ang = tau * (t * k) as f64 / len as f64;
                cos.push(ang.cos());
                msin.push(-ang.sin());
            }
        }
        let mut icos = Vec::with_capacity(bins * len);
        let mut misin = Vec::with_capacity(bins * len);
        for k in 0..bins {
            // hermitian weight: conjugate-pair bins count twice
            let w = if k == 0 || (len % 2 == 0 && k == len / 2) { 1.0 } else { 2.0 };
            for t in 0..len {
                let ang = tau * (t * k) as f64 / len as f64;
                icos.push(w * ang.cos() / len as f64);
                misin.push(-w * ang.sin() / len as f64);
            }
        }
        let cos = Tensor::from_vec(cos, (len, bins), dev)?.to_dtype(dtype)?;
        let msin = Tensor::from_vec(msin, (len, bins), dev)?.to_dtype(dtype)?;
        let icos = Tensor::from_vec(icos, (bins, len), dev)?.to_dtype(dtype)?;
        let misin = Tensor::from_vec(misin, (bins, len), dev)?.to_dtype(dtype)?;
        Ok(Self { len, bins, cos, msin, icos, misin })
    }

    /// Real DFT along the last axis: `[.., len]` -> `(re, im)` each `[.., bins]`.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let re = x.broadcast_matmul(&self.cos)?;
        let im = x.broadcast_matmul(&self.msin)?;
        Ok((re, im))
    }

    /// Inverse along the last axis: `(re, im)` each `[.., bins]` -> `[.., len]`.
    /// The imaginary parts of the DC and Nyquist bins are ignored by
    /// construction, matching the usual irfft convention.
    pub fn inverse(&self, re: &Tensor, im: &Tensor) -> Result<Tensor> {
        re.broadcast_matmul(&self.icos)? + im.broadcast_matmul(&self.misin)?
    }
}

/// Shared cache of [`RfftBasis`] keyed by (length, dtype).
#[derive(Debug, Clone, Default)]
pub struct FourierCache {
    inner: Arc<Mutex<HashMap<(usize, DType), Arc<RfftBasis>>>>,
}

impl FourierCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn basis(&self, len: usize, dtype: DType, dev: &Device) -> Result<Arc<RfftBasis>> {
        let mut map = self.inner.lock().unwrap();
        if let Some(b) = map.get(&(len, dtype)) {
            return Ok(b.clone());
        }
        let b = Arc::new(RfftBasis::build(len, dtype, dev)?);
        map.insert((len, dtype), b.clone());
        Ok(b)
    }
}

/// Energy of a real sequence from its rfft, by Parseval: sum over bins of
/// hermitian-weighted |X_k|^2 / len. Used by tests and invariant checks.
pub fn spectrum_energy(re: &Tensor, im: &Tensor, len: usize) -> Result<Tensor> {
    let bins = re.dim(D::Minus1)?;
    let power = (re.sqr()? + im.sqr()?)?;
    let weights: Vec<f64> = (0..bins)
        .map(|k| if k == 0 || (len % 2 == 0 && k == len / 2) { 1.0 } else { 2.0 })
        .collect();
    let w = Tensor::from_vec(weights, bins, re.device())?.to_dtype(re.dtype())?;
    (power.broadcast_mul(&w)? / len as f64)?.sum(D::Minus1)
}
