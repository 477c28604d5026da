//! In-graph masking and inverse STFT.
//!
//! Training losses live in the time domain, so the path from predicted mask
//! to reconstructed waveform has to be differentiable: complex mask multiply,
//! inverse real DFT per frame (dense basis), windowed overlap-add, and the
//! window-square normalization. The arithmetic mirrors `spectral::istft`
//! exactly; a consistency test pins the two together.

use candle_core::{DType, Device, Result, Tensor};

use crate::nn::fourier::FourierCache;
use crate::spectral::{periodic_hann, PackedSpectrogram};

/// `[B,4,F,T]` tensors use the same channel order as [`PackedSpectrogram`]:
/// (left-real, left-imag, right-real, right-imag).
pub fn packed_to_tensor(p: &PackedSpectrogram, dtype: DType, dev: &Device) -> Result<Tensor> {
    Tensor::from_slice(&p.data, (4, p.bins, p.frames), dev)?.to_dtype(dtype)
}

pub fn tensor_to_packed(t: &Tensor) -> Result<PackedSpectrogram> {
    let (c, bins, frames) = t.dims3()?;
    assert_eq!(c, 4, "expected a 4-channel packed tensor");
    let data = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    Ok(PackedSpectrogram { bins, frames, data })
}

/// Complex mask multiply per stereo channel, on `[B,4,F,T]` tensors.
pub fn apply_mask_graph(mask: &Tensor, mix: &Tensor) -> Result<Tensor> {
    let mut out = Vec::with_capacity(4);
    for c in 0..2 {
        let mre = mask.narrow(1, 2 * c, 1)?;
        let mim = mask.narrow(1, 2 * c + 1, 1)?;
        let xre = mix.narrow(1, 2 * c, 1)?;
        let xim = mix.narrow(1, 2 * c + 1, 1)?;
        out.push(((&mre * &xre)? - (&mim * &xim)?)?);
        out.push(((&mre * &xim)? + (&mim * &xre)?)?);
    }
    Tensor::cat(&out, 1)
}

/// Differentiable inverse STFT of a packed spectrogram batch.
///
/// `spec` is `[B,4,bins,frames]` with bins = frame/2 + 1 and frames =
/// floor(n/hop) + 1; returns `[B,2,n]`. Must stay numerically in lockstep
/// with `spectral::istft`.
pub fn istft_graph(
    spec: &Tensor,
    frame_length: usize,
    hop: usize,
    original_length: usize,
    cache: &FourierCache,
) -> Result<Tensor> {
    let (b, ch, bins, frames) = spec.dims4()?;
    assert_eq!(ch, 4, "expected a 4-channel packed tensor");
    assert_eq!(bins, frame_length / 2 + 1, "bin count does not match frame length");
    assert_eq!(hop * 4, frame_length, "hop must be frame/4");
    assert_eq!(frames, original_length / hop + 1, "frame count does not match length");
    let dev = spec.device();
    let dtype = spec.dtype();
    let pad = frame_length / 2;
    let n = original_length;

    let re = Tensor::cat(&[&spec.narrow(1, 0, 1)?, &spec.narrow(1, 2, 1)?], 1)?;
    let im = Tensor::cat(&[&spec.narrow(1, 1, 1)?, &spec.narrow(1, 3, 1)?], 1)?;
    // [B,2,bins,T] -> [B*2, T, bins]
    let re = re.permute((0, 1, 3, 2))?.contiguous()?.reshape((b * 2, frames, bins))?;
    let im = im.permute((0, 1, 3, 2))?.contiguous()?.reshape((b * 2, frames, bins))?;

    let basis = cache.basis(frame_length, dtype, dev)?;
    let synth = basis.inverse(&re, &im)?; // [B*2, T, frame]

    let window_vals = periodic_hann(frame_length);
    let win64: Vec<f64> = window_vals.iter().map(|&w| w as f64).collect();
    let window = Tensor::from_vec(win64.clone(), frame_length, dev)?.to_dtype(dtype)?;
    let synth = synth.broadcast_mul(&window)?;

    // overlap-add: frame = 4 hops, so chunk j of frame t lands on grid row t+j
    let chunks = synth.reshape((b * 2, frames, 4, hop))?;
    let mut acc: Option<Tensor> = None;
    for j in 0..4 {
        let part = chunks.narrow(2, j, 1)?.squeeze(2)?; // [B*2, T, hop]
        let part = part.pad_with_zeros(1, j, 3 - j)?; // [B*2, T+3, hop]
        acc = Some(match acc {
            None => part,
            Some(a) => (a + part)?,
        });
    }
    let buf = acc.unwrap().reshape((b * 2, (frames + 3) * hop))?;
    let out = buf.narrow(1, pad, n)?;

    // window-square normalization over the same frame layout
    let mut wsum = vec![0f64; (frames + 3) * hop];
    for t in 0..frames {
        let off = t * hop;
        for (i, &w) in win64.iter().enumerate() {
            wsum[off + i] += w * w;
        }
    }
    let wsum: Vec<f64> = wsum[pad..pad + n].iter().map(|&w| w.max(1e-10)).collect();
    let wsum = Tensor::from_vec(wsum, n, dev)?.to_dtype(dtype)?;
    out.broadcast_div(&wsum)?.reshape((b, 2, n))
}
