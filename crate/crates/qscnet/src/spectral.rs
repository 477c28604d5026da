//! STFT analysis/synthesis and complex masking.
//!
//! Fixed conventions, shared by training and inference:
//! 75% overlap (hop = frame/4), periodic Hann window, centered frames with
//! reflection padding of frame/2 on both sides. A track of N samples yields
//! exactly floor(N / hop) + 1 frames and frame/2 + 1 frequency bins, and the
//! inverse transform restores exactly N samples from the recorded original
//! length. The signal path is f32 end to end; rustfft's f32 kernels keep the
//! analysis/synthesis round trip well under 1e-6 relative error.

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::audio::Waveform;
use crate::error::{ensure_input, Result};

pub const DEFAULT_FRAME_LENGTH: usize = 4096;
pub const DEFAULT_HOP: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftConfig {
    frame_length: usize,
    hop: usize,
}

impl StftConfig {
    /// `hop` must equal `frame_length / 4`; other overlaps are not supported.
    pub fn new(frame_length: usize, hop: usize) -> Result<Self> {
        ensure_input!(frame_length >= 8, "frame_length {frame_length} too small");
        ensure_input!(frame_length % 4 == 0, "frame_length {frame_length} must be divisible by 4");
        ensure_input!(
            hop == frame_length / 4,
            "hop must be frame_length/4 (got frame {frame_length}, hop {hop})"
        );
        Ok(Self { frame_length, hop })
    }

    pub fn frame_length(&self) -> usize {
        self.frame_length
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    /// Frequency bins per frame: frame/2 + 1.
    pub fn bins(&self) -> usize {
        self.frame_length / 2 + 1
    }

    /// Frames produced for a track of `n` samples: floor(n/hop) + 1.
    pub fn frames_for(&self, n: usize) -> usize {
        n / self.hop + 1
    }
}

impl Default for StftConfig {
    fn default() -> Self {
        Self { frame_length: DEFAULT_FRAME_LENGTH, hop: DEFAULT_HOP }
    }
}

/// Complex stereo spectrogram. Per channel, bin-major storage:
/// `channels[c][bin * frames + frame]`.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    pub config: StftConfig,
    pub original_length: usize,
    pub bins: usize,
    pub frames: usize,
    pub channels: [Vec<Complex<f32>>; 2],
}

/// Real-packed spectrogram or mask, laid out `[4][bins][frames]` with the
/// channel order (left-real, left-imag, right-real, right-imag).
#[derive(Debug, Clone, PartialEq)]
pub struct PackedSpectrogram {
    pub bins: usize,
    pub frames: usize,
    pub data: Vec<f32>,
}

impl PackedSpectrogram {
    pub fn zeros(bins: usize, frames: usize) -> Self {
        Self { bins, frames, data: vec![0.0; 4 * bins * frames] }
    }

    #[inline]
    pub fn at(&self, ch: usize, bin: usize, frame: usize) -> f32 {
        self.data[(ch * self.bins + bin) * self.frames + frame]
    }

    #[inline]
    pub fn at_mut(&mut self, ch: usize, bin: usize, frame: usize) -> &mut f32 {
        &mut self.data[(ch * self.bins + bin) * self.frames + frame]
    }
}

// ── window and padding ─────────────────────────────────────────────────────

/// Periodic Hann: w[n] = 0.5 - 0.5 cos(2 pi n / N). Together with 75%
/// overlap this gives a constant window-square sum, which the inverse
/// transform divides out.
pub fn periodic_hann(len: usize) -> Vec<f32> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
        .map(|v| v as f32)
        .collect()
}

/// Index into a signal of length `n` extended by repeated reflection without
/// edge duplication (…x2 x1 | x0 x1 x2 … x_{n-1} | x_{n-2} x_{n-3}…).
#[inline]
fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize) - 2;
    let mut j = i.rem_euclid(period);
    if j >= n as isize {
        j = period - j;
    }
    j as usize
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f32>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f32>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse { p.plan_fft_inverse(len) } else { p.plan_fft_forward(len) }
    })
}

// ── forward / inverse ──────────────────────────────────────────────────────

pub fn stft(wf: &Waveform, config: StftConfig) -> Result<Spectrogram> {
    ensure_input!(!wf.is_empty(), "cannot transform an empty waveform");
    let n = wf.len();
    let frame = config.frame_length;
    let hop = config.hop;
    let pad = frame / 2;
    let bins = config.bins();
    let frames = config.frames_for(n);
    let window = periodic_hann(frame);
    let fft = plan(frame, false);

    let mut channels = [Vec::new(), Vec::new()];
    let mut buf = vec![Complex::new(0.0f32, 0.0f32); frame];
    let mut scratch = vec![Complex::new(0.0f32, 0.0f32); fft.get_inplace_scratch_len()];
    for (c, out) in channels.iter_mut().enumerate() {
        let x = wf.channel(c);
        // frame-major scratch, transposed to bin-major at the end
        let mut fm = vec![Complex::new(0.0f32, 0.0f32); frames * bins];
        for t in 0..frames {
            let start = t as isize * hop as isize - pad as isize;
            for i in 0..frame {
                let s = x[reflect_index(start + i as isize, n)];
                buf[i] = Complex::new(s * window[i], 0.0);
            }
            fft.process_with_scratch(&mut buf, &mut scratch);
            fm[t * bins..(t + 1) * bins].copy_from_slice(&buf[..bins]);
        }
        let mut bm = vec![Complex::new(0.0f32, 0.0f32); bins * frames];
        for t in 0..frames {
            for b in 0..bins {
                bm[b * frames + t] = fm[t * bins + b];
            }
        }
        *out = bm;
    }

    Ok(Spectrogram { config, original_length: n, bins, frames, channels })
}

pub fn istft(spec: &Spectrogram) -> Result<Waveform> {
    let frame = spec.config.frame_length;
    let hop = spec.config.hop;
    let pad = frame / 2;
    let n = spec.original_length;
    let bins = spec.bins;
    let frames = spec.frames;
    ensure_input!(n > 0, "spectrogram has original_length 0");
    ensure_input!(
        frames == spec.config.frames_for(n),
        "frame count {frames} inconsistent with original_length {n}"
    );
    let window = periodic_hann(frame);
    let ifft = plan(frame, true);
    let inv_n = 1.0f32 / frame as f32;

    let mut wsum = vec![0.0f32; n + 2 * pad];
    for t in 0..frames {
        let off = t * hop;
        for i in 0..frame {
            wsum[off + i] += window[i] * window[i];
        }
    }

    let mut out = Waveform::zeros(n);
    let mut buf = vec![Complex::new(0.0f32, 0.0f32); frame];
    let mut scratch = vec![Complex::new(0.0f32, 0.0f32); ifft.get_inplace_scratch_len()];
    for c in 0..2 {
        let bm = &spec.channels[c];
        let mut acc = vec![0.0f32; n + 2 * pad];
        for t in 0..frames {
            // rebuild the full Hermitian spectrum from the positive bins
            for b in 0..bins {
                buf[b] = bm[b * frames + t];
            }
            for k in 1..frame - bins + 1 {
                buf[frame - k] = buf[k].conj();
            }
            ifft.process_with_scratch(&mut buf, &mut scratch);
            let off = t * hop;
            for i in 0..frame {
                acc[off + i] += buf[i].re * inv_n * window[i];
            }
        }
        let dst = out.channel_mut(c);
        for i in 0..n {
            let w = wsum[pad + i];
            dst[i] = if w > 1e-10 { acc[pad + i] / w } else { 0.0 };
        }
    }
    Ok(out)
}

// ── packing and masking ────────────────────────────────────────────────────

/// Flatten a complex stereo spectrogram into the 4-channel real layout the
/// separation models consume: (left-real, left-imag, right-real, right-imag).
pub fn pack_spectrogram(spec: &Spectrogram) -> PackedSpectrogram {
    let (bins, frames) = (spec.bins, spec.frames);
    let mut packed = PackedSpectrogram::zeros(bins, frames);
    let plane = bins * frames;
    for c in 0..2 {
        let src = &spec.channels[c];
        for i in 0..plane {
            packed.data[2 * c * plane + i] = src[i].re;
            packed.data[(2 * c + 1) * plane + i] = src[i].im;
        }
    }
    packed
}

/// Inverse of [`pack_spectrogram`]. The STFT geometry travels alongside the
/// packed planes, so it must be supplied again here.
pub fn unpack_spectrogram(
    packed: &PackedSpectrogram,
    config: StftConfig,
    original_length: usize,
) -> Result<Spectrogram> {
    ensure_input!(
        packed.bins == config.bins(),
        "packed bins {} do not match config bins {}",
        packed.bins,
        config.bins()
    );
    ensure_input!(
        packed.frames == config.frames_for(original_length),
        "packed frames {} do not match original_length {original_length}",
        packed.frames
    );
    ensure_input!(
        packed.data.len() == 4 * packed.bins * packed.frames,
        "packed data length {} does not match 4x{}x{}",
        packed.data.len(),
        packed.bins,
        packed.frames
    );
    let plane = packed.bins * packed.frames;
    let mut channels = [Vec::new(), Vec::new()];
    for (c, out) in channels.iter_mut().enumerate() {
        *out = (0..plane)
            .map(|i| Complex::new(packed.data[2 * c * plane + i], packed.data[(2 * c + 1) * plane + i]))
            .collect();
    }
    Ok(Spectrogram {
        config,
        original_length,
        bins: packed.bins,
        frames: packed.frames,
        channels,
    })
}

/// Complex multiplication of an unbounded complex mask with a mixture
/// spectrogram, per stereo channel.
pub fn apply_mask(spec: &Spectrogram, mask: &PackedSpectrogram) -> Result<Spectrogram> {
    ensure_input!(
        mask.bins == spec.bins && mask.frames == spec.frames,
        "mask {}x{} does not match spectrogram {}x{}",
        mask.bins,
        mask.frames,
        spec.bins,
        spec.frames
    );
    let plane = spec.bins * spec.frames;
    let mut out = spec.clone();
    for c in 0..2 {
        let (re_plane, im_plane) = (2 * c * plane, (2 * c + 1) * plane);
        let dst = &mut out.channels[c];
        for i in 0..plane {
            let m = Complex::new(mask.data[re_plane + i], mask.data[im_plane + i]);
            dst[i] = m * spec.channels[c][i];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(n: usize, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let left: Vec<f32> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let right: Vec<f32> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Waveform::new(left, right).unwrap()
    }

    fn roundtrip_linf(wf: &Waveform, cfg: StftConfig) -> f64 {
        let rec = istft(&stft(wf, cfg).unwrap()).unwrap();
        assert_eq!(rec.len(), wf.len());
        let mut max = 0f64;
        for c in 0..2 {
            for (a, b) in wf.channel(c).iter().zip(rec.channel(c)) {
                max = max.max((*a as f64 - *b as f64).abs());
            }
        }
        max
    }

    #[test]
    fn window_matches_closed_form() {
        let n = 256;
        let w = periodic_hann(n);
        assert_eq!(w[0], 0.0);
        assert_eq!(w[n / 2], 1.0);
        assert!((w[n / 4] - 0.5).abs() < 1e-7);
        let expect = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * 37.0 / n as f64).cos();
        assert!((w[37] as f64 - expect).abs() < 1e-7);
    }

    #[test]
    fn framing_arithmetic_at_default_config() {
        let cfg = StftConfig::default();
        assert_eq!(cfg.frame_length(), 4096);
        assert_eq!(cfg.hop(), 1024);
        assert_eq!(cfg.bins(), 2049);
        assert_eq!(cfg.frames_for(441_000), 431);
        assert_eq!(cfg.frames_for(44_100), 44);
    }

    #[test]
    fn config_rejects_unsupported_overlap() {
        assert!(StftConfig::new(4096, 512).is_err());
        assert!(StftConfig::new(4096, 1024).is_ok());
        assert!(StftConfig::new(6, 1).is_err());
        assert!(StftConfig::new(30, 7).is_err());
    }

    #[test]
    fn empty_waveform_is_rejected() {
        let wf = Waveform::zeros(0);
        assert!(stft(&wf, StftConfig::default()).is_err());
    }

    #[test]
    fn zeros_transform_to_zero_bins() {
        let cfg = StftConfig::new(256, 64).unwrap();
        let spec = stft(&Waveform::zeros(1000), cfg).unwrap();
        assert!(spec.channels.iter().all(|ch| ch.iter().all(|z| z.norm() == 0.0)));
        assert_eq!(spec.original_length, 1000);
        assert_eq!(spec.frames, 1000 / 64 + 1);
    }

    /// f64 reference: reflect-pad, window, and a naive DFT of one frame.
    fn dft_oracle(wf: &Waveform, cfg: StftConfig, ch: usize, frame_idx: usize) -> Vec<Complex<f64>> {
        let n = wf.len();
        let frame = cfg.frame_length();
        let pad = frame / 2;
        let x = wf.channel(ch);
        let start = frame_idx as isize * cfg.hop() as isize - pad as isize;
        let windowed: Vec<f64> = (0..frame)
            .map(|i| {
                let s = x[reflect_index(start + i as isize, n)] as f64;
                let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / frame as f64).cos();
                s * w
            })
            .collect();
        (0..cfg.bins())
            .map(|k| {
                let mut acc = Complex::new(0.0f64, 0.0);
                for (i, &s) in windowed.iter().enumerate() {
                    let ang = -2.0 * std::f64::consts::PI * (k * i) as f64 / frame as f64;
                    acc += Complex::new(ang.cos(), ang.sin()) * s;
                }
                acc
            })
            .collect()
    }

    #[test]
    fn matches_naive_dft_oracle() {
        let cfg = StftConfig::new(256, 64).unwrap();
        let wf = noise(3000, 7);
        let spec = stft(&wf, cfg).unwrap();
        let scale: f64 = 16.0; // ~sqrt(frame), the typical bin magnitude for unit noise
        for ch in 0..2 {
            for frame_idx in [0usize, 1, spec.frames / 2, spec.frames - 1] {
                let oracle = dft_oracle(&wf, cfg, ch, frame_idx);
                for (b, want) in oracle.iter().enumerate() {
                    let got = spec.channels[ch][b * spec.frames + frame_idx];
                    let d = (got.re as f64 - want.re).abs().max((got.im as f64 - want.im).abs());
                    assert!(d < 1e-4 * scale, "ch {ch} frame {frame_idx} bin {b}: {d}");
                }
            }
        }
    }

    #[test]
    fn roundtrip_below_1e6_relative() {
        let cfg = StftConfig::new(1024, 256).unwrap();
        for seed in 0..4 {
            let wf = noise(44_100 + seed as usize * 777, seed);
            let err = roundtrip_linf(&wf, cfg);
            let peak = wf.peak() as f64;
            assert!(err <= 1e-6 * peak, "seed {seed}: {err} vs peak {peak}");
        }
    }

    #[test]
    fn roundtrip_shorter_than_half_frame() {
        // forces repeated reflection in the padding
        let cfg = StftConfig::new(256, 64).unwrap();
        for n in [64usize, 65, 100, 127] {
            let wf = noise(n, n as u64);
            let err = roundtrip_linf(&wf, cfg);
            assert!(err <= 2e-6, "n={n}: {err}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn roundtrip_exact_hop_multiples(k in 1usize..24, seed in 0u64..1000) {
            let cfg = StftConfig::new(256, 64).unwrap();
            let wf = noise(k * 64, seed);
            let err = roundtrip_linf(&wf, cfg);
            prop_assert!(err <= 2e-6, "k={}: {}", k, err);
        }
    }

    #[test]
    fn pack_layout_is_pinned() {
        let cfg = StftConfig::new(256, 64).unwrap();
        let mut spec = stft(&Waveform::zeros(100), cfg).unwrap();
        spec.channels[0][0] = Complex::new(1.0, 2.0); // bin 0, frame 0, left
        spec.channels[1][spec.frames + 1] = Complex::new(3.0, 4.0); // bin 1, frame 1, right
        let packed = pack_spectrogram(&spec);
        assert_eq!(packed.at(0, 0, 0), 1.0);
        assert_eq!(packed.at(1, 0, 0), 2.0);
        assert_eq!(packed.at(2, 1, 1), 3.0);
        assert_eq!(packed.at(3, 1, 1), 4.0);
        let back = unpack_spectrogram(&packed, cfg, 100).unwrap();
        for c in 0..2 {
            assert_eq!(back.channels[c], spec.channels[c]);
        }
    }

    #[test]
    fn unpack_validates_geometry() {
        let packed = PackedSpectrogram::zeros(129, 3);
        let cfg = StftConfig::new(256, 64).unwrap();
        assert!(unpack_spectrogram(&packed, cfg, 100).is_err()); // frames mismatch
        let cfg2 = StftConfig::new(512, 128).unwrap();
        assert!(unpack_spectrogram(&packed, cfg2, 128).is_err()); // bins mismatch
    }

    #[test]
    fn identity_mask_is_identity() {
        let cfg = StftConfig::new(256, 64).unwrap();
        let wf = noise(1000, 3);
        let spec = stft(&wf, cfg).unwrap();
        let mut mask = PackedSpectrogram::zeros(spec.bins, spec.frames);
        for b in 0..spec.bins {
            for t in 0..spec.frames {
                *mask.at_mut(0, b, t) = 1.0;
                *mask.at_mut(2, b, t) = 1.0;
            }
        }
        let out = apply_mask(&spec, &mask).unwrap();
        for c in 0..2 {
            assert_eq!(out.channels[c], spec.channels[c]);
        }
    }

    #[test]
    fn mask_multiplication_is_complex() {
        let cfg = StftConfig::new(256, 64).unwrap();
        let mut spec = stft(&Waveform::zeros(100), cfg).unwrap();
        spec.channels[0][0] = Complex::new(2.0, 3.0);
        // mask value i on the left channel: (0 + 1i)(2 + 3i) = -3 + 2i
        let mut mask = PackedSpectrogram::zeros(spec.bins, spec.frames);
        *mask.at_mut(1, 0, 0) = 1.0;
        let out = apply_mask(&spec, &mask).unwrap();
        assert_eq!(out.channels[0][0], Complex::new(-3.0, 2.0));
    }

    #[test]
    fn masked_roundtrip_against_f64_oracle() {
        let cfg = StftConfig::new(256, 64).unwrap();
        let wf = noise(2000, 11);
        let spec = stft(&wf, cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut mask = PackedSpectrogram::zeros(spec.bins, spec.frames);
        for v in mask.data.iter_mut() {
            *v = rng.gen_range(-2.0..2.0);
        }
        let out = apply_mask(&spec, &mask).unwrap();
        for c in 0..2 {
            for b in [0usize, 7, spec.bins - 1] {
                for t in [0usize, spec.frames / 3] {
                    let i = b * spec.frames + t;
                    let x = spec.channels[c][i];
                    let m = Complex::new(mask.at(2 * c, b, t) as f64, mask.at(2 * c + 1, b, t) as f64);
                    let want = m * Complex::new(x.re as f64, x.im as f64);
                    let got = out.channels[c][i];
                    assert!((got.re as f64 - want.re).abs() < 1e-5);
                    assert!((got.im as f64 - want.im).abs() < 1e-5);
                }
            }
        }
    }
}
