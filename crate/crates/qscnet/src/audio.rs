//! Fixed-rate stereo waveforms and WAV file I/O.
//!
//! Everything in this crate runs at 44.1 kHz stereo. Files that do not match
//! are rejected at ingest instead of being resampled silently.

use std::path::Path;

use crate::error::{bail_data, ensure_input, Result};

pub const SAMPLE_RATE: u32 = 44_100;

/// Planar stereo audio: two equally long f32 channels at [`SAMPLE_RATE`].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    channels: [Vec<f32>; 2],
}

impl Waveform {
    pub fn new(left: Vec<f32>, right: Vec<f32>) -> Result<Self> {
        ensure_input!(
            left.len() == right.len(),
            "channel length mismatch: {} vs {}",
            left.len(),
            right.len()
        );
        Ok(Self { channels: [left, right] })
    }

    pub fn zeros(len: usize) -> Self {
        Self { channels: [vec![0.0; len], vec![0.0; len]] }
    }

    /// Interleaved LRLR… input, must have an even sample count.
    pub fn from_interleaved(samples: &[f32]) -> Result<Self> {
        ensure_input!(samples.len() % 2 == 0, "interleaved stereo needs an even sample count");
        let n = samples.len() / 2;
        let mut left = Vec::with_capacity(n);
        let mut right = Vec::with_capacity(n);
        for pair in samples.chunks_exact(2) {
            left.push(pair[0]);
            right.push(pair[1]);
        }
        Ok(Self { channels: [left, right] })
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration_seconds(&self) -> f64 {
        self.len() as f64 / SAMPLE_RATE as f64
    }

    pub fn channel(&self, idx: usize) -> &[f32] {
        &self.channels[idx]
    }

    pub fn channel_mut(&mut self, idx: usize) -> &mut Vec<f32> {
        &mut self.channels[idx]
    }

    /// Fraction of samples (over both channels) whose magnitude is <= `eps`.
    /// `eps = 0.0` counts exact zeros only.
    pub fn zero_fraction(&self, eps: f32) -> f64 {
        let total = self.len() * 2;
        if total == 0 {
            return 1.0;
        }
        let zeros: usize = self
            .channels
            .iter()
            .map(|ch| ch.iter().filter(|&&s| s.abs() <= eps).count())
            .sum();
        zeros as f64 / total as f64
    }

    /// Copy out `[start, start + len)`; errors if the range leaves the track.
    pub fn slice(&self, start: usize, len: usize) -> Result<Waveform> {
        ensure_input!(
            start + len <= self.len(),
            "slice [{start}, {}) exceeds track length {}",
            start + len,
            self.len()
        );
        Ok(Waveform {
            channels: [
                self.channels[0][start..start + len].to_vec(),
                self.channels[1][start..start + len].to_vec(),
            ],
        })
    }

    /// self += other * gain, sample-wise. Lengths must match.
    pub fn add_scaled(&mut self, other: &Waveform, gain: f32) -> Result<()> {
        ensure_input!(
            self.len() == other.len(),
            "length mismatch in add_scaled: {} vs {}",
            self.len(),
            other.len()
        );
        for c in 0..2 {
            let dst = &mut self.channels[c];
            let src = &other.channels[c];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s * gain;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, gain: f32) {
        for ch in &mut self.channels {
            for s in ch.iter_mut() {
                *s *= gain;
            }
        }
    }

    pub fn swap_channels(&mut self) {
        self.channels.swap(0, 1);
    }

    /// Zero-pad (or truncate) to exactly `len` samples per channel.
    pub fn resized(&self, len: usize) -> Waveform {
        let mut out = Waveform::zeros(len);
        let n = self.len().min(len);
        for c in 0..2 {
            out.channels[c][..n].copy_from_slice(&self.channels[c][..n]);
        }
        out
    }

    pub fn peak(&self) -> f32 {
        self.channels
            .iter()
            .flat_map(|ch| ch.iter())
            .fold(0.0f32, |m, &s| m.max(s.abs()))
    }

    /// Mono fold-down, (L + R) / 2.
    pub fn to_mono(&self) -> Vec<f32> {
        self.channels[0]
            .iter()
            .zip(&self.channels[1])
            .map(|(l, r)| 0.5 * (l + r))
            .collect()
    }

    /// Raw little-endian bytes of both channels, used for content hashing.
    pub fn content_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len() * 8);
        for ch in &self.channels {
            for s in ch {
                out.extend_from_slice(&s.to_le_bytes());
            }
        }
        out
    }
}

// ── WAV files ──────────────────────────────────────────────────────────────

/// Sample encodings we read and write. Reading additionally accepts any
/// integer bit depth hound understands, scaled by its full-scale value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Pcm24,
    Float32,
}

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let mut reader = hound::WavReader::open(path)
        .map_err(|e| crate::error::Error::Data(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    if spec.channels != 2 {
        bail_data!("{}: expected stereo, got {} channel(s)", path.display(), spec.channels);
    }
    if spec.sample_rate != SAMPLE_RATE {
        bail_data!(
            "{}: expected {} Hz, got {} Hz (resample offline first)",
            path.display(),
            SAMPLE_RATE,
            spec.sample_rate
        );
    }
    let interleaved: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => reader.samples::<f32>().collect::<std::result::Result<_, _>>()?,
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u32 << (spec.bits_per_sample - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<std::result::Result<_, _>>()?
        }
    };
    Waveform::from_interleaved(&interleaved)
}

pub fn write_wav(path: &Path, wf: &Waveform, encoding: WavEncoding) -> Result<()> {
    let (bits, format) = match encoding {
        WavEncoding::Pcm16 => (16, hound::SampleFormat::Int),
        WavEncoding::Pcm24 => (24, hound::SampleFormat::Int),
        WavEncoding::Float32 => (32, hound::SampleFormat::Float),
    };
    let spec = hound::WavSpec {
        channels: 2,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: bits,
        sample_format: format,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    match encoding {
        WavEncoding::Float32 => {
            for i in 0..wf.len() {
                writer.write_sample(wf.channel(0)[i])?;
                writer.write_sample(wf.channel(1)[i])?;
            }
        }
        WavEncoding::Pcm16 | WavEncoding::Pcm24 => {
            let full = if encoding == WavEncoding::Pcm16 { 32768.0f64 } else { 8_388_608.0f64 };
            let hi = (full - 1.0) as f32 / full as f32;
            for i in 0..wf.len() {
                for c in 0..2 {
                    let s = wf.channel(c)[i].clamp(-1.0, hi);
                    writer.write_sample((s as f64 * full).round() as i32)?;
                }
            }
        }
    }
    writer.finalize()?;
    Ok(())
}
