//! Miniature synthetic corpus in the real dataset layout.
//!
//! Four songs by default, each with a handful of fine-label stems rendered
//! by little oscillator/noise instruments with deliberately disjoint
//! spectral homes (bass around 55-80 Hz, kick thumps sweeping 120→45 Hz
//! with a click, guitar arpeggios in the low mids, a singing formant stack
//! with vibrato up top). Every stem keeps a tiny nonzero bed under the
//! notes so the silence filters see busy tracks, and encodings rotate
//! through 16/24-bit PCM and float so decoding paths all get exercised.
//! Everything is a pure function of the seed: regenerating a corpus is
//! byte-identical.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{write_wav, WavEncoding, Waveform, SAMPLE_RATE};
use crate::dataset::scan::SPLITS_DIR;
use crate::error::{ensure_input, Result};

#[derive(Debug, Clone)]
pub struct ToyConfig {
    pub songs: usize,
    pub seconds: f64,
    pub labels: Vec<String>,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig { songs: 4, seconds: 16.0, labels: default_labels(), seed: 0 }
    }
}

/// The four-instrument core: one stem per coarse category of interest.
pub fn default_labels() -> Vec<String> {
    ["lead_female_singer", "bass_guitar", "kick_drum", "clean_electric_guitar"]
        .map(String::from)
        .to_vec()
}

/// Six stems covering all six coarse categories (piano and others too).
pub fn extended_labels() -> Vec<String> {
    let mut l = default_labels();
    l.push("grand_piano".into());
    l.push("synth_pad".into());
    l
}

/// Write a corpus under `root`: `root/toy_<i>/<label>/1.wav` plus split
/// lists in `root/splits/`. Songs split first-half train, then one valid,
/// one test.
pub fn generate_corpus(root: &Path, cfg: &ToyConfig) -> Result<()> {
    ensure_input!(cfg.songs >= 1, "need at least one song");
    ensure_input!(cfg.seconds > 1.0, "songs shorter than a second are useless");
    ensure_input!(!cfg.labels.is_empty(), "need at least one label");
    let n = (cfg.seconds * SAMPLE_RATE as f64).round() as usize;

    for song in 0..cfg.songs {
        let song_dir = root.join(format!("toy_{song:02}"));
        for (li, label) in cfg.labels.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream((song as u64) << 8 | li as u64);
            let w = render(label, n, &mut rng)?;
            let dir = song_dir.join(label);
            std::fs::create_dir_all(&dir)?;
            let encoding = match (song + li) % 3 {
                0 => WavEncoding::Pcm16,
                1 => WavEncoding::Pcm24,
                _ => WavEncoding::Float32,
            };
            write_wav(&dir.join("1.wav"), &w, encoding)?;
        }
    }

    let splits = root.join(SPLITS_DIR);
    std::fs::create_dir_all(&splits)?;
    let ids: Vec<String> = (0..cfg.songs).map(|s| format!("toy_{s:02}")).collect();
    let (train, valid, test): (&[String], &[String], &[String]) = match cfg.songs {
        1 => (&ids[..1], &[], &[]),
        2 => (&ids[..1], &ids[1..2], &[]),
        n => (&ids[..n - 2], &ids[n - 2..n - 1], &ids[n - 1..]),
    };
    let write_list = |name: &str, ids: &[String]| -> Result<()> {
        let mut text = String::new();
        for id in ids {
            text.push_str(id);
            text.push('\n');
        }
        std::fs::write(splits.join(name), text)?;
        Ok(())
    };
    write_list("train.txt", train)?;
    write_list("valid.txt", valid)?;
    write_list("test.txt", test)?;
    Ok(())
}

// ── instruments ──

const TAU: f32 = std::f32::consts::TAU;

fn render(label: &str, n: usize, rng: &mut ChaCha8Rng) -> Result<Waveform> {
    let mut left = vec![0f32; n];
    match label {
        "lead_female_singer" => singer(&mut left, rng),
        "bass_guitar" => bass(&mut left, rng),
        "kick_drum" => kick(&mut left, rng),
        "clean_electric_guitar" => guitar(&mut left, rng),
        "grand_piano" => piano(&mut left, rng),
        "synth_pad" => pad(&mut left, rng),
        other => noise_bed(&mut left, rng, fnv(other)),
    }
    // the right channel is the same performance through a slightly
    // different "microphone": fixed small delay and gain
    let delay = rng.gen_range(3..10usize);
    let gain = rng.gen_range(0.82..0.95f32);
    let mut right = vec![0f32; n];
    for i in 0..n {
        let src = if i >= delay { left[i - delay] } else { left[i] };
        right[i] = src * gain + 1.0e-5;
    }
    Waveform::new(left, right)
}

fn sr() -> f32 {
    SAMPLE_RATE as f32
}

/// Tiny per-label bed so quiet stretches stay nonzero after PCM rounding.
fn add_bed(buf: &mut [f32], freq: f32, amp: f32) {
    for (i, v) in buf.iter_mut().enumerate() {
        *v += amp * (TAU * freq * i as f32 / sr()).sin() + amp * 0.5;
    }
}

fn singer(buf: &mut [f32], rng: &mut ChaCha8Rng) {
    let pitches = [392.0, 440.0, 494.0, 523.0, 587.0, 659.0];
    let phrase = (1.8 * sr()) as usize;
    let gap = (0.2 * sr()) as usize;
    let mut i = 0;
    while i < buf.len() {
        let f0: f32 = pitches[rng.gen_range(0..pitches.len())];
        let f1: f32 = pitches[rng.gen_range(0..pitches.len())];
        let len = phrase.min(buf.len() - i);
        for t in 0..len {
            let x = t as f32 / phrase as f32;
            let f = f0 + (f1 - f0) * x;
            let vib = 1.0 + 0.02 * (TAU * 5.5 * t as f32 / sr()).sin();
            let ph = TAU * f * vib * t as f32 / sr();
            let env = 0.32 * (x * std::f32::consts::PI).sin().powf(0.5);
            buf[i + t] += env * (ph.sin() + 0.5 * (2.0 * ph).sin() + 0.22 * (3.0 * ph).sin());
        }
        i += len + gap;
    }
    add_bed(buf, 180.0, 0.004);
}

fn bass(buf: &mut [f32], rng: &mut ChaCha8Rng) {
    let notes = [55.0f32, 61.7, 73.4, 82.4];
    let step = (0.5 * sr()) as usize;
    let mut i = 0;
    while i < buf.len() {
        let f: f32 = notes[rng.gen_range(0..notes.len())];
        let len = step.min(buf.len() - i);
        for t in 0..len {
            let env = 0.55 * (-(t as f32) / (0.35 * sr())).exp() + 0.05;
            let ph = TAU * f * t as f32 / sr();
            buf[i + t] += env * (ph.sin() + 0.35 * (2.0 * ph).sin());
        }
        i += step;
    }
    add_bed(buf, 41.0, 0.005);
}

fn kick(buf: &mut [f32], rng: &mut ChaCha8Rng) {
    let step = (0.5 * sr()) as usize;
    let hit = (0.14 * sr()) as usize;
    let click = (0.004 * sr()) as usize;
    let mut i = 0;
    while i < buf.len() {
        let punch: f32 = rng.gen_range(0.42..0.58);
        let len = hit.min(buf.len() - i);
        let mut phase = 0f32;
        for t in 0..len {
            let x = t as f32 / sr();
            let f = 45.0 + 75.0 * (-x / 0.03).exp();
            phase += TAU * f / sr();
            let env = punch * (-x / 0.07).exp();
            buf[i + t] += env * phase.sin();
            if t < click {
                buf[i + t] += rng.gen_range(-0.22..0.22) * (1.0 - t as f32 / click as f32);
            }
        }
        i += step;
    }
    add_bed(buf, 49.0, 0.004);
}

fn guitar(buf: &mut [f32], rng: &mut ChaCha8Rng) {
    let triad = [196.0f32, 246.9, 293.7, 392.0];
    let step = (0.25 * sr()) as usize;
    let mut i = 0;
    while i < buf.len() {
        let f: f32 = triad[rng.gen_range(0..triad.len())];
        let len = (2 * step).min(buf.len() - i);
        for t in 0..len {
            let x = t as f32 / sr();
            let env = 0.3 * (-x / 0.16).exp() + 0.012;
            let ph = TAU * f * t as f32 / sr();
            buf[i + t] +=
                env * (ph.sin() + 0.55 * (2.0 * ph).sin() + 0.3 * (3.0 * ph).sin() + 0.15 * (4.0 * ph).sin());
        }
        i += step;
    }
    add_bed(buf, 110.0, 0.004);
}

fn piano(buf: &mut [f32], rng: &mut ChaCha8Rng) {
    let scale = [261.6f32, 329.6, 392.0, 523.3, 659.3];
    let step = sr() as usize;
    let mut i = 0;
    while i < buf.len() {
        for _ in 0..rng.gen_range(2..4) {
            let f: f32 = scale[rng.gen_range(0..scale.len())];
            let len = (step * 2).min(buf.len() - i);
            for t in 0..len {
                let x = t as f32 / sr();
                let env = 0.16 * (-x / 0.45).exp();
                for (h, amp) in [(1.0, 1.0f32), (2.0, 0.45), (3.0, 0.25), (4.0, 0.12), (5.0, 0.07)] {
                    // slight stretch of the upper partials
                    let ph = TAU * f * h * (1.0 + 0.0006 * h * h) * t as f32 / sr();
                    buf[i + t] += env * amp * ph.sin();
                }
            }
        }
        i += step;
    }
    add_bed(buf, 130.0, 0.004);
}

fn pad(buf: &mut [f32], rng: &mut ChaCha8Rng) {
    let chord = [220.0f32, 277.2, 329.6, 440.0];
    let detune: f32 = rng.gen_range(0.999..1.001);
    for (i, v) in buf.iter_mut().enumerate() {
        let t = i as f32 / sr();
        let lfo = 0.12 * (1.0 + 0.5 * (TAU * 0.09 * t).sin());
        let mut s = 0.0;
        for (k, f) in chord.iter().enumerate() {
            s += (TAU * f * detune * t + k as f32).sin() / (k + 1) as f32;
        }
        *v += lfo * s;
    }
    add_bed(buf, 62.0, 0.004);
}

fn noise_bed(buf: &mut [f32], rng: &mut ChaCha8Rng, tint: u64) {
    let f = 100.0 + (tint % 1000) as f32;
    for (i, v) in buf.iter_mut().enumerate() {
        *v += 0.1 * (TAU * f * i as f32 / sr()).sin() + rng.gen_range(-0.02..0.02);
    }
    add_bed(buf, f * 0.5, 0.004);
}

fn fnv(s: &str) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for b in s.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x100000001b3);
    }
    h
}
