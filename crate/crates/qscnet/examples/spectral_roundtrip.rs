//! Round-trip random stereo clips through the STFT and back.
//!
//! The analysis/synthesis pair is exact up to float rounding for any clip
//! length, including lengths that don't divide the hop.

use qscnet::spectral::{istft, stft, StftConfig};
use qscnet::{Result, Waveform, SAMPLE_RATE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let config = StftConfig::new(4096, 1024)?;
    for seconds in [1.0f64, 2.7, 6.3] {
        let n = (seconds * SAMPLE_RATE as f64).round() as usize;
        let left: Vec<f32> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let right: Vec<f32> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let wf = Waveform::new(left, right)?;

        let spec = stft(&wf, config)?;
        let back = istft(&spec)?;

        let mut worst = 0f32;
        for ch in 0..2 {
            for (a, b) in wf.channel(ch).iter().zip(back.channel(ch)) {
                worst = worst.max((a - b).abs());
            }
        }
        println!(
            "{seconds:>4.1}s clip -> {} bins x {} frames, max reconstruction error {worst:.3e}",
            spec.bins, spec.frames
        );
    }
    Ok(())
}
