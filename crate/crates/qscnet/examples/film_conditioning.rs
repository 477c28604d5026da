//! How the query steers the separator.
//!
//! A FiLM layer scales and shifts the encoder's latent, one (gamma, beta)
//! pair per channel, computed from the query embedding. With gamma = 1 and
//! beta = 0 the modulation vanishes and the conditioned forward equals the
//! plain one bit for bit; two different queries bend the same mixture into
//! two different masks.

use candle_core::{DType, Device, Tensor};
use qscnet::conditioning::{Embedder, MockEmbedder};
use qscnet::model::config::BandScheme;
use qscnet::model::{build_with_varmap, HeadKind, ModelConfig};
use qscnet::{Result, Waveform, SAMPLE_RATE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_config() -> ModelConfig {
    ModelConfig {
        frame_length: 64,
        num_stages: 2,
        base_channels: 4,
        band_scheme: BandScheme {
            ratios: [0.3, 0.3, 0.4],
            strides: [1, 2, 2],
            kernel_sizes: [3, 2, 2],
            channel_growth: [1, 1, 1],
        },
        neck_blocks: 2,
        neck_hidden: 8,
        mask_kernel: 3,
        group_norm_groups: 2,
        head: HeadKind::Conditioned,
        stems: vec!["solo".into()],
        embedding_dim: 24,
        film_hidden: 16,
    }
}

fn main() -> Result<()> {
    let dev = Device::Cpu;
    let cfg = tiny_config();
    let (model, _varmap) = build_with_varmap(&cfg, DType::F32, &dev)?;

    // a random packed spectrogram input [1, 4, F, T]
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (f, t) = (cfg.input_bins(), 12usize);
    let data: Vec<f32> = (0..4 * f * t).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    let x = Tensor::from_vec(data, (1, 4, f, t), &dev)?;

    // gamma = 1, beta = 0 is exactly the unconditioned forward
    let c = cfg.latent_channels();
    let gamma = Tensor::ones((1, c), DType::F32, &dev)?;
    let beta = Tensor::zeros((1, c), DType::F32, &dev)?;
    let plain = model.forward_with_film(&x, None)?;
    let neutral = model.forward_with_film(&x, Some((&gamma, &beta)))?;
    let diff = (&plain - &neutral)?.abs()?.max_all()?.to_scalar::<f32>()?;
    println!("identity modulation vs plain forward: max |delta| = {diff:e}");

    // two different query clips produce two different masks
    let embedder = MockEmbedder::with_dim(cfg.embedding_dim, 0);
    let n = SAMPLE_RATE / 2;
    let tone = |hz: f32| -> Result<Waveform> {
        let s: Vec<f32> = (0..n)
            .map(|i| (std::f32::consts::TAU * hz * i as f32 / SAMPLE_RATE as f32).sin() * 0.4)
            .collect();
        Waveform::new(s.clone(), s)
    };
    let low = embedder.embed(&tone(82.0)?)?;
    let high = embedder.embed(&tone(880.0)?)?;
    let as_tensor = |e: &[f32]| Tensor::from_slice(e, (1, e.len()), &dev);
    let mask_low = model.forward_conditioned(&x, &as_tensor(&low)?)?;
    let mask_high = model.forward_conditioned(&x, &as_tensor(&high)?)?;
    let gap = (&mask_low - &mask_high)?.abs()?.mean_all()?.to_scalar::<f32>()?;
    println!("bass query vs treble query on one mixture: mean |mask delta| = {gap:.4}");
    Ok(())
}
