//! The separation network: band-split encoder, dual-path neck, mirrored
//! decoder, and the mask head. One body serves both variants; the
//! conditioned head adds a FiLM site between encoder and neck and emits a
//! single mask, the multi-stem head emits one mask per vocabulary stem.

pub mod config;
pub mod decoder;
pub mod encoder;
pub mod head;
pub mod neck;

pub use config::{BandScheme, HeadKind, ModelConfig, StageShape};

use candle_core::{DType, Device, Tensor};
use candle_nn::{VarBuilder, VarMap};

use crate::conditioning::{film_apply, film_module, FilmModule};
use crate::error::{ensure_input, Result};
use crate::model::decoder::{decoder_stage, DecoderStage};
use crate::model::encoder::{encoder_stage, EncoderStage};
use crate::model::head::{mask_head, MaskHead};
use crate::model::neck::{neck, Neck};
use crate::nn::fourier::FourierCache;

pub struct SeparationModel {
    cfg: ModelConfig,
    schedule: Vec<StageShape>,
    encoder: Vec<EncoderStage>,
    neck: Neck,
    /// Stored deepest-first, i.e. in application order.
    decoder: Vec<DecoderStage>,
    head: MaskHead,
    film: Option<FilmModule>,
    dtype: DType,
    device: Device,
}

/// Build the model under `vb`'s prefix; weights land in the backing var map
/// with stable names (`encoder.stage1.band2.conv.weight`, ...), which the
/// optimizer and the checkpoint format rely on.
pub fn build(cfg: &ModelConfig, vb: VarBuilder, dtype: DType) -> Result<SeparationModel> {
    cfg.validate()?;
    let schedule = cfg.schedule()?;

    let mut encoder = Vec::with_capacity(schedule.len());
    for shape in &schedule {
        let stage_vb = vb.pp("encoder").pp(format!("stage{}", shape.stage));
        encoder.push(encoder_stage(shape.clone(), cfg, stage_vb)?);
    }

    let neck = neck(
        cfg.latent_channels(),
        cfg.neck_hidden,
        cfg.neck_blocks,
        dtype,
        vb.pp("neck"),
    )?;

    let mut decoder = Vec::with_capacity(schedule.len());
    for l in (1..=cfg.num_stages).rev() {
        let c_in = if l == cfg.num_stages { cfg.latent_channels() } else { cfg.decoder_channels(l + 1) };
        let stage_vb = vb.pp("decoder").pp(format!("stage{l}"));
        decoder.push(decoder_stage(schedule[l - 1].clone(), c_in, cfg.decoder_channels(l), cfg, stage_vb)?);
    }

    let head = mask_head(
        cfg.input_bins(),
        cfg.mask_kernel,
        cfg.head_channels(),
        cfg.mask_count(),
        vb.pp("head"),
    )?;

    let film = match cfg.head {
        HeadKind::Conditioned => Some(film_module(
            cfg.embedding_dim,
            cfg.film_hidden,
            cfg.latent_channels(),
            vb.pp("film"),
        )?),
        HeadKind::MultiStem => None,
    };

    let device = vb.device().clone();
    Ok(SeparationModel { cfg: cfg.clone(), schedule, encoder, neck, decoder, head, film, dtype, device })
}

impl SeparationModel {
    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn schedule(&self) -> &[StageShape] {
        &self.schedule
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn fourier_cache(&self) -> &FourierCache {
        self.neck.cache()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (_, c, f, _) = x.dims4()?;
        ensure_input!(c == 4, "expected 4 packed spectrogram channels, got {c}");
        ensure_input!(
            f == self.cfg.input_bins(),
            "expected {} frequency bins, got {f}",
            self.cfg.input_bins()
        );
        Ok(())
    }

    /// Run the encoder: packed input [B, 4, F, T] to the latent
    /// [B, C_L, F_{L+1}, T] plus per-stage skips (stage order 1..L).
    pub fn encode(&self, x: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        self.check_input(x)?;
        let mut skips = Vec::with_capacity(self.encoder.len());
        let mut h = x.clone();
        for stage in &self.encoder {
            let (skip, out) = stage.forward(&h)?;
            skips.push(skip);
            h = out;
        }
        Ok((h, skips))
    }

    /// Neck, decoder and head on an (optionally modulated) latent.
    fn finish(&self, latent: &Tensor, skips: &[Tensor]) -> Result<Tensor> {
        let mut h = self.neck.forward(latent)?;
        for (stage, skip) in self.decoder.iter().zip(skips.iter().rev()) {
            h = stage.forward(&h, skip)?;
        }
        self.head.forward(&h)
    }

    /// Full forward with an explicit FiLM override: `None` runs the bare
    /// body (the multi-stem path, and the reference for identity checks),
    /// `Some((gamma, beta))` modulates the encoder output. Returns masks
    /// [B, stems, 4, F, T].
    pub fn forward_with_film(&self, x: &Tensor, film: Option<(&Tensor, &Tensor)>) -> Result<Tensor> {
        let (latent, skips) = self.encode(x)?;
        let latent = match film {
            Some((gamma, beta)) => film_apply(&latent, gamma, beta)?,
            None => latent,
        };
        self.finish(&latent, &skips)
    }

    /// Multi-stem forward: masks [B, |stems|, 4, F, T] in vocabulary order.
    pub fn forward_multi(&self, x: &Tensor) -> Result<Tensor> {
        ensure_input!(
            self.cfg.head == HeadKind::MultiStem,
            "forward_multi needs a multi-stem head"
        );
        self.forward_with_film(x, None)
    }

    /// Conditioned forward: one mask [B, 1, 4, F, T] steered by per-item
    /// query embeddings [B, q].
    pub fn forward_conditioned(&self, x: &Tensor, embeddings: &Tensor) -> Result<Tensor> {
        let film = self.film_params(embeddings)?;
        self.forward_with_film(x, Some((&film.0, &film.1)))
    }

    /// FiLM parameters for a batch of embeddings [B, q] -> ([B, C], [B, C]).
    pub fn film_params(&self, embeddings: &Tensor) -> Result<(Tensor, Tensor)> {
        let Some(film) = &self.film else {
            return Err(crate::Error::InvalidInput(
                "this model has no conditioning path (multi-stem head)".into(),
            ));
        };
        let (_, q) = embeddings.dims2()?;
        ensure_input!(
            q == self.cfg.embedding_dim,
            "embedding dim {q} != configured {}",
            self.cfg.embedding_dim
        );
        film.forward(embeddings)
    }

    /// Separate one mixture under `k` queries while running the encoder
    /// once: the latent and skips broadcast across the query batch, FiLM
    /// differs per query. Input [1, 4, F, T], embeddings [K, q]; masks
    /// [K, 1, 4, F, T] equal to k independent conditioned passes.
    pub fn forward_queries_shared(&self, x: &Tensor, embeddings: &Tensor) -> Result<Tensor> {
        let (b, _, _, _) = x.dims4()?;
        ensure_input!(b == 1, "shared-encoding path takes a single mixture, got batch {b}");
        let (k, _) = embeddings.dims2()?;
        let (latent, skips) = self.encode(x)?;
        let (gamma, beta) = self.film_params(embeddings)?;
        let latent = Self::tile_batch(&latent, k)?;
        let skips = skips.iter().map(|s| Self::tile_batch(s, k)).collect::<Result<Vec<_>>>()?;
        let latent = film_apply(&latent, &gamma, &beta)?;
        self.finish(&latent, &skips)
    }

    fn tile_batch(x: &Tensor, k: usize) -> Result<Tensor> {
        let mut dims = x.dims().to_vec();
        dims[0] = k;
        Ok(x.broadcast_as(dims)?.contiguous()?)
    }
}

/// Total learnable parameters in a var map.
pub fn parameter_count(varmap: &VarMap) -> usize {
    varmap.all_vars().iter().map(|v| v.elem_count()).sum()
}

/// Convenience: build a model with a fresh var map on `device`.
pub fn build_with_varmap(cfg: &ModelConfig, dtype: DType, device: &Device) -> Result<(SeparationModel, VarMap)> {
    let varmap = VarMap::new();
    let vb = VarBuilder::from_varmap(&varmap, dtype, device);
    let model = build(cfg, vb, dtype)?;
    Ok((model, varmap))
}
