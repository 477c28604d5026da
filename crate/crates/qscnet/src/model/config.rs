//! Architecture hyperparameters and the frequency shape schedule.
//!
//! The whole geometry of the UNet is decided here, eagerly, at build time:
//! band widths per stage, padded and downsampled widths, channel counts. A
//! config either validates completely or the model refuses to build; no
//! shape surprises once tensors start flowing.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_config, Result};

/// How the frequency axis splits into three bands at every stage, and what
/// each band does. Ratios apply to the current stage's width: bands 1 and 2
/// take the floor, band 3 absorbs the remainder.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BandScheme {
    pub ratios: [f64; 3],
    /// Frequency downsampling factor per band, applied at every stage.
    pub strides: [usize; 3],
    /// Kernel extent of the per-band frequency convolution.
    pub kernel_sizes: [usize; 3],
    /// Internal channel expansion per band; 1 means none.
    pub channel_growth: [usize; 3],
}

impl Default for BandScheme {
    fn default() -> Self {
        Self {
            ratios: [0.175, 0.392, 0.433],
            strides: [1, 4, 16],
            kernel_sizes: [3, 4, 16],
            channel_growth: [1, 1, 1],
        }
    }
}

/// Which mask head sits on the shared body.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// One mask, steered by a FiLM-injected query embedding.
    Conditioned,
    /// One mask per vocabulary stem, no conditioning path.
    MultiStem,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    /// STFT frame; the model consumes frame/2 + 1 frequency bins.
    pub frame_length: usize,
    /// Encoder/decoder stage count L.
    pub num_stages: usize,
    /// Channels after stage 1; stage l outputs base * 2^(l-1).
    pub base_channels: usize,
    pub band_scheme: BandScheme,
    /// Dual-path block count; odd positions (1-based) run on the latent
    /// directly, even positions on its temporal Fourier transform.
    pub neck_blocks: usize,
    /// LSTM hidden width inside every dual-path recurrence.
    pub neck_hidden: usize,
    /// Frequency neighborhood of the per-bin mask projection; odd.
    pub mask_kernel: usize,
    pub group_norm_groups: usize,
    pub head: HeadKind,
    /// Stem vocabulary this model is trained against, in emission order.
    pub stems: Vec<String>,
    /// Query embedding dimensionality (conditioned head only).
    pub embedding_dim: usize,
    /// Hidden width of the two FiLM MLPs.
    pub film_hidden: usize,
}

impl ModelConfig {
    /// Published defaults for the conditioned separator.
    pub fn conditioned_default(stems: Vec<String>) -> Self {
        Self {
            frame_length: 4096,
            num_stages: 3,
            base_channels: 32,
            band_scheme: BandScheme::default(),
            neck_blocks: 6,
            neck_hidden: 160,
            mask_kernel: 13,
            group_norm_groups: 4,
            head: HeadKind::Conditioned,
            stems,
            embedding_dim: 768,
            film_hidden: 128,
        }
    }

    /// Same body, one mask per stem, no conditioning.
    pub fn multi_stem_default(stems: Vec<String>) -> Self {
        Self { head: HeadKind::MultiStem, ..Self::conditioned_default(stems) }
    }

    pub fn hop(&self) -> usize {
        self.frame_length / 4
    }

    /// Frequency bins the model expects: frame/2 + 1.
    pub fn input_bins(&self) -> usize {
        self.frame_length / 2 + 1
    }

    /// Channels flowing out of encoder stage `l` (1-based).
    pub fn stage_channels(&self, l: usize) -> usize {
        self.base_channels << (l - 1)
    }

    /// Channels of the latent handed to the neck.
    pub fn latent_channels(&self) -> usize {
        self.stage_channels(self.num_stages)
    }

    /// Channels emitted by the decoder stage that inverts encoder stage `l`.
    /// Mirrors the encoder's input channels except at the top, where the
    /// mask head wants a real feature width rather than the 4 packed input
    /// channels.
    pub fn decoder_channels(&self, l: usize) -> usize {
        self.stage_channels(l.max(2) - 1)
    }

    /// Feature channels the mask head consumes.
    pub fn head_channels(&self) -> usize {
        self.decoder_channels(1)
    }

    /// Masks the head emits.
    pub fn mask_count(&self) -> usize {
        match self.head {
            HeadKind::Conditioned => 1,
            HeadKind::MultiStem => self.stems.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_config!(self.frame_length >= 8 && self.frame_length % 4 == 0, "bad frame_length {}", self.frame_length);
        ensure_config!(self.num_stages >= 1, "need at least one stage");
        ensure_config!(self.base_channels >= 1, "base_channels must be positive");
        ensure_config!(
            self.neck_blocks >= 2 && self.neck_blocks % 2 == 0,
            "neck_blocks must be a positive even count (plain/fourier pairs), got {}",
            self.neck_blocks
        );
        ensure_config!(self.neck_hidden >= 1, "neck_hidden must be positive");
        ensure_config!(self.mask_kernel % 2 == 1, "mask_kernel must be odd, got {}", self.mask_kernel);
        ensure_config!(self.group_norm_groups >= 1, "group_norm_groups must be positive");
        ensure_config!(
            self.base_channels % self.group_norm_groups == 0,
            "base_channels {} not divisible by group_norm_groups {}",
            self.base_channels,
            self.group_norm_groups
        );
        match self.head {
            HeadKind::MultiStem => {
                ensure_config!(!self.stems.is_empty(), "multi-stem head needs a stem vocabulary");
            }
            HeadKind::Conditioned => {
                ensure_config!(self.embedding_dim >= 1, "embedding_dim must be positive");
                ensure_config!(self.film_hidden >= 1, "film_hidden must be positive");
            }
        }
        let s = &self.band_scheme;
        for b in 0..3 {
            ensure_config!(s.ratios[b] > 0.0, "band ratio {b} must be positive");
            ensure_config!(s.strides[b] >= 1, "band stride {b} must be >= 1");
            ensure_config!(s.kernel_sizes[b] >= 1, "band kernel {b} must be >= 1");
            ensure_config!(s.channel_growth[b] >= 1, "band growth {b} must be >= 1");
        }
        let ratio_sum: f64 = s.ratios.iter().sum();
        ensure_config!(
            (ratio_sum - 1.0).abs() < 1e-6,
            "band ratios must sum to 1, got {ratio_sum}"
        );
        ensure_config!(
            s.channel_growth[0] == s.channel_growth[1] && s.channel_growth[1] == s.channel_growth[2],
            "per-band channel growth must be uniform so band features regather into one skip"
        );
        self.schedule()?;
        Ok(())
    }

    /// Per-stage frequency geometry, from the configured input bins down.
    pub fn schedule(&self) -> Result<Vec<StageShape>> {
        let mut shapes = Vec::with_capacity(self.num_stages);
        let mut f = self.input_bins();
        for l in 1..=self.num_stages {
            let shape = StageShape::for_width(f, l, self)?;
            f = shape.f_out;
            shapes.push(shape);
        }
        Ok(shapes)
    }
}

/// Frequency geometry of one encoder stage (the decoder inverts it).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageShape {
    pub stage: usize,
    pub f_in: usize,
    /// Band widths partitioning f_in.
    pub widths: [usize; 3],
    /// Widths after right-padding each band to a stride multiple.
    pub padded: [usize; 3],
    /// Widths after strided downsampling: ceil(width / stride).
    pub down: [usize; 3],
    pub f_out: usize,
    pub c_in: usize,
    /// Channels of each band's pre-downsampling representation, and of the
    /// regathered skip: c_in times the (uniform) channel growth.
    pub c_skip: usize,
    pub c_out: usize,
}

impl StageShape {
    fn for_width(f_in: usize, stage: usize, cfg: &ModelConfig) -> Result<Self> {
        let s = &cfg.band_scheme;
        let w1 = (f_in as f64 * s.ratios[0]).floor() as usize;
        let w2 = (f_in as f64 * s.ratios[1]).floor() as usize;
        ensure_config!(
            w1 >= 1 && w2 >= 1 && f_in > w1 + w2,
            "stage {stage}: width {f_in} too narrow for band split ({w1}/{w2}/rest)"
        );
        let widths = [w1, w2, f_in - w1 - w2];
        let mut padded = [0usize; 3];
        let mut down = [0usize; 3];
        for b in 0..3 {
            let st = s.strides[b];
            padded[b] = widths[b].div_ceil(st) * st;
            down[b] = widths[b].div_ceil(st);
        }
        let c_in = if stage == 1 { 4 } else { cfg.stage_channels(stage - 1) };
        let c_skip = c_in * s.channel_growth[0];
        let c_out = cfg.stage_channels(stage);
        ensure_config!(
            c_skip % cfg.group_norm_groups == 0,
            "stage {stage}: band channels {c_skip} not divisible by norm groups {}",
            cfg.group_norm_groups
        );
        ensure_config!(
            c_out % cfg.group_norm_groups == 0,
            "stage {stage}: channels {c_out} not divisible by norm groups {}",
            cfg.group_norm_groups
        );
        Ok(Self {
            stage,
            f_in,
            widths,
            padded,
            down,
            f_out: down.iter().sum(),
            c_in,
            c_skip,
            c_out,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn i6() -> Vec<String> {
        ["vocals", "bass", "drums", "guitar", "piano", "others"].map(String::from).to_vec()
    }

    #[test]
    fn default_band_widths_at_full_resolution() {
        let cfg = ModelConfig::conditioned_default(i6());
        assert_eq!(cfg.input_bins(), 2049);
        let sched = cfg.schedule().unwrap();
        assert_eq!(sched[0].widths, [358, 803, 888]);
    }

    #[test]
    fn strided_width_arithmetic() {
        // strides (1,2,4) on widths (358,803,888): 358 + ceil(803/2) + ceil(888/4)
        let mut cfg = ModelConfig::conditioned_default(i6());
        cfg.band_scheme.strides = [1, 2, 4];
        let sched = cfg.schedule().unwrap();
        assert_eq!(sched[0].down, [358, 402, 222]);
        assert_eq!(sched[0].f_out, 358 + 402 + 222);
    }

    #[test]
    fn default_schedule_is_three_stages_deep() {
        let cfg = ModelConfig::conditioned_default(i6());
        let sched = cfg.schedule().unwrap();
        assert_eq!(sched.len(), 3);
        assert_eq!(sched[0].f_out, 358 + 201 + 56);
        assert_eq!(sched[1].f_in, 615);
        assert_eq!(sched[2].f_out, sched[2].down.iter().sum::<usize>());
        assert!(sched[2].f_out >= 8);
        assert_eq!(sched[0].c_in, 4);
        assert_eq!(sched[0].c_out, 32);
        assert_eq!(sched[2].c_out, 128);
    }

    #[test]
    fn padded_widths_are_stride_multiples() {
        let cfg = ModelConfig::conditioned_default(i6());
        for shape in cfg.schedule().unwrap() {
            for b in 0..3 {
                assert_eq!(shape.padded[b] % cfg.band_scheme.strides[b], 0);
                assert!(shape.padded[b] >= shape.widths[b]);
                assert!(shape.padded[b] - shape.widths[b] < cfg.band_scheme.strides[b]);
                assert_eq!(shape.down[b], shape.widths[b].div_ceil(cfg.band_scheme.strides[b]));
            }
        }
    }

    #[test]
    fn rejects_degenerate_configs() {
        let mut cfg = ModelConfig::conditioned_default(i6());
        cfg.frame_length = 16; // 9 bins: floor(9*0.175) = 1, fine; deeper stages collapse
        assert!(cfg.validate().is_err());

        let mut cfg = ModelConfig::conditioned_default(i6());
        cfg.mask_kernel = 4;
        assert!(cfg.validate().is_err());

        let mut cfg = ModelConfig::conditioned_default(i6());
        cfg.base_channels = 6;
        assert!(cfg.validate().is_err(), "6 not divisible by 4 groups");

        let mut cfg = ModelConfig::conditioned_default(i6());
        cfg.band_scheme.ratios = [0.6, 0.5, 0.1];
        assert!(cfg.validate().is_err(), "ratios must sum to 1");

        let mut cfg = ModelConfig::multi_stem_default(i6());
        cfg.stems.clear();
        assert!(cfg.validate().is_err(), "multi-stem without a vocabulary");

        let mut cfg = ModelConfig::conditioned_default(i6());
        cfg.neck_blocks = 5;
        assert!(cfg.validate().is_err(), "alternation needs an even block count");

        let mut cfg = ModelConfig::conditioned_default(i6());
        cfg.band_scheme.channel_growth = [1, 2, 1];
        assert!(cfg.validate().is_err(), "mixed growth cannot regather");
    }

    #[test]
    fn conditioned_head_tolerates_empty_vocabulary() {
        let mut cfg = ModelConfig::conditioned_default(vec![]);
        cfg.stems.clear();
        cfg.validate().unwrap();
    }

    #[test]
    fn decoder_channel_plan() {
        let cfg = ModelConfig::conditioned_default(i6());
        assert_eq!(cfg.decoder_channels(3), 64);
        assert_eq!(cfg.decoder_channels(2), 32);
        assert_eq!(cfg.decoder_channels(1), 32, "top stage stays at head width");
        assert_eq!(cfg.head_channels(), 32);
    }

    #[test]
    fn default_config_validates() {
        ModelConfig::conditioned_default(i6()).validate().unwrap();
        ModelConfig::multi_stem_default(i6()).validate().unwrap();
    }

    #[test]
    fn serde_roundtrip() {
        let cfg = ModelConfig::conditioned_default(i6());
        let json = serde_json::to_string(&cfg).unwrap();
        let back: ModelConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
    }
}
