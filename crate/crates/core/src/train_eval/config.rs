//! Training configuration with the paper and desk presets.

use crate::align_lr::{AlignArm, NoiseConfig, NoiseMode};
use crate::config::{format_list, parse_list, parse_value, KeyValues};
use crate::error::{ensure, Error, Result};
use crate::losses::{LossArm, LossConfig};
use crate::restoration::{FusionOrder, RefMode, RestorationConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Paper,
    Desk,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Paper => "paper",
            Preset::Desk => "desk",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            _ => Err(Error::Config(format!("unknown preset {s:?} (paper, desk)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub preset: Preset,
    pub seed: u64,
    pub batch_size: usize,
    /// Side of the square LR training patch.
    pub lr_patch: usize,
    pub epochs: usize,
    /// Overrides `epochs` when set.
    pub steps: Option<usize>,
    pub learning_rate: f64,
    /// Step size after the decay point.
    pub learning_rate_decayed: f64,
    /// Fraction of the run after which the step size decays.
    pub decay_at: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub r_w: u32,
    pub align: AlignArm,
    /// `oracle`, `classical` or `external:<dir>`.
    pub flow: String,
    pub noise: NoiseConfig,
    pub adastn_stages: usize,
    pub zero_prob: f64,
    pub aux_width: usize,
    pub aux_learning_rate: f64,
    pub lambda_p: f64,
    pub aux_init_noise: f64,
    pub loss: LossConfig,
    /// Frozen perceptual pyramid stages as `(channels, stride)`.
    pub perceptual: Vec<(usize, usize)>,
    pub perceptual_seed: u64,
    pub restoration: RestorationConfig,
    pub match_channels: usize,
    pub match_seed: u64,
}

impl TrainConfig {
    pub fn paper() -> Self {
        Self {
            preset: Preset::Paper,
            seed: 0,
            batch_size: 16,
            lr_patch: 48,
            epochs: 400,
            steps: None,
            learning_rate: 1e-4,
            learning_rate_decayed: 5e-5,
            decay_at: 0.5,
            beta1: 0.9,
            beta2: 0.999,
            r_w: 2,
            align: AlignArm::TwoStage,
            flow: "oracle".into(),
            noise: NoiseConfig::default(),
            adastn_stages: 3,
            zero_prob: 0.3,
            aux_width: 32,
            aux_learning_rate: 1e-4,
            lambda_p: 100.0,
            aux_init_noise: 0.01,
            loss: LossConfig::default(),
            perceptual: vec![(16, 1), (32, 2), (64, 2)],
            perceptual_seed: 0x0f1e_2d3c,
            restoration: RestorationConfig::default(),
            match_channels: 32,
            match_seed: 0x5eed_ca7c,
        }
    }

    pub fn desk() -> Self {
        Self {
            preset: Preset::Desk,
            batch_size: 8,
            lr_patch: 16,
            steps: Some(3000),
            learning_rate: 5e-4,
            learning_rate_decayed: 2.5e-4,
            aux_width: 16,
            aux_learning_rate: 5e-4,
            perceptual: vec![(8, 1), (16, 2), (32, 2)],
            restoration: RestorationConfig::desk(),
            ..Self::paper()
        }
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Paper => Self::paper(),
            Preset::Desk => Self::desk(),
        }
    }

    pub fn r_t(&self) -> usize {
        self.restoration.r_t
    }

    /// Total optimizer steps for a dataset of `pairs` training pairs.
    pub fn total_steps(&self, pairs: usize) -> usize {
        self.steps
            .unwrap_or_else(|| self.epochs * pairs.div_ceil(self.batch_size.max(1)))
    }

    /// Step size at `step` of `total`.
    pub fn learning_rate_at(&self, step: usize, total: usize) -> f64 {
        if (step as f64) < self.decay_at * total as f64 {
            self.learning_rate
        } else {
            self.learning_rate_decayed
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.restoration.validate()?;
        ensure!(self.batch_size > 0, Config, "batch_size must be positive");
        ensure!(self.lr_patch > 0, Config, "lr_patch must be positive");
        ensure!(self.steps != Some(0), Config, "steps must be positive");
        ensure!(
            self.learning_rate > 0.0 && self.learning_rate_decayed > 0.0 && self.aux_learning_rate > 0.0,
            Config,
            "step sizes must be positive"
        );
        ensure!(
            (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2),
            Config,
            "Adam betas must lie in [0, 1)"
        );
        ensure!(
            self.r_w >= 1 && (self.r_t() as u32) > self.r_w,
            Config,
            "need r_t > r_w >= 1, got r_w={} r_t={}",
            self.r_w,
            self.r_t()
        );
        ensure!(self.adastn_stages > 0, Config, "adastn_stages must be positive");
        ensure!((0.0..=1.0).contains(&self.zero_prob), Config, "zero_prob outside [0, 1]");
        ensure!(self.lambda_p >= 0.0, Config, "lambda_p must be non-negative");
        ensure!(!self.perceptual.is_empty(), Config, "perceptual pyramid needs a stage");
        ensure!(
            self.noise.sigma.0 <= self.noise.sigma.1 && self.noise.jpeg_quality.0 <= self.noise.jpeg_quality.1,
            Config,
            "noise ranges must be ordered"
        );
        crate::align_lr::flow_provider(&self.flow)?;
        Ok(())
    }

    /// Applies one `key = value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if key == "preset" {
            // Presets are resolved by `from_kv`; here the name is only checked.
            Preset::parse(value)?;
            return Ok(());
        }
        if let Some(k) = key.strip_prefix("restoration.") {
            return if self.restoration.set(k, value)? {
                Ok(())
            } else {
                Err(Error::Config(format!("unknown key {key:?}")))
            };
        }
        match key {
            "seed" => self.seed = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "lr_patch" => self.lr_patch = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "steps" => {
                self.steps = match value.trim() {
                    "" | "auto" => None,
                    v => Some(parse_value(key, v)?),
                }
            }
            "learning_rate" => self.learning_rate = parse_value(key, value)?,
            "learning_rate_decayed" => self.learning_rate_decayed = parse_value(key, value)?,
            "decay_at" => self.decay_at = parse_value(key, value)?,
            "beta1" => self.beta1 = parse_value(key, value)?,
            "beta2" => self.beta2 = parse_value(key, value)?,
            "r_w" => self.r_w = parse_value(key, value)?,
            "r_t" => self.restoration.r_t = parse_value(key, value)?,
            "mode" => self.restoration.ref_mode = RefMode::parse(value)?,
            "fusion" => self.restoration.fusion = FusionOrder::parse(value)?,
            "align" => self.align = AlignArm::parse(value)?,
            "flow" => self.flow = value.trim().to_string(),
            "noise" => self.noise.mode = NoiseMode::parse(value)?,
            "noise_sigma" => {
                let v: Vec<f64> = parse_list(key, value)?;
                ensure!(v.len() == 2, Config, "noise_sigma expects min,max");
                self.noise.sigma = (v[0], v[1]);
            }
            "jpeg_quality" => {
                let v: Vec<u8> = parse_list(key, value)?;
                ensure!(v.len() == 2, Config, "jpeg_quality expects min,max");
                self.noise.jpeg_quality = (v[0], v[1]);
            }
            "adastn_stages" => self.adastn_stages = parse_value(key, value)?,
            "zero_prob" => self.zero_prob = parse_value(key, value)?,
            "aux_width" => self.aux_width = parse_value(key, value)?,
            "aux_learning_rate" => self.aux_learning_rate = parse_value(key, value)?,
            "lambda_p" => self.lambda_p = parse_value(key, value)?,
            "aux_init_noise" => self.aux_init_noise = parse_value(key, value)?,
            "loss" => self.loss.arm = LossArm::parse(value)?,
            "lambda_losw" => self.loss.lambda = parse_value(key, value)?,
            "losw_patch" => self.loss.patch = parse_value(key, value)?,
            "losw_stride" => self.loss.stride = parse_value(key, value)?,
            "projections" => {
                self.loss.projections = match value.trim() {
                    "" | "auto" => None,
                    v => Some(parse_value(key, v)?),
                }
            }
            "loss_stages" => self.loss.stages = parse_list(key, value)?,
            "perceptual" => {
                let v: Vec<usize> = parse_list(key, value)?;
                ensure!(
                    !v.is_empty() && v.len().is_multiple_of(2),
                    Config,
                    "perceptual expects channels,stride pairs"
                );
                self.perceptual = v.chunks_exact(2).map(|p| (p[0], p[1])).collect();
            }
            "perceptual_seed" => self.perceptual_seed = parse_value(key, value)?,
            "match_channels" => self.match_channels = parse_value(key, value)?,
            "match_seed" => self.match_seed = parse_value(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Preset named by `preset` (default desk), then every other key applied.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let preset = kv.get("preset").map(Preset::parse).transpose()?.unwrap_or(Preset::Desk);
        let mut cfg = Self::preset(preset);
        for (k, v) in kv.iter() {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Full echo; `from_kv(to_kv())` reproduces `self`.
    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        let steps = self.steps.map_or("auto".to_string(), |s| s.to_string());
        let projections = self.loss.projections.map_or("auto".to_string(), |s| s.to_string());
        let perceptual: Vec<usize> = self.perceptual.iter().flat_map(|&(c, s)| [c, s]).collect();
        for (k, v) in [
            ("preset", self.preset.name().to_string()),
            ("seed", self.seed.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr_patch", self.lr_patch.to_string()),
            ("epochs", self.epochs.to_string()),
            ("steps", steps),
            ("learning_rate", self.learning_rate.to_string()),
            ("learning_rate_decayed", self.learning_rate_decayed.to_string()),
            ("decay_at", self.decay_at.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("r_w", self.r_w.to_string()),
            ("align", self.align.name().to_string()),
            ("flow", self.flow.clone()),
            ("noise", self.noise.mode.name().to_string()),
            ("noise_sigma", format_list(&[self.noise.sigma.0, self.noise.sigma.1])),
            ("jpeg_quality", format_list(&[self.noise.jpeg_quality.0, self.noise.jpeg_quality.1])),
            ("adastn_stages", self.adastn_stages.to_string()),
            ("zero_prob", self.zero_prob.to_string()),
            ("aux_width", self.aux_width.to_string()),
            ("aux_learning_rate", self.aux_learning_rate.to_string()),
            ("lambda_p", self.lambda_p.to_string()),
            ("aux_init_noise", self.aux_init_noise.to_string()),
            ("loss", self.loss.arm.name().to_string()),
            ("lambda_losw", self.loss.lambda.to_string()),
            ("losw_patch", self.loss.patch.to_string()),
            ("losw_stride", self.loss.stride.to_string()),
            ("projections", projections),
            ("loss_stages", format_list(&self.loss.stages)),
            ("perceptual", format_list(&perceptual)),
            ("perceptual_seed", self.perceptual_seed.to_string()),
            ("match_channels", self.match_channels.to_string()),
            ("match_seed", self.match_seed.to_string()),
        ] {
            kv.set(k, v);
        }
        for (k, v) in self.restoration.entries() {
            kv.set(format!("restoration.{k}"), v);
        }
        kv
    }
}
