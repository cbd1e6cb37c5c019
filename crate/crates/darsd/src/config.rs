//! Run configuration: every hyperparameter in one validated struct, loadable
//! from a flat `key = value` text file (`#` comments, unknown keys rejected).

use std::path::Path;

use crate::contrastive::AugmentationPolicy;
use crate::data::{DomainArtifacts, SyntheticShiftConfig};
use crate::error::{Error, Result};
use crate::ppgce::{PartitionMode, ScheduleMode};

/// How the adversarial term reaches the feature path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdversarialMode {
    /// Single objective with gradient reversal between features and
    /// discriminator (default).
    Combined,
    /// Separate discriminator step per batch, feature step sees the reversed
    /// objective only.
    Alternating,
}

/// Encoder size preset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderPreset {
    /// 2 conv layers, hidden 32 — minutes on one CPU core.
    Desk,
    /// 4 conv layers, hidden 128, dropout 0.2.
    Full,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    // representation
    pub feature_dim: usize,
    pub basis_dim: usize,
    pub encoder_preset: EncoderPreset,
    pub hidden_dim: usize,
    // losses
    pub tau: f64,
    pub momentum: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    // curriculum
    pub eta0: f64,
    pub eta_max: f64,
    pub schedule: ScheduleMode,
    pub step_size: f64,
    pub step_every: usize,
    pub partition_mode: PartitionMode,
    // optimizer / loop
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epochs: usize,
    pub finetune_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    // ablation switches
    pub use_lcib: bool,
    pub use_adv: bool,
    pub use_self: bool,
    pub use_anti: bool,
    pub adversarial_mode: AdversarialMode,
    // augmentation
    pub aug_jitter_sigma: f64,
    pub aug_scale_low: f64,
    pub aug_scale_high: f64,
    // synthetic generator
    pub synth_classes: usize,
    pub synth_t_len: usize,
    pub synth_channels: usize,
    pub synth_source_n: usize,
    pub synth_target_n: usize,
    pub synth_source_noise: f64,
    pub synth_target_noise: f64,
    pub synth_target_bias: f64,
    pub synth_target_scale: f64,
    pub synth_target_jitter: f64,
    pub synth_imbalance: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let shift = SyntheticShiftConfig::desk(0);
        Self {
            feature_dim: 32,
            basis_dim: 6,
            encoder_preset: EncoderPreset::Desk,
            hidden_dim: 32,
            tau: 0.1,
            momentum: 0.9,
            lambda1: 0.5,
            lambda2: 0.5,
            eta0: 0.1,
            eta_max: 0.95,
            schedule: ScheduleMode::Linear,
            step_size: 0.05,
            step_every: 15,
            partition_mode: PartitionMode::Quantile,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epochs: 40,
            finetune_epochs: 20,
            batch_size: 32,
            seed: 0,
            use_lcib: true,
            use_adv: true,
            use_self: true,
            use_anti: true,
            adversarial_mode: AdversarialMode::Combined,
            aug_jitter_sigma: 0.1,
            aug_scale_low: 0.8,
            aug_scale_high: 1.2,
            synth_classes: shift.n_classes,
            synth_t_len: shift.t_len,
            synth_channels: shift.channels,
            synth_source_n: shift.n_source,
            synth_target_n: shift.n_target,
            synth_source_noise: shift.source.noise_sigma,
            synth_target_noise: shift.target.noise_sigma,
            synth_target_bias: 2.0,
            synth_target_scale: shift.target.amplitude_scale,
            synth_target_jitter: shift.target.jitter_rate,
            synth_imbalance: shift.target_imbalance,
        }
    }
}

impl RunConfig {
    pub fn augmentation(&self) -> AugmentationPolicy {
        AugmentationPolicy {
            jitter_sigma: self.aug_jitter_sigma,
            scale_low: self.aug_scale_low,
            scale_high: self.aug_scale_high,
        }
    }

    /// The synthetic shift pair this config describes, seeded by `seed`.
    pub fn shift(&self, seed: u64) -> SyntheticShiftConfig {
        let desk = SyntheticShiftConfig::desk(seed);
        let bias: Vec<f64> = desk
            .target
            .channel_bias
            .iter()
            .take(self.synth_channels)
            .chain(std::iter::repeat(&0.5))
            .take(self.synth_channels)
            .map(|b| b * self.synth_target_bias)
            .collect();
        SyntheticShiftConfig {
            n_classes: self.synth_classes,
            t_len: self.synth_t_len,
            channels: self.synth_channels,
            n_source: self.synth_source_n,
            n_target: self.synth_target_n,
            source: DomainArtifacts {
                noise_sigma: self.synth_source_noise,
                channel_bias: vec![0.0; self.synth_channels],
                amplitude_scale: 1.0,
                jitter_rate: 0.0,
            },
            target: DomainArtifacts {
                noise_sigma: self.synth_target_noise,
                channel_bias: bias,
                amplitude_scale: self.synth_target_scale,
                jitter_rate: self.synth_target_jitter,
            },
            target_imbalance: self.synth_imbalance,
            seed,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::default();
        cfg.apply_text(&text, &path.display().to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text, "<inline>")?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, val) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: origin.to_string(),
                line: lineno + 1,
                msg: format!("expected `key = value`, got `{raw}`"),
            })?;
            self.set(key.trim(), val.trim()).map_err(|e| Error::Parse {
                path: origin.to_string(),
                line: lineno + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, val: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, val: &str) -> Result<T> {
            val.parse()
                .map_err(|_| Error::Config(format!("bad value for `{key}`: `{val}`")))
        }
        match key {
            "feature_dim" => self.feature_dim = num(key, val)?,
            "basis_dim" => self.basis_dim = num(key, val)?,
            "hidden_dim" => self.hidden_dim = num(key, val)?,
            "encoder_preset" => {
                self.encoder_preset = match val {
                    "desk" => EncoderPreset::Desk,
                    "full" => EncoderPreset::Full,
                    _ => return Err(Error::Config(format!("encoder_preset must be desk|full, got `{val}`"))),
                }
            }
            "tau" => self.tau = num(key, val)?,
            "momentum" => self.momentum = num(key, val)?,
            "lambda1" => self.lambda1 = num(key, val)?,
            "lambda2" => self.lambda2 = num(key, val)?,
            "eta0" => self.eta0 = num(key, val)?,
            "eta_max" => self.eta_max = num(key, val)?,
            "schedule" => {
                self.schedule = match val {
                    "linear" => ScheduleMode::Linear,
                    "stepwise" => ScheduleMode::Stepwise,
                    _ => return Err(Error::Config(format!("schedule must be linear|stepwise, got `{val}`"))),
                }
            }
            "step_size" => self.step_size = num(key, val)?,
            "step_every" => self.step_every = num(key, val)?,
            "partition_mode" => {
                self.partition_mode = match val {
                    "quantile" => PartitionMode::Quantile,
                    "threshold" => PartitionMode::Threshold,
                    _ => return Err(Error::Config(format!("partition_mode must be quantile|threshold, got `{val}`"))),
                }
            }
            "lr" => self.lr = num(key, val)?,
            "beta1" => self.beta1 = num(key, val)?,
            "beta2" => self.beta2 = num(key, val)?,
            "epochs" => self.epochs = num(key, val)?,
            "finetune_epochs" => self.finetune_epochs = num(key, val)?,
            "batch_size" => self.batch_size = num(key, val)?,
            "seed" => self.seed = num(key, val)?,
            "use_lcib" => self.use_lcib = num(key, val)?,
            "use_adv" => self.use_adv = num(key, val)?,
            "use_self" => self.use_self = num(key, val)?,
            "use_anti" => self.use_anti = num(key, val)?,
            "adversarial_mode" => {
                self.adversarial_mode = match val {
                    "combined" => AdversarialMode::Combined,
                    "alternating" => AdversarialMode::Alternating,
                    _ => return Err(Error::Config(format!("adversarial_mode must be combined|alternating, got `{val}`"))),
                }
            }
            "aug_jitter_sigma" => self.aug_jitter_sigma = num(key, val)?,
            "aug_scale_low" => self.aug_scale_low = num(key, val)?,
            "aug_scale_high" => self.aug_scale_high = num(key, val)?,
            "synth_classes" => self.synth_classes = num(key, val)?,
            "synth_t_len" => self.synth_t_len = num(key, val)?,
            "synth_channels" => self.synth_channels = num(key, val)?,
            "synth_source_n" => self.synth_source_n = num(key, val)?,
            "synth_target_n" => self.synth_target_n = num(key, val)?,
            "synth_source_noise" => self.synth_source_noise = num(key, val)?,
            "synth_target_noise" => self.synth_target_noise = num(key, val)?,
            "synth_target_bias" => self.synth_target_bias = num(key, val)?,
            "synth_target_scale" => self.synth_target_scale = num(key, val)?,
            "synth_target_jitter" => self.synth_target_jitter = num(key, val)?,
            "synth_imbalance" => self.synth_imbalance = num(key, val)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(msg.to_string()))
            }
        };
        check(self.feature_dim >= 2, "feature_dim must be ≥ 2")?;
        check(
            self.basis_dim >= 1 && self.basis_dim < self.feature_dim,
            "basis_dim must satisfy 1 ≤ m < feature_dim",
        )?;
        check(self.hidden_dim >= 1, "hidden_dim must be ≥ 1")?;
        check(self.tau > 0.0 && self.tau.is_finite(), "tau must be > 0")?;
        check((0.0..1.0).contains(&self.momentum) || self.momentum == 1.0, "momentum must be in [0,1]")?;
        check(self.lambda1 >= 0.0 && self.lambda1.is_finite(), "lambda1 must be ≥ 0")?;
        check(self.lambda2 >= 0.0 && self.lambda2.is_finite(), "lambda2 must be ≥ 0")?;
        check((0.0..=1.0).contains(&self.eta0), "eta0 must be in [0,1]")?;
        check(
            (0.0..=1.0).contains(&self.eta_max) && self.eta_max >= self.eta0,
            "eta_max must be in [eta0, 1]",
        )?;
        check(self.step_size > 0.0, "step_size must be > 0")?;
        check(self.step_every >= 1, "step_every must be ≥ 1")?;
        check(self.lr > 0.0 && self.lr.is_finite(), "lr must be > 0")?;
        check((0.0..1.0).contains(&self.beta1), "beta1 must be in [0,1)")?;
        check((0.0..1.0).contains(&self.beta2), "beta2 must be in [0,1)")?;
        check(self.epochs >= 1, "epochs must be ≥ 1")?;
        check(self.batch_size >= 2, "batch_size must be ≥ 2")?;
        check(self.aug_jitter_sigma >= 0.0, "aug_jitter_sigma must be ≥ 0")?;
        check(
            self.aug_scale_low > 0.0 && self.aug_scale_high >= self.aug_scale_low,
            "augmentation scale range must satisfy 0 < low ≤ high",
        )?;
        check(self.synth_classes >= 2, "synth_classes must be ≥ 2")?;
        check(self.synth_t_len >= 8, "synth_t_len must be ≥ 8")?;
        check(self.synth_channels >= 1, "synth_channels must be ≥ 1")?;
        check(
            self.synth_source_n >= self.synth_classes && self.synth_target_n >= 1,
            "synthetic sample counts too small",
        )?;
        check(
            (0.0..1.0).contains(&self.synth_imbalance),
            "synth_imbalance must be in [0,1)",
        )?;
        check(
            (0.0..=1.0).contains(&self.synth_target_jitter),
            "synth_target_jitter must be in [0,1]",
        )?;
        Ok(())
    }
}
