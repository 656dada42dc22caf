use serde::{Deserialize, Serialize};

use crate::datapipe::PreprocessConfig;
use crate::mae1d::ModelConfig;
use crate::numcore::{AdamWState, LrSchedule};
use crate::objectives::{curriculum_weights, CurriculumState, DEFAULT_TRIPLET_MARGIN};

use super::TrainError;

/// Complete training configuration, shared verbatim by the reference
/// trainer, the coordinator, and every worker. Determinism contract: all
/// data order, crops, masks, triplet draws, and parameter initializations
/// are pure functions of `master_seed` and the loop indices, so any two
/// runs of this config agree bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub channels: usize,
    pub model: ModelConfig,
    pub preprocess: PreprocessConfig,
    pub batch_size: usize,
    pub epochs: u32,
    pub base_lr: f64,
    #[serde(default)]
    pub warmup_epochs: u32,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    /// Epoch-dependent loss blending. Off means both losses at weight 1.
    #[serde(default = "default_true")]
    pub curriculum: bool,
    /// Embedding alignment. Off trains plain per-channel autoencoders
    /// (the baseline models).
    #[serde(default = "default_true")]
    pub align: bool,
    #[serde(default = "default_margin")]
    pub triplet_margin: f64,
    /// Restrict the reconstruction loss to masked patches (ablation);
    /// the default averages over every sample.
    #[serde(default)]
    pub masked_loss_only: bool,
    pub master_seed: u64,
    /// Record manifest path; workers and coordinator load the same data.
    #[serde(default)]
    pub manifest: String,
    /// Output directory for checkpoints and metrics; empty disables
    /// persistence.
    #[serde(default)]
    pub out_dir: String,
}

fn default_beta1() -> f64 {
    AdamWState::DEFAULT_BETA1
}
fn default_beta2() -> f64 {
    AdamWState::DEFAULT_BETA2
}
fn default_epsilon() -> f64 {
    AdamWState::DEFAULT_EPSILON
}
fn default_weight_decay() -> f64 {
    AdamWState::DEFAULT_WEIGHT_DECAY
}
fn default_true() -> bool {
    true
}
fn default_margin() -> f64 {
    DEFAULT_TRIPLET_MARGIN
}

impl TrainConfig {
    /// Desk-scale config over the tiny model; callers fill in data paths,
    /// channel count, and seeds.
    pub fn tiny(channels: usize, epochs: u32, batch_size: usize, master_seed: u64) -> Self {
        TrainConfig {
            channels,
            model: ModelConfig::tiny(),
            preprocess: PreprocessConfig { target_fs: 50.0, crop_seconds: 2.0, normalize: true },
            batch_size,
            epochs,
            base_lr: 1e-3,
            warmup_epochs: 0,
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
            weight_decay: default_weight_decay(),
            curriculum: true,
            align: true,
            triplet_margin: default_margin(),
            masked_loss_only: false,
            master_seed,
            manifest: String::new(),
            out_dir: String::new(),
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.model.validate()?;
        self.preprocess.validate()?;
        if self.batch_size < 2 {
            return Err(TrainError::Config(format!(
                "batch_size must be at least 2, got {}",
                self.batch_size
            )));
        }
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if self.channels == 0 || (self.align && self.channels < 2) {
            return Err(TrainError::Config(format!(
                "channel count {} too small (alignment needs at least 2)",
                self.channels
            )));
        }
        let window = self.preprocess.crop_len();
        if window != self.model.signal_len {
            return Err(TrainError::Config(format!(
                "preprocess window of {window} samples does not match model signal_len {}",
                self.model.signal_len
            )));
        }
        if self.base_lr.is_nan() || self.base_lr < 0.0 {
            return Err(TrainError::Config(format!("base_lr {} must be non-negative", self.base_lr)));
        }
        Ok(())
    }

    pub fn lr_schedule(&self) -> LrSchedule {
        LrSchedule {
            base_lr: self.base_lr,
            total_epochs: self.epochs,
            warmup_epochs: self.warmup_epochs,
        }
    }

    /// `(w_align, w_rec)` for an epoch: the curriculum when enabled, flat
    /// unit weights when disabled, and pure reconstruction with alignment
    /// off.
    pub fn loss_weights(&self, epoch: u32) -> (f64, f64) {
        if !self.align {
            (0.0, 1.0)
        } else if !self.curriculum {
            (1.0, 1.0)
        } else {
            curriculum_weights(
                CurriculumState::new(epoch, self.epochs).expect("validated epoch range"),
            )
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_config_is_valid() {
        TrainConfig::tiny(4, 3, 4, 1).validate().unwrap();
    }

    #[test]
    fn window_model_mismatch_rejected() {
        let mut cfg = TrainConfig::tiny(4, 3, 4, 1);
        cfg.preprocess.crop_seconds = 1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn alignment_needs_two_channels() {
        let mut cfg = TrainConfig::tiny(1, 3, 4, 1);
        assert!(cfg.validate().is_err());
        cfg.align = false;
        cfg.validate().unwrap();
    }

    #[test]
    fn loss_weights_cover_modes() {
        let mut cfg = TrainConfig::tiny(4, 10, 4, 1);
        assert_eq!(cfg.loss_weights(0), (0.0, 1.0));
        let (wa, wr) = cfg.loss_weights(10);
        assert!((wa - 1.0).abs() < 1e-15 && wr.abs() < 1e-15);
        cfg.curriculum = false;
        assert_eq!(cfg.loss_weights(5), (1.0, 1.0));
        cfg.align = false;
        assert_eq!(cfg.loss_weights(5), (0.0, 1.0));
    }

    #[test]
    fn json_round_trip_with_defaults() {
        let cfg = TrainConfig::tiny(4, 3, 4, 9);
        let json = serde_json::to_string(&cfg).unwrap();
        let back: TrainConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
        // Optimizer constants may be omitted and fall back to defaults.
        let minimal = format!(
            "{{\"channels\":2,\"model\":{},\"preprocess\":{},\"batch_size\":4,\"epochs\":2,\"base_lr\":0.001,\"master_seed\":1}}",
            serde_json::to_string(&cfg.model).unwrap(),
            serde_json::to_string(&cfg.preprocess).unwrap(),
        );
        let parsed: TrainConfig = serde_json::from_str(&minimal).unwrap();
        assert_eq!(parsed.beta1, AdamWState::DEFAULT_BETA1);
        assert!(parsed.align && parsed.curriculum);
    }
}
