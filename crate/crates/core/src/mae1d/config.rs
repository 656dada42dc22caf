use serde::{Deserialize, Serialize};

use crate::numcore::{NumError, Result};

/// Architecture hyperparameters of one per-channel masked autoencoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Input length in samples (e.g. 5 s at 500 Hz = 2500).
    pub signal_len: usize,
    /// Non-overlapping patch length in samples.
    pub patch_len: usize,
    pub enc_dim: usize,
    pub enc_depth: usize,
    pub enc_heads: usize,
    pub dec_dim: usize,
    pub dec_depth: usize,
    pub dec_heads: usize,
    pub mlp_ratio: usize,
    pub qkv_bias: bool,
    /// Fraction of patches hidden from the encoder during training.
    pub mask_ratio: f64,
}

impl ModelConfig {
    /// The full-scale 12-lead configuration: 5 s of 500 Hz signal in
    /// 100-sample patches, 12 encoder blocks at dim 768 with 8 heads,
    /// 8 decoder blocks at dim 512 with 16 heads.
    pub fn standard() -> Self {
        ModelConfig {
            signal_len: 2500,
            patch_len: 100,
            enc_dim: 768,
            enc_depth: 12,
            enc_heads: 8,
            dec_dim: 512,
            dec_depth: 8,
            dec_heads: 16,
            mlp_ratio: 4,
            qkv_bias: true,
            mask_ratio: 0.75,
        }
    }

    /// Desk-scale configuration used throughout the test suites.
    pub fn tiny() -> Self {
        ModelConfig {
            signal_len: 100,
            patch_len: 10,
            enc_dim: 32,
            enc_depth: 2,
            enc_heads: 4,
            dec_dim: 16,
            dec_depth: 1,
            dec_heads: 4,
            mlp_ratio: 2,
            qkv_bias: true,
            mask_ratio: 0.75,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |detail: String| {
            Err(NumError::InvalidArgument { op: "model_config", detail })
        };
        if self.signal_len == 0 || self.patch_len == 0 || !self.signal_len.is_multiple_of(self.patch_len) {
            return fail(format!(
                "signal_len {} must be a positive multiple of patch_len {}",
                self.signal_len, self.patch_len
            ));
        }
        if self.enc_heads == 0 || !self.enc_dim.is_multiple_of(self.enc_heads) {
            return fail(format!("enc_dim {} not divisible by enc_heads {}", self.enc_dim, self.enc_heads));
        }
        if self.dec_heads == 0 || !self.dec_dim.is_multiple_of(self.dec_heads) {
            return fail(format!("dec_dim {} not divisible by dec_heads {}", self.dec_dim, self.dec_heads));
        }
        if !self.enc_dim.is_multiple_of(2) || !self.dec_dim.is_multiple_of(2) {
            return fail("embedding dims must be even for sine-cosine positions".into());
        }
        if self.enc_depth == 0 || self.dec_depth == 0 || self.mlp_ratio == 0 {
            return fail("depths and mlp_ratio must be positive".into());
        }
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return fail(format!("mask_ratio {} outside [0, 1)", self.mask_ratio));
        }
        Ok(())
    }

    /// Number of non-overlapping patches.
    pub fn num_patches(&self) -> usize {
        self.signal_len / self.patch_len
    }

    /// Patches kept visible under the mask ratio: `floor(L * (1 - ratio))`.
    pub fn visible_count(&self) -> usize {
        mask_keep_count(self.num_patches(), self.mask_ratio)
    }
}

/// Visible-patch count rule shared with [`crate::mae1d::random_mask`].
pub(crate) fn mask_keep_count(num_patches: usize, mask_ratio: f64) -> usize {
    ((num_patches as f64) * (1.0 - mask_ratio)).floor() as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_config_is_valid_with_25_patches() {
        let cfg = ModelConfig::standard();
        cfg.validate().unwrap();
        assert_eq!(cfg.num_patches(), 25);
        assert_eq!(cfg.visible_count(), 6);
    }

    #[test]
    fn tiny_config_is_valid() {
        let cfg = ModelConfig::tiny();
        cfg.validate().unwrap();
        assert_eq!(cfg.num_patches(), 10);
        assert_eq!(cfg.visible_count(), 2);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = ModelConfig::tiny();
        cfg.patch_len = 7;
        assert!(cfg.validate().is_err());

        let mut cfg = ModelConfig::tiny();
        cfg.enc_heads = 5;
        assert!(cfg.validate().is_err());

        let mut cfg = ModelConfig::tiny();
        cfg.mask_ratio = 1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_json_round_trips_and_rejects_unknown_keys() {
        let cfg = ModelConfig::tiny();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: ModelConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
        let with_extra = json.replace('}', ",\"bogus\":1}");
        assert!(serde_json::from_str::<ModelConfig>(&with_extra).is_err());
    }
}
