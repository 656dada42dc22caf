use std::path::Path;

use serde::{Deserialize, Serialize};

use modred::datapipe::SyntheticHeartConfig;
use modred::disttrain::TrainConfig;

use crate::error::CliError;

/// One run's full configuration document: training (with its embedded
/// preprocessing), synthetic data generation, output directory, and the
/// evaluation seed. Unknown keys are fatal. The resolved document (defaults
/// filled, flags applied) is written beside every run's outputs and reloads
/// to an identical run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub synth: SyntheticHeartConfig,
    /// Seed for evaluation-time crops and folds (training uses
    /// `train.master_seed`, generation uses `synth.seed`).
    pub seed: u64,
    #[serde(default)]
    pub out_dir: String,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::usage(format!("malformed config {}: {e}", path.display())))?;
        Ok(cfg)
    }

    /// Applies command-line overrides and fills derived defaults. The
    /// returned config is the resolved document.
    pub fn resolve(
        mut self,
        seed: Option<u64>,
        out: Option<&Path>,
        no_align: bool,
    ) -> Result<Self, CliError> {
        if let Some(seed) = seed {
            self.seed = seed;
        }
        if let Some(out) = out {
            self.out_dir = out.display().to_string();
        }
        if self.out_dir.is_empty() {
            return Err(CliError::usage(
                "no output directory: set out_dir in the config or pass --out".into(),
            ));
        }
        if no_align {
            self.train.align = false;
        }
        let out = Path::new(&self.out_dir);
        if self.train.manifest.is_empty() {
            self.train.manifest = out.join("data").join("manifest.json").display().to_string();
        }
        if self.train.out_dir.is_empty() {
            self.train.out_dir = out.join("checkpoints").display().to_string();
        }
        self.train.validate().map_err(|e| CliError::usage(format!("invalid train config: {e}")))?;
        self.synth.validate().map_err(|e| CliError::usage(format!("invalid synth config: {e}")))?;
        Ok(self)
    }

    pub fn out_path(&self) -> &Path {
        Path::new(&self.out_dir)
    }

    pub fn checkpoints_path(&self) -> &Path {
        Path::new(&self.train.out_dir)
    }

    pub fn manifest_path(&self) -> &Path {
        Path::new(&self.train.manifest)
    }

    /// Writes the resolved document beside the run's outputs.
    pub fn write_resolved(&self) -> Result<(), CliError> {
        std::fs::create_dir_all(self.out_path())
            .map_err(|e| CliError::data(format!("cannot create {}: {e}", self.out_dir)))?;
        let json = serde_json::to_string_pretty(self).expect("config serializes");
        let path = self.out_path().join("resolved_config.json");
        std::fs::write(&path, json.as_bytes())
            .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))?;
        Ok(())
    }

    pub fn hash(&self) -> String {
        modred::disttrain::config_hash(&self.train)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_json() -> String {
        let cfg = RunConfig {
            train: TrainConfig::tiny(4, 3, 4, 1),
            synth: SyntheticHeartConfig::default(),
            seed: 42,
            out_dir: String::new(),
        };
        serde_json::to_string(&cfg).unwrap()
    }

    #[test]
    fn unknown_keys_are_fatal() {
        let json = sample_json().replacen('{', "{\"mystery\":1,", 1);
        assert!(serde_json::from_str::<RunConfig>(&json).is_err());
    }

    #[test]
    fn resolve_fills_paths_and_applies_overrides() {
        let cfg: RunConfig = serde_json::from_str(&sample_json()).unwrap();
        let resolved = cfg.resolve(Some(7), Some(Path::new("/tmp/run")), true).unwrap();
        assert_eq!(resolved.seed, 7);
        assert_eq!(resolved.out_dir, "/tmp/run");
        assert!(!resolved.train.align);
        assert_eq!(resolved.train.manifest, "/tmp/run/data/manifest.json");
        assert_eq!(resolved.train.out_dir, "/tmp/run/checkpoints");
    }

    #[test]
    fn resolved_config_reloads_identically() {
        let cfg: RunConfig = serde_json::from_str(&sample_json()).unwrap();
        let resolved = cfg.resolve(None, Some(Path::new("/tmp/x")), false).unwrap();
        let json = serde_json::to_string_pretty(&resolved).unwrap();
        let reloaded: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(resolved, reloaded);
    }

    #[test]
    fn missing_out_dir_is_a_usage_error() {
        let cfg: RunConfig = serde_json::from_str(&sample_json()).unwrap();
        assert!(cfg.resolve(None, None, false).is_err());
    }
}
