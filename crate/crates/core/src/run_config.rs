//! TOML run configuration for the command-line tool.
//!
//! Every section is optional; missing keys take their defaults and unknown
//! keys are rejected. The fully materialized configuration is written next
//! to every artifact a command produces.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::EmbedderKind;
use crate::config::ModelConfig;
use crate::data::DatasetSpec;
use crate::error::{Error, Result};
use crate::train::TrainingConfig;

/// Environment variable naming the default checkpoint directory.
pub const CKPT_DIR_ENV: &str = "ROBUSTMARK_CKPT_DIR";
pub const EFFECTIVE_CONFIG_FILE: &str = "effective_config.toml";

pub fn default_output_dir() -> PathBuf {
    std::env::var_os(CKPT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Checkpoints, logs and reports are written here.
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_output_dir(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub embedder: EmbedderKind,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub dataset: DatasetSpec,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            embedder: EmbedderKind::CrossAttention,
            model: ModelConfig::full(),
            training: TrainingConfig::default(),
            dataset: DatasetSpec::default(),
            output: OutputConfig::default(),
        }
    }
}

impl RunConfig {
    /// Narrow model and short schedules for single-core machines.
    pub fn desk() -> Self {
        Self {
            model: ModelConfig::desk(),
            training: TrainingConfig::desk(),
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.training.validate()?;
        if self.dataset.image_size != self.model.image_size {
            return Err(Error::Config(format!(
                "dataset image size {} differs from model image size {}",
                self.dataset.image_size, self.model.image_size
            )));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }

    /// Write the effective configuration into `dir`.
    pub fn save_effective(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(EFFECTIVE_CONFIG_FILE);
        std::fs::write(&path, self.to_toml()?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::NoiseKind;

    #[test]
    fn roundtrip_materializes_defaults() {
        let cfg = RunConfig::from_toml("[training]\nseed = 3\n").unwrap();
        assert_eq!(cfg.training.seed, 3);
        assert_eq!(cfg.model, ModelConfig::full());
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        let desk = RunConfig::desk();
        assert_eq!(RunConfig::from_toml(&desk.to_toml().unwrap()).unwrap(), desk);
    }

    #[test]
    fn shipped_desk_config_matches_desk_profile() {
        let shipped = RunConfig::from_toml(include_str!("../../../configs/desk.toml")).unwrap();
        let mut want = RunConfig::desk();
        want.output.dir = PathBuf::from("runs/desk");
        assert_eq!(shipped, want);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(RunConfig::from_toml("[training]\nsed = 3\n"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("colour = 1\n"), Err(Error::Config(_))));
    }

    #[test]
    fn test_role_noise_in_training_is_rejected() {
        let mut cfg = RunConfig::desk();
        cfg.training.augment.noises[0].kind = NoiseKind::Jpeg;
        cfg.training.augment.noises[0].min_level = 50.0;
        cfg.training.augment.noises[0].max_level = 90.0;
        let text = cfg.to_toml().unwrap();
        let err = RunConfig::from_toml(&text).unwrap_err();
        assert!(err.to_string().contains("test-role"), "{err}");
    }

    #[test]
    fn effective_config_is_written() {
        let dir = tempfile::tempdir().unwrap();
        let path = RunConfig::desk().save_effective(dir.path()).unwrap();
        assert_eq!(RunConfig::load(&path).unwrap(), RunConfig::desk());
    }
}
