use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{default_learning_rate, CvOptions, TrainConfig, DEFAULT_BATCH, DEFAULT_HORIZON};
use crate::datasets::FoldStrategy;
use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::model::{Architecture, DecoderFamily, EncoderFamily, EncoderSize, ModelConfig};

/// Run settings as read from a TOML file:
///
/// ```toml
/// [model]
/// family = "compact-cnn"
/// size = "small"
/// architecture = "magnifier"
/// patch = 64
///
/// [loss]
/// lambda = 0.5
///
/// [train]
/// epochs = 30
/// learning_rate = 0.003
///
/// [data]
/// manifest = "data/manifest.json"
/// k = 5
/// ```
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub loss: LossConfig,
    pub train: TrainSection,
    pub data: DataSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub family: EncoderFamily,
    pub size: EncoderSize,
    pub architecture: Architecture,
    /// Defaults to the family's stock decoder.
    pub decoder: Option<DecoderFamily>,
    /// Square patch side.
    pub patch: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            family: EncoderFamily::CompactCnn,
            size: EncoderSize::Small,
            architecture: Architecture::Magnifier,
            decoder: None,
            patch: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// Defaults to the per-architecture rate.
    pub learning_rate: Option<f64>,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Defaults to `epochs`.
    pub horizon: Option<usize>,
    pub power: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub device: String,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            learning_rate: None,
            weight_decay: 0.01,
            epochs: DEFAULT_HORIZON,
            horizon: None,
            power: 1.0,
            batch_size: DEFAULT_BATCH,
            seed: 0,
            device: "cpu".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub manifest: Option<PathBuf>,
    pub k: usize,
    pub strategy: FoldStrategy,
    pub fold_seed: u64,
    /// Label for ranking; defaults to the manifest's directory name.
    pub name: Option<String>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            manifest: None,
            k: 5,
            strategy: FoldStrategy::Random,
            fold_seed: 0,
            name: None,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads `path`; a relative manifest path is resolved against the
    /// config file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let mut cfg = Self::parse(&std::fs::read_to_string(path)?)?;
        if let (Some(m), Some(dir)) = (&cfg.data.manifest, path.parent()) {
            if m.is_relative() {
                cfg.data.manifest = Some(dir.join(m));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn model_config(&self, channels: usize, tile: usize) -> ModelConfig {
        let m = &self.model;
        let mut cfg = ModelConfig::new(m.family, m.size, m.architecture, channels, tile)
            .with_patch(m.patch, m.patch);
        if let Some(d) = m.decoder {
            cfg.decoder = d;
        }
        cfg
    }

    pub fn train_config(&self, channels: usize, tile: usize) -> Result<TrainConfig> {
        let model = self.model_config(channels, tile);
        let t = &self.train;
        let cfg = TrainConfig {
            learning_rate: t
                .learning_rate
                .unwrap_or_else(|| default_learning_rate(&model)),
            model,
            loss: self.loss,
            weight_decay: t.weight_decay,
            epochs: t.epochs,
            schedule_horizon: t.horizon.unwrap_or(t.epochs),
            schedule_power: t.power,
            batch_size: t.batch_size,
            seed: t.seed,
            device: t.device.clone(),
            divergence_dump: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn cv_options(&self, checkpoint_dir: Option<PathBuf>) -> CvOptions {
        let name = self.data.name.clone().or_else(|| {
            self.data
                .manifest
                .as_ref()
                .and_then(|m| {
                    if m.is_dir() {
                        Some(m.as_path())
                    } else {
                        m.parent()
                    }
                })
                .and_then(|d| d.file_name())
                .map(|n| n.to_string_lossy().into_owned())
        });
        CvOptions {
            k: self.data.k,
            strategy: self.data.strategy,
            fold_seed: self.data.fold_seed,
            checkpoint_dir,
            dataset: name.unwrap_or_else(|| "dataset".into()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_and_defaults() {
        let cfg = RunConfig::parse(
            r#"
            [model]
            family = "residual-cnn"
            architecture = "single"
            [train]
            epochs = 7
            [data]
            k = 7
            strategy = "by-region"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.model.family, EncoderFamily::ResidualCnn);
        assert_eq!(cfg.model.size, EncoderSize::Small);
        assert_eq!(cfg.data.strategy, FoldStrategy::ByRegion);
        let t = cfg.train_config(12, 128).unwrap();
        assert_eq!(t.learning_rate, 1e-2);
        assert_eq!(t.schedule_horizon, 7);
        assert_eq!(t.model.decoder, DecoderFamily::DeepLab);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(
            RunConfig::parse("[train]\nepochz = 3\n"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }
}
