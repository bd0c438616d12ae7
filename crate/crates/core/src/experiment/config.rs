use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::FeatureKind;
use crate::error::{Error, Result};
use crate::fusion::ModelConfig;

use super::{load_dataset, synth_dataset_with, Sample, SynthSpec, TrainConfig};

/// Where samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DataSource {
    Synthetic {
        n: usize,
        snr_text: f64,
        snr_audio: f64,
        #[serde(default)]
        seed: u64,
    },
    /// A directory in the [`load_dataset`] layout, optionally with a held-out
    /// test directory. Relative paths resolve against the config file.
    Directory {
        path: PathBuf,
        features: FeatureKind,
        #[serde(default)]
        test: Option<PathBuf>,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic {
            n: 200,
            snr_text: 2.0,
            snr_audio: 2.0,
            seed: 0,
        }
    }
}

/// Full run description, read from TOML with `[model]`, `[train]` and
/// `[data]` tables; every key is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataSource,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml_str(&std::fs::read_to_string(path)?)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Development samples and, if configured, a separate test set.
    pub fn load_data(&self) -> Result<(Vec<Sample>, Option<Vec<Sample>>)> {
        match &self.data {
            DataSource::Synthetic {
                n,
                snr_text,
                snr_audio,
                seed,
            } => Ok((
                synth_dataset_with(&SynthSpec::for_model(&self.model), *n, *snr_text, *snr_audio, *seed)?,
                None,
            )),
            DataSource::Directory { path, features, test } => {
                let dev = load_dataset(&self.resolve(path), *features)?;
                let test = test
                    .as_ref()
                    .map(|t| load_dataset(&self.resolve(t), *features))
                    .transpose()?;
                Ok((dev, test))
            }
        }
    }
}
