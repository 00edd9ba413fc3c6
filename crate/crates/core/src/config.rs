//! Experiment files: a TOML tree selecting a preset, datasets, seeds and
//! overrides. Unknown keys are rejected.
//!
//! ```toml
//! preset = "fwi-desk"
//! precision = "f64"
//! out = "runs/flat_vel_a"
//!
//! [[data]]
//! train = "data/train.lwc"
//! test = "data/test.lwc"
//!
//! [model]
//! converter = "maxout2"
//!
//! [train]
//! epochs = 5
//! seed = 3
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::finola::FinolaMode;
use crate::model::{ConverterKind, ModelConfig};
use crate::real::Dtype;
use crate::train::{hex, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub train: PathBuf,
    #[serde(default)]
    pub test: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelOverrides {
    pub property_grid: Option<usize>,
    pub converter: Option<ConverterKind>,
    pub shared: Option<bool>,
    pub mode: Option<FinolaMode>,
    pub paths: Option<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainBase {
    #[default]
    Desk,
    Paper,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    #[serde(default)]
    pub base: TrainBase,
    pub lr: Option<f64>,
    pub weight_decay: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    /// Non-positive disables clipping.
    pub clip_norm: Option<f64>,
    pub head_weights: Option<[f64; 2]>,
    pub checkpoint_every: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationOptions {
    /// Property feature-map sizes for the resolution sweep.
    pub sizes: Option<Vec<usize>>,
    /// Add the identical-config rerun row (default: on for the shared
    /// comparison, off otherwise).
    pub control: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: String,
    #[serde(default = "default_precision")]
    pub precision: Dtype,
    /// Output directory; defaults to `out` beside the config file.
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub data: Vec<DataPaths>,
    #[serde(default)]
    pub model: ModelOverrides,
    #[serde(default)]
    pub train: TrainOverrides,
    #[serde(default)]
    pub ablation: AblationOptions,
}

fn default_precision() -> Dtype {
    Dtype::F32
}

/// A parsed experiment plus the digest of the exact file bytes.
#[derive(Clone, Debug)]
pub struct LoadedExperiment {
    pub config: ExperimentConfig,
    pub sha256: String,
    /// Directory relative paths are resolved against.
    pub root: PathBuf,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(format!("experiment config: {e}")))?;
        if cfg.data.is_empty() {
            return Err(Error::Config("experiment config lists no [[data]] entries".into()));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<LoadedExperiment> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let text = std::str::from_utf8(&bytes).map_err(|_| Error::Config(format!("{} is not UTF-8", path.display())))?;
        let config = Self::parse(text)?;
        Ok(LoadedExperiment {
            config,
            sha256: hex(&Sha256::digest(&bytes)),
            root: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        })
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let mut m = ModelConfig::preset(&self.preset)?;
        let o = &self.model;
        if let Some(s) = o.property_grid {
            m = m.with_property_grid(s)?;
        }
        if let Some(k) = o.converter {
            m.converter = k;
        }
        if let Some(s) = o.shared {
            m.finola.shared = s;
        }
        if let Some(mode) = o.mode {
            m.finola.mode = mode;
        }
        if let Some(p) = o.paths {
            m.finola.paths = p;
        }
        m.validate()?;
        Ok(m)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let o = &self.train;
        let mut t = match o.base {
            TrainBase::Desk => TrainConfig::desk(),
            TrainBase::Paper => TrainConfig::paper(),
        };
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = o.$f { t.$f = v; })*};
        }
        set!(lr, weight_decay, batch_size, epochs, seed, head_weights, checkpoint_every);
        if let Some(c) = o.clip_norm {
            t.clip_norm = (c > 0.0).then_some(c);
        }
        t.validate()?;
        Ok(t)
    }
}

impl LoadedExperiment {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(self.config.out.as_deref().unwrap_or(Path::new("out")))
    }

    /// Training set (all listed files joined) and test set, if every entry has one.
    pub fn datasets(&self) -> Result<(Dataset, Option<Dataset>)> {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for d in &self.config.data {
            train.push(Dataset::read(&self.resolve(&d.train))?);
            if let Some(t) = &d.test {
                test.push(Dataset::read(&self.resolve(t))?);
            }
        }
        let train = Dataset::concat(&train)?;
        let test = match test.len() {
            0 => None,
            n if n == self.config.data.len() => Some(Dataset::concat(&test)?),
            _ => return Err(Error::Config("either every [[data]] entry lists a test set or none does".into())),
        };
        Ok((train, test))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIN: &str = "preset = \"fwi-desk\"\n[[data]]\ntrain = \"a.lwc\"\n";

    #[test]
    fn minimal_defaults() {
        let c = ExperimentConfig::parse(MIN).unwrap();
        assert_eq!(c.precision, Dtype::F32);
        assert_eq!(c.train_config().unwrap(), TrainConfig::desk());
        assert_eq!(c.model_config().unwrap(), ModelConfig::preset("fwi-desk").unwrap());
    }

    #[test]
    fn unknown_keys_rejected() {
        for bad in [
            format!("{MIN}epocs = 3\n"),
            format!("{MIN}[train]\nepocs = 3\n"),
            format!("{MIN}[model]\nconverter = \"cubic\"\n"),
        ] {
            let e = ExperimentConfig::parse(&bad).unwrap_err();
            assert!(matches!(e, Error::Config(_)), "{bad}");
        }
    }

    #[test]
    fn overrides_apply() {
        let c = ExperimentConfig::parse(&format!(
            "{MIN}[model]\nproperty_grid = 7\nconverter = \"mlp2\"\nshared = false\n[train]\nepochs = 2\nclip_norm = 0\n"
        ))
        .unwrap();
        let m = c.model_config().unwrap();
        assert_eq!(m.property_grid, (7, 7));
        assert_eq!(m.converter, ConverterKind::Mlp2);
        assert!(!m.finola.shared);
        let t = c.train_config().unwrap();
        assert_eq!(t.epochs, 2);
        assert_eq!(t.clip_norm, None);
    }

    #[test]
    fn needs_data() {
        assert!(ExperimentConfig::parse("preset = \"fwi-desk\"\ndata = []\n").is_err());
    }
}
