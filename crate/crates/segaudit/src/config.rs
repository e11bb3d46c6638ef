//! Run configuration. Values come from defaults, then an optional TOML file,
//! then command-line flags; the merged result is echoed into every report.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use segaudit_core::detect::{ProposeConfig, BASELINE1_MIN_SIZE};
use segaudit_core::meta::TrainConfig;
use segaudit_core::perturb::{PerturbConfig, SmoothConfig};

use crate::error::{Error, Result};

pub const DEFAULT_TAU: f64 = 0.25;
pub const DEFAULT_SEED: u64 = 0;

/// How images are assigned to the meta-training and search roles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    /// One train-meta half and one search half. Splits stored in the
    /// manifest are used as given.
    Half,
    /// K folds; every image is searched once by a model trained on the
    /// other folds.
    KFold(usize),
}

impl fmt::Display for SplitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitMode::Half => f.write_str("half"),
            SplitMode::KFold(k) => write!(f, "kfold:{k}"),
        }
    }
}

impl FromStr for SplitMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "half" {
            return Ok(SplitMode::Half);
        }
        let k = s
            .strip_prefix("kfold:")
            .and_then(|k| k.parse::<usize>().ok())
            .ok_or_else(|| format!("split mode must be `half` or `kfold:K`, got `{s}`"))?;
        if k < 2 {
            return Err("kfold needs at least 2 folds".into());
        }
        Ok(SplitMode::KFold(k))
    }
}

impl Serialize for SplitMode {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SplitMode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Fill for dropped raster components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillMode {
    /// Background mask when the record has one, nearest label otherwise.
    Auto,
    Nearest,
    Background,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbSection {
    pub p_hat: f64,
    pub size_min: usize,
    pub size_max: usize,
    /// Class names; empty means every class.
    pub eligible_classes: Vec<String>,
    pub fill: FillMode,
}

impl Default for PerturbSection {
    fn default() -> Self {
        let d = PerturbConfig::default();
        Self {
            p_hat: d.p_hat,
            size_min: d.size_min,
            size_max: d.size_max,
            eligible_classes: Vec::new(),
            fill: FillMode::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothSection {
    /// Class names in processing order; empty disables smoothing.
    pub classes: Vec<String>,
    pub intensity: f64,
    pub sigma: f64,
    pub threshold: f64,
}

impl Default for SmoothSection {
    fn default() -> Self {
        let d = SmoothConfig::default();
        Self {
            classes: Vec::new(),
            intensity: d.intensity,
            sigma: d.sigma,
            threshold: d.threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    pub min_size: usize,
}

impl Default for BaselineSection {
    fn default() -> Self {
        Self {
            min_size: BASELINE1_MIN_SIZE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub tau: f64,
    /// Drives perturbation draws and the image split.
    pub seed: u64,
    pub split_mode: SplitMode,
    pub perturb: PerturbSection,
    pub smooth: SmoothSection,
    pub train: TrainConfig,
    pub propose: ProposeConfig,
    pub baseline: BaselineSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            seed: DEFAULT_SEED,
            split_mode: SplitMode::Half,
            perturb: PerturbSection::default(),
            smooth: SmoothSection::default(),
            train: TrainConfig::default(),
            propose: ProposeConfig::default(),
            baseline: BaselineSection::default(),
        }
    }
}

/// Flags that override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub tau: Option<f64>,
    pub seed: Option<u64>,
    pub p_hat: Option<f64>,
    pub split_mode: Option<SplitMode>,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Self::from_toml(&text)?
            }
            None => Self::default(),
        };
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.tau {
            self.tau = v;
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.p_hat {
            self.perturb.p_hat = v;
        }
        if let Some(v) = o.split_mode {
            self.split_mode = v;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau must lie in [0, 1), got {}", self.tau)));
        }
        self.perturb_config(BTreeSet::new())
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if !(self.train.learning_rate > 0.0 && self.train.l2 >= 0.0) || self.train.epochs == 0 {
            return Err(Error::Config(
                "train needs epochs > 0, learning_rate > 0, l2 >= 0".into(),
            ));
        }
        Ok(())
    }

    pub fn perturb_config(&self, eligible_classes: BTreeSet<u16>) -> PerturbConfig {
        PerturbConfig {
            p_hat: self.perturb.p_hat,
            size_min: self.perturb.size_min,
            size_max: self.perturb.size_max,
            eligible_classes,
            seed: self.seed,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
