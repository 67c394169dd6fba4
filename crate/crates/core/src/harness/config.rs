//! TOML configuration for the tunable defaults.
//!
//! ```toml
//! [link]
//! iou_continuity_threshold = 0.5
//! max_gap_frames = 2
//!
//! [weights]
//! lambda_mmn = 0.1
//!
//! [fusion]
//! policy = "interpolate"
//!
//! [eval]
//! thresholds = [0.3, 0.5]
//! comparison = "strict"
//! ```
//!
//! Every section and field is optional. `STVG_CONFIG` names the file to load
//! when no path is given explicitly.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::GapPolicy;
use crate::linking::LinkParams;
use crate::losses::LossWeights;
use crate::metrics::EvalConfig;
use crate::moments::ContrastiveNorm;

pub const CONFIG_ENV: &str = "STVG_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config {path}")]
    Parse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub policy: GapPolicy,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MomentsConfig {
    pub normalization: ContrastiveNorm,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub link: LinkParams,
    pub weights: LossWeights,
    pub fusion: FusionConfig,
    pub eval: EvalConfig,
    pub moments: MomentsConfig,
}

impl Config {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, path)
    }

    /// Loads `explicit` if given, else the file named by `STVG_CONFIG`, else
    /// the built-in defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self, ConfigError> {
        if let Some(p) = explicit {
            return Self::load(p);
        }
        match std::env::var_os(CONFIG_ENV) {
            Some(p) if !p.is_empty() => Self::load(PathBuf::from(p)),
            _ => Ok(Config::default()),
        }
    }
}
