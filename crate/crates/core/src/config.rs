//! Run configuration shared by every command.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::clustering::{ClusterError, ClusterParams};
use crate::fbds::{FbdsError, FbdsParams};
use crate::models::{Family, ModelGrid, ModelSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Fbds(#[from] FbdsError),
    #[error(transparent)]
    Clustering(#[from] ClusterError),
    #[error("model block: {0}")]
    Model(String),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub fbds: FbdsParams,
    pub clustering: ClusterParams,
    pub model: ModelConfig,
    pub io: IoConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub family: Family,
    pub seed: u64,
    /// Significance level for stepwise elimination.
    pub alpha: f64,
    /// Tune SVR / RFR hyperparameters by nested LOSO; otherwise use the first
    /// value of each grid.
    pub nested: bool,
    pub svr: SvrGridConfig,
    pub rfr: RfrGridConfig,
    /// Accept stimuli a rater judged in only one pass.
    pub allow_single_pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvrGridConfig {
    pub c: Vec<f64>,
    pub epsilon: Vec<f64>,
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RfrGridConfig {
    pub n_trees: Vec<usize>,
    pub max_depth: Vec<Option<usize>>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            family: Family::Mlr,
            seed: 0,
            alpha: 0.05,
            nested: true,
            svr: SvrGridConfig::default(),
            rfr: RfrGridConfig::default(),
            allow_single_pass: false,
        }
    }
}

impl Default for SvrGridConfig {
    fn default() -> Self {
        match ModelGrid::default_for(Family::Svr, 0) {
            ModelGrid::Svr { c, epsilon, gamma } => Self { c, epsilon, gamma },
            _ => unreachable!(),
        }
    }
}

impl Default for RfrGridConfig {
    fn default() -> Self {
        match ModelGrid::default_for(Family::Rfr, 0) {
            ModelGrid::Rfr { n_trees, max_depth, .. } => Self { n_trees, max_depth },
            _ => unreachable!(),
        }
    }
}

impl ModelConfig {
    pub fn grid(&self) -> ModelGrid {
        match self.family {
            Family::Mlr => ModelGrid::Mlr { alpha: self.alpha },
            Family::Svr => ModelGrid::Svr {
                c: self.svr.c.clone(),
                epsilon: self.svr.epsilon.clone(),
                gamma: self.svr.gamma,
            },
            Family::Rfr => ModelGrid::Rfr {
                n_trees: self.rfr.n_trees.clone(),
                max_depth: self.rfr.max_depth.clone(),
                seed: self.seed,
            },
        }
    }

    /// The fixed model used when nested tuning is off.
    pub fn fixed_spec(&self) -> ModelSpec {
        self.grid().points().swap_remove(0)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(ConfigError::Model("alpha must lie in (0, 1)".into()));
        }
        let bad = |m: &str| Err(ConfigError::Model(m.into()));
        if self.svr.c.is_empty() || self.svr.c.iter().any(|c| !(*c > 0.0)) {
            return bad("svr.c must be a non-empty list of positive values");
        }
        if self.svr.epsilon.is_empty() || self.svr.epsilon.iter().any(|e| !(*e >= 0.0)) {
            return bad("svr.epsilon must be a non-empty list of non-negative values");
        }
        if self.svr.gamma.is_some_and(|g| !(g > 0.0)) {
            return bad("svr.gamma must be positive");
        }
        if self.rfr.n_trees.is_empty() || self.rfr.n_trees.contains(&0) {
            return bad("rfr.n_trees must be a non-empty list of positive counts");
        }
        if self.rfr.max_depth.is_empty() || self.rfr.max_depth.contains(&Some(0)) {
            return bad("rfr.max_depth must be a non-empty list of positive depths or null");
        }
        Ok(())
    }
}

/// Input and output locations. Relative paths resolve against the directory
/// holding the configuration file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoConfig {
    pub manifest: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub ratings: Option<PathBuf>,
    /// Familiarization stimuli for the rating service.
    pub practice_manifest: Option<PathBuf>,
    /// Static files of the rater interface.
    pub ui_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|source| ConfigError::Parse {
            path: origin.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_json(&text, path)?;
        if let Some(dir) = path.parent() {
            cfg.io.resolve_against(dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.fbds.validate()?;
        self.clustering.validate()?;
        self.model.validate()
    }

    /// SHA-256 of the canonical JSON form, as lowercase hex.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(json))
    }
}

impl IoConfig {
    fn resolve_against(&mut self, dir: &Path) {
        for p in [
            &mut self.manifest,
            &mut self.features,
            &mut self.ratings,
            &mut self.practice_manifest,
            &mut self.ui_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
