//! Regression from fluency predictors to reference ratings.
//!
//! Three model families are supported: multiple linear regression with
//! backward stepwise selection ([`ols`]), radial-kernel ε-SVR ([`svr`]) and a
//! random forest ([`forest`]). [`loso`] evaluates any of them with
//! leave-one-speaker-out validation and tunes hyperparameters in a nested
//! leave-one-speaker-out loop.

pub mod forest;
pub mod loso;
pub mod ols;
pub mod svr;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FluencyFeatures, DELTA_NAME, PREDICTOR_NAMES};

pub use forest::{fit_rfr, RfrModel, RfrOptions};
pub use loso::{
    aggregate_by_participant, loso_evaluate, loso_evaluate_nested, tune_nested_loso, EvaluationReport,
    ParticipantSummary, Prediction, SpeakerRmse, TuningResult,
};
pub use ols::{delta_comparison, fit_mlr_full, fit_mlr_stepwise, fit_ols, DeltaComparison, MlrFullFit, MlrModel, OlsFit};
pub use svr::{fit_svr, fit_svr_path, fit_svr_traced, SvrModel, SvrOptions};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("need more than {needed} rows, got {got}")]
    TooFewRows { got: usize, needed: usize },
    #[error("design matrix is rank deficient (column {0})")]
    RankDeficient(String),
    #[error("rows have inconsistent widths")]
    Ragged,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
    #[error("SMO did not converge after {iterations} iterations (duality gap {duality_gap:.3e})")]
    NotConverged { iterations: usize, duality_gap: f64 },
    #[error("dataset: {0}")]
    InvalidDataset(String),
    #[error("need at least {needed} speakers, got {got}")]
    TooFewSpeakers { got: usize, needed: usize },
    #[error("empty hyperparameter grid")]
    EmptyGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Pwa,
    Control,
}

impl std::str::FromStr for Group {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pwa" => Ok(Group::Pwa),
            "control" => Ok(Group::Control),
            other => Err(format!("unknown group {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub stimulus_id: String,
    pub speaker_id: String,
    pub group: Option<Group>,
    pub features: FluencyFeatures,
    pub reference: f64,
}

impl DatasetRow {
    /// Model inputs; the delta column is appended when requested.
    pub fn inputs(&self, with_delta: bool) -> Vec<f64> {
        let mut x = self.features.predictors().to_vec();
        if with_delta {
            x.push(self.features.syllable_count_delta.unwrap_or(0) as f64);
        }
        x
    }
}

/// Recordings joined with their reference ratings.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    rows: Vec<DatasetRow>,
    has_delta: bool,
}

impl Dataset {
    pub fn new(rows: Vec<DatasetRow>) -> Result<Self, ModelError> {
        let mut ids = BTreeSet::new();
        for r in &rows {
            if !ids.insert(r.stimulus_id.as_str()) {
                return Err(ModelError::InvalidDataset(format!("duplicate stimulus {}", r.stimulus_id)));
            }
            if !r.reference.is_finite() {
                return Err(ModelError::InvalidDataset(format!("missing reference for {}", r.stimulus_id)));
            }
            if r.inputs(false).iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFinite("features"));
            }
        }
        let with_delta = rows.iter().filter(|r| r.features.syllable_count_delta.is_some()).count();
        if with_delta != 0 && with_delta != rows.len() {
            return Err(ModelError::InvalidDataset(
                "delta column present for some rows only".into(),
            ));
        }
        let has_delta = !rows.is_empty() && with_delta == rows.len();
        let ds = Self { rows, has_delta };
        let n = ds.speakers().len();
        if n < 2 {
            return Err(ModelError::TooFewSpeakers { got: n, needed: 2 });
        }
        Ok(ds)
    }

    pub fn rows(&self) -> &[DatasetRow] {
        &self.rows
    }

    pub fn has_delta(&self) -> bool {
        self.has_delta
    }

    /// Distinct speakers, sorted.
    pub fn speakers(&self) -> Vec<String> {
        self.rows
            .iter()
            .map(|r| r.speaker_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn feature_names(&self, with_delta: bool) -> Vec<String> {
        let mut names: Vec<String> = PREDICTOR_NAMES.iter().map(|s| s.to_string()).collect();
        if with_delta {
            names.push(DELTA_NAME.to_string());
        }
        names
    }

    pub fn design(&self, with_delta: bool) -> Result<(Vec<Vec<f64>>, Vec<f64>), ModelError> {
        if with_delta && !self.has_delta {
            return Err(ModelError::InvalidDataset(
                "delta requested but expected syllable counts are missing".into(),
            ));
        }
        Ok((
            self.rows.iter().map(|r| r.inputs(with_delta)).collect(),
            self.rows.iter().map(|r| r.reference).collect(),
        ))
    }
}

/// One model family with concrete hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelSpec {
    Mlr {
        alpha: f64,
    },
    Svr {
        c: f64,
        epsilon: f64,
        /// Kernel width on standardized features; `None` means `1 / d`.
        gamma: Option<f64>,
    },
    Rfr {
        n_trees: usize,
        max_depth: Option<usize>,
        seed: u64,
    },
}

impl ModelSpec {
    pub fn family(&self) -> Family {
        match self {
            ModelSpec::Mlr { .. } => Family::Mlr,
            ModelSpec::Svr { .. } => Family::Svr,
            ModelSpec::Rfr { .. } => Family::Rfr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Mlr,
    Svr,
    Rfr,
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Family::Mlr => "mlr",
            Family::Svr => "svr",
            Family::Rfr => "rfr",
        })
    }
}

impl std::str::FromStr for Family {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mlr" => Ok(Family::Mlr),
            "svr" => Ok(Family::Svr),
            "rfr" => Ok(Family::Rfr),
            other => Err(format!("unknown model family {other:?}")),
        }
    }
}

/// Hyperparameter grid searched by nested tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelGrid {
    Mlr {
        alpha: f64,
    },
    Svr {
        c: Vec<f64>,
        epsilon: Vec<f64>,
        gamma: Option<f64>,
    },
    Rfr {
        n_trees: Vec<usize>,
        max_depth: Vec<Option<usize>>,
        seed: u64,
    },
}

impl ModelGrid {
    pub fn default_for(family: Family, seed: u64) -> Self {
        match family {
            Family::Mlr => ModelGrid::Mlr { alpha: 0.05 },
            Family::Svr => ModelGrid::Svr {
                c: vec![0.1, 1.0, 10.0, 100.0],
                epsilon: vec![0.01, 0.05, 0.1, 0.2],
                gamma: None,
            },
            Family::Rfr => ModelGrid::Rfr {
                n_trees: vec![50, 100, 200],
                max_depth: vec![Some(2), Some(4), Some(8), None],
                seed,
            },
        }
    }

    /// The single-point grid holding `spec`.
    pub fn from_spec(spec: &ModelSpec) -> Self {
        match *spec {
            ModelSpec::Mlr { alpha } => ModelGrid::Mlr { alpha },
            ModelSpec::Svr { c, epsilon, gamma } => ModelGrid::Svr {
                c: vec![c],
                epsilon: vec![epsilon],
                gamma,
            },
            ModelSpec::Rfr { n_trees, max_depth, seed } => ModelGrid::Rfr {
                n_trees: vec![n_trees],
                max_depth: vec![max_depth],
                seed,
            },
        }
    }

    pub fn family(&self) -> Family {
        match self {
            ModelGrid::Mlr { .. } => Family::Mlr,
            ModelGrid::Svr { .. } => Family::Svr,
            ModelGrid::Rfr { .. } => Family::Rfr,
        }
    }

    /// Grid points in listed order: C-major for SVR, n_trees-major for RFR.
    pub fn points(&self) -> Vec<ModelSpec> {
        match self {
            ModelGrid::Mlr { alpha } => vec![ModelSpec::Mlr { alpha: *alpha }],
            ModelGrid::Svr { c, epsilon, gamma } => c
                .iter()
                .flat_map(|&c| {
                    epsilon.iter().map(move |&epsilon| ModelSpec::Svr {
                        c,
                        epsilon,
                        gamma: *gamma,
                    })
                })
                .collect(),
            ModelGrid::Rfr { n_trees, max_depth, seed } => n_trees
                .iter()
                .flat_map(|&n_trees| {
                    max_depth.iter().map(move |&max_depth| ModelSpec::Rfr {
                        n_trees,
                        max_depth,
                        seed: *seed,
                    })
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum FittedModel {
    Mlr(MlrModel),
    Svr(SvrModel),
    Rfr(RfrModel),
}

impl FittedModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        match self {
            FittedModel::Mlr(m) => m.predict(x),
            FittedModel::Svr(m) => m.predict(x),
            FittedModel::Rfr(m) => m.predict(x),
        }
    }
}

pub fn fit(spec: &ModelSpec, x: &[Vec<f64>], y: &[f64]) -> Result<FittedModel, ModelError> {
    Ok(match *spec {
        ModelSpec::Mlr { alpha } => FittedModel::Mlr(fit_mlr_stepwise(x, y, alpha)?),
        ModelSpec::Svr { c, epsilon, gamma } => {
            FittedModel::Svr(fit_svr(x, y, &SvrOptions { c, epsilon, gamma, ..SvrOptions::default() })?)
        }
        ModelSpec::Rfr { n_trees, max_depth, seed } => FittedModel::Rfr(fit_rfr(
            x,
            y,
            &RfrOptions {
                n_trees,
                max_depth,
                seed,
                bootstrap: true,
            },
        )?),
    })
}

pub(crate) fn check_xy(x: &[Vec<f64>], y: &[f64], min_rows: usize) -> Result<usize, ModelError> {
    if x.len() != y.len() {
        return Err(ModelError::Ragged);
    }
    if x.len() < min_rows {
        return Err(ModelError::TooFewRows {
            got: x.len(),
            needed: min_rows.saturating_sub(1),
        });
    }
    let d = x.first().map_or(0, Vec::len);
    if x.iter().any(|r| r.len() != d) {
        return Err(ModelError::Ragged);
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite("features"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite("target"));
    }
    Ok(d)
}
