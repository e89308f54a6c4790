//! Leave-one-speaker-out evaluation and nested tuning.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::svr::fit_svr_path;
use super::{fit, fit_rfr, Dataset, Family, ModelError, ModelGrid, ModelSpec, RfrOptions, SvrOptions};
use crate::stats::{mean, pearson_r, std_dev};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub stimulus_id: String,
    pub speaker_id: String,
    pub reference: f64,
    pub prediction: f64,
    /// Speaker held out in the fold that produced this prediction.
    pub fold_speaker: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerRmse {
    pub speaker_id: String,
    pub n: usize,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantPair {
    pub speaker_id: String,
    pub n: usize,
    pub reference: f64,
    pub prediction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantSummary {
    pub pairs: Vec<ParticipantPair>,
    pub r: Option<f64>,
    pub rmse: f64,
}

/// Hyperparameters picked for one outer fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldChoice {
    pub test_speaker: String,
    pub chosen: ModelSpec,
    /// Mean inner per-speaker RMSE of every grid point, in grid order.
    pub grid_rmse: Vec<f64>,
    /// Stimuli read while tuning this fold.
    #[serde(skip)]
    pub accessed: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningResult {
    pub grid: ModelGrid,
    pub folds: Vec<FoldChoice>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub family: Family,
    /// Fixed hyperparameters; `None` when tuned per fold.
    pub spec: Option<ModelSpec>,
    pub tuning: Option<TuningResult>,
    pub features: Vec<String>,
    pub with_delta: bool,
    pub per_speaker: Vec<SpeakerRmse>,
    pub average_rmse: f64,
    pub sd_rmse: f64,
    pub sentence_r: Option<f64>,
    pub sentence_rmse: f64,
    pub participant: ParticipantSummary,
    pub predictions: Vec<Prediction>,
}

struct Fold {
    speaker: String,
    train: Vec<usize>,
    test: Vec<usize>,
}

fn folds(speaker_of: &[&str], rows: &[usize]) -> Vec<Fold> {
    let speakers: BTreeSet<&str> = rows.iter().map(|&r| speaker_of[r]).collect();
    speakers
        .into_iter()
        .map(|s| {
            let (test, train): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&r| speaker_of[r] == s);
            Fold {
                speaker: s.to_string(),
                train,
                test,
            }
        })
        .collect()
}

fn rmse_of(pairs: impl Iterator<Item = (f64, f64)>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for (a, p) in pairs {
        sum += (a - p) * (a - p);
        n += 1;
    }
    (sum / n as f64).sqrt()
}

struct Design<'a> {
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    speaker_of: Vec<&'a str>,
}

impl<'a> Design<'a> {
    fn new(data: &'a Dataset, with_delta: bool) -> Result<Self, ModelError> {
        let (x, y) = data.design(with_delta)?;
        Ok(Self {
            x,
            y,
            speaker_of: data.rows().iter().map(|r| r.speaker_id.as_str()).collect(),
        })
    }

    fn take(&self, rows: &[usize]) -> (Vec<Vec<f64>>, Vec<f64>) {
        (rows.iter().map(|&r| self.x[r].clone()).collect(), rows.iter().map(|&r| self.y[r]).collect())
    }
}

fn check_speakers(data: &Dataset) -> Result<(), ModelError> {
    let n = data.speakers().len();
    if n < 3 {
        return Err(ModelError::TooFewSpeakers { got: n, needed: 3 });
    }
    Ok(())
}

fn assert_hygiene(fold: &Fold, speaker_of: &[&str], all: &BTreeSet<&str>) {
    let train: BTreeSet<&str> = fold.train.iter().map(|&r| speaker_of[r]).collect();
    assert!(!train.contains(fold.speaker.as_str()), "test speaker leaked into training");
    assert_eq!(train.len() + 1, all.len(), "fold does not cover every speaker");
}

/// LOSO with fixed hyperparameters.
pub fn loso_evaluate(data: &Dataset, spec: &ModelSpec, with_delta: bool) -> Result<EvaluationReport, ModelError> {
    check_speakers(data)?;
    let design = Design::new(data, with_delta)?;
    let all_rows: Vec<usize> = (0..design.y.len()).collect();
    let outer = folds(&design.speaker_of, &all_rows);
    let predictions = outer
        .par_iter()
        .map(|fold| {
            let all: BTreeSet<&str> = design.speaker_of.iter().copied().collect();
            assert_hygiene(fold, &design.speaker_of, &all);
            let (x, y) = design.take(&fold.train);
            let model = fit(spec, &x, &y)?;
            Ok(fold.test.iter().map(|&r| model.predict(&design.x[r])).collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    Ok(report(data, &design, &outer, predictions, spec.family(), Some(spec.clone()), None, with_delta))
}

/// LOSO where each outer fold picks its hyperparameters by an inner LOSO over
/// the training speakers.
pub fn loso_evaluate_nested(data: &Dataset, grid: &ModelGrid, with_delta: bool) -> Result<EvaluationReport, ModelError> {
    check_speakers(data)?;
    let design = Design::new(data, with_delta)?;
    let all_rows: Vec<usize> = (0..design.y.len()).collect();
    let outer = folds(&design.speaker_of, &all_rows);
    let outcomes = outer
        .par_iter()
        .map(|fold| {
            let choice = tune_fold(data, &design, fold, grid)?;
            let (x, y) = design.take(&fold.train);
            let model = fit(&choice.chosen, &x, &y)?;
            let preds: Vec<f64> = fold.test.iter().map(|&r| model.predict(&design.x[r])).collect();
            Ok((choice, preds))
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    let (choices, predictions): (Vec<FoldChoice>, Vec<Vec<f64>>) = outcomes.into_iter().unzip();
    let tuning = TuningResult {
        grid: grid.clone(),
        folds: choices,
    };
    Ok(report(data, &design, &outer, predictions, grid.family(), None, Some(tuning), with_delta))
}

/// Per outer fold, the grid point with the lowest mean inner LOSO RMSE.
pub fn tune_nested_loso(data: &Dataset, grid: &ModelGrid, with_delta: bool) -> Result<TuningResult, ModelError> {
    check_speakers(data)?;
    let design = Design::new(data, with_delta)?;
    let all_rows: Vec<usize> = (0..design.y.len()).collect();
    let folds_out = folds(&design.speaker_of, &all_rows)
        .par_iter()
        .map(|fold| tune_fold(data, &design, fold, grid))
        .collect::<Result<Vec<_>, ModelError>>()?;
    Ok(TuningResult {
        grid: grid.clone(),
        folds: folds_out,
    })
}

fn tune_fold(data: &Dataset, design: &Design, outer: &Fold, grid: &ModelGrid) -> Result<FoldChoice, ModelError> {
    let points = grid.points();
    if points.is_empty() {
        return Err(ModelError::EmptyGrid);
    }
    let inner = folds(&design.speaker_of, &outer.train);
    let mut accessed = BTreeSet::new();
    // per grid point, per inner speaker
    let mut scores = vec![Vec::with_capacity(inner.len()); points.len()];
    for fold in &inner {
        for &r in fold.train.iter().chain(&fold.test) {
            accessed.insert(data.rows()[r].stimulus_id.clone());
        }
        let (x, y) = design.take(&fold.train);
        let truth: Vec<f64> = fold.test.iter().map(|&r| design.y[r]).collect();
        let score = |preds: Vec<f64>| rmse_of(truth.iter().copied().zip(preds));
        match grid {
            ModelGrid::Rfr { n_trees, seed, .. } => {
                let forest = fit_rfr(
                    &x,
                    &y,
                    &RfrOptions {
                        n_trees: n_trees.iter().copied().max().unwrap_or(1),
                        max_depth: None,
                        seed: *seed,
                        bootstrap: true,
                    },
                )?;
                for (k, p) in points.iter().enumerate() {
                    let ModelSpec::Rfr { n_trees, max_depth, .. } = *p else { unreachable!() };
                    let preds = fold
                        .test
                        .iter()
                        .map(|&r| forest.predict_with(&design.x[r], n_trees, max_depth))
                        .collect();
                    scores[k].push(score(preds));
                }
            }
            ModelGrid::Svr { gamma, .. } => {
                let settings: Vec<(f64, f64)> = points
                    .iter()
                    .map(|p| match *p {
                        ModelSpec::Svr { c, epsilon, .. } => (c, epsilon),
                        _ => unreachable!(),
                    })
                    .collect();
                let opts = SvrOptions { gamma: *gamma, ..SvrOptions::default() };
                for (k, model) in fit_svr_path(&x, &y, &settings, &opts)?.iter().enumerate() {
                    scores[k].push(score(fold.test.iter().map(|&r| model.predict(&design.x[r])).collect()));
                }
            }
            ModelGrid::Mlr { .. } => {
                for (k, p) in points.iter().enumerate() {
                    let model = fit(p, &x, &y)?;
                    scores[k].push(score(fold.test.iter().map(|&r| model.predict(&design.x[r])).collect()));
                }
            }
        }
    }
    let grid_rmse: Vec<f64> = scores.iter().map(|s| mean(s)).collect();
    let tie_key = |p: &ModelSpec| match *p {
        ModelSpec::Svr { c, .. } => c,
        ModelSpec::Rfr { n_trees, .. } => n_trees as f64,
        ModelSpec::Mlr { .. } => 0.0,
    };
    let mut best = 0;
    for k in 1..points.len() {
        let (s, b) = (grid_rmse[k], grid_rmse[best]);
        if s < b || (s == b && tie_key(&points[k]) < tie_key(&points[best])) {
            best = k;
        }
    }
    Ok(FoldChoice {
        test_speaker: outer.speaker.clone(),
        chosen: points[best].clone(),
        grid_rmse,
        accessed,
    })
}

#[allow(clippy::too_many_arguments)]
fn report(
    data: &Dataset,
    design: &Design,
    outer: &[Fold],
    predictions: Vec<Vec<f64>>,
    family: Family,
    spec: Option<ModelSpec>,
    tuning: Option<TuningResult>,
    with_delta: bool,
) -> EvaluationReport {
    let mut rows = Vec::new();
    let mut per_speaker = Vec::new();
    for (fold, preds) in outer.iter().zip(predictions) {
        per_speaker.push(SpeakerRmse {
            speaker_id: fold.speaker.clone(),
            n: fold.test.len(),
            rmse: rmse_of(fold.test.iter().map(|&r| design.y[r]).zip(preds.iter().copied())),
        });
        for (&r, p) in fold.test.iter().zip(preds) {
            let row = &data.rows()[r];
            rows.push(Prediction {
                stimulus_id: row.stimulus_id.clone(),
                speaker_id: row.speaker_id.clone(),
                reference: row.reference,
                prediction: p,
                fold_speaker: fold.speaker.clone(),
            });
        }
    }
    let rmses: Vec<f64> = per_speaker.iter().map(|s| s.rmse).collect();
    let refs: Vec<f64> = rows.iter().map(|p| p.reference).collect();
    let preds: Vec<f64> = rows.iter().map(|p| p.prediction).collect();
    EvaluationReport {
        family,
        spec,
        tuning,
        features: data.feature_names(with_delta),
        with_delta,
        average_rmse: mean(&rmses),
        sd_rmse: if rmses.len() > 1 { std_dev(&rmses) } else { 0.0 },
        per_speaker,
        sentence_r: pearson_r(&refs, &preds).ok(),
        sentence_rmse: rmse_of(refs.iter().copied().zip(preds.iter().copied())),
        participant: aggregate_by_participant(&rows),
        predictions: rows,
    }
}

/// Unweighted mean reference and prediction per speaker.
pub fn aggregate_by_participant(predictions: &[Prediction]) -> ParticipantSummary {
    let mut by: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for p in predictions {
        let e = by.entry(&p.speaker_id).or_default();
        e.0.push(p.reference);
        e.1.push(p.prediction);
    }
    let pairs: Vec<ParticipantPair> = by
        .into_iter()
        .map(|(s, (r, p))| ParticipantPair {
            speaker_id: s.to_string(),
            n: r.len(),
            reference: mean(&r),
            prediction: mean(&p),
        })
        .collect();
    let refs: Vec<f64> = pairs.iter().map(|p| p.reference).collect();
    let preds: Vec<f64> = pairs.iter().map(|p| p.prediction).collect();
    ParticipantSummary {
        r: pearson_r(&refs, &preds).ok(),
        rmse: if pairs.is_empty() { 0.0 } else { rmse_of(refs.iter().copied().zip(preds.iter().copied())) },
        pairs,
    }
}
