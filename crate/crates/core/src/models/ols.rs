//! Ordinary least squares and backward stepwise selection.

use serde::{Deserialize, Serialize};

use super::{check_xy, Dataset, ModelError};
use crate::stats::special::student_t_sf;
use crate::stats::{partial_f_test, std_dev, FTest};

/// Relative size below which a column's QR pivot counts as zero.
const RANK_TOL: f64 = 1e-9;

/// OLS fit with an intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// Two-sided t-test p-values of the coefficients.
    pub p_values: Vec<f64>,
    pub r2: f64,
    pub rss: f64,
    pub n: usize,
}

impl OlsFit {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }
}

/// Least squares through Householder QR of `[1 | X]`.
pub fn fit_ols(x: &[Vec<f64>], y: &[f64]) -> Result<OlsFit, ModelError> {
    let d = check_xy(x, y, 1)?;
    let n = x.len();
    let p = d + 1;
    if n <= p {
        return Err(ModelError::TooFewRows { got: n, needed: p });
    }
    // column-major copy of the augmented design
    let mut a: Vec<Vec<f64>> = Vec::with_capacity(p);
    a.push(vec![1.0; n]);
    for j in 0..d {
        a.push(x.iter().map(|r| r[j]).collect());
    }
    let norms: Vec<f64> = a.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let mut qty = y.to_vec();
    let mut r = vec![vec![0.0; p]; p];
    for j in 0..p {
        let norm = a[j][j..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= RANK_TOL * norms[j].max(f64::MIN_POSITIVE) {
            return Err(ModelError::RankDeficient(if j == 0 {
                "intercept".into()
            } else {
                format!("x{}", j - 1)
            }));
        }
        let alpha = if a[j][j] > 0.0 { -norm } else { norm };
        let mut v = a[j][j..].to_vec();
        v[0] -= alpha;
        let vv: f64 = v.iter().map(|t| t * t).sum();
        let reflect = |col: &mut [f64]| {
            let s = 2.0 * v.iter().zip(col.iter()).map(|(a, b)| a * b).sum::<f64>() / vv;
            for (c, vi) in col.iter_mut().zip(&v) {
                *c -= s * vi;
            }
        };
        for k in j + 1..p {
            reflect(&mut a[k][j..]);
        }
        reflect(&mut qty[j..]);
        r[j][j] = alpha;
        for k in j + 1..p {
            r[j][k] = a[k][j];
        }
    }
    let mut b = vec![0.0; p];
    for j in (0..p).rev() {
        let s: f64 = (j + 1..p).map(|k| r[j][k] * b[k]).sum();
        b[j] = (qty[j] - s) / r[j][j];
    }
    // rows of R^{-1}
    let mut rinv = vec![vec![0.0; p]; p];
    for c in 0..p {
        for j in (0..=c).rev() {
            let rhs = if j == c { 1.0 } else { 0.0 };
            let s: f64 = (j + 1..=c).map(|k| r[j][k] * rinv[k][c]).sum();
            rinv[j][c] = (rhs - s) / r[j][j];
        }
    }

    let fit = |row: &[f64]| b[0] + b[1..].iter().zip(row).map(|(c, v)| c * v).sum::<f64>();
    let rss: f64 = x.iter().zip(y).map(|(row, &t)| (t - fit(row)).powi(2)).sum();
    let ybar = y.iter().sum::<f64>() / n as f64;
    let tss: f64 = y.iter().map(|t| (t - ybar).powi(2)).sum();
    let df = (n - p) as f64;
    let sigma2 = rss / df;
    let mut std_errors = Vec::with_capacity(d);
    let mut p_values = Vec::with_capacity(d);
    for j in 1..p {
        let se = (sigma2 * rinv[j].iter().map(|v| v * v).sum::<f64>()).sqrt();
        let pv = if se > 0.0 {
            (2.0 * student_t_sf((b[j] / se).abs(), df)).min(1.0)
        } else if b[j] == 0.0 {
            1.0
        } else {
            0.0
        };
        std_errors.push(se);
        p_values.push(pv);
    }
    Ok(OlsFit {
        intercept: b[0],
        coefficients: b[1..].to_vec(),
        std_errors,
        p_values,
        r2: if tss > 0.0 { 1.0 - rss / tss } else { 0.0 },
        rss,
        n,
    })
}

/// Linear model after backward elimination. Coefficients refer to the
/// columns listed in `retained`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlrModel {
    pub n_inputs: usize,
    pub retained: Vec<usize>,
    /// Eliminated columns, in elimination order; constant columns come first.
    pub eliminated: Vec<usize>,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub beta_coefficients: Vec<f64>,
    pub p_values: Vec<f64>,
    pub r2: f64,
    pub alpha: f64,
    /// The single remaining predictor failed the significance level.
    pub nonsignificant_final: bool,
}

impl MlrModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept
            + self
                .retained
                .iter()
                .zip(&self.coefficients)
                .map(|(&j, b)| b * x[j])
                .sum::<f64>()
    }
}

fn columns(x: &[Vec<f64>], keep: &[usize]) -> Vec<Vec<f64>> {
    x.iter().map(|r| keep.iter().map(|&j| r[j]).collect()).collect()
}

/// Backward elimination: refit after dropping the least significant predictor
/// while its p-value exceeds `alpha`, keeping at least one predictor.
pub fn fit_mlr_stepwise(x: &[Vec<f64>], y: &[f64], alpha: f64) -> Result<MlrModel, ModelError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(ModelError::InvalidHyperparameter(format!("alpha {alpha}")));
    }
    let d = check_xy(x, y, 1)?;
    if x.len() <= d + 2 {
        return Err(ModelError::TooFewRows { got: x.len(), needed: d + 2 });
    }
    let mut eliminated = Vec::new();
    let mut retained = Vec::new();
    for j in 0..d {
        let first = x[0][j];
        if x.iter().all(|r| r[j] == first) {
            eliminated.push(j);
        } else {
            retained.push(j);
        }
    }
    if retained.is_empty() {
        return Err(ModelError::RankDeficient("every predictor is constant".into()));
    }
    let name_err = |e: ModelError, keep: &[usize]| match e {
        ModelError::RankDeficient(c) => {
            let idx = c.strip_prefix('x').and_then(|s| s.parse::<usize>().ok());
            ModelError::RankDeficient(idx.map_or(c, |i| format!("x{}", keep[i])))
        }
        other => other,
    };
    loop {
        let fit = fit_ols(&columns(x, &retained), y).map_err(|e| name_err(e, &retained))?;
        let (worst, p_worst) = fit
            .p_values
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc });
        if p_worst > alpha && retained.len() > 1 {
            eliminated.push(retained.remove(worst));
            continue;
        }
        let sd_y = std_dev(y);
        let beta_coefficients = retained
            .iter()
            .zip(&fit.coefficients)
            .map(|(&j, b)| {
                let col: Vec<f64> = x.iter().map(|r| r[j]).collect();
                if sd_y > 0.0 {
                    b * std_dev(&col) / sd_y
                } else {
                    0.0
                }
            })
            .collect();
        return Ok(MlrModel {
            n_inputs: d,
            nonsignificant_final: p_worst > alpha,
            retained,
            eliminated,
            intercept: fit.intercept,
            coefficients: fit.coefficients,
            beta_coefficients,
            p_values: fit.p_values,
            r2: fit.r2,
            alpha,
        });
    }
}

/// Whole-corpus linear fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlrFullFit {
    pub predictors: Vec<String>,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub beta_coefficients: Vec<f64>,
    pub p_values: Vec<f64>,
    pub r2: f64,
    pub rmse: f64,
    pub n: usize,
}

/// Stepwise fit on the four predictors over the whole corpus. With
/// `with_delta`, the syllable count delta is added to the retained set and the
/// model refitted without further elimination.
pub fn fit_mlr_full(data: &Dataset, with_delta: bool, alpha: f64) -> Result<MlrFullFit, ModelError> {
    let (x, y) = data.design(with_delta)?;
    let names = data.feature_names(with_delta);
    let base: Vec<Vec<f64>> = x.iter().map(|r| r[..4].to_vec()).collect();
    let step = fit_mlr_stepwise(&base, &y, alpha)?;
    let mut keep = step.retained.clone();
    if with_delta {
        keep.push(4);
    }
    let cols = columns(&x, &keep);
    let fit = fit_ols(&cols, &y)?;
    let sd_y = std_dev(&y);
    let beta_coefficients = (0..keep.len())
        .map(|k| {
            let col: Vec<f64> = cols.iter().map(|r| r[k]).collect();
            fit.coefficients[k] * std_dev(&col) / sd_y
        })
        .collect();
    Ok(MlrFullFit {
        predictors: keep.iter().map(|&j| names[j].clone()).collect(),
        intercept: fit.intercept,
        coefficients: fit.coefficients.clone(),
        beta_coefficients,
        p_values: fit.p_values.clone(),
        r2: fit.r2,
        rmse: (fit.rss / fit.n as f64).sqrt(),
        n: fit.n,
    })
}

/// The gain from adding the syllable count delta to the stepwise model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaComparison {
    pub without_delta: MlrFullFit,
    pub with_delta: MlrFullFit,
    pub r2_change: f64,
    pub f_test: Option<FTest>,
}

pub fn delta_comparison(data: &Dataset, alpha: f64) -> Result<DeltaComparison, ModelError> {
    let without_delta = fit_mlr_full(data, false, alpha)?;
    let with_delta = fit_mlr_full(data, true, alpha)?;
    let f_test = partial_f_test(
        without_delta.r2,
        without_delta.predictors.len(),
        with_delta.r2,
        with_delta.predictors.len(),
        with_delta.n,
    )
    .ok();
    Ok(DeltaComparison {
        r2_change: with_delta.r2 - without_delta.r2,
        without_delta,
        with_delta,
        f_test,
    })
}
