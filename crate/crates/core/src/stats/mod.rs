//! Correlation, reliability and hypothesis-test statistics.
//!
//! Rank statistics use average ranks for ties and always apply the tie
//! correction. P-values come from the incomplete gamma and beta functions in
//! [`special`].

pub mod reliability;
pub mod special;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use reliability::{
    build_reference_ratings, PassPolicy, RatingRecord, ReferenceRating, ReliabilityReport,
};

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("inputs have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} observations, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("input is constant; the statistic is undefined")]
    Constant,
    #[error("total variance is zero")]
    ZeroVariance,
    #[error("degenerate model comparison: {0}")]
    Degenerate(String),
    #[error("invalid input: {0}")]
    Invalid(String),
}

fn check_pair(x: &[f64], y: &[f64], min: usize) -> Result<(), StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < min {
        return Err(StatsError::TooFew {
            needed: min,
            got: x.len(),
        });
    }
    Ok(())
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample variance (n - 1 denominator).
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Sample standard deviation; zero for fewer than two values.
pub fn std_dev(x: &[f64]) -> f64 {
    if x.len() < 2 {
        0.0
    } else {
        variance(x).sqrt()
    }
}

/// Average ranks (1-based) and the tie term `sum(t^3 - t)` over tie groups.
pub fn ranks(x: &[f64]) -> (Vec<f64>, f64) {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0.0; x.len()];
    let mut ties = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let avg = 0.5 * ((i + 1) + (j + 1)) as f64;
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        let t = (j - i + 1) as f64;
        ties += t * t * t - t;
        i = j + 1;
    }
    (out, ties)
}

/// Pearson product-moment correlation.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    check_pair(x, y, 2)?;
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::Constant);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    check_pair(x, y, 3)?;
    pearson_r(&ranks(x).0, &ranks(y).0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationTest {
    pub coefficient: f64,
    pub n: usize,
    /// One-tailed p-value in the direction of the observed sign.
    pub p_one_tailed: f64,
    pub p_two_tailed: f64,
}

fn t_test_of_correlation(r: f64, n: usize) -> CorrelationTest {
    let df = n as f64 - 2.0;
    let one = if r.abs() >= 1.0 {
        0.0
    } else {
        let t = r.abs() * (df / (1.0 - r * r)).sqrt();
        special::student_t_sf(t, df)
    };
    CorrelationTest {
        coefficient: r,
        n,
        p_one_tailed: one,
        p_two_tailed: (2.0 * one).min(1.0),
    }
}

/// Spearman correlation with its t-approximation p-values.
pub fn spearman_test(x: &[f64], y: &[f64]) -> Result<CorrelationTest, StatsError> {
    let r = spearman_rho(x, y)?;
    Ok(t_test_of_correlation(r, x.len()))
}

/// Pearson correlation with its t-test p-values.
pub fn pearson_test(x: &[f64], y: &[f64]) -> Result<CorrelationTest, StatsError> {
    check_pair(x, y, 3)?;
    let r = pearson_r(x, y)?;
    Ok(t_test_of_correlation(r, x.len()))
}

/// Cronbach's alpha. `items[k]` holds the scores item `k` (e.g. one rater)
/// gave to every observation.
pub fn cronbach_alpha(items: &[Vec<f64>]) -> Result<f64, StatsError> {
    if items.len() < 2 {
        return Err(StatsError::TooFew {
            needed: 2,
            got: items.len(),
        });
    }
    let n = items[0].len();
    if let Some(bad) = items.iter().find(|c| c.len() != n) {
        return Err(StatsError::LengthMismatch(n, bad.len()));
    }
    if n < 2 {
        return Err(StatsError::TooFew { needed: 2, got: n });
    }
    let k = items.len() as f64;
    let item_var: f64 = items.iter().map(|c| variance(c)).sum();
    let totals: Vec<f64> = (0..n).map(|i| items.iter().map(|c| c[i]).sum()).collect();
    let total_var = variance(&totals);
    if total_var == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    Ok(k / (k - 1.0) * (1.0 - item_var / total_var))
}

pub fn rmse(actual: &[f64], predicted: &[f64]) -> Result<f64, StatsError> {
    check_pair(actual, predicted, 1)?;
    let sse: f64 = actual
        .iter()
        .zip(predicted)
        .map(|(a, p)| (a - p).powi(2))
        .sum();
    Ok((sse / actual.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankTest {
    pub statistic: f64,
    pub df: f64,
    pub p_value: f64,
}

/// Kruskal-Wallis H test across independent groups.
pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<RankTest, StatsError> {
    if groups.len() < 2 {
        return Err(StatsError::TooFew {
            needed: 2,
            got: groups.len(),
        });
    }
    if groups.iter().any(|g| g.is_empty()) {
        return Err(StatsError::Invalid("empty group".into()));
    }
    let pooled: Vec<f64> = groups.iter().flatten().copied().collect();
    let n = pooled.len() as f64;
    let (r, ties) = ranks(&pooled);
    let df = groups.len() as f64 - 1.0;
    let correction = 1.0 - ties / (n * n * n - n);
    if correction <= 0.0 {
        return Ok(RankTest {
            statistic: 0.0,
            df,
            p_value: 1.0,
        });
    }
    let mut offset = 0;
    let mut sum = 0.0;
    for g in groups {
        let rank_sum: f64 = r[offset..offset + g.len()].iter().sum();
        sum += rank_sum * rank_sum / g.len() as f64;
        offset += g.len();
    }
    let h = (12.0 / (n * (n + 1.0)) * sum - 3.0 * (n + 1.0)) / correction;
    let h = h.max(0.0);
    Ok(RankTest {
        statistic: h,
        df,
        p_value: special::chi_square_sf(h, df),
    })
}

/// Friedman test. `scores[i][j]` is subject `i` under condition `j`.
pub fn friedman(scores: &[Vec<f64>]) -> Result<RankTest, StatsError> {
    let n = scores.len();
    if n < 2 {
        return Err(StatsError::TooFew { needed: 2, got: n });
    }
    let k = scores[0].len();
    if k < 2 {
        return Err(StatsError::TooFew { needed: 2, got: k });
    }
    if let Some(bad) = scores.iter().find(|r| r.len() != k) {
        return Err(StatsError::LengthMismatch(k, bad.len()));
    }
    let (nf, kf) = (n as f64, k as f64);
    let mut rank_sums = vec![0.0; k];
    let mut ties = 0.0;
    for row in scores {
        let (r, t) = ranks(row);
        ties += t;
        for (s, v) in rank_sums.iter_mut().zip(r) {
            *s += v;
        }
    }
    let df = kf - 1.0;
    let correction = 1.0 - ties / (nf * (kf * kf * kf - kf));
    if correction <= 0.0 {
        return Ok(RankTest {
            statistic: 0.0,
            df,
            p_value: 1.0,
        });
    }
    let sum_sq: f64 = rank_sums.iter().map(|r| r * r).sum();
    let chi = (12.0 / (nf * kf * (kf + 1.0)) * sum_sq - 3.0 * nf * (kf + 1.0)) / correction;
    let chi = chi.max(0.0);
    Ok(RankTest {
        statistic: chi,
        df,
        p_value: special::chi_square_sf(chi, df),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FTest {
    pub f: f64,
    pub df1: f64,
    pub df2: f64,
    pub p_value: f64,
}

/// F test for the R² gain of a nested linear model with `p_big` predictors
/// over one with `p_small`, fitted on `n` observations.
pub fn partial_f_test(
    r2_small: f64,
    p_small: usize,
    r2_big: f64,
    p_big: usize,
    n: usize,
) -> Result<FTest, StatsError> {
    if p_big <= p_small {
        return Err(StatsError::Invalid("bigger model must have more predictors".into()));
    }
    if n <= p_big + 1 {
        return Err(StatsError::TooFew {
            needed: p_big + 2,
            got: n,
        });
    }
    if r2_big < r2_small {
        return Err(StatsError::Invalid("R² cannot decrease for a nested model".into()));
    }
    if r2_big >= 1.0 {
        return Err(StatsError::Degenerate("bigger model has R² = 1".into()));
    }
    let df1 = (p_big - p_small) as f64;
    let df2 = (n - p_big - 1) as f64;
    let f = ((r2_big - r2_small) / df1) / ((1.0 - r2_big) / df2);
    Ok(FTest {
        f,
        df1,
        df2,
        p_value: special::f_sf(f, df1, df2),
    })
}
