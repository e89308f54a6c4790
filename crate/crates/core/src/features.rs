//! Temporal fluency predictors computed from a clustering.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::ClusterResult;
use crate::stats::{self, StatsError};

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("recording has zero duration")]
    ZeroDuration,
    #[error("expected syllable count must be positive")]
    InvalidScript,
    #[error("sign check needs at least {needed} paired observations, got {got}")]
    TooFewObservations { needed: usize, got: usize },
    #[error("feature and rating lists differ in length")]
    LengthMismatch,
}

/// The sentence a speaker was asked to read.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StimulusScript {
    pub sentence_id: String,
    pub expected_syllables: u32,
}

impl StimulusScript {
    pub fn new(sentence_id: impl Into<String>, expected_syllables: u32) -> Result<Self, FeatureError> {
        if expected_syllables == 0 {
            return Err(FeatureError::InvalidScript);
        }
        Ok(Self {
            sentence_id: sentence_id.into(),
            expected_syllables,
        })
    }
}

/// Per-recording fluency predictors. Rates are per millisecond.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluencyFeatures {
    pub pseudo_syllable_rate: f64,
    pub sd_pseudo_syllable_ms: f64,
    pub speech_ratio: f64,
    pub silent_break_rate: f64,
    /// Detected pseudo-syllables minus the syllables in the script.
    pub syllable_count_delta: Option<i64>,
    pub n_pseudo_syllables: usize,
    pub n_silent_breaks: usize,
    pub duration_ms: f64,
}

/// The four predictors, in the order used for model matrices.
pub const PREDICTOR_NAMES: [&str; 4] = [
    "pseudo_syllable_rate",
    "sd_pseudo_syllable_ms",
    "speech_ratio",
    "silent_break_rate",
];
pub const DELTA_NAME: &str = "syllable_count_delta";

impl FluencyFeatures {
    /// `[rate, sd, speech ratio, break rate]`.
    pub fn predictors(&self) -> [f64; 4] {
        [
            self.pseudo_syllable_rate,
            self.sd_pseudo_syllable_ms,
            self.speech_ratio,
            self.silent_break_rate,
        ]
    }
}

pub fn compute_features(
    cluster: &ClusterResult,
    script: Option<&StimulusScript>,
) -> Result<FluencyFeatures, FeatureError> {
    let duration = cluster.total_duration_ms;
    if !(duration > 0.0) {
        return Err(FeatureError::ZeroDuration);
    }
    if script.is_some_and(|s| s.expected_syllables == 0) {
        return Err(FeatureError::InvalidScript);
    }
    let durations: Vec<f64> = cluster
        .pseudo_syllables
        .iter()
        .map(|p| p.duration_ms())
        .collect();
    let n = durations.len();
    let total: f64 = durations.iter().sum();
    let sd = if n <= 1 {
        0.0
    } else {
        let mean = total / n as f64;
        (durations.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n as f64).sqrt()
    };
    let n_breaks = cluster.silent_breaks.len();
    Ok(FluencyFeatures {
        pseudo_syllable_rate: n as f64 / duration,
        sd_pseudo_syllable_ms: sd,
        speech_ratio: total / duration,
        silent_break_rate: n_breaks as f64 / duration,
        syllable_count_delta: script.map(|s| n as i64 - s.expected_syllables as i64),
        n_pseudo_syllables: n,
        n_silent_breaks: n_breaks,
        duration_ms: duration,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Positive,
    Negative,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorSign {
    pub predictor: String,
    /// `None` when the correlation is undefined (a constant input).
    pub rho: Option<f64>,
    pub sign: Option<Sign>,
    pub expected: Sign,
    pub matches_expected: bool,
}

/// Expected direction of each predictor's association with fluency ratings.
pub const EXPECTED_SIGNS: [Sign; 4] = [Sign::Positive, Sign::Negative, Sign::Positive, Sign::Negative];

/// Spearman correlation of each predictor with the ratings, and whether its
/// sign matches the expected direction.
pub fn expected_sign_check(
    features: &[FluencyFeatures],
    ratings: &[f64],
) -> Result<Vec<PredictorSign>, FeatureError> {
    const MIN_OBSERVATIONS: usize = 10;
    if features.len() != ratings.len() {
        return Err(FeatureError::LengthMismatch);
    }
    if features.len() < MIN_OBSERVATIONS {
        return Err(FeatureError::TooFewObservations {
            needed: MIN_OBSERVATIONS,
            got: features.len(),
        });
    }
    Ok(PREDICTOR_NAMES
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let column: Vec<f64> = features.iter().map(|f| f.predictors()[j]).collect();
            let rho = match stats::spearman_rho(&column, ratings) {
                Ok(r) => Some(r),
                Err(StatsError::Constant) => None,
                Err(e) => unreachable!("lengths checked above: {e}"),
            };
            let sign = rho.map(|r| {
                if r > 0.0 {
                    Sign::Positive
                } else if r < 0.0 {
                    Sign::Negative
                } else {
                    Sign::Zero
                }
            });
            PredictorSign {
                predictor: name.to_string(),
                rho,
                sign,
                expected: EXPECTED_SIGNS[j],
                matches_expected: sign == Some(EXPECTED_SIGNS[j]),
            }
        })
        .collect())
}
