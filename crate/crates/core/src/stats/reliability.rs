//! Reference ratings and rater reliability from raw rating records.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{cronbach_alpha, kruskal_wallis, mean, spearman_test, CorrelationTest, RankTest};

/// One rating as persisted by the rating service.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub rater_id: String,
    pub stimulus_id: String,
    pub pass: u8,
    pub rating: u8,
    #[serde(rename = "timestamp_iso8601")]
    pub timestamp: String,
}

impl RatingRecord {
    pub fn validate(&self) -> Result<(), ReliabilityError> {
        if !(1..=5).contains(&self.rating) {
            return Err(ReliabilityError::InvalidRating(self.rating));
        }
        if !(1..=2).contains(&self.pass) {
            return Err(ReliabilityError::InvalidPass(self.pass));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRating {
    pub stimulus_id: String,
    pub value: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum ReliabilityError {
    #[error("rating {0} outside 1..=5")]
    InvalidRating(u8),
    #[error("pass {0} is neither 1 nor 2")]
    InvalidPass(u8),
    #[error("duplicate rating by {rater_id} for {stimulus_id} in pass {pass}")]
    Duplicate {
        rater_id: String,
        stimulus_id: String,
        pass: u8,
    },
    #[error("{rater_id} rated {stimulus_id} in one pass only")]
    MissingPass { rater_id: String, stimulus_id: String },
    #[error("no ratings")]
    Empty,
}

/// What to do with a stimulus a rater judged only once.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PassPolicy {
    #[default]
    RequireBoth,
    AllowSinglePass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntraRater {
    pub rater_id: String,
    pub n_stimuli: usize,
    /// Spearman correlation between the two passes.
    pub rho: Option<CorrelationTest>,
    /// Cronbach's alpha with the two passes as items.
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterRater {
    pub rater_a: String,
    pub rater_b: String,
    pub rho: Option<CorrelationTest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityReport {
    pub intra_rater: Vec<IntraRater>,
    pub inter_rater: Vec<InterRater>,
    /// Alpha with raters as items, over stimuli every rater judged.
    pub overall_alpha: Option<f64>,
    /// Differences between the raters' rating distributions.
    pub kruskal_wallis: Option<RankTest>,
    pub references: Vec<ReferenceRating>,
}

/// Pass-averages each rater's ratings, then averages across raters.
pub fn build_reference_ratings(
    records: &[RatingRecord],
    policy: PassPolicy,
) -> Result<ReliabilityReport, ReliabilityError> {
    if records.is_empty() {
        return Err(ReliabilityError::Empty);
    }
    // rater -> stimulus -> [pass1, pass2]
    let mut table: BTreeMap<&str, BTreeMap<&str, [Option<f64>; 2]>> = BTreeMap::new();
    for r in records {
        r.validate()?;
        let slot = &mut table
            .entry(&r.rater_id)
            .or_default()
            .entry(&r.stimulus_id)
            .or_default()[r.pass as usize - 1];
        if slot.is_some() {
            return Err(ReliabilityError::Duplicate {
                rater_id: r.rater_id.clone(),
                stimulus_id: r.stimulus_id.clone(),
                pass: r.pass,
            });
        }
        *slot = Some(r.rating as f64);
    }

    let mut averaged: BTreeMap<&str, BTreeMap<&str, f64>> = BTreeMap::new();
    let mut intra_rater = Vec::new();
    for (&rater, stimuli) in &table {
        let mut first = Vec::new();
        let mut second = Vec::new();
        let per_rater = averaged.entry(rater).or_default();
        for (&stimulus, passes) in stimuli {
            match *passes {
                [Some(a), Some(b)] => {
                    first.push(a);
                    second.push(b);
                    per_rater.insert(stimulus, 0.5 * (a + b));
                }
                [Some(v), None] | [None, Some(v)] => {
                    if policy == PassPolicy::RequireBoth {
                        return Err(ReliabilityError::MissingPass {
                            rater_id: rater.to_string(),
                            stimulus_id: stimulus.to_string(),
                        });
                    }
                    per_rater.insert(stimulus, v);
                }
                [None, None] => unreachable!(),
            }
        }
        intra_rater.push(IntraRater {
            rater_id: rater.to_string(),
            n_stimuli: first.len(),
            rho: spearman_test(&first, &second).ok(),
            alpha: cronbach_alpha(&[first, second]).ok(),
        });
    }

    let common: BTreeSet<&str> = averaged
        .values()
        .map(|m| m.keys().copied().collect::<BTreeSet<_>>())
        .reduce(|a, b| a.intersection(&b).copied().collect())
        .unwrap_or_default();
    let columns: Vec<(&str, Vec<f64>)> = averaged
        .iter()
        .map(|(&rater, m)| (rater, common.iter().map(|s| m[s]).collect()))
        .collect();

    let mut inter_rater = Vec::new();
    for i in 0..columns.len() {
        for j in i + 1..columns.len() {
            inter_rater.push(InterRater {
                rater_a: columns[i].0.to_string(),
                rater_b: columns[j].0.to_string(),
                rho: spearman_test(&columns[i].1, &columns[j].1).ok(),
            });
        }
    }
    let items: Vec<Vec<f64>> = columns.iter().map(|(_, c)| c.clone()).collect();
    let overall_alpha = cronbach_alpha(&items).ok();
    let groups: Vec<Vec<f64>> = averaged.values().map(|m| m.values().copied().collect()).collect();
    let kruskal_wallis = kruskal_wallis(&groups).ok();

    let mut by_stimulus: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for m in averaged.values() {
        for (&s, &v) in m {
            by_stimulus.entry(s).or_default().push(v);
        }
    }
    let references = by_stimulus
        .into_iter()
        .map(|(s, v)| ReferenceRating {
            stimulus_id: s.to_string(),
            value: mean(&v),
        })
        .collect();

    Ok(ReliabilityReport {
        intra_rater,
        inter_rater,
        overall_alpha,
        kruskal_wallis,
        references,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(rater: &str, stim: &str, pass: u8, rating: u8) -> RatingRecord {
        RatingRecord {
            rater_id: rater.into(),
            stimulus_id: stim.into(),
            pass,
            rating,
            timestamp: String::new(),
        }
    }

    #[test]
    fn single_rater_equal_passes() {
        let r = build_reference_ratings(&[rec("a", "s1", 1, 3), rec("a", "s1", 2, 3)], PassPolicy::RequireBoth).unwrap();
        assert_eq!(r.references, vec![ReferenceRating { stimulus_id: "s1".into(), value: 3.0 }]);
        assert!(r.inter_rater.is_empty());
        assert_eq!(r.overall_alpha, None);
    }

    #[test]
    fn grand_mean_over_raters() {
        let mut records = Vec::new();
        for (rater, v) in [("a", 2), ("b", 3), ("c", 4)] {
            records.push(rec(rater, "s1", 1, v));
            records.push(rec(rater, "s1", 2, v));
        }
        let r = build_reference_ratings(&records, PassPolicy::RequireBoth).unwrap();
        assert_eq!(r.references[0].value, 3.0);
        assert_eq!(r.inter_rater.len(), 3);
    }

    #[test]
    fn reliability_on_consistent_raters() {
        let mut records = Vec::new();
        for s in 0..12u8 {
            let base = 1 + s % 5;
            for (rater, shift) in [("a", 0u8), ("b", 0), ("c", 1)] {
                let v = (base + shift).min(5);
                records.push(rec(rater, &format!("s{s:02}"), 1, v));
                records.push(rec(rater, &format!("s{s:02}"), 2, v));
            }
        }
        let r = build_reference_ratings(&records, PassPolicy::RequireBoth).unwrap();
        assert_eq!(r.intra_rater.len(), 3);
        assert!(r.intra_rater.iter().all(|i| i.alpha == Some(1.0)));
        assert!(r.overall_alpha.unwrap() > 0.9);
        let ab = &r.inter_rater[0];
        assert_eq!(ab.rho.unwrap().coefficient, 1.0);
        assert!(r.kruskal_wallis.is_some());
        assert_eq!(r.references.len(), 12);
    }

    #[test]
    fn missing_pass_and_invalid_input() {
        let one = [rec("a", "s1", 1, 3)];
        assert!(matches!(
            build_reference_ratings(&one, PassPolicy::RequireBoth),
            Err(ReliabilityError::MissingPass { .. })
        ));
        let r = build_reference_ratings(&one, PassPolicy::AllowSinglePass).unwrap();
        assert_eq!(r.references[0].value, 3.0);
        assert_eq!(
            build_reference_ratings(&[rec("a", "s1", 1, 6)], PassPolicy::RequireBoth),
            Err(ReliabilityError::InvalidRating(6))
        );
        assert!(matches!(
            build_reference_ratings(&[rec("a", "s1", 1, 3), rec("a", "s1", 1, 4)], PassPolicy::AllowSinglePass),
            Err(ReliabilityError::Duplicate { .. })
        ));
    }
}
