//! Grouping of segments into pseudo-syllables and silent breaks.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::AudioBuffer;
use crate::fbds::{self, FbdsError, FbdsParams, Segment, ENERGY_FLOOR};

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("invalid clustering parameters: {0}")]
    InvalidParams(String),
    #[error("no segments to cluster")]
    Empty,
    #[error(transparent)]
    Segmentation(#[from] FbdsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Speech,
    Silent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledSegment {
    #[serde(flatten)]
    pub segment: Segment,
    pub kind: SegmentKind,
}

/// Reference power for the valley test that splits speech runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValleyReference {
    /// Maximum power seen so far in the current pseudo-syllable.
    #[default]
    RunningMax,
    /// Power of the immediately preceding segment.
    Previous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterParams {
    /// A segment is silent when its peak power relative to the recording peak
    /// falls below this ratio.
    pub silence_ratio_threshold: f64,
    /// A speech segment opens a new pseudo-syllable when its peak power falls
    /// below this fraction of the reference power.
    pub syllable_valley_ratio: f64,
    /// Merged silences strictly longer than this become silent breaks.
    pub break_min_ms: f64,
    pub valley_reference: ValleyReference,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            silence_ratio_threshold: 0.02,
            syllable_valley_ratio: 0.35,
            break_min_ms: 250.0,
            valley_reference: ValleyReference::RunningMax,
        }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<(), ClusterError> {
        for (name, v) in [
            ("silence_ratio_threshold", self.silence_ratio_threshold),
            ("syllable_valley_ratio", self.syllable_valley_ratio),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(ClusterError::InvalidParams(format!("{name} must lie in (0, 1)")));
            }
        }
        if !(self.break_min_ms >= 0.0) {
            return Err(ClusterError::InvalidParams("break_min_ms must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoSyllable {
    pub start_ms: f64,
    pub end_ms: f64,
    #[serde(skip)]
    pub members: Vec<Segment>,
}

impl PseudoSyllable {
    pub fn duration_ms(&self) -> f64 {
        self.end_ms - self.start_ms
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SilentBreak {
    pub start_ms: f64,
    pub end_ms: f64,
}

impl SilentBreak {
    pub fn duration_ms(&self) -> f64 {
        self.end_ms - self.start_ms
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    pub pseudo_syllables: Vec<PseudoSyllable>,
    pub silent_breaks: Vec<SilentBreak>,
    pub total_duration_ms: f64,
    /// The labeled segmentation the clusters were built from.
    #[serde(skip)]
    pub segments: Vec<LabeledSegment>,
}

impl ClusterResult {
    /// Builds a result from intervals alone, e.g. for tests or imported data.
    pub fn from_intervals(
        pseudo_syllables: &[(f64, f64)],
        silent_breaks: &[(f64, f64)],
        total_duration_ms: f64,
    ) -> Self {
        Self {
            pseudo_syllables: pseudo_syllables
                .iter()
                .map(|&(start_ms, end_ms)| PseudoSyllable {
                    start_ms,
                    end_ms,
                    members: Vec::new(),
                })
                .collect(),
            silent_breaks: silent_breaks
                .iter()
                .map(|&(start_ms, end_ms)| SilentBreak { start_ms, end_ms })
                .collect(),
            total_duration_ms,
            segments: Vec::new(),
        }
    }
}

fn is_digital_silence(energy: f64) -> bool {
    energy <= ENERGY_FLOOR.ln() + 1e-9
}

/// Labels each segment by its peak power relative to the loudest segment.
///
/// Power ratios are taken as differences of log-energies, so scaling the
/// recording leaves the labels unchanged. Segments at the energy floor are
/// always silent, which makes an all-zero recording entirely silent.
pub fn classify(segments: &[Segment], params: &ClusterParams) -> Result<Vec<LabeledSegment>, ClusterError> {
    params.validate()?;
    let peak = segments
        .iter()
        .map(|s| s.max_energy)
        .fold(f64::NEG_INFINITY, f64::max);
    if !peak.is_finite() {
        return Err(ClusterError::Empty);
    }
    let log_threshold = params.silence_ratio_threshold.ln();
    Ok(segments
        .iter()
        .map(|&segment| {
            let silent =
                is_digital_silence(segment.max_energy) || segment.max_energy - peak < log_threshold;
            LabeledSegment {
                segment,
                kind: if silent {
                    SegmentKind::Silent
                } else {
                    SegmentKind::Speech
                },
            }
        })
        .collect())
}

/// Merges runs of silent segments and keeps those longer than `break_min_ms`.
pub fn find_silent_breaks(labeled: &[LabeledSegment], params: &ClusterParams) -> Vec<SilentBreak> {
    let mut breaks = Vec::new();
    let mut run: Option<SilentBreak> = None;
    let mut close = |run: &mut Option<SilentBreak>| {
        if let Some(b) = run.take() {
            if b.duration_ms() > params.break_min_ms {
                breaks.push(b);
            }
        }
    };
    for seg in labeled {
        match seg.kind {
            SegmentKind::Silent => match run.as_mut() {
                Some(b) => b.end_ms = seg.segment.end_ms,
                None => {
                    run = Some(SilentBreak {
                        start_ms: seg.segment.start_ms,
                        end_ms: seg.segment.end_ms,
                    })
                }
            },
            SegmentKind::Speech => close(&mut run),
        }
    }
    close(&mut run);
    breaks
}

/// Groups consecutive speech segments into pseudo-syllables.
///
/// A silent segment always closes the current pseudo-syllable; a speech
/// segment whose peak power drops below `syllable_valley_ratio` times the
/// reference power starts a new one.
pub fn build_pseudo_syllables(labeled: &[LabeledSegment], params: &ClusterParams) -> Vec<PseudoSyllable> {
    let log_valley = params.syllable_valley_ratio.ln();
    let mut out = Vec::new();
    // current members and reference log-energy
    let mut current: Option<(Vec<Segment>, f64)> = None;
    let finish = |members: Vec<Segment>, out: &mut Vec<PseudoSyllable>| {
        out.push(PseudoSyllable {
            start_ms: members[0].start_ms,
            end_ms: members[members.len() - 1].end_ms,
            members,
        });
    };
    for seg in labeled {
        let s = seg.segment;
        match seg.kind {
            SegmentKind::Silent => {
                if let Some((members, _)) = current.take() {
                    finish(members, &mut out);
                }
            }
            SegmentKind::Speech => match current.as_mut() {
                Some((members, reference)) if s.max_energy - *reference >= log_valley => {
                    members.push(s);
                    *reference = match params.valley_reference {
                        ValleyReference::RunningMax => reference.max(s.max_energy),
                        ValleyReference::Previous => s.max_energy,
                    };
                }
                _ => {
                    if let Some((members, _)) = current.take() {
                        finish(members, &mut out);
                    }
                    current = Some((vec![s], s.max_energy));
                }
            },
        }
    }
    if let Some((members, _)) = current {
        finish(members, &mut out);
    }
    out
}

/// Segments, labels and clusters one recording.
pub fn cluster(
    buf: &AudioBuffer,
    fbds_params: &FbdsParams,
    params: &ClusterParams,
) -> Result<ClusterResult, ClusterError> {
    params.validate()?;
    let segments = fbds::segment(buf, fbds_params)?;
    let labeled = classify(&segments, params)?;
    Ok(ClusterResult {
        pseudo_syllables: build_pseudo_syllables(&labeled, params),
        silent_breaks: find_silent_breaks(&labeled, params),
        total_duration_ms: buf.duration_ms(),
        segments: labeled,
    })
}
