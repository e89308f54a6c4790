//! Forward-backward divergence segmentation of the short-time energy track.
//!
//! The detector models the log-energy trajectory with two Gaussians: a
//! long-term model fitted to every frame since the last boundary and a
//! short-term model fitted to the last `short_window_frames` frames. Each frame
//! contributes the mean-shift log-likelihood divergence between the two models,
//! accumulated against a fixed drift. A boundary is declared once the
//! cumulative statistic falls more than `threshold` below its running maximum,
//! and is placed at the frame where the maximum was reached. The detector then
//! restarts from that frame.
//!
//! [`segment`] runs the detector over the track and over the time-reversed
//! track, mirrors the backward boundaries and fuses near-coincident pairs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::AudioBuffer;

/// Floor applied to frame mean-square power before taking the logarithm.
pub const ENERGY_FLOOR: f64 = 1e-10;
/// Floor applied to model variances.
pub const VARIANCE_FLOOR: f64 = 1e-6;
/// Per-frame drift subtracted from the divergence. Under a stationary track the
/// divergence averages well below 1, so the cumulative statistic keeps rising
/// until a change pushes the divergence above this. Overlapping frames make
/// the divergence strongly autocorrelated, hence the margin.
const DRIFT: f64 = 4.0;
/// Frames after a change kept out of the next long-term model.
const TRANSITION_FRAMES: usize = 2;

#[derive(Debug, Error, PartialEq)]
pub enum FbdsError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("recording of {samples} samples is shorter than {needed} samples")]
    TooShort { samples: usize, needed: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FbdsParams {
    pub frame_ms: f64,
    pub hop_ms: f64,
    /// Detection threshold on the drop of the cumulative divergence.
    pub threshold: f64,
    /// Length of the short-term model window, in frames.
    pub short_window_frames: usize,
    pub min_segment_ms: f64,
    /// Forward and backward boundaries closer than this are fused.
    pub merge_tolerance_ms: f64,
}

impl Default for FbdsParams {
    fn default() -> Self {
        Self {
            frame_ms: 16.0,
            hop_ms: 8.0,
            threshold: 8.0,
            short_window_frames: 5,
            min_segment_ms: 20.0,
            merge_tolerance_ms: 20.0,
        }
    }
}

impl FbdsParams {
    pub fn validate(&self) -> Result<(), FbdsError> {
        let positive = [
            ("frame_ms", self.frame_ms),
            ("hop_ms", self.hop_ms),
            ("threshold", self.threshold),
            ("min_segment_ms", self.min_segment_ms),
            ("merge_tolerance_ms", self.merge_tolerance_ms),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(FbdsError::InvalidParams(format!("{name} must be > 0")));
            }
        }
        if self.short_window_frames == 0 {
            return Err(FbdsError::InvalidParams(
                "short_window_frames must be > 0".into(),
            ));
        }
        if self.frame_ms < self.hop_ms {
            return Err(FbdsError::InvalidParams("frame_ms must be >= hop_ms".into()));
        }
        if self.min_segment_ms < self.hop_ms {
            return Err(FbdsError::InvalidParams(
                "min_segment_ms must be >= hop_ms".into(),
            ));
        }
        Ok(())
    }
}

/// Short-time log-energy of a recording: `ln(max(floor, mean square))` per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyTrack {
    values: Vec<f64>,
    frame_len: usize,
    hop_len: usize,
    sample_rate: u32,
}

impl EnergyTrack {
    /// Wraps precomputed values; frame and hop are given in samples.
    pub fn from_values(
        values: Vec<f64>,
        frame_len: usize,
        hop_len: usize,
        sample_rate: u32,
    ) -> Result<Self, FbdsError> {
        if frame_len == 0 || hop_len == 0 || hop_len > frame_len || sample_rate == 0 {
            return Err(FbdsError::InvalidParams("bad frame geometry".into()));
        }
        Ok(Self {
            values,
            frame_len,
            hop_len,
            sample_rate,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn frame_ms(&self) -> f64 {
        self.samples_to_ms(self.frame_len as f64)
    }

    pub fn hop_ms(&self) -> f64 {
        self.samples_to_ms(self.hop_len as f64)
    }

    /// Start of frame `i` in ms.
    pub fn frame_start_ms(&self, i: usize) -> f64 {
        self.samples_to_ms((i * self.hop_len) as f64)
    }

    /// Time covered by the frames, from the start of the first to the end of
    /// the last.
    pub fn span_ms(&self) -> f64 {
        match self.values.len() {
            0 => 0.0,
            n => self.samples_to_ms(((n - 1) * self.hop_len + self.frame_len) as f64),
        }
    }

    fn samples_to_ms(&self, samples: f64) -> f64 {
        samples * 1000.0 / self.sample_rate as f64
    }

    fn reversed(&self) -> Self {
        Self {
            values: self.values.iter().rev().copied().collect(),
            ..*self
        }
    }
}

/// One sub-phonemic interval of a recording.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start_ms: f64,
    pub end_ms: f64,
    /// Maximum log-energy of the frames inside the segment.
    pub max_energy: f64,
}

impl Segment {
    pub fn duration_ms(&self) -> f64 {
        self.end_ms - self.start_ms
    }

    /// Maximum frame power in the linear domain.
    pub fn max_power(&self) -> f64 {
        self.max_energy.exp()
    }
}

fn to_samples(ms: f64, sample_rate: u32) -> usize {
    (ms * sample_rate as f64 / 1000.0).round() as usize
}

pub fn energy_track(buf: &AudioBuffer, frame_ms: f64, hop_ms: f64) -> Result<EnergyTrack, FbdsError> {
    if !(hop_ms > 0.0) || frame_ms < hop_ms {
        return Err(FbdsError::InvalidParams(
            "require frame_ms >= hop_ms > 0".into(),
        ));
    }
    let rate = buf.sample_rate();
    let frame_len = to_samples(frame_ms, rate).max(1);
    let hop_len = to_samples(hop_ms, rate).max(1);
    let samples = buf.samples();
    if samples.len() < frame_len {
        return Err(FbdsError::TooShort {
            samples: samples.len(),
            needed: frame_len,
        });
    }
    let n_frames = (samples.len() - frame_len) / hop_len + 1;
    let values = (0..n_frames)
        .map(|i| {
            let frame = &samples[i * hop_len..i * hop_len + frame_len];
            let power = frame.iter().map(|s| s * s).sum::<f64>() / frame_len as f64;
            power.max(ENERGY_FLOOR).ln()
        })
        .collect();
    EnergyTrack::from_values(values, frame_len, hop_len, rate)
}

/// Running mean/variance (Welford).
#[derive(Default)]
struct Moments {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    /// Sample variance shrunk towards `prior` with `weight` pseudo-observations.
    fn variance(&self, prior: f64, weight: f64) -> f64 {
        let dof = self.n.saturating_sub(1) as f64 + weight;
        if dof <= 0.0 {
            return VARIANCE_FLOOR;
        }
        ((self.m2 + weight * prior) / dof).max(VARIANCE_FLOOR)
    }
}

/// Indices of the first frame of each new stationary stretch, scanning forward.
///
/// Testing starts once the long-term model holds `window` frames. Its
/// variance is shrunk towards the track-wide noise level with `window`
/// pseudo-observations, which keeps a young model from being overconfident.
/// After a change the frames straddling it mix both levels, so the new
/// long-term model skips them.
fn change_frames(values: &[f64], window: usize, threshold: f64) -> Vec<usize> {
    let prior = robust_variance(values);
    let weight = window as f64;
    let mut changes = Vec::new();
    let mut model_from = 0;
    'scan: while model_from + window < values.len() {
        let mut long_term = Moments::default();
        let mut cumulative = 0.0f64;
        let mut peak = 0.0f64;
        let mut peak_at = model_from;
        for n in model_from..values.len() {
            let x = values[n];
            if n >= model_from + window {
                let short_mean = values[n + 1 - window..=n].iter().sum::<f64>() / window as f64;
                let divergence =
                    (short_mean - long_term.mean) * (x - long_term.mean) / long_term.variance(prior, weight);
                cumulative += DRIFT - divergence;
                if cumulative >= peak {
                    peak = cumulative;
                    peak_at = n;
                } else if peak - cumulative > threshold {
                    let change = peak_at + 1;
                    changes.push(change);
                    model_from = change + TRANSITION_FRAMES;
                    continue 'scan;
                }
            } else {
                peak_at = n;
            }
            long_term.push(x);
        }
        break;
    }
    changes
}

/// Noise variance of a track from the median absolute first difference.
fn robust_variance(values: &[f64]) -> f64 {
    let mut d: Vec<f64> = values.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    if d.is_empty() {
        return VARIANCE_FLOOR;
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    let sigma = *m / 0.674_489_75;
    (0.5 * sigma * sigma).max(VARIANCE_FLOOR)
}

/// Boundary times (ms, in the track's time axis) found by one forward pass.
///
/// A change first seen in frame `c` is placed in the middle of the stretch of
/// signal that frame `c` adds over frame `c - 1`.
pub fn detect_changes(track: &EnergyTrack, params: &FbdsParams) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    let offset = track.frame_len as f64 - 0.5 * track.hop_len as f64;
    for c in change_frames(&track.values, params.short_window_frames, params.threshold) {
        let t = track.samples_to_ms(c as f64 * track.hop_len as f64 + offset);
        let previous = out.last().copied().unwrap_or(0.0);
        if t - previous >= params.min_segment_ms {
            out.push(t);
        }
    }
    out
}

/// Fuses boundaries closer than `tolerance` to their midpoint, pairwise.
fn fuse(mut points: Vec<f64>, tolerance: f64) -> Vec<f64> {
    points.sort_by(f64::total_cmp);
    let mut fused = Vec::with_capacity(points.len());
    let mut i = 0;
    while i < points.len() {
        if i + 1 < points.len() && points[i + 1] - points[i] < tolerance {
            fused.push(0.5 * (points[i] + points[i + 1]));
            i += 2;
        } else {
            fused.push(points[i]);
            i += 1;
        }
    }
    fused
}

/// Cut points of the merged forward/backward segmentation, excluding the
/// recording endpoints.
pub fn boundaries(buf: &AudioBuffer, params: &FbdsParams) -> Result<Vec<f64>, FbdsError> {
    params.validate()?;
    let track = energy_track(buf, params.frame_ms, params.hop_ms)?;
    Ok(merged_boundaries(&track, buf.duration_ms(), params))
}

fn merged_boundaries(track: &EnergyTrack, duration_ms: f64, params: &FbdsParams) -> Vec<f64> {
    let span = track.span_ms();
    let mut points = detect_changes(track, params);
    points.extend(
        detect_changes(&track.reversed(), params)
            .into_iter()
            .map(|t| span - t),
    );
    let mut kept = Vec::new();
    let mut previous = 0.0;
    for b in fuse(points, params.merge_tolerance_ms) {
        if b - previous >= params.min_segment_ms && duration_ms - b >= params.min_segment_ms {
            kept.push(b);
            previous = b;
        }
    }
    kept
}

/// Splits a recording into segments tiling `[0, duration_ms]`.
pub fn segment(buf: &AudioBuffer, params: &FbdsParams) -> Result<Vec<Segment>, FbdsError> {
    params.validate()?;
    let track = energy_track(buf, params.frame_ms, params.hop_ms)?;
    if track.len() < 2 {
        return Err(FbdsError::TooShort {
            samples: buf.len(),
            needed: track.frame_len + track.hop_len,
        });
    }
    let duration = buf.duration_ms();
    let cuts = merged_boundaries(&track, duration, params);

    let mut edges = Vec::with_capacity(cuts.len() + 2);
    edges.push(0.0);
    edges.extend(cuts);
    edges.push(duration);
    let last = edges.len() - 1;
    let hop = track.hop_ms();
    Ok(edges
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let lo = if i == 0 { w[0] } else { w[0] + hop };
            let hi = if i + 1 == last { w[1] } else { w[1] - hop };
            Segment {
                start_ms: w[0],
                end_ms: w[1],
                max_energy: max_energy_within(&track, lo, hi, 0.5 * (w[0] + w[1])),
            }
        })
        .collect())
}

/// Maximum over frames lying entirely in `[lo, hi]`; when none fits, the frame
/// centred nearest to `mid`.
fn max_energy_within(track: &EnergyTrack, lo: f64, hi: f64, mid: f64) -> f64 {
    let frame = track.frame_ms();
    let hop = track.hop_ms();
    let first = (lo / hop - 1e-9).ceil().max(0.0) as usize;
    let mut best = f64::NEG_INFINITY;
    let mut i = first;
    while i < track.len() && track.frame_start_ms(i) + frame <= hi + 1e-9 {
        best = best.max(track.values[i]);
        i += 1;
    }
    if best.is_finite() {
        return best;
    }
    let nearest = ((mid - 0.5 * frame) / hop).round().max(0.0) as usize;
    track.values[nearest.min(track.len() - 1)]
}
