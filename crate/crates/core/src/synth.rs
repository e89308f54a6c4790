//! Synthetic corpora with known ground truth.
//!
//! [`burst_train`] renders speech-like tone bursts separated by noise gaps, so
//! segmentation and clustering can be scored against the generator's own
//! burst and gap intervals. [`fluency_dataset`] and [`repetition_dataset`]
//! produce feature tables whose ratings are a known function of the predictors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::audio::AudioBuffer;
use crate::features::FluencyFeatures;
use crate::models::{Dataset, DatasetRow, Group};
use crate::stats::RatingRecord;

#[derive(Debug, Clone, PartialEq)]
pub struct BurstTrainConfig {
    pub sample_rate: u32,
    pub n_bursts: (usize, usize),
    pub burst_ms: (f64, f64),
    pub gap_ms: (f64, f64),
    /// Silence before the first and after the last burst.
    pub edge_ms: (f64, f64),
    /// Burst power over noise power, in dB.
    pub snr_db: (f64, f64),
    pub amplitude: (f64, f64),
    pub f0_hz: (f64, f64),
    pub ramp_ms: f64,
}

impl Default for BurstTrainConfig {
    fn default() -> Self {
        Self {
            sample_rate: crate::ANALYSIS_RATE,
            n_bursts: (4, 14),
            burst_ms: (60.0, 250.0),
            gap_ms: (80.0, 600.0),
            edge_ms: (80.0, 400.0),
            snr_db: (20.0, 40.0),
            amplitude: (0.3, 0.8),
            f0_hz: (90.0, 260.0),
            ramp_ms: 2.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BurstTrain {
    pub audio: AudioBuffer,
    /// Burst intervals in ms.
    pub bursts: Vec<(f64, f64)>,
    /// Silent intervals in ms, including the leading and trailing ones.
    pub gaps: Vec<(f64, f64)>,
}

impl BurstTrain {
    /// Gaps long enough to count as silent breaks.
    pub fn breaks(&self, min_ms: f64) -> Vec<(f64, f64)> {
        self.gaps
            .iter()
            .copied()
            .filter(|(s, e)| e - s > min_ms)
            .collect()
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// One burst of a harmonic complex with raised-cosine edges, peak-normalized to
/// `amplitude`.
pub fn tone_burst(rng: &mut impl Rng, n: usize, sample_rate: u32, amplitude: f64, f0: f64, ramp: usize) -> Vec<f64> {
    let phases: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    let mut out: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / sample_rate as f64;
            phases
                .iter()
                .enumerate()
                .map(|(h, p)| {
                    let k = (h + 1) as f64;
                    (std::f64::consts::TAU * f0 * k * t + p).sin() / k
                })
                .sum::<f64>()
        })
        .collect();
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let ramp = ramp.min(n / 2);
    for (i, v) in out.iter_mut().enumerate() {
        let edge = i.min(n - 1 - i);
        let env = if edge < ramp {
            0.5 - 0.5 * (std::f64::consts::PI * (edge as f64 + 0.5) / ramp as f64).cos()
        } else {
            1.0
        };
        *v *= amplitude / peak * env;
    }
    out
}

/// Renders a burst train from explicit burst and gap durations (ms).
/// `gaps_ms` has one more entry than `bursts`: lead-in, inner gaps, tail.
pub fn render_bursts(
    rng: &mut impl Rng,
    sample_rate: u32,
    bursts: &[(f64, f64, f64)],
    gaps_ms: &[f64],
    snr_db: f64,
    ramp_ms: f64,
) -> BurstTrain {
    assert_eq!(gaps_ms.len(), bursts.len() + 1);
    let to_n = |ms: f64| (ms * sample_rate as f64 / 1000.0).round() as usize;
    let ramp = to_n(ramp_ms);
    let mut signal = Vec::new();
    let mut burst_iv = Vec::new();
    let mut gap_iv = Vec::new();
    let ms = |n: usize| n as f64 * 1000.0 / sample_rate as f64;
    let mut power_sum = 0.0;
    let mut power_n = 0usize;
    for (i, &gap) in gaps_ms.iter().enumerate() {
        let start = signal.len();
        signal.extend(std::iter::repeat_n(0.0, to_n(gap)));
        gap_iv.push((ms(start), ms(signal.len())));
        if let Some(&(dur, amp, f0)) = bursts.get(i) {
            let start = signal.len();
            let b = tone_burst(rng, to_n(dur), sample_rate, amp, f0, ramp);
            power_sum += b.iter().map(|v| v * v).sum::<f64>();
            power_n += b.len();
            signal.extend(b);
            burst_iv.push((ms(start), ms(signal.len())));
        }
    }
    let burst_power = if power_n > 0 { power_sum / power_n as f64 } else { 0.01 };
    let noise_sd = (burst_power / 10f64.powf(snr_db / 10.0)).sqrt();
    let normal = Normal::new(0.0, noise_sd).expect("finite noise level");
    for v in signal.iter_mut() {
        *v += normal.sample(rng);
    }
    BurstTrain {
        audio: AudioBuffer::from_clipped(signal, sample_rate).expect("positive rate"),
        bursts: burst_iv,
        gaps: gap_iv,
    }
}

/// Random burst train drawn from `config`.
pub fn burst_train(config: &BurstTrainConfig, seed: u64) -> BurstTrain {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(config.n_bursts.0..=config.n_bursts.1);
    let bursts: Vec<(f64, f64, f64)> = (0..n)
        .map(|_| {
            (
                uniform(&mut rng, config.burst_ms),
                uniform(&mut rng, config.amplitude),
                uniform(&mut rng, config.f0_hz),
            )
        })
        .collect();
    let mut gaps = vec![uniform(&mut rng, config.edge_ms)];
    gaps.extend((1..n).map(|_| uniform(&mut rng, config.gap_ms)));
    gaps.push(uniform(&mut rng, config.edge_ms));
    let snr = uniform(&mut rng, config.snr_db);
    render_bursts(&mut rng, config.sample_rate, &bursts, &gaps, snr, config.ramp_ms)
}

/// Expected syllable counts of the three read sentences.
pub const SENTENCE_SYLLABLES: [u32; 3] = [13, 11, 12];

/// Ground-truth linear rating model over the four predictors, expressed on
/// per-second rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatingModel {
    pub intercept: f64,
    /// Coefficients for rate (per s), sd (ms), speech ratio, break rate (per s).
    pub coefficients: [f64; 4],
}

impl Default for RatingModel {
    fn default() -> Self {
        Self {
            intercept: 1.2,
            coefficients: [0.35, -0.003, 2.4, -0.5],
        }
    }
}

impl RatingModel {
    pub fn predict(&self, f: &FluencyFeatures) -> f64 {
        let x = [
            f.pseudo_syllable_rate * 1000.0,
            f.sd_pseudo_syllable_ms,
            f.speech_ratio,
            f.silent_break_rate * 1000.0,
        ];
        self.intercept + self.coefficients.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }
}

fn latent_features(rng: &mut impl Rng, fluency: f64, expected: u32, extra: i64) -> FluencyFeatures {
    let jitter = Normal::new(0.0, 1.0).unwrap();
    // fluency in [0, 1]: higher means faster, steadier, fewer pauses
    let rate_per_s = (1.0 + 4.0 * fluency + 0.3 * jitter.sample(rng)).max(0.5);
    let speech_ratio = (0.3 + 0.55 * fluency + 0.04 * jitter.sample(rng)).clamp(0.1, 0.98);
    let sd = (130.0 - 90.0 * fluency + 12.0 * jitter.sample(rng)).max(5.0);
    let break_rate_per_s = (1.6 * (1.0 - fluency) + 0.12 * jitter.sample(rng)).max(0.0);
    let n = (expected as i64 + extra).max(1) as usize;
    let duration_ms = n as f64 / rate_per_s * 1000.0;
    FluencyFeatures {
        pseudo_syllable_rate: rate_per_s / 1000.0,
        sd_pseudo_syllable_ms: sd,
        speech_ratio,
        silent_break_rate: break_rate_per_s / 1000.0,
        syllable_count_delta: Some(extra),
        n_pseudo_syllables: n,
        n_silent_breaks: (break_rate_per_s * duration_ms / 1000.0).round() as usize,
        duration_ms,
    }
}

/// Speakers × sentences feature table; the reference rating is
/// `model.predict(features)` plus Gaussian noise, clipped to `[1, 5]`.
pub fn fluency_dataset(speakers: usize, sentences: usize, noise_sd: f64, model: &RatingModel, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sd).unwrap();
    let mut rows = Vec::new();
    for s in 0..speakers {
        let speaker_fluency: f64 = rng.random_range(0.0..1.0);
        let group = if s % 6 == 5 { Group::Control } else { Group::Pwa };
        for k in 0..sentences {
            let fluency = (speaker_fluency + 0.12 * Normal::new(0.0, 1.0).unwrap().sample(&mut rng)).clamp(0.0, 1.0);
            let expected = SENTENCE_SYLLABLES[k % SENTENCE_SYLLABLES.len()];
            let features = latent_features(&mut rng, fluency, expected, 0);
            let reference = (model.predict(&features) + noise.sample(&mut rng)).clamp(1.0, 5.0);
            rows.push(DatasetRow {
                stimulus_id: format!("spk{s:02}_s{k}"),
                speaker_id: format!("spk{s:02}"),
                group: Some(group),
                features,
                reference,
            });
        }
    }
    Dataset::new(rows).expect("generator produces a valid dataset")
}

/// Like [`fluency_dataset`] but a share of the recordings contain repeated
/// words: repeats add pseudo-syllables and lower the rating by
/// `penalty_per_repeat` each, while barely moving the other predictors.
pub fn repetition_dataset(
    speakers: usize,
    sentences: usize,
    noise_sd: f64,
    repeat_share: f64,
    penalty_per_repeat: f64,
    seed: u64,
) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sd).unwrap();
    let model = RatingModel::default();
    let mut rows = Vec::new();
    for s in 0..speakers {
        let speaker_fluency: f64 = rng.random_range(0.0..1.0);
        for k in 0..sentences {
            let fluency = (speaker_fluency + 0.12 * Normal::new(0.0, 1.0).unwrap().sample(&mut rng)).clamp(0.0, 1.0);
            let expected = SENTENCE_SYLLABLES[k % SENTENCE_SYLLABLES.len()];
            let repeats: i64 = if rng.random_bool(repeat_share) {
                rng.random_range(1..=7)
            } else {
                0
            };
            // small detection error on the syllable count
            let miscount: i64 = rng.random_range(-1..=1);
            let features = latent_features(&mut rng, fluency, expected, repeats + miscount);
            let reference = (model.predict(&features) - penalty_per_repeat * repeats as f64
                + noise.sample(&mut rng))
            .clamp(1.0, 5.0);
            rows.push(DatasetRow {
                stimulus_id: format!("spk{s:02}_s{k}"),
                speaker_id: format!("spk{s:02}"),
                group: Some(Group::Pwa),
                features,
                reference,
            });
        }
    }
    Dataset::new(rows).expect("generator produces a valid dataset")
}

/// Integer 1..5 ratings from `raters` raters over two passes: each rating is
/// the reference plus Gaussian noise, rounded and clipped.
pub fn rating_records(data: &Dataset, raters: usize, noise_sd: f64, seed: u64) -> Vec<RatingRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sd).unwrap();
    let mut out = Vec::new();
    for r in 0..raters {
        for pass in 1..=2u8 {
            for row in data.rows() {
                let v = (row.reference + noise.sample(&mut rng)).round().clamp(1.0, 5.0);
                out.push(RatingRecord {
                    rater_id: format!("rater{r}"),
                    stimulus_id: row.stimulus_id.clone(),
                    pass,
                    rating: v as u8,
                    timestamp: "2024-01-01T00:00:00Z".into(),
                });
            }
        }
    }
    out
}
