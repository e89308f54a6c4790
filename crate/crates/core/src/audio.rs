//! Audio loading, downmixing and band-limited resampling.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("{path}: cannot read WAV file: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
    #[error("{path}: unsupported encoding ({detail})")]
    Unsupported { path: PathBuf, detail: String },
    #[error("{path}: file contains no audio samples")]
    Empty { path: PathBuf },
    #[error("sample rate must be positive")]
    ZeroRate,
    #[error("sample {index} = {value} is outside [-1, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("channel buffers have different lengths")]
    ChannelMismatch,
}

/// Mono PCM samples in `[-1, 1]` at a known sample rate.
///
/// The sample storage is shared, so clones are cheap and buffers can be handed
/// to worker threads freely.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Arc<[f64]>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::ZeroRate);
        }
        if let Some((index, &value)) = samples
            .iter()
            .enumerate()
            .find(|(_, v)| !(-1.0..=1.0).contains(*v))
        {
            return Err(AudioError::OutOfRange { index, value });
        }
        Ok(Self {
            samples: samples.into(),
            sample_rate,
        })
    }

    /// Builds a buffer, clipping samples into `[-1, 1]` (NaN becomes 0).
    pub fn from_clipped(samples: Vec<f64>, sample_rate: u32) -> Result<Self, AudioError> {
        let samples = samples
            .into_iter()
            .map(|v| if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) })
            .collect();
        Self::new(samples, sample_rate)
    }

    /// Averages two channels into one.
    pub fn downmix(left: &[f64], right: &[f64], sample_rate: u32) -> Result<Self, AudioError> {
        if left.len() != right.len() {
            return Err(AudioError::ChannelMismatch);
        }
        let mono = left.iter().zip(right).map(|(l, r)| 0.5 * (l + r)).collect();
        Self::new(mono, sample_rate)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_ms(&self) -> f64 {
        self.samples.len() as f64 * 1000.0 / self.sample_rate as f64
    }

    /// Multiplies every sample by `gain`, clipping to `[-1, 1]`.
    pub fn scaled(&self, gain: f64) -> Self {
        let samples: Vec<f64> = self
            .samples
            .iter()
            .map(|s| (s * gain).clamp(-1.0, 1.0))
            .collect();
        Self {
            samples: samples.into(),
            sample_rate: self.sample_rate,
        }
    }

    /// The same recording played backwards.
    pub fn reversed(&self) -> Self {
        let samples: Vec<f64> = self.samples.iter().rev().copied().collect();
        Self {
            samples: samples.into(),
            sample_rate: self.sample_rate,
        }
    }
}

/// Reads a PCM WAV file (8/16/24/32-bit integer or 32-bit float, mono or
/// stereo) into a mono buffer. Stereo is downmixed by channel averaging.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioBuffer, AudioError> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|source| match source {
        hound::Error::Unsupported => AudioError::Unsupported {
            path: path.to_path_buf(),
            detail: "non-PCM codec".into(),
        },
        source => AudioError::Unreadable {
            path: path.to_path_buf(),
            source,
        },
    })?;
    decode(reader, path)
}

/// Decodes WAV bytes already held in memory; `label` names the source in errors.
pub fn decode_wav_bytes(bytes: &[u8], label: &str) -> Result<AudioBuffer, AudioError> {
    let path = Path::new(label);
    let reader = hound::WavReader::new(std::io::Cursor::new(bytes)).map_err(|source| {
        AudioError::Unreadable {
            path: path.to_path_buf(),
            source,
        }
    })?;
    decode(reader, path)
}

fn decode<R: std::io::Read>(
    mut reader: hound::WavReader<R>,
    path: &Path,
) -> Result<AudioBuffer, AudioError> {
    let spec = reader.spec();
    let unsupported = |detail: String| AudioError::Unsupported {
        path: path.to_path_buf(),
        detail,
    };
    let unreadable = |source| AudioError::Unreadable {
        path: path.to_path_buf(),
        source,
    };
    if !(1..=2).contains(&spec.channels) {
        return Err(unsupported(format!("{} channels", spec.channels)));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = (1u64 << (bits - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<Result<_, _>>()
                .map_err(unreadable)?
        }
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()
            .map_err(unreadable)?,
        (format, bits) => return Err(unsupported(format!("{format:?} {bits}-bit"))),
    };
    if interleaved.is_empty() {
        return Err(AudioError::Empty {
            path: path.to_path_buf(),
        });
    }
    let mono: Vec<f64> = if spec.channels == 2 {
        interleaved
            .chunks_exact(2)
            .map(|lr| 0.5 * (lr[0] + lr[1]))
            .collect()
    } else {
        interleaved
    };
    AudioBuffer::from_clipped(mono, spec.sample_rate)
}

/// Writes a 16-bit mono WAV file.
pub fn write_wav(path: impl AsRef<Path>, buf: &AudioBuffer) -> Result<(), hound::Error> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: buf.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in buf.samples() {
        writer.write_sample((s * 32768.0).round().clamp(-32768.0, 32767.0) as i16)?;
    }
    writer.finalize()
}

// Kaiser design for 80 dB stopband attenuation.
const STOPBAND_DB: f64 = 80.0;
// Passband ends at this fraction of the lower Nyquist frequency; the stopband
// starts exactly at it.
const PASSBAND_FRACTION: f64 = 0.9;
// Above this many phases the taps are evaluated on the fly.
const MAX_PHASE_TABLE: u64 = 4096;

/// Converts `buf` to `target_rate` with a Kaiser-windowed sinc interpolator.
///
/// The output length is `round(len * target / source)`, so the duration is
/// preserved to within half an output sample. Converting to the current rate
/// returns the buffer unchanged.
pub fn resample(buf: &AudioBuffer, target_rate: u32) -> Result<AudioBuffer, AudioError> {
    if target_rate == 0 {
        return Err(AudioError::ZeroRate);
    }
    let source_rate = buf.sample_rate();
    if target_rate == source_rate {
        return Ok(buf.clone());
    }
    let input = buf.samples();
    let out_len = ((input.len() as u128 * target_rate as u128 + source_rate as u128 / 2)
        / source_rate as u128) as usize;

    let nyquist = 0.5 * (target_rate as f64 / source_rate as f64).min(1.0);
    let transition = (1.0 - PASSBAND_FRACTION) * nyquist;
    let cutoff = nyquist - 0.5 * transition;
    let beta = 0.1102 * (STOPBAND_DB - 8.7);
    let half_width = ((STOPBAND_DB - 7.95) / (14.36 * transition) / 2.0).ceil();
    let kernel = Kernel {
        cutoff,
        beta,
        half_width,
        i0_beta: bessel_i0(beta),
    };

    let g = gcd(source_rate as u64, target_rate as u64);
    let phases = target_rate as u64 / g;
    let step = source_rate as u64 / g;
    let span = 2 * half_width as usize + 1;

    // Output sample m sits at input position (m * step) / phases.
    let table: Option<Vec<Vec<f64>>> = (phases <= MAX_PHASE_TABLE).then(|| {
        (0..phases)
            .map(|p| {
                let frac = p as f64 / phases as f64;
                (0..span)
                    .map(|j| kernel.eval(frac + half_width - j as f64))
                    .collect()
            })
            .collect()
    });

    let mut out = Vec::with_capacity(out_len);
    for m in 0..out_len as u64 {
        let pos = m * step;
        let base = (pos / phases) as i64;
        let phase = pos % phases;
        let first = base - half_width as i64;
        let mut acc = 0.0;
        match &table {
            Some(table) => {
                for (j, &h) in table[phase as usize].iter().enumerate() {
                    let k = first + j as i64;
                    if k >= 0 && (k as usize) < input.len() {
                        acc += input[k as usize] * h;
                    }
                }
            }
            None => {
                let frac = phase as f64 / phases as f64;
                for j in 0..span {
                    let k = first + j as i64;
                    if k >= 0 && (k as usize) < input.len() {
                        acc += input[k as usize] * kernel.eval(frac + half_width - j as f64);
                    }
                }
            }
        }
        out.push(acc);
    }
    AudioBuffer::from_clipped(out, target_rate)
}

struct Kernel {
    cutoff: f64,
    beta: f64,
    half_width: f64,
    i0_beta: f64,
}

impl Kernel {
    /// Windowed low-pass impulse response at offset `t` input samples.
    fn eval(&self, t: f64) -> f64 {
        let r = t / self.half_width;
        if r.abs() > 1.0 {
            return 0.0;
        }
        let window = bessel_i0(self.beta * (1.0 - r * r).sqrt()) / self.i0_beta;
        let x = 2.0 * self.cutoff * t;
        let sinc = if x.abs() < 1e-12 {
            1.0
        } else {
            (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x)
        };
        2.0 * self.cutoff * sinc * window
    }
}

fn bessel_i0(x: f64) -> f64 {
    let half = 0.5 * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}
