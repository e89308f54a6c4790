//! C interface to the fluency analysis pipeline.
//!
//! Objects cross the boundary as opaque handles that the caller releases with
//! the matching `_free` function. Every fallible call returns a
//! [`FluencyStatus`]; on failure a description is kept per thread and can be
//! copied out with [`fluency_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use fluency::audio::{self, AudioBuffer};
use fluency::clustering::{self, ClusterParams, ClusterResult};
use fluency::fbds::FbdsParams;
use fluency::features::{compute_features, FluencyFeatures, StimulusScript};
use fluency::ANALYSIS_RATE;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FluencyStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Audio = 3,
    Segmentation = 4,
    Features = 5,
    OutOfRange = 6,
    Panic = 7,
}

/// Decoded mono audio.
pub struct FluencyAudio {
    buffer: AudioBuffer,
}

/// Segmentation, clustering and predictors of one recording.
pub struct FluencyAnalysis {
    result: ClusterResult,
    features: FluencyFeatures,
}

/// Segmentation and clustering parameters.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluencyParams {
    pub frame_ms: f64,
    pub hop_ms: f64,
    pub threshold: f64,
    pub short_window_frames: u32,
    pub min_segment_ms: f64,
    pub merge_tolerance_ms: f64,
    pub silence_ratio_threshold: f64,
    pub syllable_valley_ratio: f64,
    pub break_min_ms: f64,
}

/// Predictors of one recording. Rates are per millisecond.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluencyFeaturesC {
    pub pseudo_syllable_rate: f64,
    pub sd_pseudo_syllable_ms: f64,
    pub speech_ratio: f64,
    pub silent_break_rate: f64,
    /// Meaningful only when `has_delta` is non-zero.
    pub syllable_count_delta: i64,
    pub has_delta: u8,
    pub n_pseudo_syllables: usize,
    pub n_silent_breaks: usize,
    pub duration_ms: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(message: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = message.into());
}

fn guard(f: impl FnOnce() -> Result<(), (FluencyStatus, String)>) -> FluencyStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            FluencyStatus::Ok
        }
        Ok(Err((status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            FluencyStatus::Panic
        }
    }
}

fn null(what: &str) -> (FluencyStatus, String) {
    (FluencyStatus::NullPointer, format!("{what} is null"))
}

impl FluencyParams {
    fn split(&self) -> (FbdsParams, ClusterParams) {
        (
            FbdsParams {
                frame_ms: self.frame_ms,
                hop_ms: self.hop_ms,
                threshold: self.threshold,
                short_window_frames: self.short_window_frames as usize,
                min_segment_ms: self.min_segment_ms,
                merge_tolerance_ms: self.merge_tolerance_ms,
            },
            ClusterParams {
                silence_ratio_threshold: self.silence_ratio_threshold,
                syllable_valley_ratio: self.syllable_valley_ratio,
                break_min_ms: self.break_min_ms,
                ..ClusterParams::default()
            },
        )
    }
}

impl Default for FluencyParams {
    fn default() -> Self {
        let f = FbdsParams::default();
        let c = ClusterParams::default();
        Self {
            frame_ms: f.frame_ms,
            hop_ms: f.hop_ms,
            threshold: f.threshold,
            short_window_frames: f.short_window_frames as u32,
            min_segment_ms: f.min_segment_ms,
            merge_tolerance_ms: f.merge_tolerance_ms,
            silence_ratio_threshold: c.silence_ratio_threshold,
            syllable_valley_ratio: c.syllable_valley_ratio,
            break_min_ms: c.break_min_ms,
        }
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fluency_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated and
/// NUL-terminated) and returns the full message length in bytes, excluding
/// the terminator. `buf` may be null to query the length.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn fluency_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Fills `out` with the default parameters.
///
/// # Safety
/// `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fluency_params_default(out: *mut FluencyParams) -> FluencyStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = FluencyParams::default();
        Ok(())
    })
}

/// Wraps `n` samples in `[-1, 1]` recorded at `sample_rate` Hz.
///
/// # Safety
/// `samples` must point to `n` readable doubles; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fluency_audio_from_samples(
    samples: *const f64,
    n: usize,
    sample_rate: u32,
    out: *mut *mut FluencyAudio,
) -> FluencyStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = ptr::null_mut();
        if samples.is_null() {
            return Err(null("samples"));
        }
        let data = std::slice::from_raw_parts(samples, n).to_vec();
        let buffer =
            AudioBuffer::new(data, sample_rate).map_err(|e| (FluencyStatus::InvalidArgument, e.to_string()))?;
        *out = Box::into_raw(Box::new(FluencyAudio { buffer }));
        Ok(())
    })
}

/// Loads a PCM WAV file, downmixing stereo to mono.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fluency_audio_load_wav(path: *const c_char, out: *mut *mut FluencyAudio) -> FluencyStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = ptr::null_mut();
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| (FluencyStatus::InvalidArgument, "path is not UTF-8".to_string()))?;
        let buffer = audio::load_wav(path).map_err(|e| (FluencyStatus::Audio, e.to_string()))?;
        *out = Box::into_raw(Box::new(FluencyAudio { buffer }));
        Ok(())
    })
}

/// Duration in milliseconds, or a negative value for a null handle.
///
/// # Safety
/// `audio` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fluency_audio_duration_ms(audio: *const FluencyAudio) -> f64 {
    audio.as_ref().map_or(-1.0, |a| a.buffer.duration_ms())
}

/// # Safety
/// `audio` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fluency_audio_free(audio: *mut FluencyAudio) {
    if !audio.is_null() {
        drop(Box::from_raw(audio));
    }
}

/// Resamples to the analysis rate, segments, clusters and computes the
/// predictors. `params` may be null for defaults; `expected_syllables` of 0
/// means the script is unknown and no delta is computed.
///
/// # Safety
/// `audio` must be a live handle, `params` null or valid, `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fluency_analyse(
    audio: *const FluencyAudio,
    params: *const FluencyParams,
    expected_syllables: u32,
    out: *mut *mut FluencyAnalysis,
) -> FluencyStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = ptr::null_mut();
        let audio = audio.as_ref().ok_or_else(|| null("audio"))?;
        let params = params.as_ref().copied().unwrap_or_default();
        let (fbds_params, cluster_params) = params.split();
        let buf = audio::resample(&audio.buffer, ANALYSIS_RATE).map_err(|e| (FluencyStatus::Audio, e.to_string()))?;
        let result = clustering::cluster(&buf, &fbds_params, &cluster_params)
            .map_err(|e| (FluencyStatus::Segmentation, e.to_string()))?;
        let script = match expected_syllables {
            0 => None,
            n => Some(StimulusScript::new("", n).map_err(|e| (FluencyStatus::InvalidArgument, e.to_string()))?),
        };
        let features =
            compute_features(&result, script.as_ref()).map_err(|e| (FluencyStatus::Features, e.to_string()))?;
        *out = Box::into_raw(Box::new(FluencyAnalysis { result, features }));
        Ok(())
    })
}

/// # Safety
/// `analysis` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fluency_analysis_features(
    analysis: *const FluencyAnalysis,
    out: *mut FluencyFeaturesC,
) -> FluencyStatus {
    guard(|| {
        let a = analysis.as_ref().ok_or_else(|| null("analysis"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let f = &a.features;
        *out = FluencyFeaturesC {
            pseudo_syllable_rate: f.pseudo_syllable_rate,
            sd_pseudo_syllable_ms: f.sd_pseudo_syllable_ms,
            speech_ratio: f.speech_ratio,
            silent_break_rate: f.silent_break_rate,
            syllable_count_delta: f.syllable_count_delta.unwrap_or(0),
            has_delta: f.syllable_count_delta.is_some() as u8,
            n_pseudo_syllables: f.n_pseudo_syllables,
            n_silent_breaks: f.n_silent_breaks,
            duration_ms: f.duration_ms,
        };
        Ok(())
    })
}

/// Number of segments found by the segmentation.
///
/// # Safety
/// `analysis` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fluency_analysis_segment_count(analysis: *const FluencyAnalysis) -> usize {
    analysis.as_ref().map_or(0, |a| a.result.segments.len())
}

/// Interval of segment `index` and whether it was labeled speech.
///
/// # Safety
/// `analysis` must be a live handle; the output pointers valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fluency_analysis_segment(
    analysis: *const FluencyAnalysis,
    index: usize,
    start_ms: *mut f64,
    end_ms: *mut f64,
    is_speech: *mut u8,
) -> FluencyStatus {
    guard(|| {
        let a = analysis.as_ref().ok_or_else(|| null("analysis"))?;
        let s = a
            .result
            .segments
            .get(index)
            .ok_or_else(|| (FluencyStatus::OutOfRange, format!("segment {index} out of range")))?;
        let (start, end, speech) = (
            start_ms.as_mut().ok_or_else(|| null("start_ms"))?,
            end_ms.as_mut().ok_or_else(|| null("end_ms"))?,
            is_speech.as_mut().ok_or_else(|| null("is_speech"))?,
        );
        *start = s.segment.start_ms;
        *end = s.segment.end_ms;
        *speech = (s.kind == clustering::SegmentKind::Speech) as u8;
        Ok(())
    })
}

/// # Safety
/// `analysis` must be a live handle; the output pointers valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fluency_analysis_pseudo_syllable(
    analysis: *const FluencyAnalysis,
    index: usize,
    start_ms: *mut f64,
    end_ms: *mut f64,
) -> FluencyStatus {
    guard(|| {
        let a = analysis.as_ref().ok_or_else(|| null("analysis"))?;
        let p = a
            .result
            .pseudo_syllables
            .get(index)
            .ok_or_else(|| (FluencyStatus::OutOfRange, format!("pseudo-syllable {index} out of range")))?;
        *start_ms.as_mut().ok_or_else(|| null("start_ms"))? = p.start_ms;
        *end_ms.as_mut().ok_or_else(|| null("end_ms"))? = p.end_ms;
        Ok(())
    })
}

/// # Safety
/// `analysis` must be a live handle; the output pointers valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fluency_analysis_silent_break(
    analysis: *const FluencyAnalysis,
    index: usize,
    start_ms: *mut f64,
    end_ms: *mut f64,
) -> FluencyStatus {
    guard(|| {
        let a = analysis.as_ref().ok_or_else(|| null("analysis"))?;
        let b = a
            .result
            .silent_breaks
            .get(index)
            .ok_or_else(|| (FluencyStatus::OutOfRange, format!("silent break {index} out of range")))?;
        *start_ms.as_mut().ok_or_else(|| null("start_ms"))? = b.start_ms;
        *end_ms.as_mut().ok_or_else(|| null("end_ms"))? = b.end_ms;
        Ok(())
    })
}

/// # Safety
/// `analysis` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fluency_analysis_free(analysis: *mut FluencyAnalysis) {
    if !analysis.is_null() {
        drop(Box::from_raw(analysis));
    }
}
