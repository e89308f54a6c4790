#ifndef FLUENCY_H
#define FLUENCY_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FluencyStatus {
  FLUENCY_STATUS_OK = 0,
  FLUENCY_STATUS_NULL_POINTER = 1,
  FLUENCY_STATUS_INVALID_ARGUMENT = 2,
  FLUENCY_STATUS_AUDIO = 3,
  FLUENCY_STATUS_SEGMENTATION = 4,
  FLUENCY_STATUS_FEATURES = 5,
  FLUENCY_STATUS_OUT_OF_RANGE = 6,
  FLUENCY_STATUS_PANIC = 7,
} FluencyStatus;

// Segmentation, clustering and predictors of one recording.
typedef struct FluencyAnalysis FluencyAnalysis;

// Decoded mono audio.
typedef struct FluencyAudio FluencyAudio;

// Segmentation and clustering parameters.
typedef struct FluencyParams {
  double frame_ms;
  double hop_ms;
  double threshold;
  uint32_t short_window_frames;
  double min_segment_ms;
  double merge_tolerance_ms;
  double silence_ratio_threshold;
  double syllable_valley_ratio;
  double break_min_ms;
} FluencyParams;

// Predictors of one recording. Rates are per millisecond.
typedef struct FluencyFeaturesC {
  double pseudo_syllable_rate;
  double sd_pseudo_syllable_ms;
  double speech_ratio;
  double silent_break_rate;
  // Meaningful only when `has_delta` is non-zero.
  int64_t syllable_count_delta;
  uint8_t has_delta;
  size_t n_pseudo_syllables;
  size_t n_silent_breaks;
  double duration_ms;
} FluencyFeaturesC;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *fluency_version(void);

// Copies the calling thread's last error message into `buf` (truncated and
// NUL-terminated) and returns the full message length in bytes, excluding
// the terminator. `buf` may be null to query the length.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t fluency_last_error(char *buf, size_t len);

// Fills `out` with the default parameters.
//
// # Safety
// `out` must be null or valid for writes.
enum FluencyStatus fluency_params_default(struct FluencyParams *out);

// Wraps `n` samples in `[-1, 1]` recorded at `sample_rate` Hz.
//
// # Safety
// `samples` must point to `n` readable doubles; `out` must be valid for writes.
enum FluencyStatus fluency_audio_from_samples(const double *samples,
                                              size_t n,
                                              uint32_t sample_rate,
                                              struct FluencyAudio **out);

// Loads a PCM WAV file, downmixing stereo to mono.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be valid for writes.
enum FluencyStatus fluency_audio_load_wav(const char *path, struct FluencyAudio **out);

// Duration in milliseconds, or a negative value for a null handle.
//
// # Safety
// `audio` must be null or a live handle.
double fluency_audio_duration_ms(const struct FluencyAudio *audio);

// # Safety
// `audio` must be null or a handle not yet freed.
void fluency_audio_free(struct FluencyAudio *audio);

// Resamples to the analysis rate, segments, clusters and computes the
// predictors. `params` may be null for defaults; `expected_syllables` of 0
// means the script is unknown and no delta is computed.
//
// # Safety
// `audio` must be a live handle, `params` null or valid, `out` valid for writes.
enum FluencyStatus fluency_analyse(const struct FluencyAudio *audio,
                                   const struct FluencyParams *params,
                                   uint32_t expected_syllables,
                                   struct FluencyAnalysis **out);

// # Safety
// `analysis` must be a live handle and `out` valid for writes.
enum FluencyStatus fluency_analysis_features(const struct FluencyAnalysis *analysis,
                                             struct FluencyFeaturesC *out);

// Number of segments found by the segmentation.
//
// # Safety
// `analysis` must be null or a live handle.
size_t fluency_analysis_segment_count(const struct FluencyAnalysis *analysis);

// Interval of segment `index` and whether it was labeled speech.
//
// # Safety
// `analysis` must be a live handle; the output pointers valid for writes.
enum FluencyStatus fluency_analysis_segment(const struct FluencyAnalysis *analysis,
                                            size_t index,
                                            double *start_ms,
                                            double *end_ms,
                                            uint8_t *is_speech);

// # Safety
// `analysis` must be a live handle; the output pointers valid for writes.
enum FluencyStatus fluency_analysis_pseudo_syllable(const struct FluencyAnalysis *analysis,
                                                    size_t index,
                                                    double *start_ms,
                                                    double *end_ms);

// # Safety
// `analysis` must be a live handle; the output pointers valid for writes.
enum FluencyStatus fluency_analysis_silent_break(const struct FluencyAnalysis *analysis,
                                                 size_t index,
                                                 double *start_ms,
                                                 double *end_ms);

// # Safety
// `analysis` must be null or a handle not yet freed.
void fluency_analysis_free(struct FluencyAnalysis *analysis);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FLUENCY_H */
