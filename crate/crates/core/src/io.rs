//! CSV and JSON files exchanged between commands.

use std::collections::BTreeSet;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{ClusterResult, LabeledSegment, PseudoSyllable, SegmentKind, SilentBreak};
use crate::features::FluencyFeatures;
use crate::models::{Group, Prediction};
use crate::stats::RatingRecord;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}, row {row}: {message}")]
    Invalid { path: PathBuf, row: usize, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> IoError + '_ {
    move |source| IoError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn create_parent(path: &Path) -> Result<(), IoError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(io_err(dir)),
        _ => Ok(()),
    }
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, IoError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err(path))?;
    reader
        .deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(csv_err(path))
}

fn write_rows<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<(), IoError> {
    create_parent(path)?;
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(csv_err(path))?;
    writer.write_record(header).map_err(csv_err(path))?;
    for row in rows {
        writer.serialize(row).map_err(csv_err(path))?;
    }
    writer.flush().map_err(io_err(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    create_parent(path)?;
    let mut text = serde_json::to_string_pretty(value).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// One recording to analyse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub stimulus_id: String,
    pub speaker_id: String,
    pub group: Option<Group>,
    pub sentence_id: Option<String>,
    pub expected_syllables: Option<u32>,
    pub wav_path: PathBuf,
}

pub const MANIFEST_HEADER: [&str; 6] = [
    "stimulus_id",
    "speaker_id",
    "group",
    "sentence_id",
    "expected_syllables",
    "wav_path",
];

/// Reads a manifest; relative WAV paths resolve against the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>, IoError> {
    let mut rows: Vec<ManifestRow> = read_rows(path)?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut seen = BTreeSet::new();
    for (i, r) in rows.iter_mut().enumerate() {
        let invalid = |message: String| IoError::Invalid {
            path: path.to_path_buf(),
            row: i + 1,
            message,
        };
        if r.stimulus_id.is_empty() || r.speaker_id.is_empty() {
            return Err(invalid("stimulus_id and speaker_id are required".into()));
        }
        if !seen.insert(r.stimulus_id.clone()) {
            return Err(invalid(format!("duplicate stimulus_id {}", r.stimulus_id)));
        }
        if r.expected_syllables == Some(0) {
            return Err(invalid("expected_syllables must be positive or empty".into()));
        }
        if r.wav_path.is_relative() {
            r.wav_path = base.join(&r.wav_path);
        }
    }
    Ok(rows)
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<(), IoError> {
    write_rows(path, &MANIFEST_HEADER, rows)
}

/// Predictors of one recording.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub stimulus_id: String,
    pub speaker_id: String,
    pub features: FluencyFeatures,
}

#[derive(Debug, Serialize, Deserialize)]
struct FeatureRecord {
    stimulus_id: String,
    speaker_id: String,
    duration_ms: f64,
    n_pseudo_syllables: usize,
    n_silent_breaks: usize,
    pseudo_syllable_rate_per_ms: f64,
    sd_pseudo_syllable_ms: f64,
    speech_ratio: f64,
    silent_break_rate_per_ms: f64,
    #[serde(default)]
    syllable_count_delta: Option<i64>,
}

pub const FEATURE_HEADER: [&str; 10] = [
    "stimulus_id",
    "speaker_id",
    "duration_ms",
    "n_pseudo_syllables",
    "n_silent_breaks",
    "pseudo_syllable_rate_per_ms",
    "sd_pseudo_syllable_ms",
    "speech_ratio",
    "silent_break_rate_per_ms",
    "syllable_count_delta",
];

/// Writes the features table. The delta column is written only when every
/// row has one.
pub fn write_features(path: &Path, rows: &[FeatureRow]) -> Result<(), IoError> {
    let with_delta = !rows.is_empty() && rows.iter().all(|r| r.features.syllable_count_delta.is_some());
    let header = if with_delta { &FEATURE_HEADER[..] } else { &FEATURE_HEADER[..9] };
    create_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for r in rows {
        let f = &r.features;
        let mut record = vec![
            r.stimulus_id.clone(),
            r.speaker_id.clone(),
            f.duration_ms.to_string(),
            f.n_pseudo_syllables.to_string(),
            f.n_silent_breaks.to_string(),
            f.pseudo_syllable_rate.to_string(),
            f.sd_pseudo_syllable_ms.to_string(),
            f.speech_ratio.to_string(),
            f.silent_break_rate.to_string(),
        ];
        if with_delta {
            record.push(f.syllable_count_delta.map_or_else(String::new, |d| d.to_string()));
        }
        w.write_record(&record).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_features(path: &Path) -> Result<Vec<FeatureRow>, IoError> {
    let records: Vec<FeatureRecord> = read_rows(path)?;
    Ok(records
        .into_iter()
        .map(|r| FeatureRow {
            stimulus_id: r.stimulus_id,
            speaker_id: r.speaker_id,
            features: FluencyFeatures {
                pseudo_syllable_rate: r.pseudo_syllable_rate_per_ms,
                sd_pseudo_syllable_ms: r.sd_pseudo_syllable_ms,
                speech_ratio: r.speech_ratio,
                silent_break_rate: r.silent_break_rate_per_ms,
                syllable_count_delta: r.syllable_count_delta,
                n_pseudo_syllables: r.n_pseudo_syllables,
                n_silent_breaks: r.n_silent_breaks,
                duration_ms: r.duration_ms,
            },
        })
        .collect())
}

/// Full segmentation of one recording, as exported per stimulus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationExport {
    pub stimulus_id: String,
    pub duration_ms: f64,
    pub segments: Vec<LabeledSegment>,
    pub pseudo_syllables: Vec<PseudoSyllable>,
    pub silent_breaks: Vec<SilentBreak>,
}

impl SegmentationExport {
    pub fn new(stimulus_id: &str, result: &ClusterResult) -> Self {
        Self {
            stimulus_id: stimulus_id.to_string(),
            duration_ms: result.total_duration_ms,
            segments: result.segments.clone(),
            pseudo_syllables: result.pseudo_syllables.clone(),
            silent_breaks: result.silent_breaks.clone(),
        }
    }
}

#[derive(Debug, Serialize)]
struct SegmentRecord {
    start_ms: f64,
    end_ms: f64,
    max_energy: f64,
    kind: SegmentKind,
    /// Index of the enclosing pseudo-syllable or silent break.
    unit: Option<usize>,
}

/// One row per segment: its interval, peak log-energy, label and the index of
/// the pseudo-syllable (speech) or silent break (silence) containing it.
pub fn write_segments_csv(path: &Path, export: &SegmentationExport) -> Result<(), IoError> {
    let rows: Vec<SegmentRecord> = export
        .segments
        .iter()
        .map(|s| {
            let (start, end) = (s.segment.start_ms, s.segment.end_ms);
            let within = |a: f64, b: f64| a <= start && end <= b;
            let unit = match s.kind {
                SegmentKind::Speech => export.pseudo_syllables.iter().position(|p| within(p.start_ms, p.end_ms)),
                SegmentKind::Silent => export.silent_breaks.iter().position(|b| within(b.start_ms, b.end_ms)),
            };
            SegmentRecord {
                start_ms: start,
                end_ms: end,
                max_energy: s.segment.max_energy,
                kind: s.kind,
                unit,
            }
        })
        .collect();
    write_rows(path, &["start_ms", "end_ms", "max_energy", "kind", "unit"], &rows)
}

/// Per-stimulus line of the combined segmentation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationSummary {
    pub stimulus_id: String,
    pub speaker_id: String,
    pub duration_ms: f64,
    pub n_segments: usize,
    pub n_speech_segments: usize,
    pub n_pseudo_syllables: usize,
    pub n_silent_breaks: usize,
}

pub const SUMMARY_HEADER: [&str; 7] = [
    "stimulus_id",
    "speaker_id",
    "duration_ms",
    "n_segments",
    "n_speech_segments",
    "n_pseudo_syllables",
    "n_silent_breaks",
];

pub fn write_summaries(path: &Path, rows: &[SegmentationSummary]) -> Result<(), IoError> {
    write_rows(path, &SUMMARY_HEADER, rows)
}

pub fn read_summaries(path: &Path) -> Result<Vec<SegmentationSummary>, IoError> {
    read_rows(path)
}

pub const PREDICTION_HEADER: [&str; 5] = ["stimulus_id", "speaker_id", "reference", "prediction", "fold_speaker"];

pub fn write_predictions(path: &Path, rows: &[Prediction]) -> Result<(), IoError> {
    write_rows(path, &PREDICTION_HEADER, rows)
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>, IoError> {
    read_rows(path)
}

pub const RATING_HEADER: [&str; 5] = ["rater_id", "stimulus_id", "pass", "rating", "timestamp_iso8601"];

pub fn read_ratings(path: &Path) -> Result<Vec<RatingRecord>, IoError> {
    read_rows(path)
}

pub fn write_ratings(path: &Path, rows: &[RatingRecord]) -> Result<(), IoError> {
    write_rows(path, &RATING_HEADER, rows)
}

/// Renders ratings as CSV text with a header.
pub fn ratings_to_csv(rows: &[RatingRecord]) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(RATING_HEADER).expect("in-memory write");
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory write")).expect("ratings are UTF-8")
}

/// Append-only ratings file. Each record is flushed and synced before
/// [`RatingLog::append`] returns.
#[derive(Debug)]
pub struct RatingLog {
    path: PathBuf,
    file: File,
}

impl RatingLog {
    /// Opens `path` for appending, writing the header to a new or empty file,
    /// and returns the records already present.
    pub fn open(path: &Path) -> Result<(Self, Vec<RatingRecord>), IoError> {
        create_parent(path)?;
        let existing = match fs::metadata(path) {
            Ok(m) if m.len() > 0 => read_ratings(path)?,
            _ => Vec::new(),
        };
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        if file.metadata().map_err(io_err(path))?.len() == 0 {
            file.write_all(format!("{}\n", RATING_HEADER.join(",")).as_bytes())
                .map_err(io_err(path))?;
        }
        Ok((
            Self {
                path: path.to_path_buf(),
                file,
            },
            existing,
        ))
    }

    pub fn append(&mut self, record: &RatingRecord) -> Result<(), IoError> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.serialize(record).map_err(csv_err(&self.path))?;
        let line = w.into_inner().map_err(|e| IoError::Io {
            path: self.path.clone(),
            source: e.into_error(),
        })?;
        self.file.write_all(&line).map_err(io_err(&self.path))?;
        self.file.sync_data().map_err(io_err(&self.path))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}
