//! Batch commands: segmentation, feature extraction, evaluation and the
//! summary report.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use log::{error, info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::audio::{self, AudioError};
use crate::clustering::{self, ClusterError, ClusterResult, SegmentKind};
use crate::config::{hex, ConfigError, RunConfig};
use crate::features::{self, compute_features, FeatureError, PredictorSign, StimulusScript};
use crate::io::{self, FeatureRow, IoError, ManifestRow, SegmentationExport, SegmentationSummary};
use crate::models::{
    delta_comparison, fit_mlr_full, loso_evaluate, loso_evaluate_nested, Dataset, DatasetRow, DeltaComparison,
    EvaluationReport, Family, Group, MlrFullFit, ModelError, ModelGrid,
};
use crate::plot::scatter_svg;
use crate::stats::reliability::ReliabilityError;
use crate::stats::{self, build_reference_ratings, PassPolicy, RankTest, ReliabilityReport};
use crate::ANALYSIS_RATE;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ratings(#[from] ReliabilityError),
    #[error("no {0} given (set it in the config io block or on the command line)")]
    MissingInput(&'static str),
    #[error("features and ratings do not join on stimulus_id: {}", describe_join(.unrated, .unfeatured))]
    Join {
        unrated: Vec<String>,
        unfeatured: Vec<String>,
    },
    #[error("--with-delta needs a syllable_count_delta for every stimulus")]
    DeltaUnavailable,
}

fn describe_join(unrated: &[String], unfeatured: &[String]) -> String {
    let mut parts = Vec::new();
    if !unrated.is_empty() {
        parts.push(format!("without ratings: {}", unrated.join(", ")));
    }
    if !unfeatured.is_empty() {
        parts.push(format!("without features: {}", unfeatured.join(", ")));
    }
    parts.join("; ")
}

/// Why one recording could not be processed.
#[derive(Debug, Error)]
pub enum StimulusError {
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Clustering(#[from] ClusterError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub stimulus_id: String,
    pub error: String,
}

/// Result of a command that processes manifest rows independently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchOutcome {
    pub processed: usize,
    pub failures: Vec<Failure>,
}

impl BatchOutcome {
    pub fn success(&self) -> bool {
        self.failures.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to rerun a command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub config: RunConfig,
    pub with_delta: bool,
    /// Grids searched by nested tuning, or the fixed model's single point.
    pub grid: Option<ModelGrid>,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<PathBuf>,
}

fn digest(path: &Path) -> Result<InputDigest, IoError> {
    let bytes = fs::read(path).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(InputDigest {
        path: path.to_path_buf(),
        sha256: hex(&Sha256::digest(bytes)),
    })
}

fn write_run_manifest(
    out_dir: &Path,
    command: &str,
    cfg: &RunConfig,
    with_delta: bool,
    grid: Option<ModelGrid>,
    inputs: &[&Path],
    outputs: Vec<PathBuf>,
) -> Result<(), IoError> {
    let manifest = RunManifest {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: cfg.hash(),
        config: cfg.clone(),
        with_delta,
        grid,
        inputs: inputs.iter().map(|p| digest(p)).collect::<Result<_, _>>()?,
        outputs,
    };
    io::write_json(&out_dir.join(format!("run_manifest_{command}.json")), &manifest)
}

/// Loads, resamples, segments and clusters one recording.
pub fn analyse_file(path: &Path, cfg: &RunConfig) -> Result<ClusterResult, StimulusError> {
    let buf = audio::load_wav(path)?;
    let buf = audio::resample(&buf, ANALYSIS_RATE)?;
    Ok(clustering::cluster(&buf, &cfg.fbds, &cfg.clustering)?)
}

/// File-name-safe form of a stimulus id.
fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

fn manifest_path(cfg: &RunConfig) -> Result<&Path, PipelineError> {
    cfg.io.manifest.as_deref().ok_or(PipelineError::MissingInput("manifest"))
}

fn run_batch<T: Send>(
    rows: &[ManifestRow],
    work: impl Fn(&ManifestRow) -> Result<T, StimulusError> + Sync + Send,
) -> (Vec<T>, Vec<Failure>) {
    let results: Vec<Result<T, StimulusError>> = rows.par_iter().map(work).collect();
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for (row, res) in rows.iter().zip(results) {
        match res {
            Ok(v) => ok.push(v),
            Err(e) => {
                error!("{}: {e}", row.stimulus_id);
                failures.push(Failure {
                    stimulus_id: row.stimulus_id.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    (ok, failures)
}

/// Segments and clusters every manifest row. Writes
/// `segments/<id>.json` and `segments/<id>.csv` per stimulus plus the combined
/// `segments.csv`. A failing row is logged and skipped.
pub fn cmd_segment(cfg: &RunConfig, out_dir: &Path) -> Result<BatchOutcome, PipelineError> {
    let manifest = manifest_path(cfg)?;
    let rows = io::read_manifest(manifest)?;
    info!("segmenting {} recordings", rows.len());
    let per_stimulus = out_dir.join("segments");
    let (done, failures) = run_batch(&rows, |row| {
        let result = analyse_file(&row.wav_path, cfg)?;
        let export = SegmentationExport::new(&row.stimulus_id, &result);
        let stem = file_stem(&row.stimulus_id);
        io::write_json(&per_stimulus.join(format!("{stem}.json")), &export)?;
        io::write_segments_csv(&per_stimulus.join(format!("{stem}.csv")), &export)?;
        Ok(SegmentationSummary {
            stimulus_id: row.stimulus_id.clone(),
            speaker_id: row.speaker_id.clone(),
            duration_ms: result.total_duration_ms,
            n_segments: result.segments.len(),
            n_speech_segments: result.segments.iter().filter(|s| s.kind == SegmentKind::Speech).count(),
            n_pseudo_syllables: result.pseudo_syllables.len(),
            n_silent_breaks: result.silent_breaks.len(),
        })
    });
    let combined = out_dir.join("segments.csv");
    let summaries = done;
    io::write_summaries(&combined, &summaries)?;
    write_run_manifest(out_dir, "segment", cfg, false, None, &[manifest], vec![combined, per_stimulus])?;
    Ok(BatchOutcome {
        processed: summaries.len(),
        failures,
    })
}

/// Computes the predictors of every manifest row into `features.csv`. The
/// delta column is present only when every row has an expected syllable
/// count.
pub fn cmd_features(cfg: &RunConfig, out_dir: &Path) -> Result<BatchOutcome, PipelineError> {
    let manifest = manifest_path(cfg)?;
    let rows = io::read_manifest(manifest)?;
    info!("extracting features from {} recordings", rows.len());
    let all_scripted = rows.iter().all(|r| r.expected_syllables.is_some());
    if !all_scripted {
        warn!("some rows lack expected_syllables; the delta column is omitted");
    }
    let (done, failures) = run_batch(&rows, |row| {
        let result = analyse_file(&row.wav_path, cfg)?;
        let script = match row.expected_syllables {
            Some(n) if all_scripted => Some(StimulusScript::new(
                row.sentence_id.clone().unwrap_or_default(),
                n,
            )?),
            _ => None,
        };
        Ok(FeatureRow {
            stimulus_id: row.stimulus_id.clone(),
            speaker_id: row.speaker_id.clone(),
            features: compute_features(&result, script.as_ref())?,
        })
    });
    let path = out_dir.join("features.csv");
    let features = done;
    io::write_features(&path, &features)?;
    write_run_manifest(out_dir, "features", cfg, false, None, &[manifest], vec![path])?;
    Ok(BatchOutcome {
        processed: features.len(),
        failures,
    })
}

/// Features joined with reference ratings, plus the rater reliability
/// analysis the references came from.
pub struct JoinedData {
    pub dataset: Dataset,
    pub reliability: ReliabilityReport,
    pub inputs: Vec<PathBuf>,
}

/// Reads features and ratings (and the manifest for groups, when configured)
/// and joins them on stimulus_id. Any stimulus present on one side only is
/// fatal.
pub fn load_joined(cfg: &RunConfig) -> Result<JoinedData, PipelineError> {
    let features_path = cfg.io.features.as_deref().ok_or(PipelineError::MissingInput("features CSV"))?;
    let ratings_path = cfg.io.ratings.as_deref().ok_or(PipelineError::MissingInput("ratings CSV"))?;
    let features = io::read_features(features_path)?;
    let records = io::read_ratings(ratings_path)?;
    let policy = if cfg.model.allow_single_pass {
        PassPolicy::AllowSinglePass
    } else {
        PassPolicy::RequireBoth
    };
    let reliability = build_reference_ratings(&records, policy)?;
    let mut inputs = vec![features_path.to_path_buf(), ratings_path.to_path_buf()];
    let groups: BTreeMap<String, Group> = match &cfg.io.manifest {
        Some(m) => {
            inputs.push(m.clone());
            io::read_manifest(m)?
                .into_iter()
                .filter_map(|r| r.group.map(|g| (r.stimulus_id, g)))
                .collect()
        }
        None => BTreeMap::new(),
    };

    let references: BTreeMap<&str, f64> =
        reliability.references.iter().map(|r| (r.stimulus_id.as_str(), r.value)).collect();
    let featured: BTreeSet<&str> = features.iter().map(|f| f.stimulus_id.as_str()).collect();
    let unrated: Vec<String> = featured.iter().filter(|s| !references.contains_key(*s)).map(|s| s.to_string()).collect();
    let unfeatured: Vec<String> = references.keys().filter(|s| !featured.contains(*s)).map(|s| s.to_string()).collect();
    if !unrated.is_empty() || !unfeatured.is_empty() {
        return Err(PipelineError::Join { unrated, unfeatured });
    }
    let rows = features
        .iter()
        .map(|f| DatasetRow {
            stimulus_id: f.stimulus_id.clone(),
            speaker_id: f.speaker_id.clone(),
            group: groups.get(&f.stimulus_id).copied(),
            features: f.features.clone(),
            reference: references[f.stimulus_id.as_str()],
        })
        .collect();
    Ok(JoinedData {
        dataset: Dataset::new(rows)?,
        reliability,
        inputs,
    })
}

/// Contents of `report.json` written by `evaluate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateReport {
    pub family: Family,
    pub with_delta: bool,
    pub seed: u64,
    pub config_hash: String,
    pub n_stimuli: usize,
    pub n_speakers: usize,
    pub evaluation: EvaluationReport,
    /// Whole-corpus stepwise fit with standardized coefficients (MLR only).
    pub full_fit: Option<MlrFullFit>,
    /// R² change from adding the delta predictor (MLR with delta only).
    pub delta: Option<DeltaComparison>,
}

/// Runs LOSO for the configured model family.
pub fn evaluate_dataset(data: &Dataset, cfg: &RunConfig, with_delta: bool) -> Result<EvaluationReport, ModelError> {
    let m = &cfg.model;
    if m.nested && m.family != Family::Mlr {
        loso_evaluate_nested(data, &m.grid(), with_delta)
    } else {
        loso_evaluate(data, &m.fixed_spec(), with_delta)
    }
}

/// Joins features with reference ratings, runs LOSO and writes `report.json`,
/// `predictions.csv`, the two scatter plots and the run manifest.
pub fn cmd_evaluate(cfg: &RunConfig, with_delta: bool, out_dir: &Path) -> Result<EvaluateReport, PipelineError> {
    let joined = load_joined(cfg)?;
    let data = &joined.dataset;
    if with_delta && !data.has_delta() {
        return Err(PipelineError::DeltaUnavailable);
    }
    info!(
        "evaluating {} on {} stimuli from {} speakers",
        cfg.model.family,
        data.rows().len(),
        data.speakers().len()
    );
    let evaluation = evaluate_dataset(data, cfg, with_delta)?;
    let (full_fit, delta) = if cfg.model.family == Family::Mlr {
        let full = fit_mlr_full(data, with_delta, cfg.model.alpha)?;
        let delta = if with_delta { delta_comparison(data, cfg.model.alpha).ok() } else { None };
        (Some(full), delta)
    } else {
        (None, None)
    };
    let report = EvaluateReport {
        family: cfg.model.family,
        with_delta,
        seed: cfg.model.seed,
        config_hash: cfg.hash(),
        n_stimuli: data.rows().len(),
        n_speakers: data.speakers().len(),
        evaluation,
        full_fit,
        delta,
    };

    let report_path = out_dir.join("report.json");
    let predictions_path = out_dir.join("predictions.csv");
    let sentence_svg = out_dir.join("scatter_sentence.svg");
    let participant_svg = out_dir.join("scatter_participant.svg");
    io::write_json(&report_path, &report)?;
    io::write_predictions(&predictions_path, &report.evaluation.predictions)?;
    let sentence: Vec<(f64, f64)> = report.evaluation.predictions.iter().map(|p| (p.reference, p.prediction)).collect();
    let participant: Vec<(f64, f64)> =
        report.evaluation.participant.pairs.iter().map(|p| (p.reference, p.prediction)).collect();
    let family = cfg.model.family.to_string().to_uppercase();
    write_text(
        &sentence_svg,
        &scatter_svg(&sentence, &format!("{family}: sentence level"), "reference rating", "predicted rating"),
    )?;
    write_text(
        &participant_svg,
        &scatter_svg(&participant, &format!("{family}: participant level"), "reference rating", "predicted rating"),
    )?;
    let grid = if cfg.model.nested && cfg.model.family != Family::Mlr {
        cfg.model.grid()
    } else {
        ModelGrid::from_spec(&cfg.model.fixed_spec())
    };
    let inputs: Vec<&Path> = joined.inputs.iter().map(PathBuf::as_path).collect();
    write_run_manifest(
        out_dir,
        "evaluate",
        cfg,
        with_delta,
        Some(grid),
        &inputs,
        vec![report_path, predictions_path, sentence_svg, participant_svg],
    )?;
    Ok(report)
}

fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| IoError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub family: Family,
    pub average_rmse: f64,
    pub sd_rmse: f64,
    pub sentence_r: Option<f64>,
    pub participant_r: Option<f64>,
}

/// Contents of `summary.json` written by `report`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub config_hash: String,
    pub reliability: ReliabilityReport,
    /// Spearman correlation of each predictor with the reference ratings.
    pub predictor_signs: Option<Vec<PredictorSign>>,
    /// Reference ratings of people with aphasia against controls.
    pub group_test: Option<RankTest>,
    pub models: Vec<ModelSummary>,
    /// Friedman test across model families on per-speaker RMSE.
    pub model_comparison: Option<RankTest>,
    pub full_fit: MlrFullFit,
    pub delta: Option<DeltaComparison>,
}

/// Reliability, predictor correlations, group difference and a comparison of
/// the three model families on the joined data. Writes `summary.json` and
/// returns it with a plain-text rendering.
pub fn cmd_report(cfg: &RunConfig, out_dir: &Path) -> Result<(SummaryReport, String), PipelineError> {
    let joined = load_joined(cfg)?;
    let data = &joined.dataset;
    let feats: Vec<_> = data.rows().iter().map(|r| r.features.clone()).collect();
    let refs: Vec<f64> = data.rows().iter().map(|r| r.reference).collect();
    let predictor_signs = features::expected_sign_check(&feats, &refs).ok();

    let by_group = |g: Group| -> Vec<f64> {
        data.rows().iter().filter(|r| r.group == Some(g)).map(|r| r.reference).collect()
    };
    let (pwa, control) = (by_group(Group::Pwa), by_group(Group::Control));
    let group_test = if !pwa.is_empty() && !control.is_empty() {
        stats::kruskal_wallis(&[pwa, control]).ok()
    } else {
        None
    };

    let mut models = Vec::new();
    let mut per_speaker: Vec<Vec<f64>> = Vec::new();
    for family in [Family::Mlr, Family::Svr, Family::Rfr] {
        let mut c = cfg.clone();
        c.model.family = family;
        let ev = evaluate_dataset(data, &c, false)?;
        per_speaker.push(ev.per_speaker.iter().map(|s| s.rmse).collect());
        models.push(ModelSummary {
            family,
            average_rmse: ev.average_rmse,
            sd_rmse: ev.sd_rmse,
            sentence_r: ev.sentence_r,
            participant_r: ev.participant.r,
        });
    }
    let subjects: Vec<Vec<f64>> = (0..per_speaker[0].len())
        .map(|i| per_speaker.iter().map(|m| m[i]).collect())
        .collect();
    let model_comparison = stats::friedman(&subjects).ok();
    let full_fit = fit_mlr_full(data, false, cfg.model.alpha)?;
    let delta = if data.has_delta() { delta_comparison(data, cfg.model.alpha).ok() } else { None };

    let summary = SummaryReport {
        config_hash: cfg.hash(),
        reliability: joined.reliability,
        predictor_signs,
        group_test,
        models,
        model_comparison,
        full_fit,
        delta,
    };
    let path = out_dir.join("summary.json");
    io::write_json(&path, &summary)?;
    let inputs: Vec<&Path> = joined.inputs.iter().map(PathBuf::as_path).collect();
    write_run_manifest(out_dir, "report", cfg, data.has_delta(), Some(cfg.model.grid()), &inputs, vec![path])?;
    let text = render_summary(&summary);
    Ok((summary, text))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"))
}

pub fn render_summary(s: &SummaryReport) -> String {
    let mut out = String::new();
    out.push_str("Rater reliability\n");
    for r in &s.reliability.intra_rater {
        out.push_str(&format!(
            "  {:<12} rho {}  alpha {}  (n = {})\n",
            r.rater_id,
            opt(r.rho.as_ref().map(|t| t.coefficient)),
            opt(r.alpha),
            r.n_stimuli
        ));
    }
    for r in &s.reliability.inter_rater {
        out.push_str(&format!("  {} vs {}: rho {}\n", r.rater_a, r.rater_b, opt(r.rho.as_ref().map(|t| t.coefficient))));
    }
    out.push_str(&format!("  overall alpha {}\n", opt(s.reliability.overall_alpha)));
    if let Some(kw) = &s.reliability.kruskal_wallis {
        out.push_str(&format!("  raters H({}) = {:.2}, p = {:.3}\n", kw.df, kw.statistic, kw.p_value));
    }
    if let Some(signs) = &s.predictor_signs {
        out.push_str("Predictor correlations with reference ratings\n");
        for p in signs {
            out.push_str(&format!(
                "  {:<24} rho {}  {}\n",
                p.predictor,
                opt(p.rho),
                if p.matches_expected { "expected sign" } else { "UNEXPECTED sign" }
            ));
        }
    }
    if let Some(g) = &s.group_test {
        out.push_str(&format!("Group difference: H({}) = {:.2}, p = {:.3}\n", g.df, g.statistic, g.p_value));
    }
    out.push_str("LOSO evaluation\n");
    for m in &s.models {
        out.push_str(&format!(
            "  {:<4} RMSE {:.3} (SD {:.3})  r sentence {}  r participant {}\n",
            m.family.to_string(),
            m.average_rmse,
            m.sd_rmse,
            opt(m.sentence_r),
            opt(m.participant_r)
        ));
    }
    if let Some(f) = &s.model_comparison {
        out.push_str(&format!("  Friedman chi2({}) = {:.2}, p = {:.3}\n", f.df, f.statistic, f.p_value));
    }
    out.push_str(&format!("Full-corpus MLR: R2 {:.3}, RMSE {:.3}\n", s.full_fit.r2, s.full_fit.rmse));
    for (name, beta) in s.full_fit.predictors.iter().zip(&s.full_fit.beta_coefficients) {
        out.push_str(&format!("  {name:<24} beta {beta:+.3}\n"));
    }
    if let Some(d) = &s.delta {
        out.push_str(&format!(
            "With delta: R2 {:.3} (change {:+.3}{})\n",
            d.with_delta.r2,
            d.r2_change,
            d.f_test.as_ref().map_or_else(String::new, |f| format!(", p = {:.3}", f.p_value))
        ));
    }
    out
}
