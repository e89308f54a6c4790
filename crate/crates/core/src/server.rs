//! Local HTTP service behind the rating interface.
//!
//! Ratings are appended to a CSV log and never rewritten; on start the log is
//! replayed to rebuild every rater's progress. Each rater rates every stimulus
//! twice, in two independently shuffled orders derived from the service seed
//! and the rater id, and must follow that order. Practice stimuli can be
//! played and rated but their ratings are acknowledged only, never stored.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::net::SocketAddr;
use std::path::{Component, Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{SecondsFormat, Utc};
use log::{error, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::io::{self, IoError, ManifestRow, RatingLog};
use crate::stats::RatingRecord;

#[derive(Debug, Error)]
pub enum ServerError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("cannot listen on port {port}: {source}")]
    Bind {
        port: u16,
        #[source]
        source: std::io::Error,
    },
    #[error("server stopped: {0}")]
    Serve(std::io::Error),
    #[error("stimulus {0} appears in both the manifest and the practice list")]
    PracticeOverlap(String),
    #[error("ratings log {path}: {message}")]
    Replay { path: PathBuf, message: String },
}

/// Where a rater stands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Practice,
    Pass1,
    Pass2,
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub rater_id: String,
    pub phase: Phase,
    /// Pass to be rated next; during practice this is the upcoming pass 1.
    pub pass: Option<u8>,
    /// Position of the next stimulus in the current pass order.
    pub current_index: usize,
    pub next_stimulus: Option<String>,
    /// Stimuli already rated in the current pass.
    pub completed: Vec<String>,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StimulusList {
    pub rater_id: String,
    pub pass: u8,
    pub stimuli: Vec<String>,
    pub practice: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingRequest {
    pub rater_id: String,
    pub stimulus_id: String,
    pub pass: i64,
    pub rating: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingAck {
    pub persisted: bool,
    pub practice: bool,
    pub session: Option<SessionState>,
}

#[derive(Debug, Serialize)]
struct ApiError {
    error: String,
}

fn reject(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(ApiError { error: message.into() })).into_response()
}

struct Ledger {
    log: RatingLog,
    records: Vec<RatingRecord>,
    /// rater -> pass -> stimuli rated
    done: BTreeMap<String, [BTreeSet<String>; 2]>,
}

struct Shared {
    stimuli: BTreeMap<String, PathBuf>,
    ids: Vec<String>,
    practice: BTreeMap<String, PathBuf>,
    practice_ids: Vec<String>,
    seed: u64,
    ui_dir: Option<PathBuf>,
    ledger: Mutex<Ledger>,
}

/// Shared state of the rating service.
#[derive(Clone)]
pub struct AppState(Arc<Shared>);

impl AppState {
    /// Opens (or creates) the ratings log and replays it. Fails if the log
    /// contains records the service would have refused.
    pub fn open(
        stimuli: &[ManifestRow],
        practice: &[ManifestRow],
        ratings_path: &Path,
        seed: u64,
        ui_dir: Option<PathBuf>,
    ) -> Result<Self, ServerError> {
        let stimulus_map: BTreeMap<String, PathBuf> =
            stimuli.iter().map(|r| (r.stimulus_id.clone(), r.wav_path.clone())).collect();
        let practice_map: BTreeMap<String, PathBuf> =
            practice.iter().map(|r| (r.stimulus_id.clone(), r.wav_path.clone())).collect();
        if let Some(id) = practice_map.keys().find(|id| stimulus_map.contains_key(*id)) {
            return Err(ServerError::PracticeOverlap(id.clone()));
        }
        let (log, records) = RatingLog::open(ratings_path)?;
        let shared = Shared {
            ids: stimulus_map.keys().cloned().collect(),
            stimuli: stimulus_map,
            practice_ids: practice.iter().map(|r| r.stimulus_id.clone()).collect(),
            practice: practice_map,
            seed,
            ui_dir,
            ledger: Mutex::new(Ledger {
                log,
                records: Vec::new(),
                done: BTreeMap::new(),
            }),
        };
        {
            let mut ledger = shared.ledger.lock().expect("fresh mutex");
            for (i, r) in records.into_iter().enumerate() {
                let check = shared.check(&ledger, &r.rater_id, &r.stimulus_id, r.pass as i64, r.rating as i64);
                if let Err((_, message)) = check {
                    return Err(ServerError::Replay {
                        path: ratings_path.to_path_buf(),
                        message: format!("record {}: {message}", i + 1),
                    });
                }
                ledger.done.entry(r.rater_id.clone()).or_default()[r.pass as usize - 1].insert(r.stimulus_id.clone());
                ledger.records.push(r);
            }
        }
        Ok(Self(Arc::new(shared)))
    }

    /// Every persisted record, in log order.
    pub fn records(&self) -> Vec<RatingRecord> {
        self.0.ledger.lock().expect("ledger lock").records.clone()
    }

    pub fn session(&self, rater_id: &str) -> SessionState {
        let ledger = self.0.ledger.lock().expect("ledger lock");
        self.0.session(&ledger, rater_id)
    }

    /// Presentation order of `pass` (1 or 2) for a rater.
    pub fn order(&self, rater_id: &str, pass: u8) -> Vec<String> {
        self.0.order(rater_id, pass)
    }
}

impl Shared {
    fn order(&self, rater_id: &str, pass: u8) -> Vec<String> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(rater_id.as_bytes());
        h.update([0, pass]);
        let digest = h.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(key);
        let mut ids = self.ids.clone();
        ids.shuffle(&mut rng);
        ids
    }

    fn session(&self, ledger: &Ledger, rater_id: &str) -> SessionState {
        let total = self.ids.len();
        let done = ledger.done.get(rater_id);
        let count = |p: usize| done.map_or(0, |d| d[p].len());
        let (mut phase, pass) = if count(0) < total {
            (Phase::Pass1, Some(1))
        } else if count(1) < total {
            (Phase::Pass2, Some(2))
        } else {
            (Phase::Done, None)
        };
        if done.is_none() && !self.practice_ids.is_empty() {
            phase = Phase::Practice;
        }
        let (current_index, next_stimulus, completed) = match pass {
            Some(p) => {
                let order = self.order(rater_id, p);
                let rated = |s: &String| done.is_some_and(|d| d[p as usize - 1].contains(s));
                let idx = order.iter().position(|s| !rated(s)).unwrap_or(order.len());
                let completed = order[..idx].to_vec();
                (idx, order.get(idx).cloned(), completed)
            }
            None => (0, None, Vec::new()),
        };
        SessionState {
            rater_id: rater_id.to_string(),
            phase,
            pass,
            current_index,
            next_stimulus,
            completed,
            total,
        }
    }

    /// Validates a rating against the rater's progress. Practice stimuli are
    /// not checked here.
    fn check(
        &self,
        ledger: &Ledger,
        rater_id: &str,
        stimulus_id: &str,
        pass: i64,
        rating: i64,
    ) -> Result<u8, (StatusCode, String)> {
        if rater_id.trim().is_empty() {
            return Err((StatusCode::UNPROCESSABLE_ENTITY, "rater_id is empty".into()));
        }
        if !(1..=5).contains(&rating) {
            return Err((StatusCode::UNPROCESSABLE_ENTITY, format!("rating {rating} is outside 1..5")));
        }
        if !(1..=2).contains(&pass) {
            return Err((StatusCode::UNPROCESSABLE_ENTITY, format!("pass {pass} is neither 1 nor 2")));
        }
        if !self.stimuli.contains_key(stimulus_id) {
            return Err((StatusCode::NOT_FOUND, format!("unknown stimulus {stimulus_id}")));
        }
        let pass = pass as u8;
        let done = ledger.done.get(rater_id);
        if done.is_some_and(|d| d[pass as usize - 1].contains(stimulus_id)) {
            return Err((
                StatusCode::CONFLICT,
                format!("{rater_id} already rated {stimulus_id} in pass {pass}"),
            ));
        }
        let session = self.session(ledger, rater_id);
        let current = session.pass.unwrap_or(1);
        if pass != current || session.next_stimulus.as_deref() != Some(stimulus_id) {
            return Err((
                StatusCode::CONFLICT,
                format!(
                    "out of order: expected {} in pass {current}",
                    session.next_stimulus.as_deref().unwrap_or("nothing")
                ),
            ));
        }
        Ok(pass)
    }
}

#[derive(Debug, Deserialize)]
struct StimuliQuery {
    rater_id: String,
    pass: Option<u8>,
}

async fn list_stimuli(State(state): State<AppState>, Query(q): Query<StimuliQuery>) -> Response {
    let pass = match q.pass {
        Some(p @ 1..=2) => p,
        Some(p) => return reject(StatusCode::UNPROCESSABLE_ENTITY, format!("pass {p} is neither 1 nor 2")),
        None => state.session(&q.rater_id).pass.unwrap_or(1),
    };
    Json(StimulusList {
        stimuli: state.order(&q.rater_id, pass),
        rater_id: q.rater_id,
        pass,
        practice: state.0.practice_ids.clone(),
    })
    .into_response()
}

async fn audio(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Response {
    let Some(path) = state.0.stimuli.get(&id).or_else(|| state.0.practice.get(&id)) else {
        return reject(StatusCode::NOT_FOUND, format!("unknown stimulus {id}"));
    };
    match tokio::fs::read(path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, "audio/wav")], bytes).into_response(),
        Err(e) => {
            error!("{}: {e}", path.display());
            reject(StatusCode::INTERNAL_SERVER_ERROR, format!("cannot read audio for {id}"))
        }
    }
}

async fn post_rating(State(state): State<AppState>, Json(req): Json<RatingRequest>) -> Response {
    let shared = &state.0;
    if shared.practice.contains_key(&req.stimulus_id) {
        if !(1..=5).contains(&req.rating) {
            return reject(StatusCode::UNPROCESSABLE_ENTITY, format!("rating {} is outside 1..5", req.rating));
        }
        return Json(RatingAck {
            persisted: false,
            practice: true,
            session: None,
        })
        .into_response();
    }
    let mut ledger = shared.ledger.lock().expect("ledger lock");
    let pass = match shared.check(&ledger, &req.rater_id, &req.stimulus_id, req.pass, req.rating) {
        Ok(p) => p,
        Err((status, message)) => return reject(status, message),
    };
    let record = RatingRecord {
        rater_id: req.rater_id.clone(),
        stimulus_id: req.stimulus_id.clone(),
        pass,
        rating: req.rating as u8,
        timestamp: Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
    };
    if let Err(e) = ledger.log.append(&record) {
        error!("{e}; {} may end with a partial record", ledger.log.path().display());
        return reject(StatusCode::INTERNAL_SERVER_ERROR, "failed to persist rating");
    }
    ledger.done.entry(record.rater_id.clone()).or_default()[pass as usize - 1].insert(record.stimulus_id.clone());
    ledger.records.push(record);
    let session = shared.session(&ledger, &req.rater_id);
    (
        StatusCode::CREATED,
        Json(RatingAck {
            persisted: true,
            practice: false,
            session: Some(session),
        }),
    )
        .into_response()
}

async fn export(State(state): State<AppState>) -> Response {
    let csv = io::ratings_to_csv(&state.records());
    ([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], csv).into_response()
}

async fn session(State(state): State<AppState>, UrlPath(rater_id): UrlPath<String>) -> Json<SessionState> {
    Json(state.session(&rater_id))
}

/// Serves files of the interface directory; `/` maps to `index.html`.
async fn static_file(State(state): State<AppState>, uri: axum::http::Uri) -> Response {
    let Some(root) = &state.0.ui_dir else {
        return reject(StatusCode::NOT_FOUND, "no interface configured");
    };
    let rel = uri.path().trim_start_matches('/');
    let rel = if rel.is_empty() { "index.html" } else { rel };
    let rel = Path::new(rel);
    if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
        return reject(StatusCode::NOT_FOUND, "not found");
    }
    let path = root.join(rel);
    let mime = match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js") | Some("mjs") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        Some("wav") => "audio/wav",
        _ => "application/octet-stream",
    };
    match fs::read(&path) {
        Ok(bytes) => ([(header::CONTENT_TYPE, mime)], bytes).into_response(),
        Err(_) => reject(StatusCode::NOT_FOUND, "not found"),
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/stimuli", get(list_stimuli))
        .route("/api/audio/{stimulus_id}", get(audio))
        .route("/api/ratings", post(post_rating))
        .route("/api/export.csv", get(export))
        .route("/api/session/{rater_id}", get(session))
        .fallback(static_file)
        .with_state(state)
}

/// Serves on `127.0.0.1:port` until interrupted.
pub async fn serve(state: AppState, port: u16) -> Result<(), ServerError> {
    let addr = SocketAddr::from(([127, 0, 0, 1], port));
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| ServerError::Bind { port, source })?;
    info!("rating service listening on http://{addr}");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(ServerError::Serve)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(ids: &[&str]) -> Vec<ManifestRow> {
        ids.iter()
            .map(|id| ManifestRow {
                stimulus_id: id.to_string(),
                speaker_id: "s".into(),
                group: None,
                sentence_id: None,
                expected_syllables: None,
                wav_path: PathBuf::from(format!("{id}.wav")),
            })
            .collect()
    }

    #[test]
    fn orders_are_seeded_permutations() {
        let dir = tempfile::tempdir().unwrap();
        let ids = ["a", "b", "c", "d", "e", "f", "g", "h"];
        let state = AppState::open(&rows(&ids), &[], &dir.path().join("r.csv"), 7, None).unwrap();
        let one = state.order("r1", 1);
        let mut sorted = one.clone();
        sorted.sort();
        assert_eq!(sorted, ids);
        assert_eq!(one, state.order("r1", 1));
        assert_ne!(one, state.order("r1", 2));
        assert_ne!(one, state.order("r2", 1));
    }

    #[test]
    fn practice_may_not_overlap() {
        let dir = tempfile::tempdir().unwrap();
        let err = AppState::open(&rows(&["a"]), &rows(&["a"]), &dir.path().join("r.csv"), 0, None);
        assert!(matches!(err, Err(ServerError::PracticeOverlap(_))));
    }

    #[test]
    fn replay_rejects_out_of_order_log() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let ids = ["a", "b", "c"];
        let state = AppState::open(&rows(&ids), &[], &path, 1, None).unwrap();
        let second = state.order("r", 1)[1].clone();
        drop(state);
        fs::write(&path, format!("rater_id,stimulus_id,pass,rating,timestamp_iso8601\nr,{second},1,3,t\n")).unwrap();
        assert!(matches!(
            AppState::open(&rows(&ids), &[], &path, 1, None),
            Err(ServerError::Replay { .. })
        ));
    }
}
