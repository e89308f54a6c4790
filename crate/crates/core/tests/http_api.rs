mod common;

use std::fs;
use std::path::Path;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use fluency::io::{self, ManifestRow};
use fluency::server::{router, AppState};

struct Fixture {
    _dir: tempfile::TempDir,
    stimuli: Vec<ManifestRow>,
    practice: Vec<ManifestRow>,
    ratings: std::path::PathBuf,
}

fn fixture(n: usize) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let manifest = common::write_wav_corpus(dir.path(), 1, n, 3);
    let mut rows = io::read_manifest(&manifest).unwrap();
    let mut practice = vec![rows.pop().unwrap()];
    practice[0].stimulus_id = "practice_1".into();
    Fixture {
        ratings: dir.path().join("ratings.csv"),
        _dir: dir,
        stimuli: rows,
        practice,
    }
}

fn app(f: &Fixture) -> Router {
    router(AppState::open(&f.stimuli, &f.practice, &f.ratings, 42, None).unwrap())
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn json_of(app: &Router, uri: &str) -> Value {
    let (status, body) = call(app, "GET", uri, None).await;
    assert_eq!(status, StatusCode::OK, "{uri}");
    serde_json::from_slice(&body).unwrap()
}

async fn rate(app: &Router, rater: &str, stimulus: &str, pass: i64, rating: i64) -> StatusCode {
    let body = json!({"rater_id": rater, "stimulus_id": stimulus, "pass": pass, "rating": rating});
    call(app, "POST", "/api/ratings", Some(body)).await.0
}

fn order(v: &Value) -> Vec<String> {
    v["stimuli"].as_array().unwrap().iter().map(|s| s.as_str().unwrap().to_string()).collect()
}

fn export_lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().skip(1).map(String::from).collect()
}

#[tokio::test]
async fn three_ratings_round_trip_through_export() {
    let f = fixture(5);
    let app = app(&f);
    let list = json_of(&app, "/api/stimuli?rater_id=ann&pass=1").await;
    let ids = order(&list);
    assert_eq!(ids.len(), 4);
    assert_eq!(list["practice"], json!(["practice_1"]));
    for (id, r) in ids.iter().zip([4, 2, 5]) {
        assert_eq!(rate(&app, "ann", id, 1, r).await, StatusCode::CREATED);
    }
    let (status, csv) = call(&app, "GET", "/api/export.csv", None).await;
    assert_eq!(status, StatusCode::OK);
    let text = String::from_utf8(csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "rater_id,stimulus_id,pass,rating,timestamp_iso8601");
    assert_eq!(lines.len(), 4);
    for (line, (id, r)) in lines[1..].iter().zip(ids.iter().zip([4, 2, 5])) {
        assert!(line.starts_with(&format!("ann,{id},1,{r},")), "{line}");
    }
    assert_eq!(export_lines(&f.ratings).len(), 3);
}

#[tokio::test]
async fn invalid_values_are_rejected_and_not_persisted() {
    let f = fixture(4);
    let app = app(&f);
    let first = order(&json_of(&app, "/api/stimuli?rater_id=bo&pass=1").await)[0].clone();
    assert_eq!(rate(&app, "bo", &first, 1, 6).await, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(rate(&app, "bo", &first, 1, 0).await, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(rate(&app, "bo", &first, 3, 3).await, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(rate(&app, "bo", "nope", 1, 3).await, StatusCode::NOT_FOUND);
    let body = json!({"rater_id": "bo", "stimulus_id": first, "pass": 1, "rating": 3.5});
    assert_eq!(call(&app, "POST", "/api/ratings", Some(body)).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(export_lines(&f.ratings).is_empty());
}

#[tokio::test]
async fn duplicates_and_out_of_order_conflict() {
    let f = fixture(4);
    let app = app(&f);
    let ids = order(&json_of(&app, "/api/stimuli?rater_id=cy&pass=1").await);
    assert_eq!(rate(&app, "cy", &ids[1], 1, 3).await, StatusCode::CONFLICT);
    assert_eq!(rate(&app, "cy", &ids[0], 2, 3).await, StatusCode::CONFLICT);
    assert_eq!(rate(&app, "cy", &ids[0], 1, 3).await, StatusCode::CREATED);
    assert_eq!(rate(&app, "cy", &ids[0], 1, 4).await, StatusCode::CONFLICT);
    assert_eq!(export_lines(&f.ratings).len(), 1);
}

#[tokio::test]
async fn practice_ratings_are_acknowledged_but_never_exported() {
    let f = fixture(3);
    let app = app(&f);
    let session = json_of(&app, "/api/session/dee").await;
    assert_eq!(session["phase"], "practice");
    assert_eq!(session["current_index"], 0);
    let (status, body) = call(
        &app,
        "POST",
        "/api/ratings",
        Some(json!({"rater_id": "dee", "stimulus_id": "practice_1", "pass": 1, "rating": 2})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let ack: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(ack["practice"], true);
    assert_eq!(ack["persisted"], false);
    let (_, csv) = call(&app, "GET", "/api/export.csv", None).await;
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 1);
    assert_eq!(json_of(&app, "/api/session/dee").await["phase"], "practice");
}

#[tokio::test]
async fn full_session_and_resume_after_restart() {
    let f = fixture(6);
    let ids;
    {
        let app = app(&f);
        ids = order(&json_of(&app, "/api/stimuli?rater_id=eve&pass=1").await);
        for id in &ids[..3] {
            assert_eq!(rate(&app, "eve", id, 1, 3).await, StatusCode::CREATED);
        }
    }
    // a new service instance replays the log
    let app = app(&f);
    let session = json_of(&app, "/api/session/eve").await;
    assert_eq!(session["phase"], "pass1");
    assert_eq!(session["current_index"], 3);
    assert_eq!(session["next_stimulus"], json!(ids[3]));
    assert_eq!(order(&json_of(&app, "/api/stimuli?rater_id=eve").await), ids);
    for id in &ids[3..] {
        assert_eq!(rate(&app, "eve", id, 1, 4).await, StatusCode::CREATED);
    }
    let session = json_of(&app, "/api/session/eve").await;
    assert_eq!(session["phase"], "pass2");
    assert_eq!(session["current_index"], 0);
    let second = order(&json_of(&app, "/api/stimuli?rater_id=eve").await);
    assert_eq!(json_of(&app, "/api/stimuli?rater_id=eve").await["pass"], 2);
    let mut sorted = second.clone();
    sorted.sort();
    let mut expected = ids.clone();
    expected.sort();
    assert_eq!(sorted, expected);
    for id in &second {
        assert_eq!(rate(&app, "eve", id, 2, 5).await, StatusCode::CREATED);
    }
    assert_eq!(json_of(&app, "/api/session/eve").await["phase"], "done");
    let records = io::read_ratings(&f.ratings).unwrap();
    assert_eq!(records.len(), 2 * ids.len());
    assert_eq!(records.iter().filter(|r| r.pass == 2).count(), ids.len());
    assert!(records.iter().all(|r| (1..=5).contains(&r.rating)));
}

#[tokio::test]
async fn audio_is_served_as_wav() {
    let f = fixture(2);
    let app = app(&f);
    let id = &f.stimuli[0].stimulus_id;
    let (status, bytes) = call(&app, "GET", &format!("/api/audio/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(bytes, fs::read(&f.stimuli[0].wav_path).unwrap());
    assert_eq!(&bytes[..4], b"RIFF");
    assert_eq!(call(&app, "GET", "/api/audio/practice_1", None).await.0, StatusCode::OK);
    assert_eq!(call(&app, "GET", "/api/audio/missing", None).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn interface_files_are_served_without_traversal() {
    let f = fixture(2);
    let ui = f._dir.path().join("ui");
    fs::create_dir_all(&ui).unwrap();
    fs::write(ui.join("index.html"), "<html>rate</html>").unwrap();
    let app = router(AppState::open(&f.stimuli, &f.practice, &f.ratings, 1, Some(ui)).unwrap());
    let (status, body) = call(&app, "GET", "/", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, b"<html>rate</html>");
    assert_eq!(call(&app, "GET", "/../ratings.csv", None).await.0, StatusCode::NOT_FOUND);
}
