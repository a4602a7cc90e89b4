use std::fs;

use caipi_cli::service::{AppState, Background, ErrorBody, FeedbackResponse, Metrics, SessionInfo};
use caipi_core::session::{fold_setups, run_session, ExperimentConfig, Query, Session};
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::json;

const CONFIG: &str = r#"
seed = 11
[dataset]
kind = "colors"
n = 200
rule = 0
[learner]
kind = "linear"
loss = "squared-hinge"
regularizer = "l1"
[explainer]
samples = 300
runs = 2
[session]
budget = 14
burn-in = 3
test-subsample = 5
test-cadence = 5
[corrections]
kind = "enumerate-alternatives"
copies = 2
"#;

fn in_process_history() -> serde_json::Value {
    let config = ExperimentConfig::from_toml_str(CONFIG).unwrap();
    let setup = fold_setups(&config).unwrap().remove(0);
    let oracle = setup.annotator().unwrap();
    let mut s = Session::new(setup).unwrap();
    run_session(&mut s, &oracle).unwrap();
    serde_json::to_value(s.history()).unwrap()
}

fn error(resp: reqwest::blocking::Response) -> (StatusCode, ErrorBody) {
    let status = resp.status();
    (status, resp.json().unwrap())
}

/// Answers `steps` queries the way the simulated annotator would.
fn answer(client: &Client, server: &Background, id: &str, steps: usize) {
    let config = ExperimentConfig::from_toml_str(CONFIG).unwrap();
    let oracle = fold_setups(&config).unwrap().remove(0).annotator().unwrap();
    for _ in 0..steps {
        let url = server.url(&format!("/sessions/{id}/query"));
        let q: Query = client.get(&url).send().unwrap().json().unwrap();
        let again: Query = client.get(&url).send().unwrap().json().unwrap();
        assert_eq!(q, again, "query reads are idempotent");
        let f = oracle.respond(&q.instance, q.predicted, &q.explanation).unwrap();
        let body = json!({"iteration": q.iteration, "label": f.label, "flagged": f.flagged, "source": "simulated"});
        let feedback = server.url(&format!("/sessions/{id}/feedback"));
        let resp = client.post(&feedback).json(&body).send().unwrap();
        assert_eq!(resp.status(), StatusCode::OK);
        let first: FeedbackResponse = resp.json().unwrap();
        // a retried submission returns the same record
        let retry: FeedbackResponse = client.post(&feedback).json(&body).send().unwrap().json().unwrap();
        assert_eq!(retry.record, first.record);
        // the same iteration with a different answer conflicts
        let other = json!({"iteration": q.iteration, "label": 1 - f.label});
        let (status, err) = error(client.post(&feedback).json(&other).send().unwrap());
        assert_eq!(status, StatusCode::CONFLICT);
        assert_eq!(err.field.as_deref(), Some("iteration"));
    }
}

#[test]
fn http_session_matches_in_process_run_across_a_restart() {
    let store = tempfile::tempdir().unwrap();
    let client = Client::new();
    let server = Background::start(AppState::load(store.path(), None).unwrap()).unwrap();
    let resp = client
        .post(server.url("/sessions"))
        .json(&json!({ "config": CONFIG }))
        .send()
        .unwrap();
    assert_eq!(resp.status(), StatusCode::CREATED);
    let info: SessionInfo = resp.json().unwrap();
    assert_eq!((info.iteration, info.budget), (0, 14));

    answer(&client, &server, &info.id, 6);
    let before: Query = client
        .get(server.url(&format!("/sessions/{}/query", info.id)))
        .send()
        .unwrap()
        .json()
        .unwrap();
    server.stop();

    // the restarted service resumes the pending query from the log
    let server = Background::start(AppState::load(store.path(), None).unwrap()).unwrap();
    let after: Query = client
        .get(server.url(&format!("/sessions/{}/query", info.id)))
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert_eq!(before, after);
    answer(&client, &server, &info.id, 8);

    let (status, err) = error(client.get(server.url(&format!("/sessions/{}/query", info.id))).send().unwrap());
    assert_eq!(status, StatusCode::GONE);
    assert_eq!(err.code, "session_finished");

    let m: Metrics = client
        .get(server.url(&format!("/sessions/{}/metrics", info.id)))
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert_eq!(m.history.len(), 14);
    assert_eq!(serde_json::to_value(&m.history).unwrap(), in_process_history());
}

#[test]
fn stale_and_malformed_feedback() {
    let store = tempfile::tempdir().unwrap();
    let client = Client::new();
    let server = Background::start(AppState::load(store.path(), None).unwrap()).unwrap();
    let info: SessionInfo = client
        .post(server.url("/sessions"))
        .json(&json!({ "config": CONFIG }))
        .send()
        .unwrap()
        .json()
        .unwrap();
    let feedback = server.url(&format!("/sessions/{}/feedback", info.id));

    let (status, err) = error(client.post(&feedback).json(&json!({"iteration": 5, "label": 0})).send().unwrap());
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err.code, "stale_iteration");

    let (status, err) = error(client.post(&feedback).json(&json!({"label": 0})).send().unwrap());
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err.field.as_deref(), Some("iteration"));

    let (status, err) = error(client.post(&feedback).json(&json!({"iteration": 1, "label": 9})).send().unwrap());
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err.field.as_deref(), Some("label"));

    let (status, err) = error(
        client
            .post(&feedback)
            .json(&json!({"iteration": 1, "label": 0, "flagged": [999]}))
            .send()
            .unwrap(),
    );
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err.field.as_deref(), Some("flagged"));

    let (status, err) = error(client.post(&feedback).body("{").send().unwrap());
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err.code, "invalid_body");

    let info_now: SessionInfo = client
        .get(server.url(&format!("/sessions/{}", info.id)))
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert_eq!(info_now.iteration, 0, "rejected answers change nothing");

    let (status, err) = error(client.get(server.url("/sessions/nope/query")).send().unwrap());
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(err.code, "not_found");
}

#[test]
fn session_creation_errors_name_the_field() {
    let store = tempfile::tempdir().unwrap();
    let client = Client::new();
    let server = Background::start(AppState::load(store.path(), None).unwrap()).unwrap();

    let (status, err) = error(client.post(server.url("/sessions")).json(&json!({})).send().unwrap());
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err.field.as_deref(), Some("config"));

    let no_learner = CONFIG.replace("[learner]\nkind = \"linear\"\nloss = \"squared-hinge\"\nregularizer = \"l1\"\n", "");
    let (status, err) = error(
        client
            .post(server.url("/sessions"))
            .json(&json!({ "config": no_learner }))
            .send()
            .unwrap(),
    );
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!((err.code.as_str(), err.field.as_deref()), ("invalid_config", Some("learner")));

    let (status, err) = error(
        client
            .post(server.url("/sessions"))
            .json(&json!({ "config": CONFIG, "fold": 3 }))
            .send()
            .unwrap(),
    );
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err.field.as_deref(), Some("fold"));

    // a JSON config object works as well as TOML text
    let config: serde_json::Value = serde_json::to_value(ExperimentConfig::from_toml_str(CONFIG).unwrap()).unwrap();
    let resp = client.post(server.url("/sessions")).json(&json!({ "config": config })).send().unwrap();
    assert_eq!(resp.status(), StatusCode::CREATED);
    assert_eq!(fs::read_dir(store.path()).unwrap().count(), 1, "only the created session is logged");
}

#[test]
fn default_config_serves_empty_create_requests() {
    let store = tempfile::tempdir().unwrap();
    let default = ExperimentConfig::from_toml_str(CONFIG).unwrap();
    let server = Background::start(AppState::load(store.path(), Some(default)).unwrap()).unwrap();
    let resp = Client::new().post(server.url("/sessions")).send().unwrap();
    assert_eq!(resp.status(), StatusCode::CREATED);
}

#[test]
fn corrupt_store_is_refused_with_the_file_named() {
    let store = tempfile::tempdir().unwrap();
    fs::write(store.path().join("broken.jsonl"), "{\"event\":\"created\"}\n").unwrap();
    let err = AppState::load(store.path(), None).err().expect("refused").to_string();
    assert!(err.contains("broken.jsonl"), "{err}");

    // a log whose answers no longer replay is refused too
    let bad = json!({"event": "feedback", "feedback": {"iteration": 3, "label": 0}, "source": "human"});
    let created = json!({"event": "created", "config": CONFIG, "fold": 0});
    fs::write(store.path().join("broken.jsonl"), format!("{created}\n{bad}\n")).unwrap();
    let err = AppState::load(store.path(), None).err().expect("refused").to_string();
    assert!(err.contains("broken.jsonl") && err.contains("stale"), "{err}");
}
