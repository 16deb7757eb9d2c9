mod common;

use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::thread::JoinHandle;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use sriqa::dataset::Manifest;
use sriqa::labeling::SubjectScores;
use sriqa::service::{self, AppState, FinalizeResponse, RatingStore};

struct Server {
    base: String,
    agent: ureq::Agent,
    handle: JoinHandle<sriqa::Result<FinalizeResponse>>,
}

fn start(manifest: &Path, ui: Option<PathBuf>) -> Server {
    let store = RatingStore::open(manifest, 25, 7).unwrap();
    let (tx, rx) = mpsc::channel();
    let handle = std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            service::serve(listener, AppState::new(store, ui)).await
        })
    });
    let addr = rx.recv().unwrap();
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .http_status_as_error(false)
        .build()
        .into();
    Server {
        base: format!("http://{addr}"),
        agent,
        handle,
    }
}

impl Server {
    fn post(&self, path: &str, body: Value) -> (u16, Value) {
        let mut r = self.agent.post(format!("{}{path}", self.base)).send_json(body).unwrap();
        let status = r.status().as_u16();
        (status, r.body_mut().read_json().unwrap_or(Value::Null))
    }

    fn get(&self, path: &str) -> (u16, Vec<u8>) {
        let mut r = self.agent.get(format!("{}{path}", self.base)).call().unwrap();
        let status = r.status().as_u16();
        (status, r.body_mut().read_to_vec().unwrap())
    }

    fn get_json(&self, path: &str) -> (u16, Value) {
        let (s, body) = self.get(path);
        (s, serde_json::from_slice(&body).unwrap_or(Value::Null))
    }

    fn session(&self, name: &str) -> u64 {
        let (s, v) = self.post("/api/session", json!({ "name": name }));
        assert_eq!(s, 200);
        v["session_id"].as_u64().unwrap()
    }

    /// Scores every task of a session with `score(task_id)`.
    fn rate_all(&self, sid: u64, mut score: impl FnMut(&str) -> f64) -> Vec<String> {
        let mut seen = Vec::new();
        loop {
            let (s, t) = self.get_json(&format!("/api/task?session_id={sid}"));
            assert_eq!(s, 200);
            if t["done"] == json!(true) {
                return seen;
            }
            let id = t["task_id"].as_str().unwrap().to_string();
            let (s, _) = self.post(
                "/api/score",
                json!({ "session_id": sid, "task_id": id, "score": score(&id) }),
            );
            assert_eq!(s, 200);
            seen.push(id);
        }
    }
}

#[test]
fn headless_panel_finalizes_like_offline_label() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = common::small_dataset(&dir.path().join("set"), 6, 32, 3);
    let server = start(&manifest, None);

    let (s, page) = server.get("/");
    assert_eq!(s, 200);
    assert!(String::from_utf8_lossy(&page).contains("<html"));

    let n_tasks = service::plan_tasks(&Manifest::load(&manifest).unwrap()).unwrap().len();
    assert_eq!(n_tasks, 6);

    let (s, png) = server.get("/api/image/task-0001/test");
    assert_eq!(s, 200);
    assert_eq!(&png[1..4], b"PNG");
    assert_eq!(server.get("/api/image/task-0099/ref").0, 404);

    let (s, v) = server.post("/api/finalize", json!({}));
    assert_eq!(s, 409);
    assert!(v["progress"].is_object());

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let truth: Vec<f64> = (0..n_tasks).map(|_| rng.random_range(3.0..9.0)).collect();
    let mut orders = Vec::new();
    for subject in 0..25 {
        let sid = server.session(&format!("rater {subject}"));
        let outlier = subject >= 23;
        let order = server.rate_all(sid, |task| {
            let i: usize = task.trim_start_matches("task-").parse::<usize>().unwrap() - 1;
            if outlier {
                if truth[i] > 5.0 { 0.0 } else { 10.0 }
            } else {
                ((truth[i] + rng.random_range(-0.5..0.5)) * 10.0).round() / 10.0
            }
        });
        assert_eq!(order.len(), n_tasks);
        orders.push(order);
    }
    let mut sorted: Vec<Vec<String>> = orders.clone();
    sorted.iter_mut().for_each(|o| o.sort());
    assert!(sorted.windows(2).all(|w| w[0] == w[1]));
    assert!(orders.windows(2).any(|w| w[0] != w[1]));

    let (s, _) = server.post("/api/score", json!({ "session_id": 1, "task_id": "task-0001", "score": 5.0 }));
    assert_eq!(s, 409);
    let (s, _) = server.post("/api/score", json!({ "session_id": 99, "task_id": "task-0001", "score": 5.0 }));
    assert_eq!(s, 404);
    let sid = server.session("late");
    let (s, _) = server.post("/api/score", json!({ "session_id": sid, "task_id": "task-0001", "score": 10.5 }));
    assert_eq!(s, 400);

    let (s, p) = server.get_json("/api/progress");
    assert_eq!(s, 200);
    assert_eq!(p["subjects"], json!(26));

    let (s, fin) = server.post("/api/finalize", json!({}));
    assert_eq!(s, 200, "{fin}");
    let served = server.handle.join().unwrap().unwrap();
    assert_eq!(serde_json::to_value(&served).unwrap(), fin);
    let mut rejected = served.rejected_subjects.clone();
    rejected.sort();
    assert_eq!(rejected, vec!["session-0024", "session-0025"]);

    let labeled = std::fs::read(service::labeled_manifest_path(&manifest)).unwrap();
    let scores: Vec<SubjectScores> =
        serde_json::from_slice(&std::fs::read(service::scores_path(&manifest)).unwrap()).unwrap();

    // Offline pass on a copy of the manifest.
    let copy_dir = dir.path().join("offline");
    std::fs::create_dir_all(&copy_dir).unwrap();
    let copy = copy_dir.join("manifest.jsonl");
    std::fs::copy(&manifest, &copy).unwrap();
    service::write_labels(&copy, &scores).unwrap();
    assert_eq!(std::fs::read(service::labeled_manifest_path(&copy)).unwrap(), labeled);

    let m = Manifest::load(&service::labeled_manifest_path(&manifest)).unwrap();
    assert!(m.records.iter().all(|r| r.imos.is_some()));

    // After finalization the store refuses writes, including after a restart.
    let mut store = RatingStore::open(&manifest, 25, 7).unwrap();
    assert!(store.finalized().is_some());
    assert_eq!(store.create_session("again".into()).unwrap_err().status.as_u16(), 409);
}

#[test]
fn journal_replay_restores_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = common::small_dataset(&dir.path().join("set"), 3, 32, 3);
    let before = {
        let mut store = RatingStore::open(&manifest, 5, 1).unwrap();
        let a = store.create_session("a".into()).unwrap();
        let b = store.create_session("b".into()).unwrap();
        let (t, _) = store.next_task(a).unwrap().unwrap();
        let t = t.task_id.clone();
        store.submit(a, &t, 4.2).unwrap();
        store.submit(b, "task-0002", 7.0).unwrap();
        (store.progress(), store.export_scores(), store.next_task(a).unwrap().map(|(t, n)| (t.task_id.clone(), n)))
    };
    let store = RatingStore::open(&manifest, 5, 1).unwrap();
    assert_eq!(store.progress(), before.0);
    assert_eq!(store.export_scores(), before.1);
    assert_eq!(store.next_task(1).unwrap().map(|(t, n)| (t.task_id.clone(), n)), before.2);
}

#[test]
fn ui_directory_is_served() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = common::small_dataset(&dir.path().join("set"), 2, 32, 3);
    let ui = dir.path().join("ui");
    std::fs::create_dir_all(&ui).unwrap();
    std::fs::write(ui.join("index.html"), "<html>custom</html>").unwrap();
    let server = start(&manifest, Some(ui));
    let (s, body) = server.get("/");
    assert_eq!(s, 200);
    assert_eq!(body, b"<html>custom</html>");
    assert_eq!(server.get("/../secret").0, 404);
    for sid in (0..5).map(|i| server.session(&i.to_string())) {
        server.rate_all(sid, |_| 6.0);
    }
    assert_eq!(server.post("/api/finalize", json!({})).0, 200);
    server.handle.join().unwrap().unwrap();
}
