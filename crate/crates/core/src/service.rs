//! HTTP rating service.
//!
//! Each subject opens a session and scores the anchor image of every
//! (content, method, factor) group against its pristine reference. State is
//! kept in an append-only journal next to the manifest and replayed on
//! start. Finalizing runs the offline labeling pass on the collected scores.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{encode_manifest, groups, source_path, GroupKey, Manifest};
use crate::error::{Error, Result};
use crate::imaging::{encode_png, read_image};
use crate::labeling::{anchor_iteration, label_manifest, SubjectScores, MAX_SCORE};

pub const JOURNAL_FILE: &str = "rating_journal.jsonl";
pub const MIN_SCORES_PER_TASK: usize = 5;

/// Seed for presentation order: `SRIQA_SEED` when set, else 0.
pub fn default_seed() -> u64 {
    std::env::var("SRIQA_SEED")
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or(0)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RatingTask {
    pub task_id: String,
    pub group: GroupKey,
    pub sample_id: String,
    pub reference_path: PathBuf,
    pub test_path: PathBuf,
}

/// One anchor task per group, at iteration `ceil(t_max / 2)`.
pub fn plan_tasks(manifest: &Manifest) -> Result<Vec<RatingTask>> {
    let mut tasks = Vec::new();
    for (key, idx) in groups(&manifest.records) {
        let t_max = idx.iter().map(|&i| manifest.records[i].iteration).max().unwrap_or(1);
        let k = anchor_iteration(t_max);
        let rec = idx
            .iter()
            .map(|&i| &manifest.records[i])
            .find(|r| r.iteration == k)
            .ok_or_else(|| Error::Protocol(format!("group {key} has no record at iteration {k}")))?;
        tasks.push(RatingTask {
            task_id: format!("task-{:04}", tasks.len() + 1),
            reference_path: manifest.resolve(&source_path(&key.content_id)),
            test_path: manifest.resolve(&rec.hr_path),
            sample_id: rec.sample_id.clone(),
            group: key,
        });
    }
    if tasks.is_empty() {
        return Err(Error::Protocol("manifest has no groups to rate".into()));
    }
    Ok(tasks)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum JournalEvent {
    Session { session_id: u64, name: String },
    Score { session_id: u64, task_id: String, score: f64 },
    Finalize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveOut {
    pub group: String,
    pub b: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalizeResponse {
    pub rejected_subjects: Vec<String>,
    pub curves: Vec<CurveOut>,
    pub manifest_path: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskProgress {
    pub task_id: String,
    pub n_scores: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub tasks: Vec<TaskProgress>,
    pub subjects: usize,
    pub expected_subjects: usize,
    pub finalized: bool,
}

struct Session {
    order: Vec<usize>,
}

/// Paths written by finalization.
pub fn labeled_manifest_path(manifest_path: &Path) -> PathBuf {
    let stem = manifest_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "manifest".into());
    manifest_path.with_file_name(format!("{stem}.labeled.jsonl"))
}

pub fn scores_path(manifest_path: &Path) -> PathBuf {
    manifest_path.with_file_name("scores.json")
}

/// Runs the offline labeling pass and writes the labeled manifest next to
/// `manifest_path`. Shared by the service and the `label` command.
pub fn write_labels(manifest_path: &Path, scores: &[SubjectScores]) -> Result<FinalizeResponse> {
    let manifest = Manifest::load(manifest_path)?;
    let outcome = label_manifest(&manifest.records, scores)?;
    let out = labeled_manifest_path(manifest_path);
    std::fs::write(&out, encode_manifest(&outcome.records)?).map_err(|e| Error::io(&out, e))?;
    Ok(FinalizeResponse {
        rejected_subjects: outcome.rejected,
        curves: outcome
            .curves
            .iter()
            .map(|c| CurveOut {
                group: c.group.id(),
                b: c.b,
            })
            .collect(),
        manifest_path: out,
    })
}

/// Session state plus its journal. All mutation goes through here.
pub struct RatingStore {
    manifest_path: PathBuf,
    tasks: Vec<RatingTask>,
    seed: u64,
    expected_subjects: usize,
    sessions: BTreeMap<u64, Session>,
    /// (session, task index) → score
    scores: BTreeMap<(u64, usize), f64>,
    finalized: Option<FinalizeResponse>,
    journal: File,
}

impl RatingStore {
    /// Opens the store, replaying any existing journal.
    pub fn open(manifest_path: &Path, expected_subjects: usize, seed: u64) -> Result<Self> {
        let manifest = Manifest::load(manifest_path)?;
        let tasks = plan_tasks(&manifest)?;
        let journal_path = manifest.dir.join(JOURNAL_FILE);
        let events: Vec<JournalEvent> = match File::open(&journal_path) {
            Ok(f) => BufReader::new(f)
                .lines()
                .map(|l| l.map_err(|e| Error::io(&journal_path, e)))
                .filter(|l| !matches!(l, Ok(s) if s.trim().is_empty()))
                .map(|l| Ok(serde_json::from_str(&l?)?))
                .collect::<Result<_>>()?,
            Err(_) => Vec::new(),
        };
        let journal = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&journal_path)
            .map_err(|e| Error::io(&journal_path, e))?;
        let mut store = Self {
            manifest_path: manifest_path.to_path_buf(),
            tasks,
            seed,
            expected_subjects,
            sessions: BTreeMap::new(),
            scores: BTreeMap::new(),
            finalized: None,
            journal,
        };
        for ev in events {
            store.apply(ev)?;
        }
        Ok(store)
    }

    pub fn tasks(&self) -> &[RatingTask] {
        &self.tasks
    }

    fn record(&mut self, ev: &JournalEvent) -> Result<()> {
        let mut line = serde_json::to_vec(ev)?;
        line.push(b'\n');
        self.journal
            .write_all(&line)
            .and_then(|_| self.journal.flush())
            .map_err(|e| Error::io(JOURNAL_FILE, e))
    }

    fn apply(&mut self, ev: JournalEvent) -> Result<Option<FinalizeResponse>> {
        match ev {
            JournalEvent::Session { session_id, .. } => {
                let mut order: Vec<usize> = (0..self.tasks.len()).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ session_id.wrapping_mul(0x9e37_79b9_7f4a_7c15));
                order.shuffle(&mut rng);
                self.sessions.insert(session_id, Session { order });
                Ok(None)
            }
            JournalEvent::Score {
                session_id,
                task_id,
                score,
            } => {
                let t = self.task_index(&task_id)?;
                self.scores.insert((session_id, t), score);
                Ok(None)
            }
            JournalEvent::Finalize => {
                let out = write_labels(&self.manifest_path, &self.export_scores())?;
                let scores = scores_path(&self.manifest_path);
                std::fs::write(&scores, serde_json::to_vec_pretty(&self.export_scores())?)
                    .map_err(|e| Error::io(&scores, e))?;
                self.finalized = Some(out.clone());
                Ok(Some(out))
            }
        }
    }

    fn task_index(&self, task_id: &str) -> Result<usize> {
        self.tasks
            .iter()
            .position(|t| t.task_id == task_id)
            .ok_or_else(|| Error::Protocol(format!("unknown task {task_id}")))
    }

    fn ensure_open(&self) -> std::result::Result<(), ApiError> {
        if self.finalized.is_some() {
            return Err(ApiError::conflict("session store is finalized"));
        }
        Ok(())
    }

    pub fn create_session(&mut self, name: String) -> std::result::Result<u64, ApiError> {
        self.ensure_open()?;
        let session_id = self.sessions.keys().next_back().map_or(1, |k| k + 1);
        let ev = JournalEvent::Session { session_id, name };
        self.record(&ev)?;
        self.apply(ev)?;
        Ok(session_id)
    }

    /// Next unscored task of a session, with the number still to score.
    pub fn next_task(&self, session_id: u64) -> std::result::Result<Option<(&RatingTask, usize)>, ApiError> {
        let s = self
            .sessions
            .get(&session_id)
            .ok_or_else(|| ApiError::not_found(format!("unknown session {session_id}")))?;
        let pending: Vec<usize> = s
            .order
            .iter()
            .copied()
            .filter(|&t| !self.scores.contains_key(&(session_id, t)))
            .collect();
        Ok(pending.first().map(|&t| (&self.tasks[t], pending.len())))
    }

    pub fn submit(&mut self, session_id: u64, task_id: &str, score: f64) -> std::result::Result<(), ApiError> {
        self.ensure_open()?;
        if !self.sessions.contains_key(&session_id) {
            return Err(ApiError::not_found(format!("unknown session {session_id}")));
        }
        let t = self
            .task_index(task_id)
            .map_err(|e| ApiError::not_found(e.to_string()))?;
        if !(0.0..=MAX_SCORE).contains(&score) {
            return Err(ApiError::bad_request(format!("score {score} outside [0, 10]")));
        }
        if self.scores.contains_key(&(session_id, t)) {
            return Err(ApiError::conflict(format!(
                "session {session_id} already scored {task_id}"
            )));
        }
        let ev = JournalEvent::Score {
            session_id,
            task_id: task_id.to_string(),
            score,
        };
        self.record(&ev)?;
        self.apply(ev)?;
        Ok(())
    }

    pub fn progress(&self) -> Progress {
        Progress {
            tasks: self
                .tasks
                .iter()
                .enumerate()
                .map(|(i, t)| TaskProgress {
                    task_id: t.task_id.clone(),
                    n_scores: self.scores.keys().filter(|(_, ti)| *ti == i).count(),
                })
                .collect(),
            subjects: self.sessions.len(),
            expected_subjects: self.expected_subjects,
            finalized: self.finalized.is_some(),
        }
    }

    /// Scores per subject, keyed by sample id. Subject ids are session ids.
    pub fn export_scores(&self) -> Vec<SubjectScores> {
        self.sessions
            .keys()
            .map(|&sid| SubjectScores {
                subject_id: format!("session-{sid:04}"),
                scores: self
                    .scores
                    .range((sid, 0)..(sid + 1, 0))
                    .map(|(&(_, t), &v)| (self.tasks[t].sample_id.clone(), v))
                    .collect(),
            })
            .collect()
    }

    pub fn finalize(&mut self) -> std::result::Result<FinalizeResponse, ApiError> {
        self.ensure_open()?;
        let progress = self.progress();
        if progress.tasks.iter().any(|t| t.n_scores < MIN_SCORES_PER_TASK) {
            return Err(ApiError {
                status: StatusCode::CONFLICT,
                body: serde_json::json!({
                    "error": format!("every task needs at least {MIN_SCORES_PER_TASK} scores"),
                    "progress": progress,
                }),
            });
        }
        // label first so a failing pass leaves the store open
        write_labels(&self.manifest_path, &self.export_scores())?;
        self.record(&JournalEvent::Finalize)?;
        Ok(self.apply(JournalEvent::Finalize)?.expect("finalize returns a response"))
    }

    pub fn finalized(&self) -> Option<&FinalizeResponse> {
        self.finalized.as_ref()
    }
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: serde_json::Value,
}

impl ApiError {
    fn with(status: StatusCode, msg: impl Into<String>) -> Self {
        Self {
            status,
            body: serde_json::json!({ "error": msg.into() }),
        }
    }
    fn conflict(msg: impl Into<String>) -> Self {
        Self::with(StatusCode::CONFLICT, msg)
    }
    fn not_found(msg: impl Into<String>) -> Self {
        Self::with(StatusCode::NOT_FOUND, msg)
    }
    fn bad_request(msg: impl Into<String>) -> Self {
        Self::with(StatusCode::BAD_REQUEST, msg)
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.status, self.body)
    }
}

impl std::error::Error for ApiError {}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Protocol(_) | Error::Label(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::with(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

#[derive(Clone)]
pub struct AppState {
    store: Arc<Mutex<RatingStore>>,
    ui_dir: Option<PathBuf>,
    on_finalize: Arc<tokio::sync::Notify>,
}

impl AppState {
    pub fn new(store: RatingStore, ui_dir: Option<PathBuf>) -> Self {
        Self {
            store: Arc::new(Mutex::new(store)),
            ui_dir,
            on_finalize: Arc::new(tokio::sync::Notify::new()),
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, RatingStore> {
        self.store.lock().unwrap_or_else(|p| p.into_inner())
    }
}

#[derive(Deserialize)]
struct NewSession {
    #[serde(default)]
    name: String,
}

#[derive(Deserialize)]
struct SessionQuery {
    session_id: u64,
}

#[derive(Deserialize)]
struct ScoreBody {
    session_id: u64,
    task_id: String,
    score: f64,
}

type ApiResult<T> = std::result::Result<T, ApiError>;

async fn post_session(State(s): State<AppState>, Json(body): Json<NewSession>) -> ApiResult<Json<serde_json::Value>> {
    let id = s.lock().create_session(body.name)?;
    Ok(Json(serde_json::json!({ "session_id": id })))
}

async fn get_task(State(s): State<AppState>, Query(q): Query<SessionQuery>) -> ApiResult<Json<serde_json::Value>> {
    let store = s.lock();
    Ok(Json(match store.next_task(q.session_id)? {
        Some((task, remaining)) => serde_json::json!({
            "task_id": task.task_id,
            "ref_url": format!("/api/image/{}/ref", task.task_id),
            "test_url": format!("/api/image/{}/test", task.task_id),
            "remaining": remaining,
        }),
        None => serde_json::json!({ "done": true }),
    }))
}

async fn post_score(State(s): State<AppState>, Json(body): Json<ScoreBody>) -> ApiResult<Json<serde_json::Value>> {
    s.lock().submit(body.session_id, &body.task_id, body.score)?;
    Ok(Json(serde_json::json!({ "ok": true })))
}

async fn get_progress(State(s): State<AppState>) -> Json<Progress> {
    Json(s.lock().progress())
}

async fn post_finalize(State(s): State<AppState>) -> ApiResult<Json<FinalizeResponse>> {
    let out = s.lock().finalize()?;
    s.on_finalize.notify_one();
    Ok(Json(out))
}

async fn get_image(State(s): State<AppState>, UrlPath((task_id, which)): UrlPath<(String, String)>) -> ApiResult<Response> {
    let path = {
        let store = s.lock();
        let t = store
            .tasks()
            .iter()
            .find(|t| t.task_id == task_id)
            .ok_or_else(|| ApiError::not_found(format!("unknown task {task_id}")))?;
        match which.as_str() {
            "ref" => t.reference_path.clone(),
            "test" => t.test_path.clone(),
            _ => return Err(ApiError::not_found(format!("no image `{which}`"))),
        }
    };
    let png = encode_png(&read_image(&path)?)?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js") | Some("mjs") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        _ => "application/octet-stream",
    }
}

async fn static_file(State(s): State<AppState>, uri: axum::http::Uri) -> Response {
    let rel = uri.path().trim_start_matches('/');
    let rel = if rel.is_empty() { "index.html" } else { rel };
    match &s.ui_dir {
        Some(dir) if !rel.split('/').any(|c| c == "..") => match std::fs::read(dir.join(rel)) {
            Ok(bytes) => ([(header::CONTENT_TYPE, content_type(Path::new(rel)))], bytes).into_response(),
            Err(_) => StatusCode::NOT_FOUND.into_response(),
        },
        Some(_) => StatusCode::NOT_FOUND.into_response(),
        None if rel == "index.html" => Html(FALLBACK_PAGE).into_response(),
        None => StatusCode::NOT_FOUND.into_response(),
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/session", post(post_session))
        .route("/api/task", get(get_task))
        .route("/api/score", post(post_score))
        .route("/api/progress", get(get_progress))
        .route("/api/finalize", post(post_finalize))
        .route("/api/image/{task_id}/{which}", get(get_image))
        .fallback(get(static_file))
        .with_state(state)
}

/// Serves until the store is finalized (or already was), then returns the
/// finalization result.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> Result<FinalizeResponse> {
    if let Some(done) = state.lock().finalized().cloned() {
        return Ok(done);
    }
    let notify = state.on_finalize.clone();
    let app = router(state.clone());
    axum::serve(listener, app)
        .with_graceful_shutdown(async move { notify.notified().await })
        .await
        .map_err(|e| Error::io("rating service", e))?;
    let out = state.lock().finalized().cloned();
    out.ok_or_else(|| Error::Protocol("service stopped before finalization".into()))
}

const FALLBACK_PAGE: &str = r#"<!doctype html>
<html><head><meta charset="utf-8"><title>Rating</title></head>
<body>
<div id="pair" hidden>
  <figure><figcaption>Reference (10)</figcaption><img id="ref"></figure>
  <figure><figcaption>Test</figcaption><img id="test"></figure>
  <input id="score" type="range" min="0" max="10" step="0.1" value="5">
  <output id="val">5.0</output> <button id="send">Submit</button>
  <p id="left"></p>
</div>
<p id="msg"></p>
<script>
let sid, task;
const $ = (id) => document.getElementById(id);
$("score").oninput = () => { $("val").textContent = Number($("score").value).toFixed(1); };
async function next() {
  const t = await (await fetch("/api/task?session_id=" + sid)).json();
  if (t.done) { $("pair").hidden = true; $("msg").textContent = "Done, thank you."; return; }
  task = t; $("ref").src = t.ref_url; $("test").src = t.test_url;
  $("score").value = 5; $("val").textContent = "5.0";
  $("left").textContent = t.remaining + " left"; $("pair").hidden = false;
}
$("send").onclick = async () => {
  await fetch("/api/score", { method: "POST", headers: { "content-type": "application/json" },
    body: JSON.stringify({ session_id: sid, task_id: task.task_id, score: Number($("score").value) }) });
  next();
};
(async () => {
  const r = await fetch("/api/session", { method: "POST", headers: { "content-type": "application/json" },
    body: JSON.stringify({ name: prompt("Your name") || "" }) });
  sid = (await r.json()).session_id; next();
})();
</script>
</body></html>
"#;
