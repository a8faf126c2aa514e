//! HTTP service backing the expert review workflow.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Instant;

use anyhow::{Context, Result};
use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{any, get, post};
use axum::{Json, Router};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

use tablepipe_core::eval::{canonical_equal, EquivalenceOptions};
use tablepipe_core::interp::{execute_program, ExecutionLimits};
use tablepipe_core::task::{load_tasks, Decision, TaskInstance, Verdict};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VerdictRecord {
    task_id: String,
    #[serde(flatten)]
    verdict: Verdict,
}

/// Append-only NDJSON log of verdicts; the latest record per
/// (task, reviewer) wins. Each record is one `write` followed by an fsync,
/// and a torn trailing line is cut off on open.
pub struct VerdictStore {
    path: PathBuf,
    file: Mutex<File>,
    latest: RwLock<BTreeMap<(String, String), Verdict>>,
}

impl VerdictStore {
    pub fn open(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(path)
            .with_context(|| format!("opening verdict log {}", path.display()))?;
        let mut text = String::new();
        file.read_to_string(&mut text)?;
        let complete = text.rfind('\n').map_or(0, |i| i + 1);
        if complete < text.len() {
            log::warn!("dropping a torn record at the end of {}", path.display());
            file.set_len(complete as u64)?;
            file.seek(std::io::SeekFrom::End(0))?;
        }
        let mut latest = BTreeMap::new();
        for (n, line) in text[..complete].lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<VerdictRecord>(line) {
                Ok(r) => {
                    latest.insert((r.task_id, r.verdict.reviewer.clone()), r.verdict);
                }
                Err(e) => log::warn!("{}:{}: skipping bad record: {e}", path.display(), n + 1),
            }
        }
        Ok(VerdictStore {
            path: path.to_path_buf(),
            file: Mutex::new(file),
            latest: RwLock::new(latest),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, task_id: &str, verdict: Verdict) -> Result<()> {
        let record = VerdictRecord {
            task_id: task_id.to_string(),
            verdict,
        };
        let mut line = serde_json::to_string(&record)?;
        line.push('\n');
        let mut file = self.file.lock().unwrap_or_else(|e| e.into_inner());
        file.write_all(line.as_bytes())?;
        file.sync_data()?;
        let key = (record.task_id, record.verdict.reviewer.clone());
        self.latest
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(key, record.verdict);
        Ok(())
    }

    pub fn for_task(&self, task_id: &str) -> Vec<Verdict> {
        self.latest
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .iter()
            .filter(|((t, _), _)| t == task_id)
            .map(|(_, v)| v.clone())
            .collect()
    }

    pub fn all(&self) -> BTreeMap<(String, String), Verdict> {
        self.latest.read().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

/// Cohen's kappa over paired accept/reject decisions. `None` when there are
/// no pairs or chance agreement is already certain.
pub fn cohen_kappa(pairs: &[(Decision, Decision)]) -> Option<f64> {
    if pairs.is_empty() {
        return None;
    }
    let n = pairs.len() as f64;
    let agree = pairs.iter().filter(|(a, b)| a == b).count() as f64 / n;
    let pa = pairs.iter().filter(|(a, _)| *a == Decision::Accept).count() as f64 / n;
    let pb = pairs.iter().filter(|(_, b)| *b == Decision::Accept).count() as f64 / n;
    let chance = pa * pb + (1.0 - pa) * (1.0 - pb);
    if (1.0 - chance).abs() < 1e-12 {
        return None;
    }
    Some((agree - chance) / (1.0 - chance))
}

#[derive(Debug, Clone, Serialize)]
pub struct TaskSummary {
    pub id: String,
    pub difficulty: String,
    pub status: String,
    pub duration_ms: f64,
    /// The fresh run reproduced the gold output.
    pub success: bool,
    pub ops: Vec<String>,
}

struct Loaded {
    task: TaskInstance,
    duration_ms: f64,
    success: bool,
}

pub struct AppState {
    tasks: IndexMap<String, Loaded>,
    store: Arc<VerdictStore>,
}

fn fresh_run(task: &TaskInstance) -> (std::result::Result<tablepipe_core::table::Table, String>, f64) {
    let t0 = Instant::now();
    let result = task
        .input_set()
        .map_err(|e| e.to_string())
        .and_then(|inputs| {
            execute_program(&inputs, &task.bound_program(), ExecutionLimits::default())
                .map(|o| o.table)
                .map_err(|e| e.to_string())
        });
    (result, t0.elapsed().as_secs_f64() * 1000.0)
}

impl AppState {
    pub fn load(tasks_dir: &Path, verdicts: &Path) -> Result<Self> {
        let eq = EquivalenceOptions::default();
        let mut tasks = IndexMap::new();
        for task in load_tasks(tasks_dir)? {
            let (result, duration_ms) = fresh_run(&task);
            let success = result.is_ok_and(|t| canonical_equal(&t, &task.output, &eq));
            tasks.insert(
                task.id.clone(),
                Loaded {
                    task,
                    duration_ms,
                    success,
                },
            );
        }
        Ok(AppState {
            tasks,
            store: Arc::new(VerdictStore::open(verdicts)?),
        })
    }

    fn status(&self, id: &str) -> &'static str {
        let vs = self.store.for_task(id);
        if vs.is_empty() {
            "pending"
        } else if vs.iter().all(|v| v.decision == Decision::Accept) {
            "accepted"
        } else if vs.iter().all(|v| v.decision == Decision::Reject) {
            "rejected"
        } else {
            "disputed"
        }
    }

    fn summary(&self, l: &Loaded) -> TaskSummary {
        TaskSummary {
            id: l.task.id.clone(),
            difficulty: l.task.difficulty.as_str().to_string(),
            status: self.status(&l.task.id).to_string(),
            duration_ms: l.duration_ms,
            success: l.success,
            ops: l.task.program.kinds().iter().map(|k| k.name().to_string()).collect(),
        }
    }
}

type Shared = Arc<AppState>;

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({"error": message.into()}))).into_response()
}

#[derive(Debug, Deserialize)]
struct ListQuery {
    page: Option<usize>,
    per_page: Option<usize>,
    difficulty: Option<String>,
    status: Option<String>,
}

const MAX_PER_PAGE: usize = 500;

async fn list_tasks(State(s): State<Shared>, Query(q): Query<ListQuery>) -> Response {
    let per_page = q.per_page.unwrap_or(50).clamp(1, MAX_PER_PAGE);
    let page = q.page.unwrap_or(1).max(1);
    let items: Vec<TaskSummary> = s
        .tasks
        .values()
        .map(|l| s.summary(l))
        .filter(|t| q.difficulty.as_ref().is_none_or(|d| &t.difficulty == d))
        .filter(|t| q.status.as_ref().is_none_or(|st| &t.status == st))
        .collect();
    let total = items.len();
    let page_items: Vec<&TaskSummary> = items.iter().skip((page - 1) * per_page).take(per_page).collect();
    Json(json!({
        "total": total,
        "page": page,
        "per_page": per_page,
        "items": page_items,
    }))
    .into_response()
}

async fn get_task(State(s): State<Shared>, UrlPath(id): UrlPath<String>) -> Response {
    let Some(l) = s.tasks.get(&id) else {
        return error(StatusCode::NOT_FOUND, format!("unknown task '{id}'"));
    };
    let (result, duration_ms) = fresh_run(&l.task);
    let (actual, actual_error) = match result {
        Ok(t) => (Some(t), None),
        Err(e) => (None, Some(e)),
    };
    let matches = actual
        .as_ref()
        .is_some_and(|t| canonical_equal(t, &l.task.output, &EquivalenceOptions::default()));
    Json(json!({
        "summary": s.summary(l),
        "task": l.task,
        "actual": actual,
        "actual_error": actual_error,
        "actual_duration_ms": duration_ms,
        "matches": matches,
        "verdicts": s.store.for_task(&id),
    }))
    .into_response()
}

async fn post_verdict(State(s): State<Shared>, UrlPath(id): UrlPath<String>, body: Bytes) -> Response {
    if !s.tasks.contains_key(&id) {
        return error(StatusCode::NOT_FOUND, format!("unknown task '{id}'"));
    }
    let mut verdict: Verdict = match serde_json::from_slice(&body) {
        Ok(v) => v,
        Err(e) => return error(StatusCode::UNPROCESSABLE_ENTITY, format!("malformed verdict: {e}")),
    };
    if let Err(e) = verdict.validate() {
        return error(StatusCode::UNPROCESSABLE_ENTITY, e);
    }
    if verdict.timestamp.trim().is_empty() {
        verdict.timestamp = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
    }
    let store = s.store.clone();
    let stored = verdict.clone();
    let written = tokio::task::spawn_blocking(move || store.append(&id, stored)).await;
    match written {
        Ok(Ok(())) => (StatusCode::CREATED, Json(verdict)).into_response(),
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, format!("storing verdict: {e}")),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReviewStats {
    pub total: usize,
    pub success_rate: f64,
    pub difficulty: IndexMap<String, usize>,
    pub reviewed: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub disputed: usize,
    pub verdicts: usize,
    pub reviewers: usize,
    /// Share of reviewer pairs on a shared task that made the same decision.
    pub agreement: Option<f64>,
    /// Cohen's kappa pooled over every reviewer pair.
    pub kappa: Option<f64>,
}

fn review_stats(s: &AppState) -> ReviewStats {
    let mut difficulty: IndexMap<String, usize> = ["easy", "medium", "hard"]
        .into_iter()
        .map(|d| (d.to_string(), 0))
        .collect();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for l in s.tasks.values() {
        *difficulty.entry(l.task.difficulty.as_str().to_string()).or_default() += 1;
        *counts.entry(s.status(&l.task.id)).or_default() += 1;
    }
    let all = s.store.all();
    let reviewers: BTreeSet<&str> = all.keys().map(|(_, r)| r.as_str()).collect();
    let mut by_task: BTreeMap<&str, Vec<Decision>> = BTreeMap::new();
    for ((t, _), v) in &all {
        by_task.entry(t.as_str()).or_default().push(v.decision);
    }
    let mut pairs = Vec::new();
    for ds in by_task.values() {
        for i in 0..ds.len() {
            for j in i + 1..ds.len() {
                pairs.push((ds[i], ds[j]));
            }
        }
    }
    let total = s.tasks.len();
    let ok = s.tasks.values().filter(|l| l.success).count();
    let get = |k: &str| counts.get(k).copied().unwrap_or(0);
    ReviewStats {
        total,
        success_rate: if total == 0 { 0.0 } else { ok as f64 / total as f64 },
        difficulty,
        reviewed: total - get("pending"),
        accepted: get("accepted"),
        rejected: get("rejected"),
        disputed: get("disputed"),
        verdicts: all.len(),
        reviewers: reviewers.len(),
        agreement: (!pairs.is_empty())
            .then(|| pairs.iter().filter(|(a, b)| a == b).count() as f64 / pairs.len() as f64),
        kappa: cohen_kappa(&pairs),
    }
}

async fn get_stats(State(s): State<Shared>) -> Response {
    Json(review_stats(&s)).into_response()
}

async fn api_not_found() -> Response {
    error(StatusCode::NOT_FOUND, "no such endpoint")
}

pub fn router(state: AppState, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/tasks", get(list_tasks))
        .route("/api/tasks/{id}", get(get_task))
        .route("/api/tasks/{id}/verdict", post(post_verdict))
        .route("/api/stats", get(get_stats))
        .route("/api/{*rest}", any(api_not_found))
        .with_state(Arc::new(state));
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(|| async { error(StatusCode::NOT_FOUND, "not found") }),
    }
}

pub async fn serve(state: AppState, static_dir: Option<&Path>, addr: &str) -> Result<()> {
    let app = router(state, static_dir);
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    log::info!("review service on http://{}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use Decision::{Accept as A, Reject as R};

    #[test]
    fn kappa_hand_computed() {
        // 10 pairs: 4 AA, 1 AR, 2 RA, 3 RR. p_o = 0.7,
        // p_a(first) = 0.5, p_a(second) = 0.6, p_e = 0.3 + 0.2 = 0.5.
        let mut pairs = vec![(A, A); 4];
        pairs.push((A, R));
        pairs.extend([(R, A); 2]);
        pairs.extend([(R, R); 3]);
        assert!((cohen_kappa(&pairs).unwrap() - 0.4).abs() < 1e-12);
        assert_eq!(cohen_kappa(&[(A, A), (A, A)]), None);
        assert_eq!(cohen_kappa(&[(A, R), (R, A)]), Some(-1.0));
        assert_eq!(cohen_kappa(&[]), None);
    }
}
