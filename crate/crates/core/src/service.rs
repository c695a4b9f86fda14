//! HTTP API over runs, the expert query queue and the knowledge repository.
//!
//! Each run is owned by one worker thread that executes commands in order.
//! Handlers never touch the runner; they read a view that the event log
//! observer keeps current, so a run blocked on an expert never blocks reads.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, RwLock};

use axum::extract::{Path as UrlPath, Query as UrlQuery, Request, State};
use axum::http::{HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tokio::sync::oneshot;

use crate::config::{load_seed, RunConfig};
use crate::events::{EventLog, EventRecord};
use crate::harness::{write_jsonl, AgentState, Instance, RunMetrics, Runner};
use crate::kr::{KnowledgeItem, Status};
use crate::oracle::{AnswerSubmission, PendingQuery, PendingStatus, QueryQueue, QueueError};

pub const TOKEN_HEADER: &str = "x-hitl-token";

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("cannot bind {addr}: {reason}")]
    BindFailure { addr: String, reason: String },
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, Default)]
pub struct ServiceOptions {
    /// Shared secret expected in the token header.
    pub token: Option<String>,
    /// Where run logs live. In-memory when absent.
    pub data_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Idle,
    Running,
    Finished,
}

struct RunView {
    state: AgentState,
    events: Vec<EventRecord>,
    status: RunStatus,
    total: usize,
    last_error: Option<String>,
    /// Failure of the event observer itself; the view is stale after this.
    view_error: Option<String>,
}

struct AdvanceReply {
    advanced: u64,
    error: Option<String>,
}

enum Command {
    Advance {
        steps: u64,
        reply: Option<oneshot::Sender<AdvanceReply>>,
    },
}

struct RunHandle {
    view: Arc<RwLock<RunView>>,
    tx: Option<mpsc::Sender<Command>>,
}

pub struct Service {
    opts: ServiceOptions,
    queue: Arc<QueryQueue>,
    runs: RwLock<BTreeMap<String, Arc<RunHandle>>>,
    counter: AtomicU64,
}

/// Body of `POST /runs`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRun {
    #[serde(default)]
    pub config: RunConfig,
    /// Inline stream; replaces `config.stream`.
    #[serde(default)]
    pub instances: Option<Vec<Instance>>,
    /// Inline initial knowledge; replaces `config.kr0`.
    #[serde(default)]
    pub seed_items: Option<Vec<KnowledgeItem>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub status: RunStatus,
    pub processed: u64,
    pub total: usize,
    pub last_seq: u64,
    pub budget: BudgetView,
    pub pending_queries: usize,
    pub last_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetView {
    pub total: u64,
    pub spent: u64,
    pub remaining: u64,
    pub by_kind: BTreeMap<String, u64>,
}

#[derive(Debug)]
pub struct ApiError(StatusCode, String);

impl ApiError {
    fn new(code: StatusCode, msg: impl Into<String>) -> Self {
        ApiError(code, msg.into())
    }

    fn not_found(what: impl Into<String>) -> Self {
        ApiError(StatusCode::NOT_FOUND, what.into())
    }

    fn bad(msg: impl Into<String>) -> Self {
        ApiError(StatusCode::BAD_REQUEST, msg.into())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn budget_view(st: &AgentState) -> BudgetView {
    let mut by_kind = BTreeMap::new();
    for e in &st.ledger.entries {
        *by_kind.entry(e.kind.as_str().to_string()).or_insert(0) += u64::from(e.cost);
    }
    BudgetView {
        total: st.ledger.total,
        spent: st.ledger.spent,
        remaining: st.ledger.remaining(),
        by_kind,
    }
}

impl Service {
    pub fn new(opts: ServiceOptions) -> Arc<Service> {
        Arc::new(Service {
            opts,
            queue: QueryQueue::new(),
            runs: RwLock::new(BTreeMap::new()),
            counter: AtomicU64::new(0),
        })
    }

    pub fn queue(&self) -> &Arc<QueryQueue> {
        &self.queue
    }

    fn handle(&self, run_id: &str) -> ApiResult<Arc<RunHandle>> {
        self.runs
            .read()
            .expect("runs lock")
            .get(run_id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("no run {run_id}")))
    }

    fn paths(&self, run_id: &str) -> Option<(PathBuf, PathBuf)> {
        self.opts.data_dir.as_ref().map(|d| {
            (
                d.join(format!("{run_id}.events.jsonl")),
                d.join(format!("{run_id}.stream.jsonl")),
            )
        })
    }

    fn fresh_id(&self) -> String {
        loop {
            let n = self.counter.fetch_add(1, Ordering::SeqCst) + 1;
            let id = format!("run-{n:04}");
            if !self.runs.read().expect("runs lock").contains_key(&id) {
                return id;
            }
        }
    }

    /// Validates the request, writes the start record and spawns the worker.
    pub fn create_run(&self, req: CreateRun) -> ApiResult<RunSummary> {
        let mut cfg = req.config;
        let run_id = cfg.run_id.clone().unwrap_or_else(|| self.fresh_id());
        if run_id.is_empty()
            || !run_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        {
            return Err(ApiError::bad("run_id may use letters, digits, '-' and '_'"));
        }
        if self.runs.read().expect("runs lock").contains_key(&run_id) {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                format!("run {run_id} exists"),
            ));
        }
        cfg.run_id = Some(run_id.clone());
        cfg.validate().map_err(|e| ApiError::bad(e.to_string()))?;

        let paths = self.paths(&run_id);
        let stream = match req.instances {
            Some(inst) => {
                if let Some((_, stream_path)) = &paths {
                    write_jsonl(stream_path, &inst).map_err(|e| {
                        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
                    })?;
                    cfg.stream = Some(stream_path.clone());
                }
                inst
            }
            None => match &cfg.stream {
                Some(p) => crate::harness::load_stream(p).map_err(ApiError::bad)?,
                None => return Err(ApiError::bad("give config.stream or instances")),
            },
        };
        let mut built = cfg
            .build_with(&run_id, Some(self.queue.clone()), stream)
            .map_err(|e| ApiError::bad(e.to_string()))?;
        if let Some(items) = req.seed_items {
            built.seed = items;
            cfg.kr0 = None;
        }
        // Keep the seed alongside the log so the run can be rebuilt.
        if let (Some(dir), false) = (&self.opts.data_dir, built.seed.is_empty()) {
            let p = dir.join(format!("{run_id}.kr0.jsonl"));
            write_jsonl(&p, &built.seed)
                .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
            cfg.kr0 = Some(p);
        }

        let mut log = match &paths {
            Some((events, _)) => EventLog::create(events)
                .map_err(|e| ApiError::new(StatusCode::CONFLICT, e.to_string()))?,
            None => EventLog::in_memory(),
        };
        let total = built.stream.len();
        let view = new_view(total);
        attach_observer(&mut log, &view);
        let runner = Runner::start(
            &run_id,
            built.params,
            built.providers,
            log,
            built.stream,
            built.seed,
            cfg.snapshot(),
        )
        .map_err(|e| ApiError::bad(e.to_string()))?;
        self.install(run_id.clone(), view, Some(runner));
        self.summary(&run_id)
    }

    fn install(&self, run_id: String, view: Arc<RwLock<RunView>>, runner: Option<Runner>) {
        let tx = runner.map(|r| spawn_worker(r, view.clone()));
        self.runs
            .write()
            .expect("runs lock")
            .insert(run_id, Arc::new(RunHandle { view, tx }));
    }

    /// Reloads every run found in the data directory. Unfinished runs are
    /// resumed; an expert question that was open is asked again.
    pub fn recover(&self) -> Result<Vec<String>, ServiceError> {
        let Some(dir) = &self.opts.data_dir else {
            return Ok(Vec::new());
        };
        let mut found = Vec::new();
        let entries = std::fs::read_dir(dir)
            .map_err(|e| ServiceError::Io(format!("{}: {e}", dir.display())))?;
        let mut logs: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.to_string_lossy().ends_with(".events.jsonl"))
            .collect();
        logs.sort();
        for path in logs {
            let run_id = recover_one(self, &path)?;
            found.push(run_id);
        }
        Ok(found)
    }

    pub fn summary(&self, run_id: &str) -> ApiResult<RunSummary> {
        let h = self.handle(run_id)?;
        let v = h.view.read().expect("view lock");
        let pending = self
            .queue
            .pending(Some(run_id))
            .into_iter()
            .filter(|p| p.status == PendingStatus::Pending)
            .count();
        Ok(RunSummary {
            run_id: run_id.to_string(),
            status: v.status,
            processed: v.state.steps.len() as u64,
            total: v.total,
            last_seq: v.state.last_seq,
            budget: budget_view(&v.state),
            pending_queries: pending,
            last_error: v.last_error.clone().or_else(|| v.view_error.clone()),
        })
    }

    /// Queues `steps` steps. With `wait`, returns once they have run.
    pub async fn advance(&self, run_id: &str, steps: u64, wait: bool) -> ApiResult<Value> {
        let h = self.handle(run_id)?;
        let Some(tx) = &h.tx else {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                format!("run {run_id} is finished"),
            ));
        };
        let (reply, rx) = if wait {
            let (s, r) = oneshot::channel();
            (Some(s), Some(r))
        } else {
            (None, None)
        };
        tx.send(Command::Advance { steps, reply })
            .map_err(|_| ApiError::new(StatusCode::GONE, format!("run {run_id} has stopped")))?;
        match rx {
            None => Ok(json!({ "queued": steps })),
            Some(rx) => {
                let r = rx
                    .await
                    .map_err(|_| ApiError::new(StatusCode::GONE, "worker stopped"))?;
                let status = h.view.read().expect("view lock").status;
                Ok(json!({ "advanced": r.advanced, "status": status, "error": r.error }))
            }
        }
    }

    fn with_view<T>(&self, run_id: &str, f: impl FnOnce(&RunView) -> T) -> ApiResult<T> {
        let h = self.handle(run_id)?;
        let v = h.view.read().expect("view lock");
        Ok(f(&v))
    }
}

fn new_view(total: usize) -> Arc<RwLock<RunView>> {
    Arc::new(RwLock::new(RunView {
        state: AgentState::default(),
        events: Vec::new(),
        status: RunStatus::Idle,
        total,
        last_error: None,
        view_error: None,
    }))
}

fn attach_observer(log: &mut EventLog, view: &Arc<RwLock<RunView>>) {
    let v = view.clone();
    log.set_observer(move |rec| {
        let mut v = v.write().expect("view lock");
        if v.view_error.is_none() {
            if let Err(e) = v.state.apply_record(rec) {
                v.view_error = Some(e.to_string());
            }
        }
        v.events.push(rec.clone());
    });
}

fn recover_one(svc: &Service, path: &Path) -> Result<String, ServiceError> {
    let records = EventLog::load(path).map_err(|e| ServiceError::Io(e.to_string()))?;
    let state = AgentState::replay(&records)
        .map_err(|e| ServiceError::Io(format!("{}: {e}", path.display())))?;
    let started = state
        .started
        .clone()
        .ok_or_else(|| ServiceError::Io(format!("{}: no start record", path.display())))?;
    let cfg: RunConfig = serde_json::from_value(started.config.clone())
        .map_err(|e| ServiceError::ConfigInvalid(format!("{}: {e}", path.display())))?;
    let run_id = started.run_id.clone();
    let built = cfg
        .build(&run_id, Some(svc.queue.clone()))
        .map_err(|e| ServiceError::ConfigInvalid(e.to_string()))?;
    let view = new_view(built.stream.len());
    if state.finished {
        {
            let mut v = view.write().expect("view lock");
            v.state = state;
            v.events = records;
            v.status = RunStatus::Finished;
        }
        svc.install(run_id.clone(), view, None);
        return Ok(run_id);
    }
    let mut log = EventLog::open(path).map_err(|e| ServiceError::Io(e.to_string()))?;
    {
        let mut v = view.write().expect("view lock");
        v.state = state;
        v.events = log.records().to_vec();
    }
    attach_observer(&mut log, &view);
    let runner = Runner::resume(built.params, built.providers, log, built.stream)
        .map_err(|e| ServiceError::Io(format!("{run_id}: {e}")))?;
    svc.install(run_id.clone(), view, Some(runner));
    Ok(run_id)
}

fn spawn_worker(mut runner: Runner, view: Arc<RwLock<RunView>>) -> mpsc::Sender<Command> {
    let (tx, rx) = mpsc::channel::<Command>();
    let name = format!("run-{}", runner.run_id());
    std::thread::Builder::new()
        .name(name)
        .spawn(move || {
            while let Ok(cmd) = rx.recv() {
                match cmd {
                    Command::Advance { steps, reply } => {
                        view.write().expect("view lock").status = RunStatus::Running;
                        let mut advanced = 0;
                        let mut error = None;
                        while advanced < steps && !runner.is_done() {
                            match runner.advance(1) {
                                Ok(n) => advanced += n,
                                Err(e) => {
                                    error = Some(e.to_string());
                                    break;
                                }
                            }
                        }
                        if error.is_none() && runner.is_done() {
                            if let Err(e) = runner.finish() {
                                error = Some(e.to_string());
                            }
                        }
                        {
                            let mut v = view.write().expect("view lock");
                            v.status = if runner.state().finished {
                                RunStatus::Finished
                            } else {
                                RunStatus::Idle
                            };
                            if error.is_some() {
                                v.last_error = error.clone();
                            }
                        }
                        if let Some(r) = reply {
                            let _ = r.send(AdvanceReply { advanced, error });
                        }
                    }
                }
            }
        })
        .expect("spawn run worker");
    tx
}

#[derive(Debug, Deserialize)]
struct AdvanceParams {
    #[serde(default = "one")]
    steps: u64,
    #[serde(default)]
    wait: bool,
}

fn one() -> u64 {
    1
}

#[derive(Debug, Deserialize)]
struct EventsParams {
    #[serde(default)]
    from: Option<u64>,
    #[serde(default)]
    limit: Option<usize>,
}

#[derive(Debug, Deserialize)]
struct ItemsParams {
    #[serde(default)]
    status: Option<String>,
    #[serde(default)]
    q: Option<String>,
}

#[derive(Debug, Serialize)]
struct ItemView {
    run_id: String,
    #[serde(flatten)]
    item: KnowledgeItem,
    status_label: String,
}

type Svc = State<Arc<Service>>;

async fn auth(State(svc): Svc, headers: HeaderMap, req: Request, next: Next) -> Response {
    if let Some(expected) = &svc.opts.token {
        let given = headers
            .get(TOKEN_HEADER)
            .and_then(|v| v.to_str().ok())
            .or_else(|| {
                headers
                    .get(axum::http::header::AUTHORIZATION)
                    .and_then(|v| v.to_str().ok())
                    .and_then(|v| v.strip_prefix("Bearer "))
            });
        if given != Some(expected.as_str()) {
            return ApiError::new(StatusCode::UNAUTHORIZED, "missing or wrong token")
                .into_response();
        }
    }
    next.run(req).await
}

async fn create_run(
    State(svc): Svc,
    Json(req): Json<CreateRun>,
) -> ApiResult<(StatusCode, Json<RunSummary>)> {
    let s = tokio::task::spawn_blocking(move || svc.create_run(req))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok((StatusCode::CREATED, Json(s)))
}

async fn list_runs(State(svc): Svc) -> ApiResult<Json<Vec<RunSummary>>> {
    let ids: Vec<String> = svc
        .runs
        .read()
        .expect("runs lock")
        .keys()
        .cloned()
        .collect();
    ids.iter()
        .map(|id| svc.summary(id))
        .collect::<ApiResult<Vec<_>>>()
        .map(Json)
}

async fn get_run(State(svc): Svc, UrlPath(id): UrlPath<String>) -> ApiResult<Json<RunSummary>> {
    svc.summary(&id).map(Json)
}

async fn advance(
    State(svc): Svc,
    UrlPath(id): UrlPath<String>,
    UrlQuery(p): UrlQuery<AdvanceParams>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let v = svc.advance(&id, p.steps, p.wait).await?;
    let code = if p.wait {
        StatusCode::OK
    } else {
        StatusCode::ACCEPTED
    };
    Ok((code, Json(v)))
}

async fn metrics(State(svc): Svc, UrlPath(id): UrlPath<String>) -> ApiResult<Json<RunMetrics>> {
    svc.with_view(&id, |v| v.state.metrics()).map(Json)
}

async fn events(
    State(svc): Svc,
    UrlPath(id): UrlPath<String>,
    UrlQuery(p): UrlQuery<EventsParams>,
) -> ApiResult<Json<Vec<EventRecord>>> {
    let from = p.from.unwrap_or(1);
    let limit = p.limit.unwrap_or(usize::MAX);
    svc.with_view(&id, |v| {
        v.events
            .iter()
            .filter(|r| r.seq >= from)
            .take(limit)
            .cloned()
            .collect()
    })
    .map(Json)
}

async fn budget(State(svc): Svc, UrlPath(id): UrlPath<String>) -> ApiResult<Json<BudgetView>> {
    svc.with_view(&id, |v| budget_view(&v.state)).map(Json)
}

async fn pending(
    State(svc): Svc,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Json<Vec<PendingQuery>>> {
    svc.handle(&id)?;
    Ok(Json(
        svc.queue
            .pending(Some(&id))
            .into_iter()
            .filter(|p| p.status == PendingStatus::Pending)
            .collect(),
    ))
}

async fn answer(
    State(svc): Svc,
    UrlPath(qid): UrlPath<String>,
    Json(body): Json<AnswerSubmission>,
) -> ApiResult<Json<Value>> {
    match svc.queue.submit(&qid, body) {
        Ok(fb) => Ok(Json(serde_json::to_value(fb).expect("feedback serializes"))),
        Err(e @ QueueError::UnknownQid(_)) => Err(ApiError::not_found(e.to_string())),
        Err(e @ QueueError::Conflict { .. }) => {
            Err(ApiError::new(StatusCode::CONFLICT, e.to_string()))
        }
        Err(e @ QueueError::Invalid(_)) => Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            e.to_string(),
        )),
    }
}

fn filter_items(run_id: &str, st: &AgentState, p: &ItemsParams) -> ApiResult<Vec<ItemView>> {
    let status = match &p.status {
        Some(s) if !s.is_empty() => {
            Some(Status::parse(s).ok_or_else(|| ApiError::bad(format!("unknown status {s:?}")))?)
        }
        _ => None,
    };
    let needle =
        p.q.as_ref()
            .map(|q| q.to_lowercase())
            .filter(|q| !q.is_empty());
    Ok(st
        .repo
        .items()
        .filter(|i| status.is_none_or(|s| i.status == s))
        .filter(|i| {
            needle.as_ref().is_none_or(|n| {
                i.content.text.to_lowercase().contains(n) || i.kid.to_lowercase().contains(n)
            })
        })
        .map(|i| ItemView {
            run_id: run_id.to_string(),
            item: i.clone(),
            status_label: i.status_label(),
        })
        .collect())
}

async fn kr_items(
    State(svc): Svc,
    UrlPath(run): UrlPath<String>,
    UrlQuery(p): UrlQuery<ItemsParams>,
) -> ApiResult<Json<Vec<ItemView>>> {
    svc.with_view(&run, |v| filter_items(&run, &v.state, &p))?
        .map(Json)
}

/// Items across all runs.
async fn kr_items_all(
    State(svc): Svc,
    UrlQuery(p): UrlQuery<ItemsParams>,
) -> ApiResult<Json<Vec<ItemView>>> {
    let ids: Vec<String> = svc
        .runs
        .read()
        .expect("runs lock")
        .keys()
        .cloned()
        .collect();
    let mut out = Vec::new();
    for id in ids {
        out.extend(svc.with_view(&id, |v| filter_items(&id, &v.state, &p))??);
    }
    Ok(Json(out))
}

async fn kr_item(
    State(svc): Svc,
    UrlPath((run, kid)): UrlPath<(String, String)>,
) -> ApiResult<Json<Value>> {
    svc.with_view(&run, |v| {
        let repo = &v.state.repo;
        let item = repo
            .get(&kid)
            .ok_or_else(|| ApiError::not_found(format!("no item {kid} in run {run}")))?;
        // Older versions, nearest first.
        let mut predecessors = Vec::new();
        let mut cur = kid.clone();
        while let Some(prev) = repo.items().find(|i| {
            i.meta.superseded_by.as_deref() == Some(cur.as_str()) && !predecessors.contains(&i.kid)
        }) {
            predecessors.push(prev.kid.clone());
            cur = prev.kid.clone();
        }
        let mut successors = Vec::new();
        let mut cur = item;
        while let Some(next) = cur.meta.superseded_by.as_ref().and_then(|k| repo.get(k)) {
            if successors.contains(&next.kid) || next.kid == kid {
                break;
            }
            successors.push(next.kid.clone());
            cur = next;
        }
        Ok(json!({
            "run_id": run,
            "item": item,
            "status_label": item.status_label(),
            "predecessors": predecessors,
            "successors": successors,
        }))
    })?
    .map(Json)
}

pub fn router(svc: Arc<Service>) -> Router {
    Router::new()
        .route("/runs", post(create_run).get(list_runs))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/advance", post(advance))
        .route("/runs/{id}/metrics", get(metrics))
        .route("/runs/{id}/events", get(events))
        .route("/runs/{id}/budget", get(budget))
        .route("/runs/{id}/queries/pending", get(pending))
        .route("/queries/{qid}/answer", post(answer))
        .route("/kr/items", get(kr_items_all))
        .route("/kr/{run}/items", get(kr_items))
        .route("/kr/{run}/items/{kid}", get(kr_item))
        .layer(middleware::from_fn_with_state(svc.clone(), auth))
        .with_state(svc)
}

/// Binds and serves until the process ends. Reports the bound address
/// through `on_bound` (useful with port 0).
pub async fn serve(
    svc: Arc<Service>,
    addr: SocketAddr,
    on_bound: impl FnOnce(SocketAddr),
) -> Result<(), ServiceError> {
    let listener =
        tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| ServiceError::BindFailure {
                addr: addr.to_string(),
                reason: e.to_string(),
            })?;
    let bound = listener
        .local_addr()
        .map_err(|e| ServiceError::Io(e.to_string()))?;
    on_bound(bound);
    axum::serve(listener, router(svc))
        .await
        .map_err(|e| ServiceError::Io(e.to_string()))
}

/// Reads an initial repository from a file for the service and CLI alike.
pub fn read_seed(path: &Path) -> Result<Vec<KnowledgeItem>, ServiceError> {
    load_seed(path).map_err(|e| ServiceError::ConfigInvalid(e.to_string()))
}
