//! Sessions, fine-tune jobs and the HTTP routes.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering as AtomicOrdering};
use std::sync::{Arc, Mutex, RwLock, RwLockReadGuard, RwLockWriteGuard};
use std::time::{Duration, Instant};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::watch;

use hyperlens_core::engine::{
    now, preview_feedback, Command, DataSource, Engine, EngineState, ModelState,
};
use hyperlens_core::feedback::{Assertion, FeedbackSet, FineTuneConfig};
use hyperlens_core::hierarchy::HierarchyEdit;
use hyperlens_core::hypergraph::{EdgeId, NodeId, TimeIndex};
use hyperlens_core::predictor::{StopReason, TrainConfig};
use hyperlens_core::provenance::{ProvenanceEvent, ProvenanceLog};
use hyperlens_core::reorder::{Axis, Strategy};
use hyperlens_core::search::{search, Page, SearchResults};

use crate::config::EngineConfig;
use crate::error::{ApiError, ApiResult};
use crate::snapshot::{regenerate, SnapshotView};
use crate::viewport::{ordering_id, viewport, Content, Mode, Payload, Resolved, ViewportQuery};

pub const DEFAULT_SESSION: &str = "default";
const MAX_WAIT_MS: u64 = 30_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum JobStatus {
    Running,
    PreviewReady {
        seq: u64,
        after: String,
        /// Largest absolute change per horizon.
        changes: Vec<f64>,
        elapsed_ms: f64,
    },
    Failed {
        code: String,
        message: String,
    },
}

#[derive(Clone, Debug, Serialize)]
pub struct JobInfo {
    pub job: u64,
    pub session: String,
    #[serde(flatten)]
    pub status: JobStatus,
}

struct Job {
    session: String,
    status: watch::Receiver<JobStatus>,
}

/// One analyst session. Reads share the engine lock; commands take it
/// exclusively. A fine-tune runs with no lock held and commits at the end.
pub struct Session {
    pub id: String,
    engine: RwLock<Engine>,
    busy: AtomicBool,
    snapshots: Mutex<HashMap<String, Arc<ModelState>>>,
}

impl Session {
    fn new(engine: Engine) -> Self {
        let s = Session {
            id: engine.session().to_owned(),
            engine: RwLock::new(engine),
            busy: AtomicBool::new(false),
            snapshots: Mutex::new(HashMap::new()),
        };
        s.remember();
        s
    }

    pub fn read(&self) -> RwLockReadGuard<'_, Engine> {
        self.engine.read().unwrap_or_else(|p| p.into_inner())
    }

    fn write(&self) -> RwLockWriteGuard<'_, Engine> {
        self.engine.write().unwrap_or_else(|p| p.into_inner())
    }

    /// Keeps every model the session has shown so snapshots resolve
    /// without a replay.
    fn remember(&self) {
        let e = self.read();
        let mut snaps = self.snapshots.lock().unwrap_or_else(|p| p.into_inner());
        let s = e.state();
        for m in s
            .model
            .iter()
            .cloned()
            .chain(s.pending.iter().map(|tx| tx.after().clone()))
        {
            snaps.entry(m.id.clone()).or_insert(m);
        }
    }

    /// Runs one command as the single writer.
    pub fn execute(&self, cmd: Command) -> ApiResult<u64> {
        if self.busy.load(AtomicOrdering::SeqCst) && !matches!(cmd, Command::Search { .. }) {
            return Err(ApiError::conflict(
                "a fine-tune job is running for this session",
            ));
        }
        let seq = self.write().execute(cmd)?.seq;
        self.remember();
        Ok(seq)
    }

    fn snapshot(&self, id: &str) -> ApiResult<Arc<ModelState>> {
        if let Some(m) = self
            .snapshots
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .get(id)
        {
            return Ok(m.clone());
        }
        let m = regenerate(self.read().log(), id)?;
        self.snapshots
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .insert(id.to_owned(), m.clone());
        Ok(m)
    }
}

pub struct AppState {
    pub config: EngineConfig,
    data_dir: Option<PathBuf>,
    sessions: RwLock<BTreeMap<String, Arc<Session>>>,
    jobs: Mutex<BTreeMap<u64, Job>>,
    next_job: AtomicU64,
}

pub type Shared = Arc<AppState>;

fn valid_session_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 64
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

pub fn session_log_path(data_dir: &Path, id: &str) -> PathBuf {
    data_dir.join("sessions").join(format!("{id}.jsonl"))
}

impl AppState {
    /// Service state; with a data directory every session log found there
    /// is replayed and reopened for appending.
    pub fn new(config: EngineConfig, data_dir: Option<PathBuf>) -> anyhow::Result<Self> {
        let app = AppState {
            config,
            data_dir,
            sessions: RwLock::new(BTreeMap::new()),
            jobs: Mutex::new(BTreeMap::new()),
            next_job: AtomicU64::new(1),
        };
        if let Some(dir) = &app.data_dir {
            let sessions = dir.join("sessions");
            std::fs::create_dir_all(&sessions)?;
            let mut paths: Vec<_> = std::fs::read_dir(&sessions)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
                .collect();
            paths.sort();
            for p in paths {
                let id = p
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or_default()
                    .to_owned();
                if !valid_session_id(&id) {
                    continue;
                }
                let engine = Engine::restore(&id, ProvenanceLog::open(&p)?)
                    .map_err(|e| anyhow::anyhow!("restoring session {id}: {e}"))?;
                log::info!("restored session {id} at event {:?}", engine.head());
                app.insert(Session::new(engine));
            }
        }
        Ok(app)
    }

    fn insert(&self, s: Session) -> Arc<Session> {
        let s = Arc::new(s);
        self.sessions
            .write()
            .unwrap_or_else(|p| p.into_inner())
            .insert(s.id.clone(), s.clone());
        s
    }

    pub fn session(&self, id: Option<&str>) -> ApiResult<Arc<Session>> {
        let id = id.unwrap_or(DEFAULT_SESSION);
        self.sessions
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::unknown_session(id))
    }

    pub fn session_ids(&self) -> Vec<String> {
        self.sessions
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .keys()
            .cloned()
            .collect()
    }

    /// New session whose first event ingests `source`.
    pub fn create_session(
        &self,
        id: &str,
        source: DataSource,
        threshold: Option<f64>,
    ) -> ApiResult<Arc<Session>> {
        if !valid_session_id(id) {
            return Err(ApiError::bad_request(format!(
                "session id {id:?} must be 1-64 characters of [A-Za-z0-9_-]"
            )));
        }
        if self.session(Some(id)).is_ok() {
            return Err(ApiError::conflict(format!("session {id:?} already exists")));
        }
        let cmd = Command::Ingest {
            data: source,
            threshold: Some(threshold.unwrap_or(self.config.view.threshold)),
        };
        // Validate before a log file appears on disk.
        let (state, _) = hyperlens_core::engine::apply(&EngineState::default(), &cmd)?;
        drop(state);
        let log = match &self.data_dir {
            Some(dir) => ProvenanceLog::open(session_log_path(dir, id))?,
            None => ProvenanceLog::in_memory(),
        };
        let mut engine = Engine::with_log(id, log);
        engine.execute(cmd)?;
        Ok(self.insert(Session::new(engine)))
    }

    fn job(&self, id: u64) -> ApiResult<JobInfo> {
        let jobs = self.jobs.lock().unwrap_or_else(|p| p.into_inner());
        let j = jobs
            .get(&id)
            .ok_or_else(|| ApiError::not_found(format!("unknown job {id}")))?;
        let status = j.status.borrow().clone();
        Ok(JobInfo {
            job: id,
            session: j.session.clone(),
            status,
        })
    }

    fn running_job(&self, session: &str) -> Option<u64> {
        let jobs = self.jobs.lock().unwrap_or_else(|p| p.into_inner());
        jobs.iter()
            .rev()
            .find(|(_, j)| j.session == session && *j.status.borrow() == JobStatus::Running)
            .map(|(id, _)| *id)
    }
}

// ---- request and response bodies ----

#[derive(Debug, Default, Deserialize)]
pub struct SessionParam {
    pub session: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AxisEntry {
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    pub leaves: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AxisInfo {
    pub version: u64,
    pub ordering: Option<String>,
    pub entries: Vec<AxisEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelInfo {
    pub id: String,
    pub input_step: usize,
    pub epochs_run: usize,
    pub final_loss: f64,
    pub stop: StopReason,
    /// `(horizon, timestep, confidence)`.
    pub horizons: Vec<(usize, usize, f64)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PreviewInfo {
    pub before: String,
    pub after: String,
    pub changes: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SessionInfo {
    pub id: String,
    pub head: Option<u64>,
    pub events: usize,
    pub nodes: usize,
    pub edges: usize,
    pub time_labels: Vec<String>,
    pub warnings: Vec<String>,
    pub threshold: f64,
    pub model: Option<ModelInfo>,
    pub preview: Option<PreviewInfo>,
    pub job: Option<u64>,
    pub rows: AxisInfo,
    pub cols: AxisInfo,
}

fn axis_info(state: &EngineState, axis: Axis, labels: &[String]) -> AxisInfo {
    let tree = state.view.tree(axis);
    AxisInfo {
        version: tree.version(),
        ordering: state.view.ordering(axis).map(|o| ordering_id(o)),
        entries: tree
            .visible()
            .into_iter()
            .map(|v| AxisEntry {
                label: match &v.group {
                    Some(g) => g.clone(),
                    None => labels[v.leaves[0]].clone(),
                },
                group: v.group,
                leaves: v.leaves,
            })
            .collect(),
    }
}

fn session_info(app: &AppState, s: &Session) -> ApiResult<SessionInfo> {
    let e = s.read();
    let state = e.state();
    let ds = state.dataset()?;
    let h = &ds.implicit;
    Ok(SessionInfo {
        id: s.id.clone(),
        head: e.head(),
        events: e.log().len(),
        nodes: h.n_nodes(),
        edges: h.n_edges(),
        time_labels: h.time_labels().to_vec(),
        warnings: ds.warnings.clone(),
        threshold: state.view.threshold,
        model: state.model.as_ref().map(|m| ModelInfo {
            id: m.id.clone(),
            input_step: m.input_step,
            epochs_run: m.report.epochs_run,
            final_loss: m.report.final_loss,
            stop: m.report.stop.clone(),
            horizons: m
                .predictions
                .iter()
                .map(|p| (p.horizon, p.timestep, p.confidence))
                .collect(),
        }),
        preview: state.previewing().map(|tx| PreviewInfo {
            before: tx.before().id.clone(),
            after: tx.after().id.clone(),
            changes: tx.changes().iter().map(|c| c.max_abs()).collect(),
        }),
        job: app.running_job(&s.id),
        rows: axis_info(state, Axis::Rows, h.node_labels()),
        cols: axis_info(state, Axis::Cols, h.edge_labels()),
    })
}

#[derive(Debug, Deserialize)]
pub struct CreateSession {
    pub id: Option<String>,
    pub source: DataSource,
    pub threshold: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
pub struct TrainRequest {
    pub session: Option<String>,
    /// Overrides the configured training defaults.
    pub config: Option<TrainConfig>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Committed {
    pub seq: u64,
    pub session: SessionInfo,
}

/// A view-state change; each one is a single recorded command.
#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "change", rename_all = "snake_case")]
pub enum ViewChange {
    Threshold {
        value: f64,
    },
    Order {
        axis: Axis,
        strategy: Strategy,
        #[serde(default)]
        respect_filter: bool,
    },
    Hierarchy {
        axis: Axis,
        edit: HierarchyEdit,
    },
    Collapse {
        axis: Axis,
        group: String,
        collapsed: bool,
    },
    Mark {
        node: usize,
        edge: usize,
        starred: bool,
    },
    Annotate {
        node: usize,
        edge: usize,
        text: Option<String>,
    },
}

impl ViewChange {
    pub fn into_command(self) -> Command {
        match self {
            ViewChange::Threshold { value } => Command::Filter { threshold: value },
            ViewChange::Order {
                axis,
                strategy,
                respect_filter,
            } => Command::Reorder {
                axis,
                strategy,
                respect_filter,
            },
            ViewChange::Hierarchy { axis, edit } => Command::Hierarchy { axis, edit },
            ViewChange::Collapse {
                axis,
                group,
                collapsed,
            } => Command::Hierarchy {
                axis,
                edit: HierarchyEdit::SetCollapse { group, collapsed },
            },
            ViewChange::Mark {
                node,
                edge,
                starred,
            } => Command::Mark {
                row: node,
                col: edge,
                starred,
            },
            ViewChange::Annotate { node, edge, text } => Command::Annotate {
                row: node,
                col: edge,
                text,
            },
        }
    }
}

#[derive(Debug, Deserialize)]
pub struct ViewRequest {
    pub session: Option<String>,
    #[serde(flatten)]
    pub change: ViewChange,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
pub struct AssertionBody {
    pub node: usize,
    pub edge: usize,
    pub strength: f64,
    /// Defaults to the first forecast timestep.
    pub timestep: Option<usize>,
}

#[derive(Debug, Deserialize)]
pub struct FeedbackRequest {
    pub session: Option<String>,
    pub assertions: Vec<AssertionBody>,
    pub config: Option<FineTuneConfig>,
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum DecisionBody {
    Accept,
    Reject,
}

#[derive(Debug, Deserialize)]
pub struct ResolveRequest {
    pub session: Option<String>,
    pub decision: DecisionBody,
}

#[derive(Debug, Default, Deserialize)]
pub struct WaitParam {
    /// Long-poll: wait up to this long for the job to leave `running`.
    pub wait_ms: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
pub struct SearchParams {
    pub session: Option<String>,
    pub q: String,
    pub offset: Option<usize>,
    pub limit: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
pub struct ProvenanceParams {
    pub session: Option<String>,
    pub offset: Option<usize>,
    pub limit: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ProvenancePage {
    pub session: String,
    pub head: Option<u64>,
    pub total: usize,
    pub events: Vec<ProvenanceEvent>,
}

#[derive(Debug, Default, Deserialize)]
pub struct SnapshotParams {
    pub session: Option<String>,
    #[serde(default)]
    pub predictions: bool,
}

#[derive(Debug, Default, Deserialize)]
pub struct CellParams {
    pub session: Option<String>,
    pub mode: Option<Mode>,
    pub page: Option<usize>,
    pub page_size: Option<usize>,
    pub horizon: Option<usize>,
}

// ---- handlers ----

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> ApiResult<T> + Send + 'static,
) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

async fn list_or_get_session(
    State(app): State<Shared>,
    Query(p): Query<SessionParam>,
) -> ApiResult<Json<SessionInfo>> {
    let s = app.session(p.session.as_deref())?;
    Ok(Json(session_info(&app, &s)?))
}

async fn create_session(
    State(app): State<Shared>,
    Json(req): Json<CreateSession>,
) -> ApiResult<(StatusCode, Json<SessionInfo>)> {
    let app2 = app.clone();
    let info = blocking(move || {
        let id = req.id.as_deref().unwrap_or(DEFAULT_SESSION);
        let s = app2.create_session(id, req.source, req.threshold)?;
        session_info(&app2, &s)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(info)))
}

async fn train(
    State(app): State<Shared>,
    Json(req): Json<TrainRequest>,
) -> ApiResult<Json<Committed>> {
    let s = app.session(req.session.as_deref())?;
    let mut config = req.config.unwrap_or_else(|| app.config.train.clone());
    if let Some(seed) = req.seed {
        config.seed = seed;
    }
    let app2 = app.clone();
    blocking(move || {
        let seq = s.execute(Command::Train { config })?;
        Ok(Json(Committed {
            seq,
            session: session_info(&app2, &s)?,
        }))
    })
    .await
}

async fn get_viewport(
    State(app): State<Shared>,
    Query(q): Query<ViewportQuery>,
) -> ApiResult<Json<Payload>> {
    let s = app.session(q.session.as_deref())?;
    let e = s.read();
    Ok(Json(viewport(e.state(), &app.config.view, &q)?))
}

fn cell_resolved<'a>(
    state: &'a EngineState,
    app: &'a AppState,
    p: &CellParams,
    r: usize,
    c: usize,
    level: u8,
) -> ApiResult<Resolved<'a>> {
    let q = ViewportQuery {
        level,
        row_start: r,
        row_end: r
            .checked_add(1)
            .ok_or_else(|| ApiError::bounds("row overflow"))?,
        col_start: c,
        col_end: c
            .checked_add(1)
            .ok_or_else(|| ApiError::bounds("column overflow"))?,
        mode: p.mode.unwrap_or_default(),
        horizon: p.horizon,
        ..ViewportQuery::default()
    };
    Resolved::new(state, &app.config.view, &q)
}

async fn cell_timeline(
    State(app): State<Shared>,
    UrlPath((r, c)): UrlPath<(usize, usize)>,
    Query(p): Query<CellParams>,
) -> ApiResult<Json<crate::viewport::Timeline>> {
    let s = app.session(p.session.as_deref())?;
    let e = s.read();
    let res = cell_resolved(e.state(), &app, &p, r, c, 4)?;
    Ok(Json(res.timeline(r, c, true)?))
}

async fn cell_keywords(
    State(app): State<Shared>,
    UrlPath((r, c)): UrlPath<(usize, usize)>,
    Query(p): Query<CellParams>,
) -> ApiResult<Json<Content>> {
    let s = app.session(p.session.as_deref())?;
    let e = s.read();
    let res = cell_resolved(e.state(), &app, &p, r, c, 5)?;
    Ok(Json(res.payload(5, 0, None)?.content))
}

async fn cell_documents(
    State(app): State<Shared>,
    UrlPath((r, c)): UrlPath<(usize, usize)>,
    Query(p): Query<CellParams>,
) -> ApiResult<Json<Content>> {
    let s = app.session(p.session.as_deref())?;
    let e = s.read();
    let res = cell_resolved(e.state(), &app, &p, r, c, 6)?;
    Ok(Json(res.documents(p.page.unwrap_or(0), p.page_size)?))
}

async fn get_search(
    State(app): State<Shared>,
    Query(p): Query<SearchParams>,
) -> ApiResult<Json<SearchResults>> {
    let s = app.session(p.session.as_deref())?;
    let page = Page {
        offset: p.offset.unwrap_or(0),
        limit: p.limit.unwrap_or(app.config.view.search_page),
    };
    let e = s.read();
    Ok(Json(search(e.state(), &p.q, page)?))
}

async fn post_view(
    State(app): State<Shared>,
    Json(req): Json<ViewRequest>,
) -> ApiResult<Json<Committed>> {
    let s = app.session(req.session.as_deref())?;
    let app2 = app.clone();
    blocking(move || {
        let seq = s.execute(req.change.into_command())?;
        Ok(Json(Committed {
            seq,
            session: session_info(&app2, &s)?,
        }))
    })
    .await
}

/// Starts a fine-tune job. The preview is computed off the engine lock
/// from the committed snapshot and installed when it finishes; readers see
/// the committed state throughout.
async fn post_feedback(
    State(app): State<Shared>,
    Json(req): Json<FeedbackRequest>,
) -> ApiResult<(StatusCode, Json<JobInfo>)> {
    let s = app.session(req.session.as_deref())?;
    let config = req.config.unwrap_or_else(|| app.config.fine_tune.clone());
    config.validate()?;
    let (ds, model, feedback) = {
        let e = s.read();
        let state = e.state();
        if state.previewing().is_some() {
            return Err(ApiError::conflict(
                "a feedback transaction is already previewing",
            ));
        }
        let ds = state.dataset()?.clone();
        let model = state.model()?.clone();
        let default_t = model.predictions[0].timestep;
        let assertions = req
            .assertions
            .iter()
            .map(|a| Assertion {
                node: NodeId(a.node),
                edge: EdgeId(a.edge),
                strength: a.strength,
                timestep: TimeIndex(a.timestep.unwrap_or(default_t)),
            })
            .collect();
        (ds, model, FeedbackSet::new(assertions, &s.id, now())?)
    };
    if s.busy.swap(true, AtomicOrdering::SeqCst) {
        return Err(ApiError::conflict(
            "a fine-tune job is already running for this session",
        ));
    }
    let id = app.next_job.fetch_add(1, AtomicOrdering::SeqCst);
    let (tx, rx) = watch::channel(JobStatus::Running);
    app.jobs.lock().unwrap_or_else(|p| p.into_inner()).insert(
        id,
        Job {
            session: s.id.clone(),
            status: rx,
        },
    );
    let session = s.clone();
    tokio::task::spawn_blocking(move || {
        let start = Instant::now();
        let result = preview_feedback(&ds, &model, &feedback, &config)
            .map_err(ApiError::from)
            .and_then(|t| {
                let after = t.after().id.clone();
                let changes = t.changes().iter().map(|c| c.max_abs()).collect();
                let seq = session.write().commit_preview(feedback, config, t)?.seq;
                session.remember();
                Ok(JobStatus::PreviewReady {
                    seq,
                    after,
                    changes,
                    elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
                })
            });
        session.busy.store(false, AtomicOrdering::SeqCst);
        let status = result.unwrap_or_else(|e| JobStatus::Failed {
            code: e.code.to_owned(),
            message: e.message,
        });
        let _ = tx.send(status);
    });
    Ok((
        StatusCode::ACCEPTED,
        Json(JobInfo {
            job: id,
            session: s.id.clone(),
            status: JobStatus::Running,
        }),
    ))
}

async fn get_job(
    State(app): State<Shared>,
    UrlPath(id): UrlPath<u64>,
    Query(w): Query<WaitParam>,
) -> ApiResult<Json<JobInfo>> {
    let wait = Duration::from_millis(w.wait_ms.unwrap_or(0).min(MAX_WAIT_MS));
    if !wait.is_zero() {
        let rx = {
            let jobs = app.jobs.lock().unwrap_or_else(|p| p.into_inner());
            jobs.get(&id).map(|j| j.status.clone())
        };
        if let Some(mut rx) = rx {
            let _ = tokio::time::timeout(wait, rx.wait_for(|s| *s != JobStatus::Running)).await;
        }
    }
    Ok(Json(app.job(id)?))
}

async fn post_resolve(
    State(app): State<Shared>,
    Json(req): Json<ResolveRequest>,
) -> ApiResult<Json<Committed>> {
    let s = app.session(req.session.as_deref())?;
    let cmd = match req.decision {
        DecisionBody::Accept => Command::FeedbackAccept,
        DecisionBody::Reject => Command::FeedbackReject,
    };
    let seq = s.execute(cmd)?;
    Ok(Json(Committed {
        seq,
        session: session_info(&app, &s)?,
    }))
}

async fn get_provenance(
    State(app): State<Shared>,
    Query(p): Query<ProvenanceParams>,
) -> ApiResult<Json<ProvenancePage>> {
    let s = app.session(p.session.as_deref())?;
    let e = s.read();
    let events = e.log().events();
    Ok(Json(ProvenancePage {
        session: s.id.clone(),
        head: e.head(),
        total: events.len(),
        events: events
            .iter()
            .skip(p.offset.unwrap_or(0))
            .take(p.limit.unwrap_or(usize::MAX))
            .cloned()
            .collect(),
    }))
}

async fn post_undo(
    State(app): State<Shared>,
    Json(p): Json<SessionParam>,
) -> ApiResult<Json<Committed>> {
    let s = app.session(p.session.as_deref())?;
    let app2 = app.clone();
    blocking(move || {
        if s.busy.load(AtomicOrdering::SeqCst) {
            return Err(ApiError::conflict(
                "a fine-tune job is running for this session",
            ));
        }
        let seq = s.write().undo()?.seq;
        s.remember();
        Ok(Json(Committed {
            seq,
            session: session_info(&app2, &s)?,
        }))
    })
    .await
}

async fn get_snapshot(
    State(app): State<Shared>,
    UrlPath(id): UrlPath<String>,
    Query(p): Query<SnapshotParams>,
) -> ApiResult<Json<SnapshotView>> {
    let s = app.session(p.session.as_deref())?;
    blocking(move || {
        let m = s.snapshot(&id)?;
        Ok(Json(SnapshotView::new(&m, p.predictions)))
    })
    .await
}

async fn get_sessions(State(app): State<Shared>) -> Json<Vec<String>> {
    Json(app.session_ids())
}

pub fn router(app: Shared) -> Router {
    Router::new()
        .route("/session", get(list_or_get_session).post(create_session))
        .route("/sessions", get(get_sessions))
        .route("/train", post(train))
        .route("/viewport", get(get_viewport))
        .route("/cell/{r}/{c}/timeline", get(cell_timeline))
        .route("/cell/{r}/{c}/keywords", get(cell_keywords))
        .route("/cell/{r}/{c}/documents", get(cell_documents))
        .route("/search", get(get_search))
        .route("/view", post(post_view))
        .route("/feedback", post(post_feedback))
        .route("/feedback/job/{id}", get(get_job))
        .route("/feedback/resolve", post(post_resolve))
        .route("/provenance", get(get_provenance))
        .route("/provenance/undo", post(post_undo))
        .route("/snapshot/{id}", get(get_snapshot))
        .with_state(app)
}
