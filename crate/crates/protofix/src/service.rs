//! HTTP service for the interactive correction loop.
//!
//! One in-memory session at a time. Reads (item listings, predictions,
//! metrics) share a read lock on the session; corrections, reset and import
//! take the write lock, so readers never observe a half-applied mutation.
//! Every mutation either completes or leaves the session untouched.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use parking_lot::{Mutex, RwLock};
use protofix_core::protocol::accuracy;
use protofix_core::{
    build_initial_prototypes, correct, predict_readonly, split_by_correctness, Budget, ClassId,
    ClassLabel, CorrectionConfig, CorrectionOutcome, CorrectnessSplit, EmbeddingDataset,
    EmbeddingVector, KMeansConfig, Prediction, PrototypeStore, Record, Split, StoreConfig,
    StoreStats,
};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

use crate::pemb::read_embeddings;
use crate::store_doc::{store_from_json, store_to_json};

#[derive(Debug, Clone)]
pub struct ServiceSettings {
    pub open_class: bool,
    pub reveal_labels: bool,
    pub top_k: usize,
    pub kmeans_seed: u64,
    pub ui_dir: Option<PathBuf>,
}

impl Default for ServiceSettings {
    fn default() -> Self {
        Self {
            open_class: false,
            reveal_labels: false,
            top_k: protofix_core::DEFAULT_TOP_K,
            kmeans_seed: 0,
            ui_dir: None,
        }
    }
}

pub struct AppState {
    settings: ServiceSettings,
    session: RwLock<Option<Session>>,
    next_session: AtomicU64,
}

impl AppState {
    pub fn new(settings: ServiceSettings) -> Arc<Self> {
        Arc::new(Self {
            settings,
            session: RwLock::new(None),
            next_session: AtomicU64::new(1),
        })
    }

    /// Opens a session as `POST /session` would.
    pub fn open_session(&self, req: &SessionRequest) -> Result<SessionInfo, ApiError> {
        let id = format!("s{}", self.next_session.fetch_add(1, Ordering::Relaxed));
        let session = Session::open(id, req, &self.settings)?;
        let info = session.info();
        *self.session.write() = Some(session);
        Ok(info)
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    pub fn status(&self) -> StatusCode {
        self.status
    }

    fn no_session() -> Self {
        Self::new(StatusCode::CONFLICT, "no active session; POST /session first")
    }

    fn unknown_item(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("unknown item {id:?}"))
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.status, self.message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Budget as accepted in JSON bodies: a positive integer, `"unlimited"`, or null.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum BudgetField {
    Limit(usize),
    Word(String),
}

impl BudgetField {
    fn to_budget(&self) -> Result<Budget, String> {
        match self {
            BudgetField::Limit(0) => Err("budget must be at least 1".into()),
            BudgetField::Limit(n) => Ok(Budget::Limited(*n)),
            BudgetField::Word(w) if w == "unlimited" => Ok(Budget::Unlimited),
            BudgetField::Word(w) => Err(format!("invalid budget {w:?}")),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct SessionRequest {
    pub train_path: PathBuf,
    pub test_path: PathBuf,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub budget: Option<BudgetField>,
    #[serde(default)]
    pub protect_server: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub acc_base: f64,
    pub class_list: Vec<ClassLabel>,
    pub open_class: bool,
    pub reveal_labels: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CorrectionLogEntry {
    pub timestamp_ms: u128,
    pub item_id: String,
    pub label: ClassLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveMetrics {
    pub acc_base: f64,
    #[serde(rename = "acc_E_live")]
    pub acc_e_live: Option<f64>,
    #[serde(rename = "acc_C_live")]
    pub acc_c_live: Option<f64>,
    pub forgetting_live: Option<f64>,
    pub corrections: usize,
    pub store_stats: StoreStats,
}

struct Session {
    id: String,
    dim: usize,
    classes: Vec<ClassLabel>,
    items: Vec<Record>,
    index: HashMap<String, usize>,
    /// Indices into `items` of the test split; `split` indexes into this.
    test_items: Vec<usize>,
    split: CorrectnessSplit,
    acc_base: f64,
    store: PrototypeStore,
    snapshot: String,
    log: Vec<CorrectionLogEntry>,
    metrics_cache: Mutex<Option<LiveMetrics>>,
}

fn load(path: &Path) -> ApiResult<EmbeddingDataset> {
    read_embeddings(path).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))
}

fn merge_classes(a: &[ClassLabel], b: &[ClassLabel]) -> ApiResult<Vec<ClassLabel>> {
    let mut by_id: std::collections::BTreeMap<ClassId, String> = Default::default();
    for c in a.iter().chain(b) {
        match by_id.get(&c.id) {
            Some(name) if *name != c.name => {
                return Err(ApiError::new(
                    StatusCode::BAD_REQUEST,
                    format!("class {} is named {name:?} and {:?}", c.id, c.name),
                ))
            }
            _ => {
                by_id.insert(c.id, c.name.clone());
            }
        }
    }
    Ok(by_id.into_iter().map(|(id, name)| ClassLabel { id, name }).collect())
}

impl Session {
    fn open(id: String, req: &SessionRequest, settings: &ServiceSettings) -> ApiResult<Self> {
        let bad = |msg: String| ApiError::new(StatusCode::BAD_REQUEST, msg);
        let train = load(&req.train_path)?;
        let test = if req.test_path == req.train_path {
            train.clone()
        } else {
            load(&req.test_path)?
        };
        if train.dim() != test.dim() {
            return Err(bad(format!("train dim {} != test dim {}", train.dim(), test.dim())));
        }
        let budget = req
            .budget
            .as_ref()
            .map(BudgetField::to_budget)
            .transpose()
            .map_err(bad)?
            .unwrap_or(Budget::Unlimited);
        let kmeans = KMeansConfig {
            k: req.k.unwrap_or(3),
            seed: settings.kmeans_seed,
            ..Default::default()
        };
        let classes = merge_classes(train.classes(), test.classes())?;
        let mut store = build_initial_prototypes(
            &train,
            &kmeans,
            StoreConfig {
                dim: train.dim(),
                budget,
                protect_server: req.protect_server,
            },
        )
        .map_err(|e| bad(e.to_string()))?;
        for c in &classes {
            store.register_class(c);
        }
        let split = split_by_correctness(&store, &test).map_err(|e| bad(e.to_string()))?;

        let mut items: Vec<Record> = test.records().to_vec();
        let test_items: Vec<usize> = items
            .iter()
            .enumerate()
            .filter(|(_, r)| r.split == Split::Test)
            .map(|(i, _)| i)
            .collect();
        if req.test_path != req.train_path {
            let known: std::collections::HashSet<String> = items.iter().map(|r| r.id.clone()).collect();
            items.extend(train.records().iter().filter(|r| !known.contains(&r.id)).cloned());
        }
        let index = items.iter().enumerate().map(|(i, r)| (r.id.clone(), i)).collect();

        let mut session = Self {
            id,
            dim: train.dim(),
            classes,
            items,
            index,
            test_items,
            split,
            acc_base: 0.0,
            snapshot: store_to_json(&store),
            store,
            log: Vec::new(),
            metrics_cache: Mutex::new(None),
        };
        let all: Vec<usize> = (0..session.test_items.len()).collect();
        session.acc_base = session.accuracy_on(&all).unwrap_or(0.0);
        Ok(session)
    }

    fn info(&self) -> SessionInfo {
        SessionInfo {
            session_id: self.id.clone(),
            acc_base: self.acc_base,
            class_list: self.classes.clone(),
            open_class: false,
            reveal_labels: false,
        }
    }

    fn item(&self, id: &str) -> ApiResult<&Record> {
        self.index
            .get(id)
            .map(|&i| &self.items[i])
            .ok_or_else(|| ApiError::unknown_item(id))
    }

    fn accuracy_on(&self, test_positions: &[usize]) -> Option<f64> {
        let records: Vec<&Record> = self.test_items.iter().map(|&i| &self.items[i]).collect();
        accuracy(&self.store, &records, test_positions).ok().flatten()
    }

    fn metrics(&self) -> LiveMetrics {
        let mut cache = self.metrics_cache.lock();
        if let Some(m) = cache.as_ref() {
            return m.clone();
        }
        let acc_c_live = self.accuracy_on(&self.split.correct);
        let m = LiveMetrics {
            acc_base: self.acc_base,
            acc_e_live: self.accuracy_on(&self.split.misclassified),
            acc_c_live,
            forgetting_live: acc_c_live.map(|a| 100.0 - a),
            corrections: self.log.len(),
            store_stats: self.store.stats(),
        };
        *cache = Some(m.clone());
        m
    }

    fn invalidate(&mut self) {
        *self.metrics_cache.get_mut() = None;
    }

    fn resolve_label(&mut self, label: &LabelField, open_class: bool) -> ApiResult<ClassLabel> {
        let found = match label {
            LabelField::Id(id) => self.classes.iter().find(|c| c.id.0 == *id),
            LabelField::Name(name) => self.classes.iter().find(|c| c.name == *name),
        };
        if let Some(c) = found {
            return Ok(c.clone());
        }
        match label {
            LabelField::Name(name) if open_class && !name.trim().is_empty() => {
                let next = self.classes.iter().map(|c| c.id.0 + 1).max().unwrap_or(0);
                Ok(ClassLabel::new(next, name.trim()))
            }
            _ => Err(ApiError::new(
                StatusCode::CONFLICT,
                format!("unknown label {label}; open-class mode is off"),
            )),
        }
    }
}

fn with_session<T>(state: &AppState, f: impl FnOnce(&Session) -> ApiResult<T>) -> ApiResult<T> {
    let guard = state.session.read();
    let session = guard.as_ref().ok_or_else(ApiError::no_session)?;
    f(session)
}

fn with_session_mut<T>(state: &AppState, f: impl FnOnce(&mut Session) -> ApiResult<T>) -> ApiResult<T> {
    let mut guard = state.session.write();
    let session = guard.as_mut().ok_or_else(ApiError::no_session)?;
    f(session)
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    Json(req): Json<SessionRequest>,
) -> ApiResult<(StatusCode, Json<SessionInfo>)> {
    let mut info = state.open_session(&req)?;
    info.open_class = state.settings.open_class;
    info.reveal_labels = state.settings.reveal_labels;
    Ok((StatusCode::CREATED, Json(info)))
}

async fn get_session(State(state): State<Arc<AppState>>) -> ApiResult<Json<SessionInfo>> {
    with_session(&state, |s| {
        let mut info = s.info();
        info.open_class = state.settings.open_class;
        info.reveal_labels = state.settings.reveal_labels;
        Ok(Json(info))
    })
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ItemFilter {
    All,
    Misclassified,
}

#[derive(Debug, Deserialize)]
struct ItemsQuery {
    #[serde(default)]
    split: Option<Split>,
    #[serde(default)]
    page: Option<usize>,
    #[serde(default)]
    page_size: Option<usize>,
    #[serde(default)]
    only: Option<ItemFilter>,
}

#[derive(Debug, Serialize)]
struct ItemView {
    id: String,
    label_hidden: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<ClassLabel>,
    prediction: ClassLabel,
    distance: f64,
    image: Option<String>,
}

const MAX_PAGE_SIZE: usize = 1000;

async fn list_items(
    State(state): State<Arc<AppState>>,
    Query(q): Query<ItemsQuery>,
) -> ApiResult<Json<serde_json::Value>> {
    let split = q.split.unwrap_or(Split::Test);
    let page = q.page.unwrap_or(0);
    let page_size = q.page_size.unwrap_or(50);
    if page_size == 0 || page_size > MAX_PAGE_SIZE {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            format!("page_size must be in 1..={MAX_PAGE_SIZE}"),
        ));
    }
    let only_errors = matches!(q.only, Some(ItemFilter::Misclassified));
    let reveal = state.settings.reveal_labels;
    with_session(&state, |s| {
        let mut rows: Vec<(&Record, ClassLabel, f64)> = Vec::new();
        for r in s.items.iter().filter(|r| r.split == split) {
            let nearest = s
                .store
                .nearest_readonly(&r.embedding)
                .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
            if only_errors && nearest.class.id == r.label.id {
                continue;
            }
            rows.push((r, nearest.class, nearest.distance));
        }
        rows.sort_by(|a, b| a.0.id.cmp(&b.0.id));
        let total = rows.len();
        let items: Vec<ItemView> = rows
            .into_iter()
            .skip(page.saturating_mul(page_size))
            .take(page_size)
            .map(|(r, prediction, distance)| ItemView {
                id: r.id.clone(),
                label_hidden: !reveal,
                label: reveal.then(|| r.label.clone()),
                prediction,
                distance,
                image: r.image.clone(),
            })
            .collect();
        Ok(Json(json!({
            "items": items,
            "page": page,
            "page_size": page_size,
            "total": total,
            "pages": total.div_ceil(page_size),
        })))
    })
}

#[derive(Debug, Deserialize)]
struct PredictRequest {
    #[serde(default)]
    embedding: Option<Vec<f64>>,
    #[serde(default)]
    item_id: Option<String>,
}

fn unprocessable(e: impl std::fmt::Display) -> ApiError {
    ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string())
}

async fn predict_handler(
    State(state): State<Arc<AppState>>,
    Json(req): Json<PredictRequest>,
) -> ApiResult<Json<Prediction>> {
    let top_k = state.settings.top_k;
    with_session(&state, |s| {
        let query = match (&req.embedding, &req.item_id) {
            (Some(values), None) => EmbeddingVector::new(values.clone()).map_err(unprocessable)?,
            (None, Some(id)) => s.item(id)?.embedding.clone(),
            _ => return Err(unprocessable("provide exactly one of embedding or item_id")),
        };
        predict_readonly(&s.store, &query, top_k)
            .map(Json)
            .map_err(|e| match e {
                protofix_core::Error::EmptyStore => ApiError::new(StatusCode::CONFLICT, e.to_string()),
                other => unprocessable(other),
            })
    })
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum LabelField {
    Id(u32),
    Name(String),
}

impl std::fmt::Display for LabelField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LabelField::Id(id) => write!(f, "#{id}"),
            LabelField::Name(n) => write!(f, "{n:?}"),
        }
    }
}

#[derive(Debug, Deserialize)]
struct CorrectionRequest {
    item_id: String,
    label: LabelField,
}

async fn post_correction(
    State(state): State<Arc<AppState>>,
    Json(req): Json<CorrectionRequest>,
) -> ApiResult<Json<CorrectionOutcome>> {
    let open_class = state.settings.open_class;
    with_session_mut(&state, |s| {
        let embedding = s.item(&req.item_id)?.embedding.clone();
        let label = s.resolve_label(&req.label, open_class)?;
        let outcome = correct(&mut s.store, &embedding, &label, CorrectionConfig { open_class })
            .map_err(|e| match e {
                protofix_core::Error::UnknownClass(_) | protofix_core::Error::BudgetUnsatisfiable { .. } => {
                    ApiError::new(StatusCode::CONFLICT, e.to_string())
                }
                other => unprocessable(other),
            })?;
        if !s.classes.iter().any(|c| c.id == label.id) {
            s.classes.push(label.clone());
        }
        s.log.push(CorrectionLogEntry {
            timestamp_ms: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis())
                .unwrap_or(0),
            item_id: req.item_id.clone(),
            label,
        });
        s.invalidate();
        Ok(Json(outcome))
    })
}

async fn get_metrics(State(state): State<Arc<AppState>>) -> ApiResult<Json<LiveMetrics>> {
    with_session(&state, |s| Ok(Json(s.metrics())))
}

async fn get_log(State(state): State<Arc<AppState>>) -> ApiResult<Json<Vec<CorrectionLogEntry>>> {
    with_session(&state, |s| Ok(Json(s.log.clone())))
}

async fn reset_store(State(state): State<Arc<AppState>>) -> ApiResult<Json<serde_json::Value>> {
    with_session_mut(&state, |s| {
        let store = store_from_json(&s.snapshot)
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
        s.store = store;
        s.log.clear();
        s.invalidate();
        Ok(Json(json!({ "status": "reset", "store_size": s.store.len() })))
    })
}

async fn export_store(State(state): State<Arc<AppState>>) -> ApiResult<Response> {
    with_session(&state, |s| {
        Ok((
            [(axum::http::header::CONTENT_TYPE, "application/json")],
            store_to_json(&s.store),
        )
            .into_response())
    })
}

async fn import_store(State(state): State<Arc<AppState>>, body: String) -> ApiResult<Json<serde_json::Value>> {
    let store = store_from_json(&body).map_err(unprocessable)?;
    with_session_mut(&state, |s| {
        if store.dim() != s.dim {
            return Err(unprocessable(format!(
                "store dim {} does not match session dim {}",
                store.dim(),
                s.dim
            )));
        }
        if store.is_empty() {
            return Err(unprocessable("imported store is empty"));
        }
        for c in store.classes() {
            if !s.classes.iter().any(|k| k.id == c.id) {
                s.classes.push(c);
            }
        }
        s.store = store;
        s.log.clear();
        s.invalidate();
        Ok(Json(json!({ "status": "imported", "store_size": s.store.len() })))
    })
}

pub fn router(state: Arc<AppState>) -> Router {
    let ui_dir = state.settings.ui_dir.clone();
    let api = Router::new()
        .route("/session", post(create_session).get(get_session))
        .route("/items", get(list_items))
        .route("/predict", post(predict_handler))
        .route("/corrections", post(post_correction).get(get_log))
        .route("/metrics", get(get_metrics))
        .route("/store/reset", post(reset_store))
        .route("/store/export", get(export_store))
        .route("/store/import", post(import_store))
        .with_state(state);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

pub async fn serve(addr: SocketAddr, state: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
