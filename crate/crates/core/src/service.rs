//! HTTP front end: one hiermem engine per conversation behind a writer lock.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path as UrlPath, Query, Request, State};
use axum::http::{HeaderMap, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use tokio::sync::{OwnedRwLockReadGuard, OwnedRwLockWriteGuard, RwLock};

use crate::config::{AppConfig, ConfigError};
use crate::gateway::Gateway;
use crate::hiermem::{Engine, EngineError, IncomingMessage};
use crate::memstore::persist;
use crate::prompts::PromptSet;
use crate::retrieval::{HitSource, RetrievalHit};

pub const REQUEST_ID_HEADER: &str = "x-request-id";

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("conversation `{0}` not found")]
    NotFound(String),
    #[error("{message}")]
    BadRequest { field: Option<String>, message: String },
    #[error("writer lock for conversation `{0}` not acquired in time")]
    Busy(String),
    #[error("missing or invalid bearer token")]
    Unauthorized,
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("snapshot: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl ServiceError {
    fn bad(field: &str, message: impl Into<String>) -> Self {
        ServiceError::BadRequest { field: Some(field.to_string()), message: message.into() }
    }

    fn status(&self) -> StatusCode {
        match self {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::BadRequest { .. } => StatusCode::BAD_REQUEST,
            ServiceError::Busy(_) | ServiceError::Engine(EngineError::WrongConversation { .. }) => StatusCode::CONFLICT,
            ServiceError::Unauthorized => StatusCode::UNAUTHORIZED,
            ServiceError::Engine(EngineError::Gateway(_)) => StatusCode::BAD_GATEWAY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    fn code(&self) -> &'static str {
        match self {
            ServiceError::NotFound(_) => "not_found",
            ServiceError::BadRequest { .. } => "bad_request",
            ServiceError::Busy(_) => "busy",
            ServiceError::Unauthorized => "unauthorized",
            ServiceError::Engine(EngineError::WrongConversation { .. }) => "wrong_conversation",
            ServiceError::Engine(EngineError::Gateway(_)) => "backend",
            ServiceError::Engine(_) => "engine",
            ServiceError::Snapshot(_) | ServiceError::Io(_) => "snapshot",
            ServiceError::Config(_) => "config",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

/// Response wrapper. Exactly one of `payload` and `error` is present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiEnvelope<T = Value> {
    pub request_id: String,
    pub conversation_id: Option<String>,
    #[serde(default = "none", skip_serializing_if = "Option::is_none")]
    pub payload: Option<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ApiError>,
}

fn none<T>() -> Option<T> {
    None
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TurnRequest {
    pub speaker: String,
    pub text: String,
    #[serde(default)]
    pub timestamp: Option<DateTime<Utc>>,
    #[serde(default)]
    pub session_id: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnswerRequest {
    pub question: String,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct MemoriesQuery {
    pub tier: Option<String>,
    pub k: Option<usize>,
    pub q: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotInfo {
    pub path: PathBuf,
    pub bytes: u64,
    pub messages: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tier {
    Short,
    Mid,
    Long,
}

impl Tier {
    fn parse(s: &str) -> Result<Option<Tier>, ServiceError> {
        match s {
            "" | "all" => Ok(None),
            "short" => Ok(Some(Tier::Short)),
            "mid" => Ok(Some(Tier::Mid)),
            "long" => Ok(Some(Tier::Long)),
            other => Err(ServiceError::bad("tier", format!("unknown tier `{other}` (short, mid, long, all)"))),
        }
    }

    fn admits(tier: Option<Tier>, source: HitSource) -> bool {
        match tier {
            None => true,
            Some(Tier::Short) => source == HitSource::ShortTerm,
            Some(Tier::Mid) => matches!(source, HitSource::MidFlat | HitSource::MidBeam),
            Some(Tier::Long) => source == HitSource::LongTerm,
        }
    }
}

type Shared = Arc<RwLock<Engine>>;

pub struct AppState {
    config: AppConfig,
    gateway: Arc<Gateway>,
    prompts: Arc<PromptSet>,
    conversations: Mutex<HashMap<String, Shared>>,
    requests: AtomicU64,
}

impl AppState {
    pub fn new(config: AppConfig) -> Result<Arc<Self>, ServiceError> {
        let gateway = config.build_gateway()?;
        let prompts = config.build_prompts()?;
        Ok(Self::with_parts(config, gateway, prompts))
    }

    pub fn with_parts(config: AppConfig, gateway: Arc<Gateway>, prompts: Arc<PromptSet>) -> Arc<Self> {
        Arc::new(Self { config, gateway, prompts, conversations: Mutex::new(HashMap::new()), requests: AtomicU64::new(0) })
    }

    pub fn gateway(&self) -> &Arc<Gateway> {
        &self.gateway
    }

    fn data_dir(&self) -> &Path {
        &self.config.service.data_dir
    }

    fn conversation_dir(&self, id: &str) -> PathBuf {
        self.data_dir().join(id)
    }

    fn snapshot_path(&self, id: &str) -> PathBuf {
        self.data_dir().join(format!("{id}.zip"))
    }

    /// Cached engine, else the on-disk persistence directory, else a new
    /// engine when `create` is set.
    fn engine(&self, id: &str, create: bool) -> Result<Shared, ServiceError> {
        let mut map = self.conversations.lock().expect("conversation map poisoned");
        if let Some(e) = map.get(id) {
            return Ok(e.clone());
        }
        let dir = self.conversation_dir(id);
        let engine = if dir.join(persist::MANIFEST_FILE).exists() {
            Engine::load(&dir, self.gateway.clone(), self.prompts.clone())?
        } else if create {
            Engine::new(id, self.config.engine.clone(), self.gateway.clone(), self.prompts.clone())?
        } else {
            return Err(ServiceError::NotFound(id.to_string()));
        };
        let shared = Arc::new(RwLock::new(engine));
        map.insert(id.to_string(), shared.clone());
        Ok(shared)
    }

    fn lock_timeout(&self) -> Duration {
        Duration::from_millis(self.config.service.lock_timeout_ms)
    }

    async fn write(&self, id: &str, engine: Shared) -> Result<OwnedRwLockWriteGuard<Engine>, ServiceError> {
        tokio::time::timeout(self.lock_timeout(), engine.write_owned()).await.map_err(|_| ServiceError::Busy(id.to_string()))
    }

    async fn read(&self, id: &str, engine: Shared) -> Result<OwnedRwLockReadGuard<Engine>, ServiceError> {
        tokio::time::timeout(self.lock_timeout(), engine.read_owned()).await.map_err(|_| ServiceError::Busy(id.to_string()))
    }

    fn request_id(&self, headers: &HeaderMap) -> String {
        headers
            .get(REQUEST_ID_HEADER)
            .and_then(|v| v.to_str().ok())
            .filter(|s| !s.is_empty() && s.len() <= 128)
            .map(str::to_string)
            .unwrap_or_else(|| format!("req-{:08}", self.requests.fetch_add(1, Ordering::Relaxed) + 1))
    }
}

fn respond(request_id: String, conversation_id: Option<String>, result: Result<Value, ServiceError>) -> Response {
    let (status, envelope) = match result {
        Ok(payload) => (
            StatusCode::OK,
            ApiEnvelope { request_id: request_id.clone(), conversation_id, payload: Some(payload), error: None },
        ),
        Err(e) => {
            if e.status().is_server_error() {
                log::error!("request {request_id}: {e}");
            }
            let field = match &e {
                ServiceError::BadRequest { field, .. } => field.clone(),
                _ => None,
            };
            let error = ApiError { code: e.code().to_string(), message: e.to_string(), field };
            (e.status(), ApiEnvelope { request_id: request_id.clone(), conversation_id, payload: None, error: Some(error) })
        }
    };
    let mut resp = (status, Json(envelope)).into_response();
    if let Ok(v) = HeaderValue::from_str(&request_id) {
        resp.headers_mut().insert(REQUEST_ID_HEADER, v);
    }
    resp
}

fn to_value<T: Serialize>(v: &T) -> Result<Value, ServiceError> {
    serde_json::to_value(v).map_err(|e| ServiceError::Engine(EngineError::Config(e.to_string())))
}

fn check_conversation_id(id: &str) -> Result<(), ServiceError> {
    let ok = !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(ServiceError::bad("conversation_id", "use 1-128 characters from [A-Za-z0-9._-]"))
    }
}

/// Pull the offending field out of a JSON body rejection message.
fn rejection_field(message: &str) -> Option<String> {
    for marker in ["missing field `", "unknown field `"] {
        if let Some(rest) = message.split(marker).nth(1) {
            return rest.split('`').next().map(str::to_string);
        }
    }
    let rest = message.split("target type: ").nth(1)?;
    let (path, _) = rest.split_once(": ")?;
    (!path.contains(' ')).then(|| path.to_string())
}

fn json_body<T>(body: Result<Json<T>, JsonRejection>) -> Result<T, ServiceError> {
    body.map(|Json(v)| v).map_err(|rej| {
        let message = rej.body_text();
        let field = rejection_field(&message).or(Some("body".into()));
        ServiceError::BadRequest { field, message }
    })
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static) -> Result<T, ServiceError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ServiceError::Snapshot(format!("worker failed: {e}")))?
}

async fn post_turn(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    headers: HeaderMap,
    body: Result<Json<TurnRequest>, JsonRejection>,
) -> Response {
    let rid = state.request_id(&headers);
    let result = async {
        check_conversation_id(&id)?;
        let turn = json_body(body)?;
        let engine = state.engine(&id, true)?;
        let mut guard = state.write(&id, engine).await?;
        let msg = IncomingMessage {
            speaker: turn.speaker,
            text: turn.text,
            timestamp: turn.timestamp.unwrap_or_else(Utc::now),
            session_id: turn.session_id.unwrap_or_default(),
        };
        let report = blocking(move || Ok(guard.ingest(msg)?)).await?;
        to_value(&report)
    }
    .await;
    respond(rid, Some(id), result)
}

async fn post_answer(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    headers: HeaderMap,
    body: Result<Json<AnswerRequest>, JsonRejection>,
) -> Response {
    let rid = state.request_id(&headers);
    let result = async {
        check_conversation_id(&id)?;
        let req = json_body(body)?;
        if req.question.trim().is_empty() {
            return Err(ServiceError::bad("question", "question must not be empty"));
        }
        let engine = state.engine(&id, false)?;
        let mut guard = state.write(&id, engine).await?;
        let answer = blocking(move || Ok(guard.answer(&req.question)?)).await?;
        to_value(&answer)
    }
    .await;
    respond(rid, Some(id), result)
}

fn preview_all(engine: &Engine, tier: Option<Tier>) -> Vec<RetrievalHit> {
    let tiers = engine.tiers();
    let mut out = Vec::new();
    if Tier::admits(tier, HitSource::ShortTerm) {
        out.extend(tiers.short_term.iter().map(|m| RetrievalHit {
            source: HitSource::ShortTerm,
            reference: format!("m{}", m.seq),
            segment: None,
            score: 1.0,
            text: m.render(),
        }));
    }
    if Tier::admits(tier, HitSource::MidFlat) {
        out.extend(tiers.mid_term.leaves().filter_map(|n| n.payload.as_ref()).map(|seg| RetrievalHit {
            source: HitSource::MidFlat,
            reference: seg.id.to_string(),
            segment: Some(seg.id),
            score: 1.0,
            text: seg.summary.clone(),
        }));
    }
    if Tier::admits(tier, HitSource::LongTerm) {
        out.extend(tiers.long_term.ids().iter().filter_map(|id| tiers.mid_term.segment(*id)).map(|seg| RetrievalHit {
            source: HitSource::LongTerm,
            reference: seg.id.to_string(),
            segment: Some(seg.id),
            score: 1.0,
            text: seg.summary.clone(),
        }));
    }
    out
}

async fn get_memories(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    headers: HeaderMap,
    query: Result<Query<MemoriesQuery>, QueryRejection>,
) -> Response {
    let rid = state.request_id(&headers);
    let result = async {
        check_conversation_id(&id)?;
        let Query(q) = query.map_err(|rej| ServiceError::BadRequest {
            field: rejection_field(&rej.body_text()).or(Some("query".into())),
            message: rej.body_text(),
        })?;
        let tier = Tier::parse(q.tier.as_deref().unwrap_or(""))?;
        let k = q.k.unwrap_or(state.config.engine.top_k);
        if k == 0 {
            return Err(ServiceError::bad("k", "k must be positive"));
        }
        let engine = state.engine(&id, false)?;
        let guard = state.read(&id, engine).await?;
        let hits = blocking(move || {
            let hits = match q.q.as_deref().filter(|s| !s.trim().is_empty()) {
                Some(question) => guard.retrieve(question)?.hits().filter(|h| Tier::admits(tier, h.source)).cloned().collect(),
                None => preview_all(&guard, tier),
            };
            Ok(hits.into_iter().take(k).collect::<Vec<_>>())
        })
        .await?;
        to_value(&serde_json::json!({ "hits": hits }))
    }
    .await;
    respond(rid, Some(id), result)
}

/// Zip every regular file of `dir` (flat) into `dest`.
pub fn zip_dir(dir: &Path, dest: &Path) -> Result<u64, ServiceError> {
    let zerr = |e: zip::result::ZipError| ServiceError::Snapshot(e.to_string());
    let mut names: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_ok_and(|t| t.is_file()))
        .map(|e| e.path())
        .collect();
    names.sort();
    let tmp = dest.with_extension("zip.tmp");
    let mut zw = zip::ZipWriter::new(File::create(&tmp)?);
    let opts = zip::write::SimpleFileOptions::default().compression_method(zip::CompressionMethod::Deflated);
    for path in names {
        let name = path.file_name().and_then(|n| n.to_str()).ok_or_else(|| ServiceError::Snapshot("non-utf8 file name".into()))?;
        zw.start_file(name, opts).map_err(zerr)?;
        zw.write_all(&std::fs::read(&path)?)?;
    }
    zw.finish().map_err(zerr)?;
    std::fs::rename(&tmp, dest)?;
    Ok(std::fs::metadata(dest)?.len())
}

/// Extract a flat archive written by [`zip_dir`] into `dir`.
pub fn unzip_into(archive: &Path, dir: &Path) -> Result<(), ServiceError> {
    let zerr = |e: zip::result::ZipError| ServiceError::Snapshot(e.to_string());
    let mut za = zip::ZipArchive::new(File::open(archive)?).map_err(zerr)?;
    std::fs::create_dir_all(dir)?;
    for i in 0..za.len() {
        let mut f = za.by_index(i).map_err(zerr)?;
        let name = f
            .enclosed_name()
            .and_then(|p| p.file_name().map(PathBuf::from))
            .ok_or_else(|| ServiceError::Snapshot(format!("unsafe entry name `{}`", f.name())))?;
        let mut buf = Vec::new();
        f.read_to_end(&mut buf)?;
        std::fs::write(dir.join(name), buf)?;
    }
    Ok(())
}

fn replace_dir(staged: &Path, target: &Path) -> std::io::Result<()> {
    if target.exists() {
        std::fs::remove_dir_all(target)?;
    }
    std::fs::rename(staged, target)
}

async fn post_snapshot(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>, headers: HeaderMap) -> Response {
    let rid = state.request_id(&headers);
    let result = async {
        check_conversation_id(&id)?;
        let engine = state.engine(&id, false)?;
        let guard = state.write(&id, engine).await?;
        let (dir, zip_path) = (state.conversation_dir(&id), state.snapshot_path(&id));
        let staged = state.data_dir().join(format!(".{id}.save"));
        let info = blocking(move || {
            if staged.exists() {
                std::fs::remove_dir_all(&staged)?;
            }
            guard.save(&staged)?;
            let messages = guard.ingested();
            drop(guard);
            replace_dir(&staged, &dir)?;
            let bytes = zip_dir(&dir, &zip_path)?;
            Ok(SnapshotInfo { path: zip_path, bytes, messages })
        })
        .await?;
        to_value(&info)
    }
    .await;
    respond(rid, Some(id), result)
}

async fn post_restore(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>, headers: HeaderMap) -> Response {
    let rid = state.request_id(&headers);
    let result = async {
        check_conversation_id(&id)?;
        let zip_path = state.snapshot_path(&id);
        if !zip_path.exists() {
            return Err(ServiceError::NotFound(id.clone()));
        }
        let staged = state.data_dir().join(format!(".{id}.restore"));
        let (gateway, prompts) = (state.gateway.clone(), state.prompts.clone());
        let expected = id.clone();
        let engine = blocking(move || {
            if staged.exists() {
                std::fs::remove_dir_all(&staged)?;
            }
            unzip_into(&zip_path, &staged)?;
            let engine = Engine::load(&staged, gateway, prompts);
            let _ = std::fs::remove_dir_all(&staged);
            let engine = engine?;
            if engine.conversation_id() != expected {
                return Err(EngineError::WrongConversation { expected, found: engine.conversation_id().to_string() }.into());
            }
            Ok(engine)
        })
        .await?;
        let existing = state.conversations.lock().expect("conversation map poisoned").get(&id).cloned();
        let messages = engine.ingested();
        match existing {
            Some(shared) => *state.write(&id, shared).await? = engine,
            None => {
                state.conversations.lock().expect("conversation map poisoned").insert(id.clone(), Arc::new(RwLock::new(engine)));
            }
        }
        Ok(serde_json::json!({ "restored": true, "messages": messages }))
    }
    .await;
    respond(rid, Some(id), result)
}

async fn healthz(State(state): State<Arc<AppState>>, headers: HeaderMap) -> Response {
    let rid = state.request_id(&headers);
    let conversations = state.conversations.lock().expect("conversation map poisoned").len();
    let payload = serde_json::json!({
        "status": "ok",
        "backend": state.gateway.backend_kind(),
        "conversations": conversations,
        "version": env!("CARGO_PKG_VERSION"),
    });
    respond(rid, None, Ok(payload))
}

async fn require_token(State(state): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    if let Some(token) = &state.config.service.bearer_token {
        let presented = req
            .headers()
            .get(axum::http::header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token.as_str()) {
            let rid = state.request_id(req.headers());
            return respond(rid, None, Err(ServiceError::Unauthorized));
        }
    }
    next.run(req).await
}

pub fn router(state: Arc<AppState>) -> Router {
    let conversations = Router::new()
        .route("/v1/conversations/:id/turns", post(post_turn))
        .route("/v1/conversations/:id/answers", post(post_answer))
        .route("/v1/conversations/:id/memories", get(get_memories))
        .route("/v1/conversations/:id/snapshot", post(post_snapshot))
        .route("/v1/conversations/:id/restore", post(post_restore))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    Router::new().route("/v1/healthz", get(healthz)).merge(conversations).with_state(state)
}

/// Serve until ctrl-c.
pub async fn serve(state: Arc<AppState>, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    std::fs::create_dir_all(state.data_dir())?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_from_rejection_text() {
        let m = "Failed to deserialize the JSON body into the target type: missing field `text` at line 1 column 18";
        assert_eq!(rejection_field(m).as_deref(), Some("text"));
        let m = "Failed to deserialize the JSON body into the target type: speaker: invalid type: integer `3`, expected a string at line 1 column 12";
        assert_eq!(rejection_field(m).as_deref(), Some("speaker"));
        assert_eq!(rejection_field("Expected request with `Content-Type: application/json`"), None);
    }

    #[test]
    fn conversation_ids() {
        assert!(check_conversation_id("conv-1_a.b").is_ok());
        for bad in ["", "../x", ".hidden", "a/b", "sp ace"] {
            assert!(check_conversation_id(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn zip_roundtrip() {
        let src = tempfile::tempdir().unwrap();
        std::fs::write(src.path().join("a.json"), b"{\"x\":1}").unwrap();
        std::fs::write(src.path().join("b.jsonl"), b"line\n").unwrap();
        let out = tempfile::tempdir().unwrap();
        let z = out.path().join("s.zip");
        assert!(zip_dir(src.path(), &z).unwrap() > 0);
        let dest = out.path().join("d");
        unzip_into(&z, &dest).unwrap();
        assert_eq!(std::fs::read(dest.join("a.json")).unwrap(), b"{\"x\":1}");
        assert_eq!(std::fs::read(dest.join("b.jsonl")).unwrap(), b"line\n");
    }
}
