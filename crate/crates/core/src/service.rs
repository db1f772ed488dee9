//! HTTP service.
//!
//! ```text
//! GET  /api/v1/useBox?boxID&transactionID&(x|y)&apiKey
//! GET  /api/v1/listBoxes?apiKey
//! POST /api/v1/admin/createUser     {"displayName"}                  X-Admin-Key
//! POST /api/v1/admin/createBox      {"behavior","aliceUser","bobUser"} X-Admin-Key
//! POST /api/v1/admin/revokeKey      {"userID"}                       X-Admin-Key
//! GET  /api/v1/admin/boxes                                           X-Admin-Key
//! POST /api/v1/game/reveal?boxID&transactionID&apiKey
//! GET  /api/v1/game/scoreboard?boxID&apiKey
//! GET  /ui/...                      static files
//! ```
//!
//! Every JSON reply carries a `status` field (0 on success, codes in
//! [`crate::wire`]); the HTTP status mirrors it. Store and sampling work runs
//! on the blocking pool. Each request is logged once with user, box,
//! transaction, side and status; box outputs are never logged.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{RawQuery, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::Serialize;
use tower_http::services::ServeDir;

use crate::behavior::{Behavior, Side};
use crate::client::{ClientError, HttpBoxClient, LocalBoxClient, ADMIN_KEY_HEADER};
use crate::entropy::EntropySource;
use crate::game::{Round, Scoreboard};
use crate::sampling::Engine;
use crate::store::{
    BoxId, BoxInstance, Store, StoreConfig, StoreError, SyncMode, TransactionId, UserRecord, DEFAULT_LOCK_TIMEOUT,
};
use crate::wire::{
    self, BoxInfo, CreateBoxRequest, CreateUserRequest, CreatedUser, ListBoxesReply, PlainError, RevealReply,
    RevokeKeyRequest, ScoreboardReply, UserBox,
};

pub const DEFAULT_BIND: &str = "127.0.0.1:8080";
pub const DEFAULT_STORE_DIR: &str = "nlbox-store";
pub const DEFAULT_UI_DIR: &str = "ui";

/// Service settings, normally read from `NLBOX_*` environment variables.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    pub store_dir: PathBuf,
    /// Admin endpoints are disabled without one.
    pub admin_key: Option<String>,
    pub lock_timeout: Duration,
    pub sync: SyncMode,
    pub ui_dir: PathBuf,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            bind: DEFAULT_BIND.parse().expect("valid default address"),
            store_dir: DEFAULT_STORE_DIR.into(),
            admin_key: None,
            lock_timeout: DEFAULT_LOCK_TIMEOUT,
            sync: SyncMode::Normal,
            ui_dir: DEFAULT_UI_DIR.into(),
        }
    }
}

impl ServiceConfig {
    /// Reads `NLBOX_BIND`, `NLBOX_STORE`, `NLBOX_ADMIN_KEY`,
    /// `NLBOX_LOCK_TIMEOUT_MS`, `NLBOX_SYNC` (`normal` or `full`) and
    /// `NLBOX_UI_DIR`; unset variables keep their defaults.
    pub fn from_env() -> Result<Self, String> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(var: impl Fn(&str) -> Option<String>) -> Result<Self, String> {
        let mut c = ServiceConfig::default();
        if let Some(v) = var("NLBOX_BIND") {
            c.bind = v.parse().map_err(|e| format!("NLBOX_BIND={v}: {e}"))?;
        }
        if let Some(v) = var("NLBOX_STORE") {
            c.store_dir = v.into();
        }
        c.admin_key = var("NLBOX_ADMIN_KEY").filter(|k| !k.is_empty());
        if let Some(v) = var("NLBOX_LOCK_TIMEOUT_MS") {
            let ms: u64 = v.parse().map_err(|e| format!("NLBOX_LOCK_TIMEOUT_MS={v}: {e}"))?;
            c.lock_timeout = Duration::from_millis(ms);
        }
        if let Some(v) = var("NLBOX_SYNC") {
            c.sync = v.parse()?;
        }
        if let Some(v) = var("NLBOX_UI_DIR") {
            c.ui_dir = v.into();
        }
        Ok(c)
    }

    pub fn store_config(&self) -> StoreConfig {
        StoreConfig {
            lock_timeout: self.lock_timeout,
            sync: self.sync,
        }
    }
}

#[derive(Clone)]
struct AppState {
    engine: Arc<Engine>,
    admin_key: Option<Arc<str>>,
}

/// Builds the application router over `engine`.
pub fn router(engine: Arc<Engine>, admin_key: Option<String>, ui_dir: Option<PathBuf>) -> Router {
    let state = AppState {
        engine,
        admin_key: admin_key.map(Into::into),
    };
    let api = Router::new()
        .route("/api/v1/useBox", get(use_box))
        .route("/api/v1/listBoxes", get(list_boxes))
        .route("/api/v1/admin/createUser", post(create_user))
        .route("/api/v1/admin/createBox", post(create_box))
        .route("/api/v1/admin/revokeKey", post(revoke_key))
        .route("/api/v1/admin/boxes", get(admin_boxes))
        .route("/api/v1/game/reveal", post(reveal))
        .route("/api/v1/game/scoreboard", get(scoreboard))
        .with_state(state);
    match ui_dir {
        Some(dir) => api.nest_service("/ui", ServeDir::new(dir)),
        None => api,
    }
}

fn http_status(status: u8) -> StatusCode {
    match status {
        wire::STATUS_OK => StatusCode::OK,
        wire::STATUS_BAD_API_KEY => StatusCode::UNAUTHORIZED,
        wire::STATUS_UNKNOWN_BOX => StatusCode::NOT_FOUND,
        wire::STATUS_INVALID_INPUT => StatusCode::BAD_REQUEST,
        wire::STATUS_INPUT_MISMATCH => StatusCode::CONFLICT,
        wire::STATUS_ROLE_MISMATCH => StatusCode::FORBIDDEN,
        _ => StatusCode::SERVICE_UNAVAILABLE,
    }
}

fn json_response(status: StatusCode, body: String) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

/// A failed request: wire status plus message.
#[derive(Debug)]
struct Failure(u8, String);

impl Failure {
    fn new(status: u8, msg: impl Into<String>) -> Self {
        Failure(status, msg.into())
    }

    fn store(e: &StoreError) -> Self {
        let (s, m) = wire::store_status(e);
        Failure(s, m)
    }
}

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        let body = serde_json::to_string(&PlainError {
            status: self.0,
            error: self.1,
        })
        .expect("plain struct serializes");
        json_response(http_status(self.0), body)
    }
}

fn ok_json<T: Serialize>(value: &T) -> Response {
    match serde_json::to_string(value) {
        Ok(body) => json_response(StatusCode::OK, body),
        Err(e) => Failure::new(wire::STATUS_UNAVAILABLE, e.to_string()).into_response(),
    }
}

/// Query parameters with duplicates kept, so they can be rejected.
struct Params(HashMap<String, Vec<String>>);

impl Params {
    fn parse(raw: Option<&str>) -> Self {
        let mut map: HashMap<String, Vec<String>> = HashMap::new();
        for (k, v) in form_urlencoded::parse(raw.unwrap_or_default().as_bytes()) {
            map.entry(k.into_owned()).or_default().push(v.into_owned());
        }
        Params(map)
    }

    /// The single value of `name`; `Err` when repeated.
    fn one(&self, name: &str) -> Result<Option<&str>, Failure> {
        match self.0.get(name).map(Vec::as_slice) {
            None | Some([]) => Ok(None),
            Some([v]) => Ok(Some(v)),
            Some(_) => Err(Failure::new(
                wire::STATUS_INVALID_INPUT,
                format!("parameter {name} given more than once"),
            )),
        }
    }

    fn required(&self, name: &str, missing_status: u8) -> Result<&str, Failure> {
        self.one(name)?
            .ok_or_else(|| Failure::new(missing_status, format!("missing parameter {name}")))
    }

    fn box_id(&self) -> Result<BoxId, Failure> {
        let raw = self.required("boxID", wire::STATUS_INVALID_INPUT)?;
        raw.parse()
            .map_err(|_| Failure::new(wire::STATUS_INVALID_INPUT, format!("boxID `{raw}` is not an integer")))
    }
}

fn authenticate(engine: &Engine, api_key: Option<&str>) -> Result<UserRecord, Failure> {
    let key = api_key
        .filter(|k| !k.is_empty())
        .ok_or_else(|| Failure::new(wire::STATUS_BAD_API_KEY, "missing apiKey"))?;
    match engine.store().get_user_by_key(key) {
        Ok(u) => Ok(u),
        Err(StoreError::NotFound(_)) => Err(Failure::new(wire::STATUS_BAD_API_KEY, "unknown or revoked apiKey")),
        Err(e) => Err(Failure::new(wire::STATUS_UNAVAILABLE, e.to_string())),
    }
}

/// The box and the caller's side on it.
fn bound_box(engine: &Engine, user: &UserRecord, box_id: BoxId) -> Result<(BoxInstance, Side), Failure> {
    let instance = engine.store().get_box(box_id).map_err(|e| Failure::store(&e))?;
    let side = instance
        .role_of(user.user_id)
        .ok_or_else(|| Failure::new(wire::STATUS_ROLE_MISMATCH, format!("key is not bound to box {box_id}")))?;
    Ok((instance, side))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, Failure> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| Failure::new(wire::STATUS_UNAVAILABLE, format!("request worker failed: {e}")))
}

#[derive(Default)]
struct UseLog {
    user: Option<i64>,
    box_id: Option<BoxId>,
    transaction: Option<String>,
    side: Option<Side>,
}

async fn use_box(State(state): State<AppState>, RawQuery(raw): RawQuery) -> Response {
    let result = blocking(move || {
        let mut log = UseLog::default();
        let reply = use_box_sync(&state.engine, raw.as_deref(), &mut log);
        (reply, log)
    })
    .await;
    let ((status, body), log) = match result {
        Ok(r) => r,
        Err(f) => ((f.0, wire::error_body(None, f.0, f.1)), UseLog::default()),
    };
    tracing::info!(
        target: "nlbox::request",
        endpoint = "useBox",
        user = log.user,
        box_id = log.box_id,
        transaction = log.transaction.as_deref(),
        side = log.side.map(Side::as_str),
        status,
    );
    json_response(http_status(status), body)
}

fn use_box_sync(engine: &Engine, raw: Option<&str>, log: &mut UseLog) -> (u8, String) {
    let params = Params::parse(raw);
    let box_hint = params.one("boxID").ok().flatten().and_then(|b| b.parse().ok());
    match use_box_checked(engine, &params, log) {
        Ok((side, output, box_id)) => (wire::STATUS_OK, wire::use_box_ok(side, output, box_id)),
        Err(Failure(status, msg)) => (status, wire::error_body(box_hint, status, msg)),
    }
}

fn use_box_checked(engine: &Engine, params: &Params, log: &mut UseLog) -> Result<(Side, usize, BoxId), Failure> {
    let user = authenticate(engine, params.one("apiKey")?)?;
    log.user = Some(user.user_id);
    let box_id = params.box_id()?;
    log.box_id = Some(box_id);
    let (claimed, raw_input) = match (params.one("x")?, params.one("y")?) {
        (Some(x), None) => (Side::Alice, x),
        (None, Some(y)) => (Side::Bob, y),
        (Some(_), Some(_)) => {
            return Err(Failure::new(
                wire::STATUS_INVALID_INPUT,
                "give exactly one of x and y, not both",
            ))
        }
        (None, None) => return Err(Failure::new(wire::STATUS_INVALID_INPUT, "missing input: give x or y")),
    };
    log.side = Some(claimed);
    let k = params.required("transactionID", wire::STATUS_INVALID_INPUT)?;
    let k = TransactionId::new(k).map_err(|e| Failure::store(&e))?;
    log.transaction = Some(k.to_string());
    let input: usize = raw_input.parse().map_err(|_| {
        Failure::new(
            wire::STATUS_INVALID_INPUT,
            format!("input `{raw_input}` is not a symbol"),
        )
    })?;

    let (instance, side) = bound_box(engine, &user, box_id)?;
    if side != claimed {
        return Err(Failure::new(
            wire::STATUS_ROLE_MISMATCH,
            format!("key plays {side} on box {box_id}, not {claimed}"),
        ));
    }
    let outcome = engine.use_instance(&instance, &k, side, input).map_err(|e| {
        let (s, m) = wire::engine_status(&e);
        Failure(s, m)
    })?;
    Ok((side, outcome.output, box_id))
}

async fn list_boxes(State(state): State<AppState>, RawQuery(raw): RawQuery) -> Response {
    let r = blocking(move || -> Result<ListBoxesReply, Failure> {
        let params = Params::parse(raw.as_deref());
        let user = authenticate(&state.engine, params.one("apiKey")?)?;
        let boxes = state
            .engine
            .store()
            .list_boxes_for_user(user.user_id)
            .map_err(|e| Failure::store(&e))?
            .into_iter()
            .map(|(b, role)| UserBox {
                box_id: b.box_id,
                behavior: b.behavior_name,
                role,
            })
            .collect();
        Ok(ListBoxesReply {
            status: wire::STATUS_OK,
            boxes,
        })
    })
    .await;
    respond(r.and_then(|r| r))
}

fn respond<T: Serialize>(r: Result<T, Failure>) -> Response {
    match r {
        Ok(v) => ok_json(&v),
        Err(f) => f.into_response(),
    }
}

#[allow(clippy::result_large_err)]
fn check_admin(state: &AppState, headers: &HeaderMap) -> Result<(), Response> {
    let Some(expected) = &state.admin_key else {
        return Err((
            StatusCode::FORBIDDEN,
            Failure::new(wire::STATUS_BAD_API_KEY, "administration is disabled"),
        )
            .into_response());
    };
    let given = headers
        .get(ADMIN_KEY_HEADER)
        .and_then(|v| v.to_str().ok())
        .unwrap_or_default();
    if !constant_time_eq(given.as_bytes(), expected.as_bytes()) {
        return Err(Failure::new(wire::STATUS_BAD_API_KEY, "bad admin credential").into_response());
    }
    Ok(())
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T, Failure> {
    serde_json::from_slice(body).map_err(|e| Failure::new(wire::STATUS_INVALID_INPUT, format!("bad request body: {e}")))
}

/// Admin failures keep the store's meaning in the HTTP status.
fn admin_store_failure(e: StoreError) -> Response {
    let code = match &e {
        StoreError::NotFound(_) => StatusCode::NOT_FOUND,
        StoreError::Invalid(_) => StatusCode::BAD_REQUEST,
        StoreError::DuplicateKey(_) => StatusCode::CONFLICT,
        _ => StatusCode::SERVICE_UNAVAILABLE,
    };
    let status = if code == StatusCode::SERVICE_UNAVAILABLE {
        wire::STATUS_UNAVAILABLE
    } else {
        wire::STATUS_INVALID_INPUT
    };
    (code, Failure::new(status, e.to_string())).into_response()
}

async fn create_user(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> Response {
    if let Err(r) = check_admin(&state, &headers) {
        return r;
    }
    let req: CreateUserRequest = match parse_body(&body) {
        Ok(r) => r,
        Err(f) => return f.into_response(),
    };
    let r = blocking(move || state.engine.store().create_user(&req.display_name)).await;
    match r {
        Ok(Ok(u)) => {
            tracing::info!(target: "nlbox::request", endpoint = "createUser", user = u.user.user_id, status = 0);
            ok_json(&CreatedUser {
                user_id: u.user.user_id,
                display_name: u.user.display_name,
                api_key: u.api_key,
            })
        }
        Ok(Err(e)) => admin_store_failure(e),
        Err(f) => f.into_response(),
    }
}

async fn create_box(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> Response {
    if let Err(r) = check_admin(&state, &headers) {
        return r;
    }
    let req: CreateBoxRequest = match parse_body(&body) {
        Ok(r) => r,
        Err(f) => return f.into_response(),
    };
    let behavior = match Behavior::from_document(req.behavior) {
        Ok(b) => b,
        Err(e) => return Failure::new(wire::STATUS_INVALID_INPUT, format!("invalid behavior: {e}")).into_response(),
    };
    let r = blocking(move || {
        state
            .engine
            .store()
            .create_box_instance(&behavior, req.alice_user, req.bob_user)
    })
    .await;
    match r {
        Ok(Ok(b)) => {
            tracing::info!(target: "nlbox::request", endpoint = "createBox", box_id = b.box_id, status = 0);
            ok_json(&box_info(b))
        }
        Ok(Err(e)) => admin_store_failure(e),
        Err(f) => f.into_response(),
    }
}

fn box_info(b: BoxInstance) -> BoxInfo {
    BoxInfo {
        box_id: b.box_id,
        behavior: b.behavior_name,
        alice_user: b.alice_user,
        bob_user: b.bob_user,
    }
}

async fn revoke_key(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> Response {
    if let Err(r) = check_admin(&state, &headers) {
        return r;
    }
    let req: RevokeKeyRequest = match parse_body(&body) {
        Ok(r) => r,
        Err(f) => return f.into_response(),
    };
    match blocking(move || state.engine.store().revoke_api_key(req.user_id)).await {
        Ok(Ok(())) => ok_json(&serde_json::json!({ "status": 0 })),
        Ok(Err(e)) => admin_store_failure(e),
        Err(f) => f.into_response(),
    }
}

async fn admin_boxes(State(state): State<AppState>, headers: HeaderMap) -> Response {
    if let Err(r) = check_admin(&state, &headers) {
        return r;
    }
    match blocking(move || state.engine.store().list_boxes()).await {
        Ok(Ok(boxes)) => ok_json(&boxes.into_iter().map(box_info).collect::<Vec<_>>()),
        Ok(Err(e)) => admin_store_failure(e),
        Err(f) => f.into_response(),
    }
}

fn round_of(row: &crate::store::TransactionRow) -> Option<Round> {
    let (alice, bob) = (row.alice?, row.bob?);
    Some(Round::new(
        row.transaction_id.as_str(),
        alice.input,
        bob.input,
        alice.output,
        bob.output,
    ))
}

async fn reveal(State(state): State<AppState>, RawQuery(raw): RawQuery) -> Response {
    let r = blocking(move || -> Result<RevealReply, Failure> {
        let params = Params::parse(raw.as_deref());
        let user = authenticate(&state.engine, params.one("apiKey")?)?;
        let box_id = params.box_id()?;
        let k = params.required("transactionID", wire::STATUS_INVALID_INPUT)?;
        let k = TransactionId::new(k).map_err(|e| Failure::store(&e))?;
        let (instance, side) = bound_box(&state.engine, &user, box_id)?;
        let row = state
            .engine
            .store()
            .with_transaction_lock(instance.box_id, &k, |tx| -> Result<_, StoreError> {
                tx.mark_revealed(side)?;
                Ok(tx.row().cloned())
            })
            .map_err(|e| Failure::store(&e))?
            .expect("a revealed transaction has a row");
        let complete = row.is_complete() && row.alice_revealed && row.bob_revealed;
        tracing::info!(target: "nlbox::request", endpoint = "reveal", user = user.user_id, box_id, transaction = %k, side = side.as_str(), status = 0);
        Ok(RevealReply {
            box_id,
            transaction_id: k.to_string(),
            status: wire::STATUS_OK,
            complete,
            round: if complete { round_of(&row) } else { None },
        })
    })
    .await;
    respond(r.and_then(|r| r))
}

async fn scoreboard(State(state): State<AppState>, RawQuery(raw): RawQuery) -> Response {
    let r = blocking(move || -> Result<ScoreboardReply, Failure> {
        let params = Params::parse(raw.as_deref());
        let user = authenticate(&state.engine, params.one("apiKey")?)?;
        let box_id = params.box_id()?;
        let (instance, _) = bound_box(&state.engine, &user, box_id)?;
        let behavior = state
            .engine
            .behavior(&instance.behavior_name)
            .map_err(|e| Failure::store(&e))?;
        if !behavior.alphabets().is_binary() {
            return Err(Failure::new(
                wire::STATUS_INVALID_INPUT,
                "the CHSH scoreboard needs a binary box",
            ));
        }
        let rounds: Vec<Round> = state
            .engine
            .store()
            .list_transactions(box_id)
            .map_err(|e| Failure::store(&e))?
            .iter()
            .filter(|r| r.alice_revealed && r.bob_revealed)
            .filter_map(round_of)
            .collect();
        Ok(ScoreboardReply {
            box_id,
            status: wire::STATUS_OK,
            scoreboard: Scoreboard::from_rounds(&rounds),
            rounds,
        })
    })
    .await;
    respond(r.and_then(|r| r))
}

/// A server running on its own runtime thread; stops when dropped.
pub struct RunningServer {
    addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<std::io::Result<()>>>,
}

impl RunningServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn stop(mut self) -> std::io::Result<()> {
        self.shutdown_and_join()
    }

    fn shutdown_and_join(&mut self) -> std::io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        match self.thread.take() {
            Some(t) => t
                .join()
                .unwrap_or_else(|_| Err(std::io::Error::other("server thread panicked"))),
            None => Ok(()),
        }
    }
}

impl Drop for RunningServer {
    fn drop(&mut self) {
        let _ = self.shutdown_and_join();
    }
}

/// Binds `addr` (port 0 picks a free port) and serves `app` in the background.
pub fn spawn(app: Router, addr: SocketAddr) -> std::io::Result<RunningServer> {
    let listener = std::net::TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(4)
        .enable_all()
        .thread_name("nlbox-http")
        .build()?;
    let thread = std::thread::Builder::new().name("nlbox-server".into()).spawn(move || {
        runtime.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener)?;
            axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await
        })
    })?;
    Ok(RunningServer {
        addr,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}

/// Serves until Ctrl-C.
pub async fn serve_until_ctrl_c(app: Router, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

/// An in-memory store with one box for `behavior`, two fresh users and an
/// HTTP server on a free local port.
pub struct LocalDeployment {
    pub engine: Arc<Engine>,
    pub server: RunningServer,
    pub box_id: BoxId,
    pub alice_key: String,
    pub bob_key: String,
}

impl LocalDeployment {
    pub fn start(behavior: &Behavior, entropy: Box<dyn EntropySource>) -> Result<Self, StoreError> {
        let store = Arc::new(Store::open_in_memory(StoreConfig::default())?);
        let alice = store.create_user("alice")?;
        let bob = store.create_user("bob")?;
        let instance = store.create_box_instance(behavior, alice.user.user_id, bob.user.user_id)?;
        let engine = Arc::new(Engine::new(store, entropy));
        let app = router(engine.clone(), None, None);
        let server =
            spawn(app, SocketAddr::from(([127, 0, 0, 1], 0))).map_err(|e| StoreError::Unavailable(e.to_string()))?;
        Ok(LocalDeployment {
            engine,
            server,
            box_id: instance.box_id,
            alice_key: alice.api_key,
            bob_key: bob.api_key,
        })
    }

    pub fn base_url(&self) -> String {
        self.server.base_url()
    }

    pub fn http_client(&self, side: Side) -> Result<HttpBoxClient, ClientError> {
        let key = match side {
            Side::Alice => &self.alice_key,
            Side::Bob => &self.bob_key,
        };
        HttpBoxClient::new(&self.base_url(), key, self.box_id, side)
    }

    pub fn local_client(&self, side: Side) -> LocalBoxClient {
        LocalBoxClient::new(self.engine.clone(), self.box_id, side)
    }
}
