//! HTTP/JSON API and the TCP data sink that issued credentials point at.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;
use tracing::{debug, warn};

use super::profile::SensorProfile;
use super::rules::ContextFacts;
use super::service::{unix_ms, Registry, RegistryError, Sample};
use crate::wire::{Connection, Message, WireError};

pub const DIGEST_HEADER: &str = "x-content-digest";

#[derive(Debug, Serialize, Deserialize)]
pub struct StrategyRequest {
    pub uid: String,
    #[serde(default)]
    pub facts: ContextFacts,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct UidRequest {
    pub uid: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct JoinRequest {
    pub uid: String,
    pub token: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct JoinResponse {
    pub accepted: bool,
}

impl IntoResponse for RegistryError {
    fn into_response(self) -> Response {
        let status = match &self {
            RegistryError::UnknownUid(_) => StatusCode::NOT_FOUND,
            RegistryError::Validation(_) | RegistryError::Install(_) => StatusCode::UNPROCESSABLE_ENTITY,
            RegistryError::Infeasible(_) => StatusCode::CONFLICT,
            RegistryError::NoSink | RegistryError::Store(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

type Shared = State<Arc<Registry>>;

async fn identify(State(r): Shared, Query(q): Query<BTreeMap<String, String>>) -> Response {
    match (q.get("model"), q.get("mfr")) {
        (Some(model), Some(mfr)) => Json(r.identify(model, mfr)).into_response(),
        _ => (StatusCode::BAD_REQUEST, Json(json!({ "error": "model and mfr are required" }))).into_response(),
    }
}

async fn plugin(State(r): Shared, Path(id): Path<String>) -> Result<Response, RegistryError> {
    let Some((bytes, digest)) = r.plugin(&id)? else {
        return Ok((StatusCode::NOT_FOUND, Json(json!({ "error": format!("no plugin {id}") }))).into_response());
    };
    let mut headers = HeaderMap::new();
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("text/plain; charset=utf-8"));
    headers.insert(DIGEST_HEADER, HeaderValue::from_str(&digest).unwrap_or(HeaderValue::from_static("invalid")));
    Ok((headers, bytes).into_response())
}

async fn register(State(r): Shared, Json(profile): Json<SensorProfile>) -> Result<Response, RegistryError> {
    Ok(Json(r.register(profile)?).into_response())
}

async fn strategy(State(r): Shared, Json(req): Json<StrategyRequest>) -> Result<Response, RegistryError> {
    Ok(Json(r.strategy(&req.uid, &req.facts)?).into_response())
}

async fn credentials(State(r): Shared, Json(req): Json<UidRequest>) -> Result<Response, RegistryError> {
    Ok(Json(r.issue_credentials(&req.uid)?).into_response())
}

async fn join(State(r): Shared, Json(req): Json<JoinRequest>) -> Json<JoinResponse> {
    Json(JoinResponse { accepted: r.validate_join(&req.uid, &req.token) })
}

pub fn router(registry: Arc<Registry>) -> Router {
    Router::new()
        .route("/health", get(|| async { Json(json!({ "status": "ok" })) }))
        .route("/identify", get(identify))
        .route("/plugins/{id}", get(plugin))
        .route("/catalog", get(|State(r): Shared| async move { Json(r.catalog()) }))
        .route("/register", post(register))
        .route("/registrations", get(|State(r): Shared| async move { Json(r.records()) }))
        .route("/strategy", post(strategy))
        .route("/credentials", post(credentials))
        .route("/join", post(join))
        .route("/samples", get(|State(r): Shared| async move { Json(r.samples()) }))
        .with_state(registry)
}

/// One sink connection: `JOIN|uid|token` must succeed before `SAMPLE`s
/// are stored.
async fn sink_session(registry: Arc<Registry>, mut conn: Connection) -> Result<(), WireError> {
    let mut joined: Option<String> = None;
    loop {
        let msg = conn.recv().await?;
        let reply = match msg.verb() {
            "JOIN" => match (msg.get("uid"), msg.get("token")) {
                (Some(uid), Some(token)) if registry.validate_join(uid, token) => {
                    joined = Some(uid.to_string());
                    Message::new("WELCOME").arg("uid", uid)
                }
                (Some(_), Some(_)) => Message::new("DENIED").arg("reason", "token"),
                _ => Message::new("DENIED").arg("reason", "malformed"),
            },
            "SAMPLE" => match (&joined, msg.get("phenomenon"), msg.get("value")) {
                (Some(uid), Some(phenomenon), Some(value)) if msg.get("uid") == Some(uid.as_str()) => {
                    registry.record_sample(Sample {
                        uid: uid.clone(),
                        phenomenon: phenomenon.into(),
                        value: value.into(),
                        received_at_ms: unix_ms(),
                    });
                    Message::new("STORED")
                }
                (None, _, _) => Message::new("ERR").arg("reason", "not_joined"),
                _ => Message::new("ERR").arg("reason", "malformed"),
            },
            "BYE" => return Ok(()),
            _ => Message::new("ERR").arg("reason", "unknown"),
        };
        conn.send(&reply).await?;
    }
}

async fn run_sink(registry: Arc<Registry>, listener: TcpListener) {
    loop {
        match listener.accept().await {
            Ok((stream, peer)) => {
                let registry = registry.clone();
                tokio::spawn(async move {
                    match sink_session(registry, Connection::from_stream(stream)).await {
                        Ok(()) | Err(WireError::ConnectionClosed) => {}
                        Err(e) => debug!(%peer, error = %e, "sink session ended"),
                    }
                });
            }
            Err(e) => warn!(error = %e, "sink accept failed"),
        }
    }
}

#[derive(Debug, Error)]
#[error("cannot bind {addr}: {source}")]
pub struct BindError {
    pub addr: SocketAddr,
    pub source: std::io::Error,
}

/// A running registry: HTTP API plus data sink.
pub struct RegistryServer {
    registry: Arc<Registry>,
    http: SocketAddr,
    sink: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    http_task: Option<JoinHandle<()>>,
    sink_task: JoinHandle<()>,
}

impl RegistryServer {
    pub async fn start(registry: Arc<Registry>, http: SocketAddr, sink: SocketAddr) -> Result<Self, BindError> {
        let http_listener = TcpListener::bind(http).await.map_err(|source| BindError { addr: http, source })?;
        let sink_listener = TcpListener::bind(sink).await.map_err(|source| BindError { addr: sink, source })?;
        let http = http_listener.local_addr().map_err(|source| BindError { addr: http, source })?;
        let sink = sink_listener.local_addr().map_err(|source| BindError { addr: sink, source })?;
        registry.set_sink(sink);

        let (stop, stopped) = oneshot::channel::<()>();
        let app = router(registry.clone());
        let http_task = tokio::spawn(async move {
            let serve = axum::serve(http_listener, app).with_graceful_shutdown(async {
                let _ = stopped.await;
            });
            if let Err(e) = serve.await {
                warn!(error = %e, "registry http server failed");
            }
        });
        let sink_task = tokio::spawn(run_sink(registry.clone(), sink_listener));
        Ok(RegistryServer { registry, http, sink, stop: Some(stop), http_task: Some(http_task), sink_task })
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    pub fn http_addr(&self) -> SocketAddr {
        self.http
    }

    pub fn sink_addr(&self) -> SocketAddr {
        self.sink
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.http)
    }

    /// Stops serving and persists the store.
    pub async fn shutdown(mut self) -> Result<(), RegistryError> {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        self.sink_task.abort();
        if let Some(task) = self.http_task.take() {
            let _ = task.await;
        }
        self.registry.persist()
    }
}

impl Drop for RegistryServer {
    fn drop(&mut self) {
        self.sink_task.abort();
        if let Some(task) = &self.http_task {
            task.abort();
        }
    }
}
