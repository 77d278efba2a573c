use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::State;
use axum::routing::get;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Semaphore;
use tokio::task::JoinHandle;
use tracing::{info, warn};

use super::client::{RegistryClient, RegistryClientError};
use super::pipeline::{run_pipeline, OutcomeKind, PipelineContext, SessionReport};
use crate::plugin::PluginDescriptor;
use crate::registry::ContextFacts;
use crate::wire::{open_listener, Listener, TransportKind, TransportProfile, WireError};

#[derive(Debug, Clone)]
pub struct ListenerConfig {
    pub profile: TransportProfile,
    pub bind: SocketAddr,
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub listeners: Vec<ListenerConfig>,
    /// Registry base URL, e.g. `http://127.0.0.1:7800`.
    pub registry: String,
    pub max_sessions: usize,
    /// Reply timeout for `WHO`.
    pub phase_timeout: Duration,
    /// Upper bound for one whole pipeline.
    pub session_limit: Duration,
    pub facts: ContextFacts,
    pub status_bind: Option<SocketAddr>,
}

impl GatewayConfig {
    /// Loopback listeners on ephemeral ports, one per profile.
    pub fn loopback(registry: impl Into<String>, profiles: &[TransportProfile]) -> Self {
        let any: SocketAddr = "127.0.0.1:0".parse().unwrap();
        GatewayConfig {
            listeners: profiles.iter().map(|&profile| ListenerConfig { profile, bind: any }).collect(),
            registry: registry.into(),
            max_sessions: 64,
            phase_timeout: Duration::from_secs(2),
            session_limit: Duration::from_secs(60),
            facts: ContextFacts::new(),
            status_bind: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid gateway config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Bind(#[from] WireError),
    #[error("status endpoint {addr}: {source}")]
    StatusBind { addr: SocketAddr, source: std::io::Error },
    #[error("registry check failed: {0}")]
    Registry(#[from] RegistryClientError),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayStatus {
    pub live_sessions: usize,
    pub peak_sessions: usize,
    pub completed: u64,
    pub failed: u64,
    pub unknown: u64,
    pub cache_size: usize,
    pub plugin_fetches: u64,
    pub max_sessions: usize,
}

struct Shared {
    ctx: PipelineContext,
    permits: Arc<Semaphore>,
    max_sessions: usize,
    session_limit: Duration,
    live: AtomicUsize,
    peak: AtomicUsize,
    completed: AtomicU64,
    failed: AtomicU64,
    unknown: AtomicU64,
    reports: Mutex<Vec<SessionReport>>,
}

impl Shared {
    fn status(&self) -> GatewayStatus {
        GatewayStatus {
            live_sessions: self.live.load(Ordering::SeqCst),
            peak_sessions: self.peak.load(Ordering::SeqCst),
            completed: self.completed.load(Ordering::SeqCst),
            failed: self.failed.load(Ordering::SeqCst),
            unknown: self.unknown.load(Ordering::SeqCst),
            cache_size: self.ctx.cache.len(),
            plugin_fetches: self.ctx.cache.fetch_count(),
            max_sessions: self.max_sessions,
        }
    }
}

/// Counts a session as live until dropped, even if its worker panics.
struct LiveGuard(Arc<Shared>);

impl LiveGuard {
    fn new(shared: Arc<Shared>) -> Self {
        let now = shared.live.fetch_add(1, Ordering::SeqCst) + 1;
        shared.peak.fetch_max(now, Ordering::SeqCst);
        LiveGuard(shared)
    }
}

impl Drop for LiveGuard {
    fn drop(&mut self) {
        self.0.live.fetch_sub(1, Ordering::SeqCst);
    }
}

async fn serve_session(shared: Arc<Shared>, session: crate::wire::Session) {
    let Ok(_permit) = shared.permits.clone().acquire_owned().await else { return };
    let started = Instant::now();
    let _live = LiveGuard::new(shared.clone());
    let outcome = run_pipeline(&shared.ctx, session, started, shared.session_limit).await;
    let report = outcome.report;
    match report.outcome {
        OutcomeKind::Configured => {
            shared.completed.fetch_add(1, Ordering::SeqCst);
            info!(uid = ?report.identity.as_ref().map(|i| &i.uid), transport = %report.transport,
                  ms = report.elapsed.as_millis() as u64, "sensor configured");
        }
        OutcomeKind::Unknown => {
            shared.unknown.fetch_add(1, Ordering::SeqCst);
        }
        OutcomeKind::Failed => {
            shared.failed.fetch_add(1, Ordering::SeqCst);
            info!(peer = %report.peer, phase = ?report.failed_in, error = ?report.error, "session discarded");
        }
    }
    shared.reports.lock().unwrap().push(report);
}

async fn accept_loop(shared: Arc<Shared>, mut listener: Listener) {
    loop {
        match listener.accept().await {
            Ok(session) => {
                tokio::spawn(serve_session(shared.clone(), session));
            }
            Err(e) => {
                warn!(transport = %listener.profile().kind, error = %e, "accept failed");
                tokio::time::sleep(Duration::from_millis(50)).await;
            }
        }
    }
}

/// A running gateway.
pub struct Gateway {
    shared: Arc<Shared>,
    addrs: Vec<(TransportKind, SocketAddr)>,
    status_addr: Option<SocketAddr>,
    tasks: Vec<JoinHandle<()>>,
}

impl Gateway {
    /// Checks the registry, binds every listener and starts serving.
    pub async fn start(config: GatewayConfig) -> Result<Gateway, GatewayError> {
        if config.max_sessions == 0 {
            return Err(GatewayError::InvalidConfig("max sessions must be at least 1".into()));
        }
        if config.listeners.is_empty() {
            return Err(GatewayError::InvalidConfig("no listeners configured".into()));
        }
        let client = RegistryClient::new(&config.registry);
        client.health().await?;

        let mut ctx = PipelineContext::new(client);
        ctx.facts = config.facts.clone();
        ctx.phase_timeout = config.phase_timeout;
        let shared = Arc::new(Shared {
            ctx,
            permits: Arc::new(Semaphore::new(config.max_sessions)),
            max_sessions: config.max_sessions,
            session_limit: config.session_limit,
            live: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
            completed: AtomicU64::new(0),
            failed: AtomicU64::new(0),
            unknown: AtomicU64::new(0),
            reports: Mutex::new(Vec::new()),
        });

        let mut listeners = Vec::new();
        for lc in &config.listeners {
            listeners.push(open_listener(lc.profile, lc.bind).await?);
        }
        let mut tasks = Vec::new();
        let mut status_addr = None;
        if let Some(addr) = config.status_bind {
            let tcp = tokio::net::TcpListener::bind(addr).await.map_err(|source| GatewayError::StatusBind { addr, source })?;
            status_addr = Some(tcp.local_addr().map_err(|source| GatewayError::StatusBind { addr, source })?);
            let app = status_router(shared.clone());
            tasks.push(tokio::spawn(async move {
                let _ = axum::serve(tcp, app).await;
            }));
        }
        let addrs = listeners.iter().map(|l| (l.profile().kind, l.local_addr())).collect();
        for l in listeners {
            info!(transport = %l.profile().kind, addr = %l.local_addr(), "gateway listening");
            tasks.push(tokio::spawn(accept_loop(shared.clone(), l)));
        }
        Ok(Gateway { shared, addrs, status_addr, tasks })
    }

    pub fn addr(&self, kind: TransportKind) -> Option<SocketAddr> {
        self.addrs.iter().find(|(k, _)| *k == kind).map(|(_, a)| *a)
    }

    pub fn addrs(&self) -> &[(TransportKind, SocketAddr)] {
        &self.addrs
    }

    pub fn status_addr(&self) -> Option<SocketAddr> {
        self.status_addr
    }

    pub fn status(&self) -> GatewayStatus {
        self.shared.status()
    }

    pub fn reports(&self) -> Vec<SessionReport> {
        self.shared.reports.lock().unwrap().clone()
    }

    /// Drops stored reports and returns them.
    pub fn take_reports(&self) -> Vec<SessionReport> {
        std::mem::take(&mut *self.shared.reports.lock().unwrap())
    }

    pub fn context(&self) -> &PipelineContext {
        &self.shared.ctx
    }

    pub fn cached_plugin(&self, id: &str) -> Option<Arc<PluginDescriptor>> {
        self.shared.ctx.cache.get(id)
    }

    /// Polls the status until `pred` holds or `within` elapses.
    pub async fn wait_for(&self, within: Duration, pred: impl Fn(&GatewayStatus) -> bool) -> bool {
        let deadline = Instant::now() + within;
        loop {
            if pred(&self.status()) {
                return true;
            }
            if Instant::now() >= deadline {
                return false;
            }
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
    }

    pub fn shutdown(self) {
        drop(self)
    }
}

impl Drop for Gateway {
    fn drop(&mut self) {
        for t in &self.tasks {
            t.abort();
        }
    }
}

fn status_router(shared: Arc<Shared>) -> Router {
    Router::new()
        .route("/status", get(|State(s): State<Arc<Shared>>| async move { Json(s.status()) }))
        .route(
            "/sessions",
            get(|State(s): State<Arc<Shared>>| async move { Json(s.reports.lock().unwrap().clone()) }),
        )
        .with_state(shared)
}

/// Serves until interrupted.
pub async fn run(config: GatewayConfig) -> Result<(), GatewayError> {
    let gateway = Gateway::start(config).await?;
    let _ = tokio::signal::ctrl_c().await;
    info!(status = ?gateway.status(), "gateway stopping");
    Ok(())
}
