//! Whole system in one process on loopback ports: registry seeded with the
//! shipped catalog, its data sink, a gateway and simulated sensors.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use crate::gateway::{Gateway, GatewayConfig, GatewayError, OutcomeKind, SessionReport};
use crate::registry::{BindError, ContextFacts, Registry, RegistryError, RegistryServer, RuleTable};
use crate::simsensor::catalog::{models, plugin_text};
use crate::simsensor::{builtin_dialects, spawn_fleet, DialectSet, Fleet, SensorSpec, SpawnError};
use crate::wire::{TransportKind, TransportProfile};

#[derive(Debug, Error)]
pub enum TestbedError {
    #[error("temporary store: {0}")]
    TempDir(#[from] std::io::Error),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Bind(#[from] BindError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone)]
pub struct TestbedConfig {
    pub profiles: Vec<TransportProfile>,
    pub max_sessions: usize,
    pub facts: ContextFacts,
    pub rules: RuleTable,
    /// Registry store directory; a temporary one when `None`.
    pub store: Option<PathBuf>,
    pub phase_timeout: Duration,
    /// Serve the gateway status endpoint on an ephemeral port.
    pub status_endpoint: bool,
}

impl Default for TestbedConfig {
    fn default() -> Self {
        TestbedConfig {
            profiles: TransportKind::ALL.into_iter().map(TransportProfile::for_kind).collect(),
            max_sessions: 64,
            facts: ContextFacts::new(),
            rules: RuleTable::reference(),
            store: None,
            phase_timeout: Duration::from_secs(2),
            status_endpoint: false,
        }
    }
}

pub struct Testbed {
    pub registry: RegistryServer,
    pub gateway: Gateway,
    pub dialects: DialectSet,
    _tmp: Option<tempfile::TempDir>,
}

/// Installs the 52 generated catalog entries and plugins.
pub fn seed_catalog(registry: &Registry) -> Result<usize, RegistryError> {
    let all = models();
    for m in &all {
        registry.install(m.catalog_entry(), &plugin_text(m.index))?;
    }
    Ok(all.len())
}

impl Testbed {
    pub async fn start(config: TestbedConfig) -> Result<Testbed, TestbedError> {
        let (tmp, root) = match config.store {
            Some(p) => (None, p),
            None => {
                let t = tempfile::tempdir()?;
                let p = t.path().to_path_buf();
                (Some(t), p)
            }
        };
        let registry = Arc::new(Registry::open(&root, config.rules)?);
        seed_catalog(&registry)?;
        let any: SocketAddr = "127.0.0.1:0".parse().unwrap();
        let server = RegistryServer::start(registry, any, any).await?;

        let mut gc = GatewayConfig::loopback(server.base_url(), &config.profiles);
        gc.max_sessions = config.max_sessions;
        gc.facts = config.facts;
        gc.phase_timeout = config.phase_timeout;
        if config.status_endpoint {
            gc.status_bind = Some(any);
        }
        let gateway = Gateway::start(gc).await?;
        Ok(Testbed { registry: server, gateway, dialects: builtin_dialects(), _tmp: tmp })
    }

    pub fn registry(&self) -> &Arc<Registry> {
        self.registry.registry()
    }

    pub fn targets(&self) -> BTreeMap<TransportKind, SocketAddr> {
        self.gateway.addrs().iter().copied().collect()
    }

    pub fn spawn(&self, specs: Vec<SensorSpec>) -> (Fleet, Vec<SpawnError>) {
        spawn_fleet(specs, &self.targets(), &self.dialects)
    }

    /// Reports of sessions with these sensors, newest last.
    pub fn reports_for(&self, uids: &[String]) -> Vec<SessionReport> {
        self.gateway
            .reports()
            .into_iter()
            .filter(|r| r.identity.as_ref().is_some_and(|i| uids.contains(&i.uid)))
            .collect()
    }

    /// Waits until each uid has a finished session; returns the latest
    /// report per uid in `uids` order, or `None` on timeout.
    pub async fn wait_reports(&self, uids: &[String], within: Duration) -> Option<Vec<SessionReport>> {
        let deadline = tokio::time::Instant::now() + within;
        loop {
            let reports = self.reports_for(uids);
            let latest: Vec<SessionReport> = uids
                .iter()
                .filter_map(|u| reports.iter().rev().find(|r| r.identity.as_ref().is_some_and(|i| &i.uid == u)).cloned())
                .collect();
            if latest.len() == uids.len() {
                return Some(latest);
            }
            if tokio::time::Instant::now() >= deadline {
                return None;
            }
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
    }

    /// Waits until every uid has a configured session.
    pub async fn wait_configured(&self, uids: &[String], within: Duration) -> bool {
        let deadline = tokio::time::Instant::now() + within;
        loop {
            let reports = self.reports_for(uids);
            let done = uids.iter().all(|u| {
                reports
                    .iter()
                    .any(|r| r.outcome == OutcomeKind::Configured && r.identity.as_ref().is_some_and(|i| &i.uid == u))
            });
            if done {
                return true;
            }
            if tokio::time::Instant::now() >= deadline {
                return false;
            }
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
    }
}
