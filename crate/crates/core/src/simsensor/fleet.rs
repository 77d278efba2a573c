use std::collections::BTreeMap;
use std::fs;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::routing::get;
use axum::{Json, Router};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use thiserror::Error;
use tokio::sync::watch;
use tokio::task::JoinHandle;

use super::catalog::{dialect_text, MODEL_COUNT};
use super::dialect::{parse_dialect, Dialect};
use super::sensor::{run_sensor, SensorSpec, SensorState, SharedState};
use crate::wire::TransportKind;

pub type DialectSet = BTreeMap<String, Arc<Dialect>>;

#[derive(Debug, Error)]
pub enum SpawnError {
    #[error("sensor {uid}: unknown dialect {dialect:?}")]
    UnknownDialect { uid: String, dialect: String },
    #[error("sensor {uid}: dialect {dialect} speaks for {dialect_model}, not {model}")]
    DialectModel { uid: String, dialect: String, dialect_model: String, model: String },
    #[error("sensor {uid}: no gateway listener for {transport}")]
    NoTarget { uid: String, transport: TransportKind },
    #[error("sensor {0}: duplicate uid")]
    DuplicateUid(String),
}

#[derive(Debug, Error)]
pub enum FleetFileError {
    #[error("{path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
}

/// Dialects generated in memory, identical to the shipped files.
pub fn builtin_dialects() -> DialectSet {
    (0..MODEL_COUNT)
        .map(|n| {
            let d = parse_dialect(&dialect_text(n)).expect("generated dialect parses");
            (d.id.clone(), Arc::new(d))
        })
        .collect()
}

/// Every `*.dialect` file in `dir`.
pub fn load_dialects(dir: &Path) -> Result<DialectSet, FleetFileError> {
    let read_err = |source| FleetFileError::Read { path: dir.display().to_string(), source };
    let mut set = DialectSet::new();
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(read_err)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "dialect"))
        .collect();
    paths.sort();
    for path in paths {
        let shown = path.display().to_string();
        let text = fs::read_to_string(&path).map_err(|source| FleetFileError::Read { path: shown.clone(), source })?;
        let d = parse_dialect(&text).map_err(|e| FleetFileError::Parse { path: shown, message: e.to_string() })?;
        set.insert(d.id.clone(), Arc::new(d));
    }
    Ok(set)
}

/// Reads a fleet spec file (a JSON list of sensor specs).
pub fn load_specs(path: &Path) -> Result<Vec<SensorSpec>, FleetFileError> {
    let shown = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| FleetFileError::Read { path: shown.clone(), source })?;
    serde_json::from_str(&text).map_err(|e| FleetFileError::Parse { path: shown, message: e.to_string() })
}

struct Member {
    spec: Arc<SensorSpec>,
    state: SharedState,
    restart: watch::Sender<u64>,
    task: JoinHandle<()>,
}

/// Handle over a running set of simulated sensors.
pub struct Fleet {
    members: BTreeMap<String, Member>,
    churn: Mutex<Option<JoinHandle<()>>>,
}

/// Starts every valid spec; invalid ones are reported and skipped.
pub fn spawn_fleet(
    specs: Vec<SensorSpec>,
    targets: &BTreeMap<TransportKind, SocketAddr>,
    dialects: &DialectSet,
) -> (Fleet, Vec<SpawnError>) {
    let mut members = BTreeMap::new();
    let mut errors = Vec::new();
    for spec in specs {
        let Some(dialect) = dialects.get(&spec.dialect) else {
            errors.push(SpawnError::UnknownDialect { uid: spec.uid, dialect: spec.dialect });
            continue;
        };
        if dialect.model != spec.model {
            errors.push(SpawnError::DialectModel {
                uid: spec.uid,
                dialect: spec.dialect,
                dialect_model: dialect.model.clone(),
                model: spec.model,
            });
            continue;
        }
        let Some(&target) = targets.get(&spec.transport) else {
            errors.push(SpawnError::NoTarget { uid: spec.uid, transport: spec.transport });
            continue;
        };
        if members.contains_key(&spec.uid) {
            errors.push(SpawnError::DuplicateUid(spec.uid));
            continue;
        }
        let spec = Arc::new(spec);
        let state = Arc::new(Mutex::new(SensorState::new(&spec.uid)));
        let (restart, rx) = watch::channel(0u64);
        let task = tokio::spawn(run_sensor(spec.clone(), dialect.clone(), target, state.clone(), rx));
        members.insert(spec.uid.clone(), Member { spec, state, restart, task });
    }
    (Fleet { members, churn: Mutex::new(None) }, errors)
}

impl Fleet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn uids(&self) -> Vec<String> {
        self.members.keys().cloned().collect()
    }

    pub fn spec(&self, uid: &str) -> Option<&SensorSpec> {
        self.members.get(uid).map(|m| m.spec.as_ref())
    }

    pub fn state(&self, uid: &str) -> Option<SensorState> {
        self.members.get(uid).map(|m| m.state.lock().unwrap().clone())
    }

    pub fn snapshot(&self) -> Vec<SensorState> {
        self.members.values().map(|m| m.state.lock().unwrap().clone()).collect()
    }

    /// Reboots a sensor: it says goodbye, forgets its configuration and
    /// boots again.
    pub fn restart(&self, uid: &str) -> bool {
        match self.members.get(uid) {
            Some(m) => {
                m.restart.send_modify(|n| *n += 1);
                true
            }
            None => false,
        }
    }

    /// Stops a sensor for good.
    pub fn kill(&self, uid: &str) -> bool {
        self.members.get(uid).map(|m| m.task.abort()).is_some()
    }

    /// Restarts random sensors at `fraction` of the fleet per minute.
    pub fn start_churn(self: &Arc<Self>, fraction: f64, seed: u64) {
        let per_minute = fraction * self.len() as f64;
        if per_minute <= 0.0 || self.is_empty() {
            return;
        }
        let period = Duration::from_secs_f64(60.0 / per_minute);
        let fleet = Arc::downgrade(self);
        let task = tokio::spawn(async move {
            let mut rng = StdRng::seed_from_u64(seed);
            let mut tick = tokio::time::interval_at(tokio::time::Instant::now() + period, period);
            loop {
                tick.tick().await;
                let Some(fleet) = fleet.upgrade() else { return };
                let uids = fleet.uids();
                let uid = &uids[rng.random_range(0..uids.len())];
                tracing::info!(%uid, "churn: restarting sensor");
                fleet.restart(uid);
            }
        });
        if let Some(old) = self.churn.lock().unwrap().replace(task) {
            old.abort();
        }
    }

    pub fn stop_churn(&self) {
        if let Some(c) = self.churn.lock().unwrap().take() {
            c.abort();
        }
    }

    /// Read-only HTTP view of sensor state: `GET /sensors`, `GET /sensors/{uid}`.
    pub fn hook_router(self: &Arc<Self>) -> Router {
        async fn all(State(f): State<Arc<Fleet>>) -> Json<Vec<SensorState>> {
            Json(f.snapshot())
        }
        async fn one(State(f): State<Arc<Fleet>>, UrlPath(uid): UrlPath<String>) -> Result<Json<SensorState>, StatusCode> {
            f.state(&uid).map(Json).ok_or(StatusCode::NOT_FOUND)
        }
        Router::new().route("/sensors", get(all)).route("/sensors/{uid}", get(one)).with_state(self.clone())
    }

    pub async fn serve_hook(self: &Arc<Self>, bind: SocketAddr) -> std::io::Result<(SocketAddr, JoinHandle<()>)> {
        let listener = tokio::net::TcpListener::bind(bind).await?;
        let addr = listener.local_addr()?;
        let app = self.hook_router();
        let task = tokio::spawn(async move {
            if let Err(e) = axum::serve(listener, app).await {
                tracing::warn!("fleet hook stopped: {e}");
            }
        });
        Ok((addr, task))
    }

    pub async fn wait_for(&self, within: Duration, pred: impl Fn(&[SensorState]) -> bool) -> bool {
        let deadline = tokio::time::Instant::now() + within;
        loop {
            if pred(&self.snapshot()) {
                return true;
            }
            if tokio::time::Instant::now() >= deadline {
                return false;
            }
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
    }
}

impl Drop for Fleet {
    fn drop(&mut self) {
        if let Some(c) = self.churn.lock().unwrap().take() {
            c.abort();
        }
        for m in self.members.values() {
            m.task.abort();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simsensor::catalog::fleet_specs;
    use crate::simsensor::sensor::Lifecycle;

    #[tokio::test]
    async fn spawn_reports_bad_specs_and_runs_the_rest() {
        let dialects = builtin_dialects();
        let mut specs: Vec<SensorSpec> = fleet_specs().into_iter().take(3).collect();
        for s in &mut specs {
            s.boot_delay_ms = 0;
            s.transport = TransportKind::Tcp;
        }
        specs[1].dialect = "d99".into();
        specs[2].dialect = "d00".into();
        let targets = [(TransportKind::Tcp, "127.0.0.1:9".parse().unwrap())].into();
        let (fleet, errors) = spawn_fleet(specs, &targets, &dialects);
        assert_eq!(fleet.len(), 1);
        assert!(matches!(errors[0], SpawnError::UnknownDialect { .. }));
        assert!(matches!(errors[1], SpawnError::DialectModel { .. }));
        // zero boot delay: discoverable at once, retrying the absent gateway
        assert!(fleet.wait_for(Duration::from_secs(2), |s| s[0].lifecycle == Lifecycle::Discoverable).await);
    }

    #[test]
    fn builtin_dialects_cover_the_catalog() {
        let d = builtin_dialects();
        assert_eq!(d.len(), MODEL_COUNT);
        assert!(fleet_specs().iter().all(|s| d.contains_key(&s.dialect)));
    }
}
