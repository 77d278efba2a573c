//! One simulated sensor: its static spec, observable state, the dialect
//! responder and the actor loop that boots, connects and serves.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tokio::sync::watch;

use super::dialect::{advance, match_step, Cursor, Dialect};
use crate::gateway::{IAM, WHO};
use crate::plugin::{Bindings, CanonicalOp};
use crate::registry::{format_capabilities, Capability, Mode, SamplingRange, Schedule, ValueType, CONFIG_FIELDS};
use crate::registry::{Acquisition, Delivery};
use crate::wire::{format_interval, parse_interval, Connection, Message, TransportKind, WireError, BYE};

/// Delay between attempts to reach an absent gateway.
pub const CONNECT_RETRY: Duration = Duration::from_secs(2);
/// A datagram link that hears nothing this long after attaching is retried.
const ATTACH_SILENCE: Duration = Duration::from_secs(5);
const SINK_TIMEOUT: Duration = Duration::from_secs(3);

/// Misbehaviour injected for failure tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Fault {
    /// Drop the link, without `BYE`, after this many inbound messages.
    DropAfter { messages: u32 },
    /// Connect but never answer.
    Silent,
    /// Answer `WHO` with an `IAM` lacking the model.
    MalformedIam,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub uid: String,
    pub model: String,
    pub manufacturer: String,
    pub dialect: String,
    pub transport: TransportKind,
    pub boot_delay_ms: u64,
    pub capabilities: Vec<Capability>,
    pub sampling: SamplingRange,
    pub supports_schedules: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epc: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault: Option<Fault>,
}

impl SensorSpec {
    pub fn boot_delay(&self) -> Duration {
        Duration::from_millis(self.boot_delay_ms)
    }

    /// Values a dialect may reference besides configuration fields.
    fn facts(&self, nonce: &str) -> Bindings {
        [
            ("uid", self.uid.clone()),
            ("model", self.model.clone()),
            ("manufacturer", self.manufacturer.clone()),
            ("caps", format_capabilities(&self.capabilities)),
            ("smin", format_interval(self.sampling.min)),
            ("smax", format_interval(self.sampling.max)),
            ("sched", if self.supports_schedules { "yes" } else { "no" }.to_string()),
            ("epc", self.epc.clone().unwrap_or_else(|| "none".into())),
            ("nonce", nonce.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lifecycle {
    Booting,
    Discoverable,
    Configured,
    Reporting,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorState {
    pub uid: String,
    pub lifecycle: Lifecycle,
    /// Configuration fields exactly as acknowledged.
    pub applied: BTreeMap<String, String>,
    /// Measured length of the last boot.
    pub boot_ms: Option<u64>,
    /// Token the sensor joined the sink with.
    pub joined_token: Option<String>,
    pub samples_sent: u32,
    pub boots: u32,
    pub sessions: u32,
    pub last_error: Option<String>,
}

impl SensorState {
    pub fn new(uid: &str) -> Self {
        SensorState {
            uid: uid.to_string(),
            lifecycle: Lifecycle::Booting,
            applied: BTreeMap::new(),
            boot_ms: None,
            joined_token: None,
            samples_sent: 0,
            boots: 0,
            sessions: 0,
            last_error: None,
        }
    }

    fn reboot(&mut self) {
        *self = SensorState { boots: self.boots + 1, sessions: self.sessions, ..SensorState::new(&self.uid) };
    }

    fn promote(&mut self, to: Lifecycle) {
        if to > self.lifecycle {
            self.lifecycle = to;
        }
    }
}

pub type SharedState = Arc<Mutex<SensorState>>;

fn err(reason: &str) -> Message {
    Message::new("ERR").arg("reason", reason)
}

/// Checks one configuration value against what this sensor supports.
/// `sampling` is the value staged for the sampling field, if any.
pub fn validate_field(spec: &SensorSpec, field: &str, value: &str, sampling: Option<&str>) -> bool {
    match field {
        "sampling" => parse_interval(value).is_some_and(|d| spec.sampling.contains(d)),
        "commfreq" => match (parse_interval(value), sampling.and_then(parse_interval)) {
            (Some(c), Some(s)) => c >= s,
            (Some(_), None) => true,
            _ => false,
        },
        "mode" => value.parse::<Mode>().is_ok(),
        "acq" => value.parse::<Acquisition>().is_ok(),
        "freq" => value.parse::<Delivery>().is_ok(),
        "schedule" => value.parse::<Schedule>().is_ok_and(|s| spec.supports_schedules || s.is_always()),
        "host" => !value.is_empty(),
        "port" => value.parse::<u16>().is_ok_and(|p| p != 0),
        "token" => value.len() == 32 && value.bytes().all(|b| b.is_ascii_hexdigit()),
        _ => false,
    }
}

fn sample_value(cap: &Capability) -> String {
    match cap.value_type {
        ValueType::Float => "21.5".into(),
        ValueType::Int => "21".into(),
        ValueType::Bool => "1".into(),
        ValueType::Blob => "00ff".into(),
    }
}

/// Joins the sink with the issued credentials and delivers one sample.
async fn join_sink(spec: &SensorSpec, applied: &BTreeMap<String, String>) -> Result<(), String> {
    let (host, port, token) = (&applied["host"], &applied["port"], &applied["token"]);
    let addr = tokio::net::lookup_host(format!("{host}:{port}"))
        .await
        .map_err(|e| e.to_string())?
        .next()
        .ok_or_else(|| format!("{host}:{port} does not resolve"))?;
    let mut conn = Connection::connect_stream(addr).await.map_err(|e| e.to_string())?;
    let result = async {
        let join = Message::new("JOIN").arg("uid", &spec.uid).arg("token", token);
        let reply = conn.request(&join, SINK_TIMEOUT).await.map_err(|e| e.to_string())?;
        if !reply.is("WELCOME") {
            return Err(format!("join refused: {reply}"));
        }
        let cap = spec.capabilities.first().ok_or("no capability to sample")?;
        let sample =
            Message::new("SAMPLE").arg("uid", &spec.uid).arg("phenomenon", &cap.phenomenon).arg("value", sample_value(cap));
        let reply = conn.request(&sample, SINK_TIMEOUT).await.map_err(|e| e.to_string())?;
        if !reply.is("STORED") {
            return Err(format!("sample refused: {reply}"));
        }
        Ok(())
    }
    .await;
    let _ = conn.send(&Message::new(BYE)).await;
    conn.close().await;
    result
}

/// Per-connection dialect responder.
pub struct Responder {
    spec: Arc<SensorSpec>,
    dialect: Arc<Dialect>,
    state: SharedState,
    facts: Bindings,
    cursor: Cursor,
}

impl Responder {
    pub fn new(spec: Arc<SensorSpec>, dialect: Arc<Dialect>, state: SharedState) -> Self {
        let nonce = hex::encode(rand::random::<[u8; 4]>());
        let facts = spec.facts(&nonce);
        Responder { spec, dialect, state, facts, cursor: Cursor::default() }
    }

    pub fn state(&self) -> SensorState {
        self.state.lock().unwrap().clone()
    }

    fn iam(&self) -> Message {
        let mut m = Message::new(IAM).arg("uid", &self.spec.uid);
        if self.spec.fault != Some(Fault::MalformedIam) {
            m.push_arg("model", &self.spec.model);
        }
        let boot_ms = self.state.lock().unwrap().boot_ms.unwrap_or(self.spec.boot_delay_ms);
        m.arg("mfr", &self.spec.manufacturer).arg("boot_ms", boot_ms.to_string())
    }

    /// The reply to one inbound message.
    pub async fn respond(&mut self, msg: &Message) -> Message {
        if msg.is(WHO) {
            return self.iam();
        }
        let Ok(m) = match_step(&self.dialect, &self.cursor, &self.facts, msg) else {
            return err("unknown");
        };
        let mut staged = self.state.lock().unwrap().applied.clone();
        let fields: Vec<(String, String)> =
            m.captures.iter().filter(|(k, _)| CONFIG_FIELDS.contains(&k.as_str())).map(|(k, v)| (k.clone(), v.clone())).collect();
        for (k, v) in &fields {
            let sampling = if k == "sampling" { None } else { staged.get("sampling").cloned() };
            if !validate_field(&self.spec, k, v, sampling.as_deref()) {
                return err("rejected").arg("field", k);
            }
            staged.insert(k.clone(), v.clone());
        }

        if m.op == CanonicalOp::Finalize && m.completes_op {
            if let Some(missing) = CONFIG_FIELDS.iter().find(|f| !staged.contains_key(**f)) {
                return err("incomplete").arg("field", *missing);
            }
            let already = {
                let s = self.state.lock().unwrap();
                s.lifecycle == Lifecycle::Reporting && s.joined_token.as_ref() == staged.get("token")
            };
            if !already {
                if let Err(e) = join_sink(&self.spec, &staged).await {
                    tracing::debug!(uid = %self.spec.uid, "join failed: {e}");
                    self.state.lock().unwrap().last_error = Some(e);
                    return err("join_refused");
                }
                let mut s = self.state.lock().unwrap();
                s.promote(Lifecycle::Reporting);
                s.joined_token = staged.get("token").cloned();
                s.samples_sent += 1;
            }
        }

        let step = self.dialect.step(m.op, m.index).expect("matched step exists");
        let reply = match step.send.render(&[&m.captures, &staged, &self.facts]) {
            Ok(r) => r,
            Err(name) => {
                tracing::warn!(dialect = %self.dialect.id, "reply needs unbound {name}");
                return err("internal");
            }
        };
        {
            let mut s = self.state.lock().unwrap();
            if !fields.is_empty() {
                s.promote(Lifecycle::Configured);
            }
            s.applied = staged;
        }
        advance(&mut self.cursor, &m);
        reply
    }
}

enum Served {
    /// The link ended after at least one exchange.
    Closed,
    /// Nothing was heard; try connecting again.
    Retry,
    Restart,
    Shutdown,
}

/// Runs a sensor until its restart channel closes. Every change on
/// `restart` reboots it.
pub async fn run_sensor(
    spec: Arc<SensorSpec>,
    dialect: Arc<Dialect>,
    gateway: SocketAddr,
    state: SharedState,
    mut restart: watch::Receiver<u64>,
) {
    'boot: loop {
        state.lock().unwrap().reboot();
        let booting = tokio::time::Instant::now();
        if !spec.boot_delay().is_zero() {
            tokio::select! {
                _ = tokio::time::sleep(spec.boot_delay()) => {}
                r = restart.changed() => match r { Ok(()) => continue 'boot, Err(_) => return },
            }
        }
        {
            let mut s = state.lock().unwrap();
            s.boot_ms = Some(booting.elapsed().as_millis() as u64);
            s.promote(Lifecycle::Discoverable);
        }
        loop {
            let conn = tokio::select! {
                c = Connection::connect(spec.transport, gateway) => c,
                r = restart.changed() => match r { Ok(()) => continue 'boot, Err(_) => return },
            };
            let served = match conn {
                Ok(conn) => serve(&spec, &dialect, &state, conn, &mut restart).await,
                Err(e) => {
                    tracing::debug!(uid = %spec.uid, "gateway unreachable: {e}");
                    Served::Retry
                }
            };
            match served {
                Served::Closed => break,
                Served::Retry => {}
                Served::Restart => continue 'boot,
                Served::Shutdown => return,
            }
            tokio::select! {
                _ = tokio::time::sleep(CONNECT_RETRY) => {}
                r = restart.changed() => match r { Ok(()) => continue 'boot, Err(_) => return },
            }
        }
        // configured or dropped: stay put until rebooted
        match restart.changed().await {
            Ok(()) => continue 'boot,
            Err(_) => return,
        }
    }
}

async fn serve(
    spec: &Arc<SensorSpec>,
    dialect: &Arc<Dialect>,
    state: &SharedState,
    mut conn: Connection,
    restart: &mut watch::Receiver<u64>,
) -> Served {
    state.lock().unwrap().sessions += 1;
    let mut responder = Responder::new(spec.clone(), dialect.clone(), state.clone());
    let mut heard = 0u32;
    loop {
        let silence = if heard == 0 && spec.transport.is_datagram() { ATTACH_SILENCE } else { Duration::MAX };
        let msg = tokio::select! {
            m = tokio::time::timeout(silence, conn.recv()) => m,
            r = restart.changed() => {
                let _ = conn.send(&Message::new(BYE)).await;
                conn.close().await;
                return if r.is_ok() { Served::Restart } else { Served::Shutdown };
            }
        };
        let msg = match msg {
            Err(_) => return Served::Retry,
            Ok(Ok(m)) if m.is(BYE) => break,
            Ok(Ok(m)) => m,
            Ok(Err(WireError::Decode(e))) => {
                tracing::debug!(uid = %spec.uid, "bad frame: {e}");
                if conn.send(&err("malformed")).await.is_err() {
                    break;
                }
                continue;
            }
            Ok(Err(_)) => break,
        };
        heard += 1;
        match spec.fault {
            Some(Fault::DropAfter { messages }) if heard > messages => {
                // vanish without a goodbye
                drop(conn);
                return Served::Closed;
            }
            Some(Fault::Silent) => continue,
            _ => {}
        }
        let reply = responder.respond(&msg).await;
        if conn.send(&reply).await.is_err() {
            break;
        }
    }
    conn.close().await;
    if heard == 0 {
        Served::Retry
    } else {
        Served::Closed
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simsensor::catalog::{dialect_text, fleet_specs};
    use crate::simsensor::dialect::parse_dialect;

    fn responder(n: usize) -> Responder {
        let spec = Arc::new(fleet_specs()[n].clone());
        let dialect = Arc::new(parse_dialect(&dialect_text(n)).unwrap());
        let state = Arc::new(Mutex::new(SensorState::new(&spec.uid)));
        state.lock().unwrap().promote(Lifecycle::Discoverable);
        Responder::new(spec, dialect, state)
    }

    #[tokio::test]
    async fn who_is_always_answered() {
        let mut r = responder(0);
        let iam = r.respond(&Message::new("WHO")).await;
        assert!(iam.is("IAM"));
        assert_eq!(iam.get("uid"), Some("a1b2c3d4e5f60708"));
        assert_eq!(iam.get("model"), Some("WaspTemp3"));
        assert!(iam.get("boot_ms").unwrap().parse::<u64>().is_ok());
    }

    #[tokio::test]
    async fn dialect_a_profile_and_isolation() {
        let mut a = responder(0);
        assert!(a.respond(&Message::new("GETPROF")).await.is("ERR"), "handshake comes first");
        assert!(a.respond(&Message::new("HELLO")).await.is("OLLEH"));
        let prof = a.respond(&Message::new("GETPROF")).await;
        assert!(prof.is("PROF"));
        assert_eq!(prof.get("caps"), Some("temperature:celsius:float"));
        assert_eq!((prof.get("smin"), prof.get("smax")), (Some("1s"), Some("3600s")));

        let mut b = responder(1);
        let reply = b.respond(&Message::new("GETPROF")).await;
        assert_eq!((reply.verb(), reply.get("reason")), ("ERR", Some("unknown")));
    }

    #[tokio::test]
    async fn sampling_is_range_checked_and_stored_verbatim() {
        let mut a = responder(0);
        a.respond(&Message::new("HELLO")).await;
        let low = a.respond(&Message::new("SET").arg("sampling", "500ms").arg("mode", "active")).await;
        assert_eq!((low.verb(), low.get("field")), ("ERR", Some("sampling")));
        assert!(a.state().applied.is_empty());
        assert_eq!(a.state().lifecycle, Lifecycle::Discoverable);

        let ok = a.respond(&Message::new("SET").arg("sampling", "10s").arg("mode", "active")).await;
        assert!(ok.is("ACK"), "{ok}");
        let ok = a.respond(&Message::new("SET").arg("schedule", "MO-FR:08:00-17:00")).await;
        assert!(ok.is("ACK"), "{ok}");
        let s = a.state();
        assert_eq!(s.lifecycle, Lifecycle::Configured);
        assert_eq!(s.applied["sampling"], "10s");
        assert_eq!(s.applied["schedule"], "MO-FR:08:00-17:00");

        let slow = a.respond(&Message::new("SET").arg("commfreq", "5s").arg("acq", "push").arg("freq", "interval")).await;
        assert_eq!(slow.get("field"), Some("commfreq"));
    }

    #[tokio::test]
    async fn finalize_needs_every_field() {
        let mut a = responder(0);
        a.respond(&Message::new("HELLO")).await;
        let r = a.respond(&Message::new("COMMIT")).await;
        assert_eq!(r.get("reason"), Some("incomplete"));
    }

    #[test]
    fn field_validation() {
        let spec = &fleet_specs()[0];
        assert!(validate_field(spec, "token", &"ab".repeat(16), None));
        assert!(!validate_field(spec, "token", "abc", None));
        assert!(!validate_field(spec, "port", "0", None));
        assert!(validate_field(spec, "commfreq", "60s", Some("10s")));
        assert!(!validate_field(spec, "commfreq", "5s", Some("10s")));
        assert!(!validate_field(spec, "mode", "turbo", None));
        assert!(!validate_field(spec, "bogus", "x", None));
        let no_sched = fleet_specs().into_iter().find(|s| !s.supports_schedules).unwrap();
        assert!(!validate_field(&no_sched, "schedule", "MO-FR:08:00-17:00", None));
        assert!(validate_field(&no_sched, "schedule", "MO-SU:00:00-24:00", None));
    }
}
