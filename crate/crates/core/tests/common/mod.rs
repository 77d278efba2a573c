#![allow(dead_code)]

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use caddot::gateway::{configure, extract_identity, retrieve_profile, SensorIdentity};
use caddot::plugin::{parse_descriptor, PluginDescriptor};
use caddot::registry::{
    Acquisition, Credentials, Delivery, Mode, Schedule, SensingPlan, SensingStrategy, CONFIG_FIELDS,
};
use caddot::simsensor::catalog::{dialect_text, fleet_specs, plugin_text};
use caddot::simsensor::dialect::parse_dialect;
use caddot::simsensor::{run_sensor, SensorSpec, SensorState, SharedState};
use caddot::wire::{open_listener, Message, Session, TransportKind, TransportProfile};
use proptest::prelude::*;
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::TcpListener;
use tokio::sync::watch;
use tokio::task::JoinHandle;

/// Catalog sensor `n` on `transport`, booting at once.
pub fn spec(n: usize, transport: TransportKind) -> SensorSpec {
    let mut s = fleet_specs().swap_remove(n);
    s.transport = transport;
    s.boot_delay_ms = 0;
    s
}

pub fn spec_uid(n: usize, transport: TransportKind, uid: &str) -> SensorSpec {
    SensorSpec { uid: uid.to_string(), ..spec(n, transport) }
}

pub fn plugin(n: usize) -> PluginDescriptor {
    parse_descriptor(&plugin_text(n)).unwrap()
}

/// A sink that welcomes every join and stores every sample.
pub async fn open_sink() -> (SocketAddr, JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let task = tokio::spawn(async move {
        while let Ok((stream, _)) = listener.accept().await {
            tokio::spawn(async move {
                let (r, mut w) = stream.into_split();
                let mut lines = BufReader::new(r).lines();
                while let Ok(Some(line)) = lines.next_line().await {
                    let reply = match line.split('|').next() {
                        Some("JOIN") => "WELCOME\n",
                        Some("SAMPLE") => "STORED\n",
                        _ => break,
                    };
                    if w.write_all(reply.as_bytes()).await.is_err() {
                        break;
                    }
                }
            });
        }
    });
    (addr, task)
}

pub fn fixed_strategy(uid: &str, sink: SocketAddr) -> SensingStrategy {
    SensingStrategy {
        uid: uid.to_string(),
        plan: SensingPlan {
            sampling: Duration::from_secs(10),
            schedule: "MO-FR:08:00-17:00".parse::<Schedule>().unwrap(),
            commfreq: Duration::from_secs(60),
            acquisition: Acquisition::Push,
            delivery: Delivery::Interval,
            mode: Mode::Active,
        },
        credentials: Credentials { host: sink.ip().to_string(), port: sink.port(), token: "0123456789abcdef0123456789abcdef".into() },
    }
}

/// A gateway-side session with one simulated sensor running dialect `n`.
pub struct DeviceLink {
    pub session: Session,
    pub state: SharedState,
    pub spec: SensorSpec,
    _restart: watch::Sender<u64>,
    task: JoinHandle<()>,
}

impl Drop for DeviceLink {
    fn drop(&mut self) {
        self.task.abort();
    }
}

impl DeviceLink {
    pub fn state(&self) -> SensorState {
        self.state.lock().unwrap().clone()
    }
}

pub async fn device_link(spec: SensorSpec, dialect: usize) -> DeviceLink {
    let kind = spec.transport;
    let mut listener = open_listener(TransportProfile::zero_latency(kind), "127.0.0.1:0".parse().unwrap()).await.unwrap();
    let d = Arc::new(parse_dialect(&dialect_text(dialect)).unwrap());
    let state = Arc::new(Mutex::new(SensorState::new(&spec.uid)));
    let (restart, rx) = watch::channel(0);
    let task = tokio::spawn(run_sensor(Arc::new(spec.clone()), d, listener.local_addr(), state.clone(), rx));
    let mut session = tokio::time::timeout(Duration::from_secs(5), listener.accept()).await.unwrap().unwrap();
    session.establish().await;
    DeviceLink { session, state, spec, _restart: restart, task }
}

/// Frames of a session log with per-connection nonces masked.
pub fn normalized(session: &Session) -> Vec<String> {
    session
        .log()
        .iter()
        .map(|e| {
            let mut m = Message::new(e.message.verb());
            for (k, v) in e.message.args() {
                let v = if k == "nonce" || k == "session" { "N" } else { v.as_str() };
                m.push_arg(k, v);
            }
            format!("{:?} {m}", e.direction)
        })
        .collect()
}

/// WHO, profile retrieval and configuration through the plugin interpreter.
pub async fn interpreter_transcript(n: usize, sink: SocketAddr) -> (Vec<String>, SensorState) {
    let mut link = device_link(spec(n, TransportKind::Tcp), n).await;
    let t = Duration::from_secs(2);
    let (identity, _): (SensorIdentity, _) = extract_identity(&mut link.session, t).await.unwrap();
    let p = plugin(n);
    let (_, captures) = retrieve_profile(&mut link.session, &p, &identity).await.unwrap();
    configure(&mut link.session, &p, &identity, &fixed_strategy(&identity.uid, sink), &captures).await.unwrap();
    (normalized(&link.session), link.state())
}

async fn call(s: &mut Session, msg: Message, verb: &str) -> Message {
    let reply = s.request(&msg, Duration::from_secs(2)).await.unwrap();
    assert_eq!(reply.verb(), verb, "reply to {msg}: {reply}");
    reply
}

/// The same exchange written out by hand for dialects 0 to 2.
pub async fn hand_transcript(n: usize, sink: SocketAddr) -> (Vec<String>, SensorState) {
    let mut link = device_link(spec(n, TransportKind::Tcp), n).await;
    let s = &mut link.session;
    let uid = link.spec.uid.clone();
    let p = fixed_strategy(&uid, sink).params();
    let v = |k: &str| p[k].clone();
    let report = |m: Message| CONFIG_FIELDS.iter().fold(m, |m, f| m.arg(*f, v(f))).arg("joined", "yes");
    call(s, Message::new("WHO"), "IAM").await;
    match n {
        0 => {
            call(s, Message::new("HELLO"), "OLLEH").await;
            call(s, Message::new("GETPROF"), "PROF").await;
            call(s, Message::new("SET").arg("sampling", v("sampling")).arg("mode", v("mode")), "ACK").await;
            call(s, Message::new("SET").arg("commfreq", v("commfreq")).arg("acq", v("acq")).arg("freq", v("freq")), "ACK").await;
            call(s, Message::new("SET").arg("schedule", v("schedule")), "ACK").await;
            call(s, Message::new("SET").arg("host", v("host")).arg("port", v("port")).arg("token", v("token")), "ACK").await;
            let done = call(s, Message::new("COMMIT"), "DONE").await;
            assert_eq!(done, report(Message::new("DONE")));
        }
        1 => {
            let synack = call(s, Message::new("SYN01").arg("uid", &uid), "SYNACK01").await;
            let nonce = synack.get("nonce").unwrap().to_string();
            call(s, Message::new("DESC01").arg("nonce", &nonce), "DESCR01").await;
            for (key, fields) in [
                ("sampling", &["sampling", "mode"][..]),
                ("commfreq", &["commfreq", "acq", "freq"][..]),
                ("schedule", &["schedule"][..]),
                ("network", &["host", "port", "token"][..]),
            ] {
                let m = fields.iter().fold(Message::new("CFG01").arg("nonce", &nonce).arg("key", key), |m, f| m.arg(*f, v(f)));
                call(s, m, "CFGOK01").await;
            }
            call(s, Message::new("FIN01").arg("nonce", &nonce), "FINACK01").await;
        }
        2 => {
            call(s, Message::new("IDENT02").arg("uid", &uid), "READY02").await;
            for verb in ["CAPS02", "RANGE02", "META02"] {
                call(s, Message::new(verb), verb).await;
            }
            for f in CONFIG_FIELDS {
                call(s, Message::new("WRITE02").arg("reg", f).arg("val", v(f)), "WROTE02").await;
            }
            call(s, Message::new("SAVE02"), "SAVED02").await;
        }
        _ => unimplemented!("no hand-written client for dialect {n}"),
    }
    (normalized(&link.session), link.state())
}

pub fn arb_message() -> impl Strategy<Value = Message> {
    let verb = "[A-Z][A-Z0-9_]{0,11}";
    let key = "[a-z][a-z0-9_]{0,9}";
    // printable text including every escaped byte
    let value = proptest::collection::vec(
        prop_oneof![Just('|'), Just('\n'), Just('%'), Just('='), Just(' '), proptest::char::range('!', '~'), Just('é')],
        0..24,
    )
    .prop_map(|cs| cs.into_iter().collect::<String>());
    (verb, proptest::collection::btree_map(key, value, 0..6)).prop_map(|(verb, args)| {
        let mut m = Message::new(verb);
        for (k, v) in args {
            m.push_arg(k, v);
        }
        m
    })
}

/// Every file under `root`, by relative path.
pub fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}
