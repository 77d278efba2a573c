//! The `caddot` command line.

use std::collections::BTreeMap;
use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use tracing::{error, info, warn};

use crate::bench::{run_bench, BenchOptions, Thresholds};
use crate::gateway::{Gateway, GatewayConfig, GatewayError, ListenerConfig};
use crate::registry::{ContextFacts, Registry, RegistryServer, RuleTable};
use crate::simsensor::{builtin_dialects, load_dialects, load_specs, spawn_fleet, Fleet};
use crate::wire::{TransportKind, TransportProfile};

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NO_REGISTRY: u8 = 3;
pub const EXIT_THRESHOLDS: u8 = 4;

pub const DEFAULT_REGISTRY_PORT: u16 = 7800;
pub const DEFAULT_SINK_PORT: u16 = 7801;
pub const DEFAULT_STATUS_PORT: u16 = 7710;
pub const DEFAULT_HOOK_PORT: u16 = 7720;

#[derive(Debug, Parser)]
#[command(name = "caddot", version, about = "Sensor discovery and configuration")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Serve the catalog, plugin store and reasoner over HTTP, plus the data sink.
    Registry(RegistryArgs),
    /// Accept sensor links and walk each one through discovery and configuration.
    Gateway(GatewayArgs),
    /// Run simulated sensors against a gateway.
    Fleet(FleetArgs),
    /// Configure simulated sensors in-process and report per-step timings.
    Bench(BenchArgs),
    /// Regenerate the shipped catalog, plugins, dialects and fleet files.
    GenData(GenDataArgs),
}

#[derive(Debug, Args)]
pub struct RegistryArgs {
    /// Store directory; created if absent.
    #[arg(long, default_value = "registry-store")]
    pub store: PathBuf,
    /// Context rule table (JSON). The built-in table is used when omitted.
    #[arg(long)]
    pub rules: Option<PathBuf>,
    /// Data directory whose catalog/ and plugins/ are installed at start.
    #[arg(long)]
    pub seed: Option<PathBuf>,
    #[arg(long, default_value_t = SocketAddr::from(([127, 0, 0, 1], DEFAULT_REGISTRY_PORT)))]
    pub http: SocketAddr,
    #[arg(long, default_value_t = SocketAddr::from(([127, 0, 0, 1], DEFAULT_SINK_PORT)))]
    pub sink: SocketAddr,
}

#[derive(Debug, Args)]
pub struct GatewayArgs {
    /// Registry base URL.
    #[arg(long, env = "CADDOT_REGISTRY", default_value = "http://127.0.0.1:7800")]
    pub registry: String,
    /// Address the sensor listeners bind to.
    #[arg(long, default_value = "0.0.0.0")]
    pub host: IpAddr,
    #[arg(long, default_value_t = TransportKind::Tcp.default_port())]
    pub tcp_port: u16,
    #[arg(long, default_value_t = TransportKind::Udp.default_port())]
    pub udp_port: u16,
    #[arg(long, default_value_t = TransportKind::BtSim.default_port())]
    pub bt_port: u16,
    /// Transports to listen on.
    #[arg(long, value_delimiter = ',', default_value = "tcp,udp,bt-sim")]
    pub transports: Vec<TransportKind>,
    #[arg(long, default_value_t = 64)]
    pub max_sessions: usize,
    /// Context facts passed to the reasoner, e.g. `season=winter,time=night`.
    #[arg(long, value_delimiter = ',', value_parser = parse_fact)]
    pub facts: Vec<(String, String)>,
    /// Per-message timeout while talking to a sensor.
    #[arg(long, default_value_t = 2000)]
    pub phase_timeout_ms: u64,
    /// Status endpoint (`GET /status`, `GET /sessions`).
    #[arg(long, default_value_t = SocketAddr::from(([127, 0, 0, 1], DEFAULT_STATUS_PORT)))]
    pub status: SocketAddr,
}

#[derive(Debug, Args)]
pub struct FleetArgs {
    /// Fleet spec file (JSON list of sensors).
    #[arg(long, default_value = "data/fleet52.json")]
    pub spec: PathBuf,
    /// Dialect directory; the built-in dialects are used when omitted.
    #[arg(long)]
    pub dialects: Option<PathBuf>,
    /// Gateway host.
    #[arg(long, default_value = "127.0.0.1")]
    pub gateway: IpAddr,
    #[arg(long, default_value_t = TransportKind::Tcp.default_port())]
    pub tcp_port: u16,
    #[arg(long, default_value_t = TransportKind::Udp.default_port())]
    pub udp_port: u16,
    #[arg(long, default_value_t = TransportKind::BtSim.default_port())]
    pub bt_port: u16,
    /// Override every sensor's boot delay, in milliseconds.
    #[arg(long)]
    pub boot_delay: Option<u64>,
    /// Fraction of the fleet restarted per minute.
    #[arg(long, default_value_t = 0.0)]
    pub churn: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Port of the state endpoint (`GET /sensors`) on 127.0.0.1.
    #[arg(long, default_value_t = DEFAULT_HOOK_PORT)]
    pub hook_port: u16,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Configurations per transport.
    #[arg(long, default_value_t = 30)]
    pub runs: usize,
    #[arg(long, value_delimiter = ',', default_value = "tcp,udp,bt-sim")]
    pub transports: Vec<TransportKind>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Threshold file (TOML); built-in limits when omitted.
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
    /// Boot delays drawn uniformly from MIN..MAX milliseconds, e.g. `5000..15000`.
    #[arg(long, default_value = "0", value_parser = parse_boot_range)]
    pub boot_delay: (u64, u64),
    /// Sensors configured at once.
    #[arg(long, default_value_t = 1)]
    pub concurrency: usize,
    /// Inject no latency, bt-sim included.
    #[arg(long)]
    pub zero_latency: bool,
    /// Also write the CSV here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, default_value = "data")]
    pub out: PathBuf,
}

fn parse_fact(s: &str) -> Result<(String, String), String> {
    match s.split_once('=') {
        Some((k, v)) if !k.is_empty() => Ok((k.to_string(), v.to_string())),
        _ => Err(format!("expected KEY=VALUE, got {s:?}")),
    }
}

fn parse_boot_range(s: &str) -> Result<(u64, u64), String> {
    let num = |x: &str| x.trim().parse::<u64>().map_err(|e| format!("{x:?}: {e}"));
    match s.split_once("..") {
        Some((a, b)) => {
            let (a, b) = (num(a)?, num(b)?);
            if a > b {
                return Err(format!("empty range {s:?}"));
            }
            Ok((a, b))
        }
        None => num(s).map(|v| (v, v)),
    }
}

/// Resolves on SIGTERM or Ctrl-C.
pub async fn shutdown_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        let mut term = signal(SignalKind::terminate()).expect("install SIGTERM handler");
        tokio::select! {
            _ = term.recv() => {}
            _ = tokio::signal::ctrl_c() => {}
        }
    }
    #[cfg(not(unix))]
    {
        let _ = tokio::signal::ctrl_c().await;
    }
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("caddot: {msg}");
    ExitCode::from(code)
}

pub async fn cmd_registry(args: RegistryArgs) -> ExitCode {
    let rules = match &args.rules {
        Some(path) => match RuleTable::load(path) {
            Ok(r) => r,
            Err(e) => return fail(EXIT_CONFIG, e),
        },
        None => RuleTable::reference(),
    };
    let registry = match Registry::open(&args.store, rules) {
        Ok(r) => Arc::new(r),
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    if let Some(dir) = &args.seed {
        match registry.seed_from(dir) {
            Ok(n) => info!(entries = n, dir = %dir.display(), "catalog seeded"),
            Err(e) => return fail(EXIT_CONFIG, format!("seeding from {}: {e}", dir.display())),
        }
    }
    if registry.catalog().is_empty() {
        warn!("catalog is empty; every sensor will be unknown");
    }
    let server = match RegistryServer::start(registry, args.http, args.sink).await {
        Ok(s) => s,
        Err(e) => return fail(EXIT_FAILURE, e),
    };
    info!(http = %server.http_addr(), sink = %server.sink_addr(), "registry serving");
    shutdown_signal().await;
    info!("registry stopping");
    match server.shutdown().await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(EXIT_FAILURE, format!("persisting store: {e}")),
    }
}

pub async fn cmd_gateway(args: GatewayArgs) -> ExitCode {
    let port = |k: TransportKind| match k {
        TransportKind::Tcp => args.tcp_port,
        TransportKind::Udp => args.udp_port,
        TransportKind::BtSim => args.bt_port,
    };
    let mut config = GatewayConfig::loopback(&args.registry, &[]);
    config.listeners = args
        .transports
        .iter()
        .map(|&k| ListenerConfig { profile: TransportProfile::for_kind(k), bind: SocketAddr::new(args.host, port(k)) })
        .collect();
    config.max_sessions = args.max_sessions;
    config.facts = args.facts.iter().cloned().collect::<ContextFacts>();
    config.phase_timeout = Duration::from_millis(args.phase_timeout_ms);
    config.status_bind = Some(args.status);
    let gateway = match Gateway::start(config).await {
        Ok(g) => g,
        Err(GatewayError::Registry(e)) => {
            return fail(EXIT_NO_REGISTRY, format!("registry {} unavailable: {e}", args.registry))
        }
        Err(e @ GatewayError::InvalidConfig(_)) => return fail(EXIT_CONFIG, e),
        Err(e) => return fail(EXIT_FAILURE, e),
    };
    for (kind, addr) in gateway.addrs() {
        info!(transport = %kind, %addr, "listening");
    }
    if let Some(addr) = gateway.status_addr() {
        info!(%addr, "status endpoint");
    }
    shutdown_signal().await;
    let status = gateway.status();
    info!(completed = status.completed, failed = status.failed, unknown = status.unknown, "gateway stopping");
    ExitCode::SUCCESS
}

pub async fn cmd_fleet(args: FleetArgs) -> ExitCode {
    let mut specs = match load_specs(&args.spec) {
        Ok(s) => s,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    if let Some(ms) = args.boot_delay {
        specs.iter_mut().for_each(|s| s.boot_delay_ms = ms);
    }
    let dialects = match &args.dialects {
        Some(dir) => match load_dialects(dir) {
            Ok(d) => d,
            Err(e) => return fail(EXIT_CONFIG, e),
        },
        None => builtin_dialects(),
    };
    let targets: BTreeMap<TransportKind, SocketAddr> = [
        (TransportKind::Tcp, args.tcp_port),
        (TransportKind::Udp, args.udp_port),
        (TransportKind::BtSim, args.bt_port),
    ]
    .into_iter()
    .map(|(k, p)| (k, SocketAddr::new(args.gateway, p)))
    .collect();
    let (fleet, errors) = spawn_fleet(specs, &targets, &dialects);
    for e in &errors {
        error!("{e}");
    }
    if fleet.is_empty() {
        return fail(EXIT_CONFIG, "no sensor could be started");
    }
    let fleet: Arc<Fleet> = Arc::new(fleet);
    info!(sensors = fleet.len(), skipped = errors.len(), "fleet launched");
    match fleet.serve_hook(SocketAddr::from(([127, 0, 0, 1], args.hook_port))).await {
        Ok((addr, _task)) => info!(%addr, "state endpoint"),
        Err(e) => return fail(EXIT_FAILURE, format!("state endpoint on port {}: {e}", args.hook_port)),
    }
    if args.churn > 0.0 {
        fleet.start_churn(args.churn, args.seed);
        info!(per_minute = args.churn * fleet.len() as f64, "churn enabled");
    }
    shutdown_signal().await;
    let snapshot = fleet.snapshot();
    let reporting = snapshot.iter().filter(|s| s.lifecycle == crate::simsensor::Lifecycle::Reporting).count();
    info!(reporting, total = snapshot.len(), "fleet stopping");
    ExitCode::SUCCESS
}

pub async fn cmd_bench(args: BenchArgs) -> ExitCode {
    let thresholds = match &args.thresholds {
        Some(p) => match Thresholds::load(p) {
            Ok(t) => t,
            Err(e) => return fail(EXIT_CONFIG, e),
        },
        None => Thresholds::default(),
    };
    let opts = BenchOptions {
        runs: args.runs,
        transports: args.transports,
        seed: args.seed,
        boot_ms: args.boot_delay,
        concurrency: args.concurrency,
        zero_latency: args.zero_latency,
        thresholds,
    };
    let report = match run_bench(&opts).await {
        Ok(r) => r,
        Err(e) => return fail(EXIT_FAILURE, e),
    };
    let csv = report.table.to_csv();
    print!("{csv}");
    println!();
    print!("{}", report.render());
    if let Some(path) = &args.csv {
        if let Err(e) = std::fs::write(path, &csv) {
            return fail(EXIT_FAILURE, format!("{}: {e}", path.display()));
        }
    }
    if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_THRESHOLDS)
    }
}

pub fn cmd_gen_data(args: GenDataArgs) -> ExitCode {
    match crate::simsensor::catalog::write_data(&args.out) {
        Ok(n) => {
            println!("wrote {n} files under {}", args.out.display());
            ExitCode::SUCCESS
        }
        Err(e) => fail(EXIT_FAILURE, format!("{}: {e}", args.out.display())),
    }
}

pub async fn run(cli: Cli) -> ExitCode {
    match cli.command {
        Command::Registry(a) => cmd_registry(a).await,
        Command::Gateway(a) => cmd_gateway(a).await,
        Command::Fleet(a) => cmd_fleet(a).await,
        Command::Bench(a) => cmd_bench(a).await,
        Command::GenData(a) => cmd_gen_data(a),
    }
}
