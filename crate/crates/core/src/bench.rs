//! Benchmark: configure simulated sensors one transport at a time and
//! compare per-step timings with configured limits.

use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::Deserialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gateway::{report_timings, OutcomeKind, SessionReport, TimingTable};
use crate::simsensor::catalog::{fleet_specs, MODEL_COUNT};
use crate::simsensor::SensorSpec;
use crate::testbed::{Testbed, TestbedConfig, TestbedError};
use crate::wire::{TransportKind, TransportProfile};

/// Pass/fail limits, read from a TOML file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    pub step_mean_max_ms: f64,
    pub steps: Vec<usize>,
    pub end_to_end_max_ms: f64,
    pub boot_min_ms: f64,
    pub boot_max_ms: f64,
}

#[derive(Debug, Error)]
pub enum ThresholdsError {
    #[error("{path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: String, source: toml::de::Error },
    #[error("{path}: step {0} is not between 1 and 10", path = .1)]
    Step(usize, String),
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds::parse(crate::simsensor::catalog::DEFAULT_THRESHOLDS, "built-in thresholds").expect("defaults parse")
    }
}

impl Thresholds {
    pub fn parse(text: &str, path: &str) -> Result<Thresholds, ThresholdsError> {
        let t: Thresholds = toml::from_str(text).map_err(|source| ThresholdsError::Parse { path: path.into(), source })?;
        if let Some(&bad) = t.steps.iter().find(|s| !(1..=10).contains(*s)) {
            return Err(ThresholdsError::Step(bad, path.into()));
        }
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Thresholds, ThresholdsError> {
        let shown = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ThresholdsError::Read { path: shown.clone(), source })?;
        Self::parse(&text, &shown)
    }
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub runs: usize,
    pub transports: Vec<TransportKind>,
    pub seed: u64,
    /// Boot delays are drawn uniformly from this range, in milliseconds.
    pub boot_ms: (u64, u64),
    /// Sensors configured at the same time.
    pub concurrency: usize,
    /// Inject no latency on any transport, bt-sim included.
    pub zero_latency: bool,
    pub thresholds: Thresholds,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            runs: 30,
            transports: TransportKind::ALL.to_vec(),
            seed: 1,
            boot_ms: (0, 0),
            concurrency: 1,
            zero_latency: false,
            thresholds: Thresholds::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub table: TimingTable,
    /// Every session the benchmark started, in completion order.
    pub sessions: Vec<SessionReport>,
    /// Runs that never produced a session report.
    pub missing: usize,
    pub violations: Vec<String>,
    pub wall: Duration,
}

impl BenchReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn configured(&self, transport: TransportKind) -> usize {
        self.sessions.iter().filter(|r| r.transport == transport && r.outcome == OutcomeKind::Configured).count()
    }

    pub fn render(&self) -> String {
        let mut out = self.table.render();
        let _ = writeln!(out);
        for t in self.table.transports() {
            let e2e: Vec<f64> = self
                .sessions
                .iter()
                .filter(|r| r.transport == t && r.outcome == OutcomeKind::Configured)
                .map(|r| r.end_to_end().as_secs_f64() * 1000.0)
                .collect();
            let max = e2e.iter().copied().fold(0.0, f64::max);
            let mean = e2e.iter().sum::<f64>() / e2e.len().max(1) as f64;
            let _ = writeln!(out, "{t}: {} configured, end-to-end mean {mean:.1} ms, max {max:.1} ms", e2e.len());
        }
        let _ = writeln!(out, "wall clock {:.1} s", self.wall.as_secs_f64());
        if self.passed() {
            let _ = writeln!(out, "thresholds: pass");
        } else {
            for v in &self.violations {
                let _ = writeln!(out, "threshold violated: {v}");
            }
        }
        out
    }
}

/// The sensor for run `run` on `transport`: a random catalog model with a
/// fresh uid.
fn bench_spec(rng: &mut StdRng, seed: u64, transport: TransportKind, run: usize, boot_ms: (u64, u64)) -> SensorSpec {
    let mut spec = fleet_specs().swap_remove(rng.random_range(0..MODEL_COUNT));
    let h = Sha256::digest(format!("bench/{seed}/{transport}/{run}").as_bytes());
    spec.uid = hex::encode(&h[..8]);
    spec.transport = transport;
    spec.boot_delay_ms = if boot_ms.0 >= boot_ms.1 { boot_ms.0 } else { rng.random_range(boot_ms.0..=boot_ms.1) };
    spec
}

/// Checks a finished benchmark against the limits.
pub fn evaluate(sessions: &[SessionReport], missing: usize, table: &TimingTable, t: &Thresholds, check_boot: bool) -> Vec<String> {
    let mut v = Vec::new();
    if missing > 0 {
        v.push(format!("{missing} run(s) produced no session"));
    }
    for r in sessions.iter().filter(|r| r.outcome != OutcomeKind::Configured) {
        let uid = r.identity.as_ref().map_or("?", |i| i.uid.as_str());
        v.push(format!("{} sensor {uid} not configured: {}", r.transport, r.error.as_deref().unwrap_or("unknown model")));
    }
    for row in table.rows.iter().filter(|row| t.steps.contains(&row.step)) {
        if row.mean_ms >= t.step_mean_max_ms {
            v.push(format!(
                "{} step {} ({}) mean {:.1} ms >= {} ms",
                row.transport, row.step, row.name, row.mean_ms, t.step_mean_max_ms
            ));
        }
    }
    for r in sessions.iter().filter(|r| r.outcome == OutcomeKind::Configured) {
        let e2e = r.end_to_end().as_secs_f64() * 1000.0;
        if e2e >= t.end_to_end_max_ms {
            v.push(format!("{} run end-to-end {e2e:.1} ms >= {} ms", r.transport, t.end_to_end_max_ms));
        }
        if check_boot {
            let boot = r.timings.get(1).unwrap_or_default().as_secs_f64() * 1000.0;
            if boot < t.boot_min_ms || boot > t.boot_max_ms {
                v.push(format!("{} boot {boot:.0} ms outside [{}, {}] ms", r.transport, t.boot_min_ms, t.boot_max_ms));
            }
        }
    }
    v
}

pub async fn run_bench(opts: &BenchOptions) -> Result<BenchReport, TestbedError> {
    let started = Instant::now();
    let profiles = opts
        .transports
        .iter()
        .map(|&k| if opts.zero_latency { TransportProfile::zero_latency(k) } else { TransportProfile::for_kind(k) })
        .collect();
    let concurrency = opts.concurrency.max(1);
    let bed = Testbed::start(TestbedConfig { profiles, max_sessions: concurrency.max(8), ..TestbedConfig::default() }).await?;
    let mut rng = StdRng::seed_from_u64(opts.seed);
    let wait = Duration::from_millis(opts.boot_ms.1) + Duration::from_secs(60);
    let mut sessions = Vec::new();
    let mut missing = 0;

    for &transport in &opts.transports {
        let mut run = 0;
        while run < opts.runs {
            let batch: Vec<SensorSpec> = (run..(run + concurrency).min(opts.runs))
                .map(|i| bench_spec(&mut rng, opts.seed, transport, i, opts.boot_ms))
                .collect();
            run += batch.len();
            let uids: Vec<String> = batch.iter().map(|s| s.uid.clone()).collect();
            let (fleet, errors) = bed.spawn(batch);
            for e in errors {
                tracing::warn!("bench sensor not started: {e}");
            }
            match bed.wait_reports(&uids, wait).await {
                Some(reports) => sessions.extend(reports),
                None => {
                    let got = bed.reports_for(&uids);
                    missing += uids.len() - got.len().min(uids.len());
                    sessions.extend(got);
                }
            }
            drop(fleet);
        }
    }

    let table = report_timings(&sessions);
    let check_boot = opts.boot_ms.1 > 0;
    let violations = evaluate(&sessions, missing, &table, &opts.thresholds, check_boot);
    Ok(BenchReport { table, sessions, missing, violations, wall: started.elapsed() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_thresholds_parse() {
        let t = Thresholds::default();
        assert_eq!(t.steps, [4, 5, 6, 7, 8, 9]);
        assert_eq!((t.step_mean_max_ms, t.end_to_end_max_ms), (1000.0, 12000.0));
        assert!(Thresholds::parse("step_mean_max_ms = 1", "x").is_err());
        let bad = crate::simsensor::catalog::DEFAULT_THRESHOLDS.replace("[4, 5", "[0, 5");
        assert!(matches!(Thresholds::parse(&bad, "x"), Err(ThresholdsError::Step(0, _))));
    }

    #[test]
    fn bench_specs_follow_the_seed() {
        let draw = |seed| {
            let mut rng = StdRng::seed_from_u64(seed);
            (0..5).map(|i| bench_spec(&mut rng, seed, TransportKind::Udp, i, (5000, 15000))).collect::<Vec<_>>()
        };
        assert_eq!(draw(7), draw(7));
        assert_ne!(draw(7), draw(8));
        assert!(draw(7).iter().all(|s| (5000..=15000).contains(&s.boot_delay_ms) && s.transport == TransportKind::Udp));
    }

    #[tokio::test(flavor = "multi_thread", worker_threads = 4)]
    async fn small_tcp_bench_passes() {
        let opts = BenchOptions { runs: 3, transports: vec![TransportKind::Tcp], ..BenchOptions::default() };
        let report = run_bench(&opts).await.unwrap();
        assert!(report.passed(), "{}", report.render());
        assert_eq!(report.configured(TransportKind::Tcp), 3);
        assert_eq!(report.table.row(TransportKind::Tcp, 6).unwrap().n, 3);
    }
}
