use std::fmt::Write as _;
use std::time::Duration;

use serde::Serialize;

use super::pipeline::{OutcomeKind, SessionReport};
use super::session::STEP_NAMES;
use crate::wire::TransportKind;

pub const CSV_HEADER: &str = "transport,step,name,mean_ms,min_ms,max_ms,n";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepStats {
    pub transport: TransportKind,
    pub step: usize,
    pub name: &'static str,
    pub mean_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub n: usize,
}

/// Per-transport, per-step statistics over configured sessions.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TimingTable {
    pub rows: Vec<StepStats>,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1000.0
}

/// Groups configured sessions by transport (tcp, udp, bt-sim order) and
/// summarizes each of the ten steps. Steps nobody measured are skipped.
pub fn report_timings(reports: &[SessionReport]) -> TimingTable {
    let mut rows = Vec::new();
    for kind in TransportKind::ALL {
        let group: Vec<&SessionReport> =
            reports.iter().filter(|r| r.transport == kind && r.outcome == OutcomeKind::Configured).collect();
        for (i, name) in STEP_NAMES.iter().enumerate() {
            let values: Vec<f64> = group.iter().filter_map(|r| r.timings.get(i + 1)).map(ms).collect();
            if values.is_empty() {
                continue;
            }
            let n = values.len();
            rows.push(StepStats {
                transport: kind,
                step: i + 1,
                name,
                mean_ms: values.iter().sum::<f64>() / n as f64,
                min_ms: values.iter().copied().fold(f64::INFINITY, f64::min),
                max_ms: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                n,
            });
        }
    }
    TimingTable { rows }
}

impl TimingTable {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, transport: TransportKind, step: usize) -> Option<&StepStats> {
        self.rows.iter().find(|r| r.transport == transport && r.step == step)
    }

    pub fn transports(&self) -> Vec<TransportKind> {
        TransportKind::ALL.into_iter().filter(|k| self.rows.iter().any(|r| r.transport == *k)).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{:.3},{:.3},{:.3},{}",
                r.transport, r.step, r.name, r.mean_ms, r.min_ms, r.max_ms, r.n
            );
        }
        out
    }

    /// Steps down, transports across, mean milliseconds in the cells.
    pub fn render(&self) -> String {
        let kinds = self.transports();
        let mut out = format!("{:>4}  {:<18}", "step", "name");
        for k in &kinds {
            let _ = write!(out, "{:>17}", format!("{k} mean ms"));
        }
        out.push('\n');
        for (i, name) in STEP_NAMES.iter().enumerate() {
            if kinds.iter().all(|k| self.row(*k, i + 1).is_none()) {
                continue;
            }
            let _ = write!(out, "{:>4}  {:<18}", i + 1, name);
            for k in &kinds {
                match self.row(*k, i + 1) {
                    Some(r) => {
                        let _ = write!(out, "{:>17.3}", r.mean_ms);
                    }
                    None => {
                        let _ = write!(out, "{:>17}", "-");
                    }
                }
            }
            out.push('\n');
        }
        if let Some(n) = kinds.iter().filter_map(|k| self.row(*k, 2)).map(|r| r.n).max() {
            let _ = writeln!(out, "(n up to {n} per transport)");
        }
        out
    }

    /// Name of the step with the largest mean for `transport`.
    pub fn slowest_step(&self, transport: TransportKind) -> Option<&'static str> {
        self.rows
            .iter()
            .filter(|r| r.transport == transport)
            .max_by(|a, b| a.mean_ms.total_cmp(&b.mean_ms))
            .map(|r| r.name)
    }
}
