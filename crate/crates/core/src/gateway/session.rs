use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Serialize, Serializer};
use thiserror::Error;

use super::identity::SensorIdentity;
use crate::plugin::PluginDescriptor;
use crate::registry::{SensingStrategy, SensorProfile};
use crate::wire::Session;

/// The eight discovery phases, in the only order they may be entered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Detect,
    Extract,
    Identify,
    Find,
    Retrieve,
    Register,
    Reason,
    Configure,
}

impl Phase {
    pub const ALL: [Phase; 8] = [
        Phase::Detect,
        Phase::Extract,
        Phase::Identify,
        Phase::Find,
        Phase::Retrieve,
        Phase::Register,
        Phase::Reason,
        Phase::Configure,
    ];

    pub fn next(self) -> Option<Phase> {
        Phase::ALL.get(self as usize + 1).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Detect => "detect",
            Phase::Extract => "extract",
            Phase::Identify => "identify",
            Phase::Find => "find",
            Phase::Retrieve => "retrieve",
            Phase::Register => "register",
            Phase::Reason => "reason",
            Phase::Configure => "configure",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Names of the ten measured steps, in step order.
pub const STEP_NAMES: [&str; 10] = [
    "setup",
    "connect",
    "comm_init",
    "extract_id",
    "retrieve_profile",
    "cfg_sampling",
    "cfg_commfreq",
    "cfg_schedule",
    "cfg_network",
    "join_secure",
];

/// Per-step durations. `setup` is the sensor's reported boot time; the rest
/// are measured at the gateway. Unmeasured steps stay `None`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PhaseTimings {
    steps: [Option<Duration>; 10],
}

impl PhaseTimings {
    /// `step` is 1-based.
    pub fn set(&mut self, step: usize, d: Duration) {
        self.steps[step - 1] = Some(d);
    }

    pub fn get(&self, step: usize) -> Option<Duration> {
        self.steps[step - 1]
    }

    pub fn by_name(&self, name: &str) -> Option<Duration> {
        STEP_NAMES.iter().position(|n| *n == name).and_then(|i| self.steps[i])
    }

    pub fn is_complete(&self) -> bool {
        self.steps.iter().all(Option::is_some)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &'static str, Option<Duration>)> + '_ {
        self.steps.iter().enumerate().map(|(i, d)| (i + 1, STEP_NAMES[i], *d))
    }

    /// Sum over the given 1-based step range.
    pub fn sum(&self, steps: std::ops::RangeInclusive<usize>) -> Duration {
        steps.filter_map(|s| self.get(s)).sum()
    }
}

impl Serialize for PhaseTimings {
    /// `{name: milliseconds}` for measured steps.
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = s.serialize_map(None)?;
        for (_, name, d) in self.iter() {
            if let Some(d) = d {
                map.serialize_entry(name, &(d.as_secs_f64() * 1000.0))?;
            }
        }
        map.end()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("cannot enter {to} from {from}")]
pub struct PhaseOrderError {
    pub from: Phase,
    pub to: Phase,
}

/// One sensor's pass through the phases. The typed transitions attach each
/// phase's result, so identity, plugin, profile and strategy are present
/// exactly when the phase that produces them has been entered.
pub struct DiscoverySession {
    session: Session,
    phase: Phase,
    history: Vec<(Phase, Instant)>,
    identity: Option<SensorIdentity>,
    plugin: Option<Arc<PluginDescriptor>>,
    profile: Option<SensorProfile>,
    strategy: Option<SensingStrategy>,
    pub timings: PhaseTimings,
}

impl fmt::Debug for DiscoverySession {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiscoverySession")
            .field("session", &self.session)
            .field("phase", &self.phase)
            .field("identity", &self.identity)
            .finish_non_exhaustive()
    }
}

impl DiscoverySession {
    pub fn new(session: Session) -> Self {
        DiscoverySession {
            session,
            phase: Phase::Detect,
            history: vec![(Phase::Detect, Instant::now())],
            identity: None,
            plugin: None,
            profile: None,
            strategy: None,
            timings: PhaseTimings::default(),
        }
    }

    fn advance(&mut self, to: Phase) -> Result<(), PhaseOrderError> {
        if self.phase.next() != Some(to) {
            return Err(PhaseOrderError { from: self.phase, to });
        }
        self.phase = to;
        self.history.push((to, Instant::now()));
        Ok(())
    }

    pub fn enter_extract(&mut self) -> Result<(), PhaseOrderError> {
        self.advance(Phase::Extract)
    }

    pub fn enter_identify(&mut self, identity: SensorIdentity) -> Result<(), PhaseOrderError> {
        self.advance(Phase::Identify)?;
        self.identity = Some(identity);
        Ok(())
    }

    pub fn enter_find(&mut self) -> Result<(), PhaseOrderError> {
        self.advance(Phase::Find)
    }

    pub fn enter_retrieve(&mut self, plugin: Arc<PluginDescriptor>) -> Result<(), PhaseOrderError> {
        self.advance(Phase::Retrieve)?;
        self.plugin = Some(plugin);
        Ok(())
    }

    pub fn enter_register(&mut self, profile: SensorProfile) -> Result<(), PhaseOrderError> {
        self.advance(Phase::Register)?;
        self.profile = Some(profile);
        Ok(())
    }

    pub fn enter_reason(&mut self) -> Result<(), PhaseOrderError> {
        self.advance(Phase::Reason)
    }

    pub fn enter_configure(&mut self, strategy: SensingStrategy) -> Result<(), PhaseOrderError> {
        self.advance(Phase::Configure)?;
        self.strategy = Some(strategy);
        Ok(())
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn history(&self) -> Vec<Phase> {
        self.history.iter().map(|(p, _)| *p).collect()
    }

    pub fn identity(&self) -> Option<&SensorIdentity> {
        self.identity.as_ref()
    }

    pub fn plugin(&self) -> Option<&Arc<PluginDescriptor>> {
        self.plugin.as_ref()
    }

    pub fn profile(&self) -> Option<&SensorProfile> {
        self.profile.as_ref()
    }

    pub fn strategy(&self) -> Option<&SensingStrategy> {
        self.strategy.as_ref()
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn session_mut(&mut self) -> &mut Session {
        &mut self.session
    }
}
