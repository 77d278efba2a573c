use std::net::SocketAddr;
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;
use tracing::{debug, info};

use super::cache::{AcquireError, PluginCache};
use super::client::{RegistryClient, RegistryClientError};
use super::identity::SensorIdentity;
use super::session::{DiscoverySession, Phase, PhaseOrderError, PhaseTimings};
use crate::plugin::{match_plugin, run_sequence, Bindings, CanonicalOp, PluginDescriptor, SequenceError};
use crate::registry::{parse_capabilities, ContextFacts, SamplingRange, SensingStrategy, SensorProfile};
use crate::wire::{parse_interval, Direction, Message, Session, TransportKind, WireError};

pub const WHO: &str = "WHO";
pub const IAM: &str = "IAM";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("link: {0}")]
    Wire(#[from] WireError),
    #[error("malformed identity: {0}")]
    MalformedIdentity(String),
    #[error(transparent)]
    Registry(#[from] RegistryClientError),
    #[error(transparent)]
    Acquire(#[from] AcquireError),
    #[error("plugin {plugin} does not drive {identity}")]
    PluginMismatch { plugin: String, identity: String },
    #[error("{op}: {source}")]
    Sequence { op: CanonicalOp, source: SequenceError },
    #[error("incomplete profile: {0}")]
    IncompleteProfile(String),
    #[error("strategy infeasible for profile: {0}")]
    StrategyInfeasible(String),
    #[error(transparent)]
    Phase(#[from] PhaseOrderError),
    #[error("session exceeded {0:?}")]
    SessionTimeout(Duration),
}

impl PipelineError {
    pub fn sequence_error(&self) -> Option<(CanonicalOp, &SequenceError)> {
        match self {
            PipelineError::Sequence { op, source } => Some((*op, source)),
            _ => None,
        }
    }

    pub fn is_step_mismatch(&self) -> bool {
        self.sequence_error().is_some_and(|(_, e)| e.is_mismatch())
    }
}

/// Shared, read-mostly state every pipeline worker uses.
#[derive(Debug)]
pub struct PipelineContext {
    pub client: RegistryClient,
    pub cache: PluginCache,
    /// Site facts sent to the reasoner (season, time band, ...).
    pub facts: ContextFacts,
    /// Reply timeout for `WHO`.
    pub phase_timeout: Duration,
}

impl PipelineContext {
    pub fn new(client: RegistryClient) -> Self {
        PipelineContext {
            client,
            cache: PluginCache::new(),
            facts: ContextFacts::new(),
            phase_timeout: Duration::from_secs(2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeKind {
    Configured,
    Unknown,
    Failed,
}

/// What a session did, serialized for the status endpoint and the bench.
#[derive(Debug, Clone, Serialize)]
pub struct SessionReport {
    pub peer: SocketAddr,
    pub transport: TransportKind,
    pub outcome: OutcomeKind,
    pub identity: Option<SensorIdentity>,
    pub plugin_id: Option<String>,
    pub history: Vec<Phase>,
    pub timings: PhaseTimings,
    /// Wall clock from the start of service to the end of the pipeline.
    #[serde(serialize_with = "as_ms")]
    pub elapsed: Duration,
    pub strategy: Option<SensingStrategy>,
    /// Values the sensor acknowledged during configuration.
    pub receipt: Bindings,
    /// Last configuration op that completed, when configuration failed part way.
    pub last_acknowledged: Option<CanonicalOp>,
    pub failed_in: Option<Phase>,
    pub error: Option<String>,
}

fn as_ms<S: serde::Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64() * 1000.0)
}

impl SessionReport {
    /// Steps (2)-(10) as measured from the start of service.
    pub fn end_to_end(&self) -> Duration {
        self.elapsed
    }

    /// Reported boot time plus the measured wall clock.
    pub fn session_duration(&self) -> Duration {
        self.timings.get(1).unwrap_or_default() + self.elapsed
    }
}

pub struct SessionOutcome {
    pub report: SessionReport,
    pub error: Option<PipelineError>,
}

/// Parses an `IAM` reply. `boot_ms`, when present, must be an integer.
pub fn parse_iam(reply: &Message) -> Result<(SensorIdentity, Option<Duration>), PipelineError> {
    if !reply.is(IAM) {
        return Err(PipelineError::MalformedIdentity(format!("expected IAM, got {reply}")));
    }
    let field = |k: &str| reply.get(k).ok_or_else(|| PipelineError::MalformedIdentity(format!("IAM lacks {k}")));
    let identity = SensorIdentity::new(field("uid")?, field("model")?, field("mfr")?)
        .map_err(|e| PipelineError::MalformedIdentity(e.to_string()))?;
    let boot = match reply.get("boot_ms") {
        Some(v) => Some(Duration::from_millis(
            v.parse().map_err(|_| PipelineError::MalformedIdentity(format!("bad boot_ms {v:?}")))?,
        )),
        None => None,
    };
    Ok((identity, boot))
}

/// Sends `WHO` and parses the `IAM` reply.
pub async fn extract_identity(
    session: &mut Session,
    timeout: Duration,
) -> Result<(SensorIdentity, Option<Duration>), PipelineError> {
    let reply = session.request(&Message::new(WHO), timeout).await?;
    parse_iam(&reply)
}

fn script_params(identity: &SensorIdentity, earlier: &Bindings, strategy: Option<&SensingStrategy>) -> Bindings {
    let mut params = earlier.clone();
    params.insert("uid".into(), identity.uid.clone());
    params.insert("model".into(), identity.model.clone());
    params.insert("manufacturer".into(), identity.manufacturer.clone());
    if let Some(s) = strategy {
        params.extend(s.params());
    }
    params
}

async fn run_op(
    session: &mut Session,
    plugin: &PluginDescriptor,
    op: CanonicalOp,
    params: &Bindings,
) -> Result<Bindings, PipelineError> {
    run_sequence(session, plugin.sequence(op), params)
        .await
        .map_err(|source| PipelineError::Sequence { op, source })
}

/// Builds a profile from retrieve-profile captures: `caps`, `smin`, `smax`
/// are required; `sched` (`yes`/`no`), `epc` and `transports` are optional.
pub fn profile_from_captures(
    identity: &SensorIdentity,
    captures: &Bindings,
    transport: TransportKind,
) -> Result<SensorProfile, PipelineError> {
    let need = |k: &str| captures.get(k).ok_or_else(|| PipelineError::IncompleteProfile(format!("no {k} captured")));
    let capabilities = parse_capabilities(need("caps")?).map_err(PipelineError::IncompleteProfile)?;
    let interval = |k: &str| {
        need(k).and_then(|v| parse_interval(v).ok_or_else(|| PipelineError::IncompleteProfile(format!("bad {k} {v:?}"))))
    };
    let sampling = SamplingRange::new(interval("smin")?, interval("smax")?);
    let transports = match captures.get("transports") {
        Some(list) => list
            .split(',')
            .map(|t| t.parse::<TransportKind>().map_err(PipelineError::IncompleteProfile))
            .collect::<Result<Vec<TransportKind>, _>>()?,
        None => vec![transport],
    };
    let profile = SensorProfile {
        identity: identity.clone(),
        capabilities,
        sampling,
        supports_schedules: captures.get("sched").is_some_and(|v| v == "yes"),
        transports,
        epc: captures.get("epc").filter(|v| !v.is_empty() && *v != "none").cloned(),
    };
    profile.validate().map_err(|e| PipelineError::IncompleteProfile(e.to_string()))?;
    Ok(profile)
}

/// Runs handshake and retrieve-profile. Returns the profile and every
/// capture so later ops can use them.
pub async fn retrieve_profile(
    session: &mut Session,
    plugin: &PluginDescriptor,
    identity: &SensorIdentity,
) -> Result<(SensorProfile, Bindings), PipelineError> {
    let mut captures = run_op(session, plugin, CanonicalOp::Handshake, &script_params(identity, &Bindings::new(), None)).await?;
    let profile_caps =
        run_op(session, plugin, CanonicalOp::RetrieveProfile, &script_params(identity, &captures, None)).await?;
    let profile = profile_from_captures(identity, &profile_caps, session.profile().kind)?;
    captures.extend(profile_caps);
    Ok((profile, captures))
}

#[derive(Debug, Error)]
#[error("configuration stopped (last acknowledged: {last_acknowledged:?}): {source}")]
pub struct ConfigureError {
    pub last_acknowledged: Option<CanonicalOp>,
    pub receipt: Bindings,
    #[source]
    pub source: PipelineError,
}

/// Runs the five configuration ops in order and returns the union of what
/// the sensor acknowledged, plus each op's duration.
pub async fn configure(
    session: &mut Session,
    plugin: &PluginDescriptor,
    identity: &SensorIdentity,
    strategy: &SensingStrategy,
    earlier: &Bindings,
) -> Result<(Bindings, [Duration; 5]), ConfigureError> {
    let mut receipt = Bindings::new();
    let mut durations = [Duration::ZERO; 5];
    let mut last = None;
    for (i, op) in CanonicalOp::CONFIGURE.into_iter().enumerate() {
        let mut known = earlier.clone();
        known.extend(receipt.iter().map(|(k, v)| (k.clone(), v.clone())));
        let params = script_params(identity, &known, Some(strategy));
        let t0 = Instant::now();
        match run_op(session, plugin, op, &params).await {
            Ok(acked) => {
                durations[i] = t0.elapsed();
                receipt.extend(acked);
                last = Some(op);
            }
            Err(source) => return Err(ConfigureError { last_acknowledged: last, receipt, source }),
        }
    }
    Ok((receipt, durations))
}

struct Progress {
    receipt: Bindings,
    last_acknowledged: Option<CanonicalOp>,
    unknown: bool,
}

async fn drive(ctx: &PipelineContext, ds: &mut DiscoverySession, started: Instant, p: &mut Progress) -> Result<(), PipelineError> {
    // detect: the link is up
    let established = ds.session_mut().establish().await;
    ds.timings.set(2, established.saturating_duration_since(started));

    ds.enter_extract()?;
    let (identity, boot) = extract_identity(ds.session_mut(), ctx.phase_timeout).await?;
    let parsed_at = Instant::now();
    let who_at = ds
        .session()
        .log()
        .iter()
        .rev()
        .find(|e| e.direction == Direction::Outbound && e.message.is(WHO))
        .map(|e| e.at)
        .unwrap_or(established);
    ds.timings.set(3, who_at.saturating_duration_since(established));
    ds.timings.set(4, parsed_at.saturating_duration_since(who_at));
    if let Some(boot) = boot {
        ds.timings.set(1, boot);
    }

    ds.enter_identify(identity.clone())?;
    let id = match ctx.client.identify(&identity).await? {
        crate::registry::IdentificationResult::Known { plugin_id, .. } => plugin_id,
        crate::registry::IdentificationResult::Unknown => {
            info!(uid = %identity.uid, model = %identity.model, mfr = %identity.manufacturer, "unknown sensor, no plugin");
            p.unknown = true;
            return Ok(());
        }
    };

    ds.enter_find()?;
    let plugin = ctx.cache.acquire(&id, &ctx.client).await?;
    if match_plugin(&identity, std::slice::from_ref(&plugin)).is_none() {
        return Err(PipelineError::PluginMismatch { plugin: plugin.id.clone(), identity: identity.to_string() });
    }

    ds.enter_retrieve(plugin.clone())?;
    let t0 = Instant::now();
    let (profile, captures) = retrieve_profile(ds.session_mut(), &plugin, &identity).await?;
    ds.timings.set(5, t0.elapsed());

    ds.enter_register(profile.clone())?;
    ctx.client.register(&profile).await?;

    ds.enter_reason()?;
    let strategy = ctx.client.strategy(&identity.uid, &ctx.facts).await?;
    if !strategy.plan.is_feasible_for(&profile) {
        return Err(PipelineError::StrategyInfeasible(format!(
            "sampling {:?}, commfreq {:?}, range {:?}-{:?}",
            strategy.plan.sampling, strategy.plan.commfreq, profile.sampling.min, profile.sampling.max
        )));
    }

    ds.enter_configure(strategy.clone())?;
    match configure(ds.session_mut(), &plugin, &identity, &strategy, &captures).await {
        Ok((receipt, durations)) => {
            for (i, d) in durations.into_iter().enumerate() {
                ds.timings.set(6 + i, d);
            }
            p.receipt = receipt;
            p.last_acknowledged = Some(CanonicalOp::Finalize);
            Ok(())
        }
        Err(e) => {
            p.receipt = e.receipt;
            p.last_acknowledged = e.last_acknowledged;
            Err(e.source)
        }
    }
}

/// Runs every phase for one accepted session. `started` is when the
/// gateway began serving it. The session is closed afterwards.
pub async fn run_pipeline(ctx: &PipelineContext, session: Session, started: Instant, limit: Duration) -> SessionOutcome {
    let peer = session.peer();
    let transport = session.profile().kind;
    let mut ds = DiscoverySession::new(session);
    let mut progress = Progress { receipt: Bindings::new(), last_acknowledged: None, unknown: false };
    let result = match tokio::time::timeout(limit, drive(ctx, &mut ds, started, &mut progress)).await {
        Ok(r) => r,
        Err(_) => Err(PipelineError::SessionTimeout(limit)),
    };
    ds.session_mut().close().await;
    let elapsed = started.elapsed();

    let (outcome, error) = match result {
        Ok(()) if progress.unknown => (OutcomeKind::Unknown, None),
        Ok(()) => (OutcomeKind::Configured, None),
        Err(e) => {
            debug!(%peer, phase = %ds.phase(), error = %e, "session failed");
            (OutcomeKind::Failed, Some(e))
        }
    };
    let report = SessionReport {
        peer,
        transport,
        outcome,
        identity: ds.identity().cloned(),
        plugin_id: ds.plugin().map(|p| p.id.clone()),
        history: ds.history(),
        timings: ds.timings.clone(),
        elapsed,
        strategy: ds.strategy().cloned(),
        receipt: progress.receipt,
        last_acknowledged: progress.last_acknowledged,
        failed_in: error.as_ref().map(|_| ds.phase()),
        error: error.as_ref().map(ToString::to_string),
    };
    SessionOutcome { report, error }
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::{format_capabilities, Capability, ValueType};

    #[test]
    fn iam_parsing() {
        let ok = Message::new(IAM)
            .arg("uid", "a1b2c3d4e5f60708")
            .arg("model", "WaspTemp3")
            .arg("mfr", "libelium")
            .arg("boot_ms", "5400");
        let (id, boot) = parse_iam(&ok).unwrap();
        assert_eq!(id.model, "WaspTemp3");
        assert_eq!(boot, Some(Duration::from_millis(5400)));

        let no_model = Message::new(IAM).arg("uid", "a1b2c3d4e5f60708");
        assert!(matches!(parse_iam(&no_model), Err(PipelineError::MalformedIdentity(_))));
        let bad_uid = Message::new(IAM).arg("uid", "xyz").arg("model", "m").arg("mfr", "f");
        assert!(matches!(parse_iam(&bad_uid), Err(PipelineError::MalformedIdentity(_))));
        assert!(matches!(parse_iam(&Message::new("ERR")), Err(PipelineError::MalformedIdentity(_))));
    }

    #[test]
    fn profile_from_capture_set() {
        let id = SensorIdentity::new("a1b2c3d4e5f60708", "WaspTemp3", "libelium").unwrap();
        let caps = vec![Capability::new("temperature", "celsius", ValueType::Float)];
        let mut c: Bindings = [
            ("caps", format_capabilities(&caps)),
            ("smin", "1s".to_string()),
            ("smax", "3600s".to_string()),
            ("sched", "yes".to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        let p = profile_from_captures(&id, &c, TransportKind::Udp).unwrap();
        assert_eq!(p.capabilities, caps);
        assert_eq!(p.sampling, SamplingRange::new(Duration::from_secs(1), Duration::from_secs(3600)));
        assert!(p.supports_schedules);
        assert_eq!(p.transports, [TransportKind::Udp]);
        assert_eq!(p.epc, None);

        c.insert("smin".into(), "4000s".into());
        assert!(matches!(profile_from_captures(&id, &c, TransportKind::Tcp), Err(PipelineError::IncompleteProfile(_))));
        c.remove("caps");
        assert!(matches!(profile_from_captures(&id, &c, TransportKind::Tcp), Err(PipelineError::IncompleteProfile(_))));
    }
}
