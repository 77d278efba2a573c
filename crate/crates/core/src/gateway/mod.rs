//! The discovery gateway: accepts sensor links, walks each one through the
//! discovery phases and records per-step timings.

mod cache;
mod client;
mod daemon;
mod identity;
mod pipeline;
mod report;
mod session;

pub use cache::{AcquireError, PluginCache};
pub use client::{RegistryClient, RegistryClientError, REGISTRY_ATTEMPTS, REGISTRY_BACKOFF};
pub use daemon::{run, Gateway, GatewayConfig, GatewayError, GatewayStatus, ListenerConfig};
pub use identity::{IdentityError, SensorIdentity};
pub use pipeline::{
    configure, extract_identity, parse_iam, profile_from_captures, retrieve_profile, run_pipeline, ConfigureError,
    OutcomeKind, PipelineContext, PipelineError, SessionOutcome, SessionReport, IAM, WHO,
};
pub use report::{report_timings, StepStats, TimingTable, CSV_HEADER};
pub use session::{DiscoverySession, Phase, PhaseOrderError, PhaseTimings, STEP_NAMES};
