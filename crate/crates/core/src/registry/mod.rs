//! Cloud-side catalog, plugin store, registrations and the context reasoner.

mod profile;
mod rules;
mod server;
mod service;
mod store;
mod strategy;

pub use profile::{format_capabilities, parse_capabilities, Capability, ProfileError, SamplingRange, SensorProfile, ValueType};
pub use rules::{
    Condition, ContextFacts, ContextRule, DefaultSampling, Defaults, Effect, RuleTable, RuleTableError,
    StrategyInfeasible, PHENOMENON, REFERENCE_RULES,
};
pub use server::{router, BindError, JoinRequest, JoinResponse, RegistryServer, StrategyRequest, UidRequest, DIGEST_HEADER};
pub use service::{
    fresh_token, CatalogEntry, IdentificationResult, RegistrationRecord, RegistrationStatus, Registry, RegistryError, Sample,
};
pub use store::{sha256_hex, Store, StoreError};
pub(crate) use store::to_json_bytes;
pub use strategy::{
    Acquisition, Credentials, Delivery, Mode, Schedule, SensingPlan, SensingStrategy, Window, CONFIG_FIELDS,
};

/// Serde helper: `Duration` as integer milliseconds.
pub(crate) mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}
