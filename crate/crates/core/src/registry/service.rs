use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::info;

use super::profile::{ProfileError, SensorProfile};
use super::rules::{ContextFacts, RuleTable, StrategyInfeasible};
use super::store::{Store, StoreError};
use super::strategy::{Credentials, SensingStrategy};
use crate::plugin::parse_descriptor;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub model: String,
    pub manufacturer: String,
    pub plugin_id: String,
    /// Phenomenon names.
    pub capabilities: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum IdentificationResult {
    Known { plugin_id: String, entry: CatalogEntry },
    Unknown,
}

impl IdentificationResult {
    pub fn plugin_id(&self) -> Option<&str> {
        match self {
            IdentificationResult::Known { plugin_id, .. } => Some(plugin_id),
            IdentificationResult::Unknown => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegistrationStatus {
    Registered,
    /// The sensor joined with its issued credentials.
    Configured,
    Stale,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistrationRecord {
    pub profile: SensorProfile,
    /// Unix milliseconds.
    pub registered_at_ms: u64,
    pub strategy: Option<SensingStrategy>,
    pub status: RegistrationStatus,
}

/// A reading delivered to the data sink after a successful join.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub uid: String,
    pub phenomenon: String,
    pub value: String,
    pub received_at_ms: u64,
}

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("uid {0} is not registered")]
    UnknownUid(String),
    #[error("invalid profile: {0}")]
    Validation(#[from] ProfileError),
    #[error("strategy infeasible: {0}")]
    Infeasible(#[from] StrategyInfeasible),
    #[error("plugin rejected: {0}")]
    Install(String),
    #[error("no data sink is configured")]
    NoSink,
    #[error(transparent)]
    Store(#[from] StoreError),
}

struct Issued {
    uid: String,
    used: bool,
}

#[derive(Default)]
struct State {
    catalog: BTreeMap<(String, String), CatalogEntry>,
    records: BTreeMap<String, RegistrationRecord>,
    tokens: HashMap<String, Issued>,
    samples: Vec<Sample>,
}

/// Catalog, plugin store, registrations, reasoning and credential issuance.
pub struct Registry {
    store: Store,
    rules: RuleTable,
    sink: Mutex<Option<SocketAddr>>,
    state: Mutex<State>,
}

pub(crate) fn unix_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

/// 128 random bits as 32 hex characters.
pub fn fresh_token() -> String {
    hex::encode(rand::random::<[u8; 16]>())
}

impl Registry {
    /// Opens (or creates) the store at `root` and loads what it holds.
    pub fn open(root: &Path, rules: RuleTable) -> Result<Registry, RegistryError> {
        let store = Store::open(root)?;
        let mut state = State::default();
        for entry in store.catalog()? {
            state.catalog.insert((entry.manufacturer.clone(), entry.model.clone()), entry);
        }
        for record in store.records()? {
            state.records.insert(record.profile.identity.uid.clone(), record);
        }
        info!(catalog = state.catalog.len(), records = state.records.len(), root = %root.display(), "registry opened");
        Ok(Registry { store, rules, sink: Mutex::new(None), state: Mutex::new(state) })
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn rules(&self) -> &RuleTable {
        &self.rules
    }

    /// Sets the endpoint handed out in credentials.
    pub fn set_sink(&self, addr: SocketAddr) {
        *self.sink.lock().unwrap() = Some(addr);
    }

    /// Adds or replaces a catalog entry and its plugin. The descriptor must
    /// parse and carry the entry's id and match keys.
    pub fn install(&self, entry: CatalogEntry, plugin_text: &str) -> Result<String, RegistryError> {
        let d = parse_descriptor(plugin_text).map_err(|e| RegistryError::Install(e.to_string()))?;
        if (d.id.as_str(), d.model.as_str(), d.manufacturer.as_str())
            != (entry.plugin_id.as_str(), entry.model.as_str(), entry.manufacturer.as_str())
        {
            return Err(RegistryError::Install(format!(
                "descriptor {}/{}/{} does not match catalog entry {}/{}/{}",
                d.id, d.model, d.manufacturer, entry.plugin_id, entry.model, entry.manufacturer
            )));
        }
        let mut state = self.state.lock().unwrap();
        let digest = self.store.put_plugin(&entry.plugin_id, plugin_text.as_bytes())?;
        self.store.put_catalog(&entry)?;
        state.catalog.insert((entry.manufacturer.clone(), entry.model.clone()), entry);
        Ok(digest)
    }

    /// Installs every `catalog/*.json` entry of a data directory together
    /// with `plugins/{plugin_id}.plugin`.
    pub fn seed_from(&self, dir: &Path) -> Result<usize, RegistryError> {
        let source = Store::existing(dir);
        let entries = source.catalog()?;
        for entry in &entries {
            let path = source.plugin_path(&entry.plugin_id)?;
            let text = std::fs::read_to_string(&path).map_err(|e| StoreError::Io { path, source: e })?;
            self.install(entry.clone(), &text)?;
        }
        Ok(entries.len())
    }

    /// Exact, case-sensitive (model, manufacturer) lookup.
    pub fn identify(&self, model: &str, manufacturer: &str) -> IdentificationResult {
        let state = self.state.lock().unwrap();
        match state.catalog.get(&(manufacturer.to_string(), model.to_string())) {
            Some(entry) => IdentificationResult::Known { plugin_id: entry.plugin_id.clone(), entry: entry.clone() },
            None => IdentificationResult::Unknown,
        }
    }

    pub fn catalog(&self) -> Vec<CatalogEntry> {
        self.state.lock().unwrap().catalog.values().cloned().collect()
    }

    /// Stored bytes and the digest recorded at install.
    pub fn plugin(&self, id: &str) -> Result<Option<(Vec<u8>, String)>, RegistryError> {
        if !self.state.lock().unwrap().catalog.values().any(|e| e.plugin_id == id) {
            return Ok(None);
        }
        Ok(self.store.plugin(id)?)
    }

    /// Creates or supersedes the record for the profile's uid.
    pub fn register(&self, profile: SensorProfile) -> Result<RegistrationRecord, RegistryError> {
        profile.validate()?;
        let record = RegistrationRecord {
            profile,
            registered_at_ms: unix_ms(),
            strategy: None,
            status: RegistrationStatus::Registered,
        };
        let mut state = self.state.lock().unwrap();
        self.store.put_record(&record)?;
        state.records.insert(record.profile.identity.uid.clone(), record.clone());
        Ok(record)
    }

    pub fn record(&self, uid: &str) -> Option<RegistrationRecord> {
        self.state.lock().unwrap().records.get(uid).cloned()
    }

    pub fn records(&self) -> Vec<RegistrationRecord> {
        self.state.lock().unwrap().records.values().cloned().collect()
    }

    /// `companion.<phenomenon>` facts for every companion key the rule
    /// table tests, from the live registrations.
    fn companion_facts(&self, state: &State) -> ContextFacts {
        let present: BTreeSet<&str> = state
            .records
            .values()
            .filter(|r| r.status != RegistrationStatus::Stale)
            .flat_map(|r| r.profile.capabilities.iter().map(|c| c.phenomenon.as_str()))
            .collect();
        self.rules
            .rules
            .iter()
            .flat_map(|r| r.when.keys())
            .filter_map(|k| k.strip_prefix("companion.").map(|p| (k, p)))
            .map(|(k, p)| (k.clone(), if present.contains(p) { "present" } else { "absent" }.to_string()))
            .collect()
    }

    /// Facts the rules would see for `uid`: derived companion facts,
    /// overridden by `supplied`.
    pub fn context_for(&self, supplied: &ContextFacts) -> ContextFacts {
        let state = self.state.lock().unwrap();
        let mut facts = self.companion_facts(&state);
        facts.extend(supplied.iter().map(|(k, v)| (k.clone(), v.clone())));
        facts
    }

    /// Reasons a plan for a registered sensor, issues fresh credentials and
    /// records the assigned strategy.
    pub fn strategy(&self, uid: &str, supplied: &ContextFacts) -> Result<SensingStrategy, RegistryError> {
        let facts = self.context_for(supplied);
        let profile = self.record(uid).ok_or_else(|| RegistryError::UnknownUid(uid.to_string()))?.profile;
        let plan = self.rules.reason(&profile, &facts)?;
        let credentials = self.issue_credentials(uid)?;
        let strategy = SensingStrategy { uid: uid.to_string(), plan, credentials };

        let mut state = self.state.lock().unwrap();
        let record = state.records.get_mut(uid).ok_or_else(|| RegistryError::UnknownUid(uid.to_string()))?;
        record.strategy = Some(strategy.clone());
        self.store.put_record(record)?;
        Ok(strategy)
    }

    pub fn issue_credentials(&self, uid: &str) -> Result<Credentials, RegistryError> {
        let sink = (*self.sink.lock().unwrap()).ok_or(RegistryError::NoSink)?;
        let mut state = self.state.lock().unwrap();
        if !state.records.contains_key(uid) {
            return Err(RegistryError::UnknownUid(uid.to_string()));
        }
        let token = fresh_token();
        state.tokens.insert(token.clone(), Issued { uid: uid.to_string(), used: false });
        let host = if sink.ip().is_unspecified() { "127.0.0.1".to_string() } else { sink.ip().to_string() };
        Ok(Credentials { host, port: sink.port(), token })
    }

    /// Accepts a fresh token issued to `uid` exactly once.
    pub fn validate_join(&self, uid: &str, token: &str) -> bool {
        let mut state = self.state.lock().unwrap();
        match state.tokens.get_mut(token) {
            Some(issued) if issued.uid == uid && !issued.used => issued.used = true,
            _ => return false,
        }
        if let Some(record) = state.records.get_mut(uid) {
            record.status = RegistrationStatus::Configured;
            let _ = self.store.put_record(record);
        }
        true
    }

    pub fn record_sample(&self, sample: Sample) {
        self.state.lock().unwrap().samples.push(sample);
    }

    pub fn samples(&self) -> Vec<Sample> {
        self.state.lock().unwrap().samples.clone()
    }

    /// Rewrites every document (a no-op on disk when nothing changed).
    pub fn persist(&self) -> Result<(), RegistryError> {
        let state = self.state.lock().unwrap();
        for entry in state.catalog.values() {
            self.store.put_catalog(entry)?;
        }
        for record in state.records.values() {
            self.store.put_record(record)?;
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::plugin::tests_support::minimal_descriptor;
    use crate::registry::profile::tests::temperature_profile;
    use crate::registry::profile::{Capability, ValueType};
    use crate::registry::rules::RuleTable;
    use crate::registry::strategy::Mode;

    pub(crate) fn entry(model: &str, mfr: &str, id: &str) -> CatalogEntry {
        CatalogEntry {
            model: model.into(),
            manufacturer: mfr.into(),
            plugin_id: id.into(),
            capabilities: vec!["temperature".into()],
        }
    }

    fn registry(dir: &Path) -> Registry {
        let r = Registry::open(dir, RuleTable::reference()).unwrap();
        r.set_sink("127.0.0.1:7801".parse().unwrap());
        r.install(entry("WaspTemp3", "libelium", "libelium.wasptemp3.v1"), &minimal_descriptor("WaspTemp3", "libelium", "libelium.wasptemp3.v1"))
            .unwrap();
        r
    }

    #[test]
    fn identify_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let r = registry(dir.path());
        assert_eq!(r.identify("WaspTemp3", "libelium").plugin_id(), Some("libelium.wasptemp3.v1"));
        assert_eq!(r.identify("WaspTemp3", "Libelium"), IdentificationResult::Unknown);
        assert_eq!(r.identify("Other", "libelium"), IdentificationResult::Unknown);
        let json = serde_json::to_value(r.identify("WaspTemp3", "libelium")).unwrap();
        assert_eq!(json["status"], "known");
        assert_eq!(json["plugin_id"], "libelium.wasptemp3.v1");
        assert_eq!(serde_json::to_value(IdentificationResult::Unknown).unwrap(), serde_json::json!({"status": "unknown"}));
    }

    #[test]
    fn install_checks_match_keys() {
        let dir = tempfile::tempdir().unwrap();
        let r = registry(dir.path());
        let err = r.install(entry("Other", "libelium", "x.v1"), &minimal_descriptor("WaspTemp3", "libelium", "x.v1"));
        assert!(matches!(err, Err(RegistryError::Install(_))));
        assert!(matches!(r.install(entry("A", "b", "c"), "garbage"), Err(RegistryError::Install(_))));
        assert!(r.plugin("x.v1").unwrap().is_none());
    }

    #[test]
    fn registration_supersedes() {
        let dir = tempfile::tempdir().unwrap();
        let r = registry(dir.path());
        let first = r.register(temperature_profile()).unwrap();
        assert_eq!(first.status, RegistrationStatus::Registered);
        let mut second = temperature_profile();
        second.capabilities.push(Capability::new("humidity", "percent", ValueType::Float));
        r.register(second.clone()).unwrap();
        assert_eq!(r.records().len(), 1);
        assert_eq!(r.record(&second.identity.uid).unwrap().profile, second);

        let mut bad = temperature_profile();
        bad.sampling.min = bad.sampling.max * 2;
        assert!(matches!(r.register(bad), Err(RegistryError::Validation(_))));
    }

    #[test]
    fn tokens_are_single_use_and_bound() {
        let dir = tempfile::tempdir().unwrap();
        let r = registry(dir.path());
        assert!(matches!(r.issue_credentials("a1b2c3d4e5f60708"), Err(RegistryError::UnknownUid(_))));
        let uid = r.register(temperature_profile()).unwrap().profile.identity.uid;
        let c = r.issue_credentials(&uid).unwrap();
        assert_eq!(c.token.len(), 32);
        assert!(c.token.bytes().all(|b| b.is_ascii_hexdigit()));
        assert_eq!((c.host.as_str(), c.port), ("127.0.0.1", 7801));
        assert!(!r.validate_join("ffffffffffffffff", &c.token));
        assert!(!r.validate_join(&uid, "0".repeat(32).as_str()));
        assert!(r.validate_join(&uid, &c.token));
        assert!(!r.validate_join(&uid, &c.token));
        assert_eq!(r.record(&uid).unwrap().status, RegistrationStatus::Configured);
        assert_ne!(r.issue_credentials(&uid).unwrap().token, c.token);
    }

    #[test]
    fn strategy_uses_registrations_as_companions() {
        let dir = tempfile::tempdir().unwrap();
        let r = registry(dir.path());
        let mut humidity = temperature_profile();
        humidity.identity.uid = "00000000000000aa".into();
        humidity.capabilities = vec![Capability::new("humidity", "percent", ValueType::Float)];
        r.register(humidity.clone()).unwrap();
        let s = r.strategy(&humidity.identity.uid, &ContextFacts::new()).unwrap();
        assert_eq!(s.plan.mode, Mode::Sleep);

        let mut air = temperature_profile();
        air.capabilities = vec![Capability::new("air_temperature", "celsius", ValueType::Float)];
        r.register(air).unwrap();
        let s = r.strategy(&humidity.identity.uid, &ContextFacts::new()).unwrap();
        assert_eq!(s.plan.mode, Mode::Active);
        assert_eq!(r.record(&humidity.identity.uid).unwrap().strategy, Some(s));

        // supplied facts override derived ones
        let forced: ContextFacts = [("companion.air_temperature".to_string(), "absent".to_string())].into();
        assert_eq!(r.strategy(&humidity.identity.uid, &forced).unwrap().plan.mode, Mode::Sleep);
        assert!(matches!(r.strategy("ffffffffffffffff", &forced), Err(RegistryError::UnknownUid(_))));
    }

    #[test]
    fn reopen_reloads_everything() {
        let dir = tempfile::tempdir().unwrap();
        let r = registry(dir.path());
        let uid = r.register(temperature_profile()).unwrap().profile.identity.uid;
        r.strategy(&uid, &ContextFacts::new()).unwrap();
        let (catalog, records) = (r.catalog(), r.records());
        drop(r);
        let again = Registry::open(dir.path(), RuleTable::reference()).unwrap();
        assert_eq!(again.catalog(), catalog);
        assert_eq!(again.records(), records);
        assert!(again.plugin("libelium.wasptemp3.v1").unwrap().is_some());
    }
}
