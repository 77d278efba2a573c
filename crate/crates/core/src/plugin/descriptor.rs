use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use thiserror::Error;

use super::document::{parse_document, Document, ParseError};
use super::script::{CanonicalOp, SequenceScript};
use crate::gateway::SensorIdentity;

pub const SCHEMA_VERSION: i64 = 1;

/// Model value matching any model of the descriptor's manufacturer.
pub const WILDCARD_MODEL: &str = "*";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValidationError {
    #[error("no sequence for {0}")]
    MissingOp(CanonicalOp),
    #[error("sequence {0} defined twice")]
    DuplicateOp(CanonicalOp),
    #[error("sequence {0} has no steps")]
    EmptySequence(CanonicalOp),
    #[error("{op} step {step} references unbound ${{{name}}}")]
    UnboundCapture { op: CanonicalOp, step: usize, name: String },
    #[error("missing header {0:?}")]
    MissingHeader(&'static str),
    #[error("unsupported schema {0}")]
    UnsupportedSchema(i64),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PluginError {
    #[error("parse error at {0}")]
    Parse(#[from] ParseError),
    #[error("invalid descriptor: {0}")]
    Validation(#[from] ValidationError),
}

/// A protocol adapter: the concrete message sequences one sensor model
/// expects for each canonical operation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PluginDescriptor {
    pub id: String,
    pub model: String,
    pub manufacturer: String,
    pub schema: u32,
    pub sequences: BTreeMap<CanonicalOp, SequenceScript>,
}

impl PluginDescriptor {
    pub fn sequence(&self, op: CanonicalOp) -> &SequenceScript {
        // every op is present after validation
        &self.sequences[&op]
    }

    pub fn is_wildcard(&self) -> bool {
        self.model == WILDCARD_MODEL
    }

    /// Every verb the descriptor can put on the wire.
    pub fn send_verbs(&self) -> BTreeSet<&str> {
        self.sequences.values().flat_map(|s| s.steps.iter().map(|st| st.send.verb())).collect()
    }
}

/// Collects the per-op sequences of a parsed document, rejecting unknown
/// section names and duplicates.
pub(crate) fn collect_sequences(doc: Document) -> Result<BTreeMap<CanonicalOp, SequenceScript>, PluginError> {
    let mut sequences = BTreeMap::new();
    for section in doc.sections {
        let op: CanonicalOp = section
            .name
            .parse()
            .map_err(|message| ParseError { line: section.line, message })?;
        if section.steps.is_empty() {
            return Err(ValidationError::EmptySequence(op).into());
        }
        if sequences.insert(op, SequenceScript { steps: section.steps }).is_some() {
            return Err(ValidationError::DuplicateOp(op).into());
        }
    }
    if let Some(op) = CanonicalOp::ALL.into_iter().find(|op| !sequences.contains_key(op)) {
        return Err(ValidationError::MissingOp(op).into());
    }
    Ok(sequences)
}

pub(crate) fn required_header<'d>(doc: &'d Document, key: &'static str) -> Result<&'d str, ValidationError> {
    doc.header_str(key).filter(|s| !s.is_empty()).ok_or(ValidationError::MissingHeader(key))
}

pub(crate) fn check_schema(doc: &Document) -> Result<u32, ValidationError> {
    match doc.header_int("schema") {
        Some(SCHEMA_VERSION) => Ok(SCHEMA_VERSION as u32),
        Some(other) => Err(ValidationError::UnsupportedSchema(other)),
        None => Err(ValidationError::MissingHeader("schema")),
    }
}

pub fn parse_descriptor(text: &str) -> Result<PluginDescriptor, PluginError> {
    let doc = parse_document(text)?;
    let id = required_header(&doc, "id")?.to_string();
    let model = required_header(&doc, "model")?.to_string();
    let manufacturer = required_header(&doc, "manufacturer")?.to_string();
    let schema = check_schema(&doc)?;
    let sequences = collect_sequences(doc)?;
    check_bindings(&sequences)?;
    Ok(PluginDescriptor { id, model, manufacturer, schema, sequences })
}

/// Every send placeholder must be a pipeline parameter of its op or be
/// produced by an earlier step (earlier ops count, in canonical order).
fn check_bindings(sequences: &BTreeMap<CanonicalOp, SequenceScript>) -> Result<(), ValidationError> {
    let mut produced: BTreeSet<&str> = BTreeSet::new();
    for op in CanonicalOp::ALL {
        for (i, step) in sequences[&op].steps.iter().enumerate() {
            if let Some(name) = step.send.vars().find(|v| !op.params().contains(v) && !produced.contains(v)) {
                return Err(ValidationError::UnboundCapture { op, step: i + 1, name: name.to_string() });
            }
            produced.extend(step.produces());
        }
    }
    Ok(())
}

/// Exact (model, manufacturer) match first, then a manufacturer wildcard.
/// The result does not depend on the order of `installed`.
pub fn match_plugin(identity: &SensorIdentity, installed: &[Arc<PluginDescriptor>]) -> Option<Arc<PluginDescriptor>> {
    let pick = |model: &str| {
        installed
            .iter()
            .filter(|p| p.manufacturer == identity.manufacturer && p.model == model)
            .min_by(|a, b| a.id.cmp(&b.id))
            .cloned()
    };
    pick(&identity.model).or_else(|| pick(WILDCARD_MODEL))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("a plugin for ({model}, {manufacturer}) is already installed: {existing}")]
pub struct DuplicateMatchKeys {
    pub model: String,
    pub manufacturer: String,
    pub existing: String,
}

/// Installed plugins with unique match keys.
#[derive(Debug, Clone, Default)]
pub struct PluginSet {
    plugins: Vec<Arc<PluginDescriptor>>,
}

impl PluginSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn install(&mut self, plugin: impl Into<Arc<PluginDescriptor>>) -> Result<(), DuplicateMatchKeys> {
        let plugin = plugin.into();
        if let Some(existing) =
            self.plugins.iter().find(|p| p.model == plugin.model && p.manufacturer == plugin.manufacturer)
        {
            return Err(DuplicateMatchKeys {
                model: plugin.model.clone(),
                manufacturer: plugin.manufacturer.clone(),
                existing: existing.id.clone(),
            });
        }
        self.plugins.push(plugin);
        Ok(())
    }

    pub fn find(&self, identity: &SensorIdentity) -> Option<Arc<PluginDescriptor>> {
        match_plugin(identity, &self.plugins)
    }

    pub fn len(&self) -> usize {
        self.plugins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plugins.is_empty()
    }

    pub fn as_slice(&self) -> &[Arc<PluginDescriptor>] {
        &self.plugins
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn minimal(model: &str, manufacturer: &str, id: &str) -> String {
        format!(
            r#"id = "{id}"
model = "{model}"
manufacturer = "{manufacturer}"
schema = 1

[seq.handshake]
step = {{ send = "HELLO", expect = "OLLEH" }}

[seq.retrieve_profile]
step = {{ send = "GETPROF", expect = "PROF|caps=${{caps}}|smin=${{smin}}|smax=${{smax}}" }}

[seq.set_sampling]
step = {{ send = "SET|sampling=${{sampling}}", expect = "ACK|field=sampling" }}

[seq.set_commfreq]
step = {{ send = "SET|commfreq=${{commfreq}}", expect = "ACK|field=commfreq" }}

[seq.set_schedule]
step = {{ send = "SET|schedule=${{schedule}}", expect = "ACK|field=schedule" }}

[seq.set_network]
step = {{ send = "SET|host=${{host}}|port=${{port}}|token=${{token}}", expect = "ACK|field=network" }}

[seq.finalize]
step = {{ send = "COMMIT|caps=${{caps}}", expect = "DONE|sampling=${{sampling}}" }}
"#
        )
    }

    fn ident(model: &str, manufacturer: &str) -> SensorIdentity {
        SensorIdentity::new("a1b2c3d4e5f60708", model, manufacturer).unwrap()
    }

    #[test]
    fn minimal_document_has_seven_sequences() {
        let d = parse_descriptor(&minimal("WaspTemp3", "libelium", "libelium.wasptemp3.v1")).unwrap();
        assert_eq!(d.sequences.len(), 7);
        assert_eq!(d.id, "libelium.wasptemp3.v1");
        assert_eq!(d.schema, 1);
        assert_eq!(d.send_verbs().into_iter().collect::<Vec<_>>(), ["COMMIT", "GETPROF", "HELLO", "SET"]);
    }

    #[test]
    fn missing_op_is_rejected() {
        let text = minimal("m", "x", "p").replace("[seq.set_schedule]", "# gone").replace(
            "step = { send = \"SET|schedule=${schedule}\", expect = \"ACK|field=schedule\" }",
            "",
        );
        assert_eq!(parse_descriptor(&text), Err(ValidationError::MissingOp(CanonicalOp::SetSchedule).into()));
    }

    #[test]
    fn duplicate_op_is_rejected() {
        let text = minimal("m", "x", "p") + "\n[seq.handshake]\nstep = { send = \"HI\", expect = \"HO\" }\n";
        assert_eq!(parse_descriptor(&text), Err(ValidationError::DuplicateOp(CanonicalOp::Handshake).into()));
    }

    #[test]
    fn unbound_placeholder_is_rejected() {
        let text = minimal("m", "x", "p").replace("GETPROF", "GETPROF|auth=${token}");
        assert_eq!(
            parse_descriptor(&text),
            Err(ValidationError::UnboundCapture { op: CanonicalOp::RetrieveProfile, step: 1, name: "token".into() }
                .into())
        );
    }

    #[test]
    fn captures_flow_forward_only() {
        // a capture from the handshake may be used later
        let ok = minimal("m", "x", "p")
            .replace("expect = \"OLLEH\"", "expect = \"OLLEH|nonce=*\", capture = [\"nonce\"]")
            .replace("GETPROF", "GETPROF|nonce=${nonce}");
        assert!(parse_descriptor(&ok).is_ok());
        // but not before it is produced
        let bad = minimal("m", "x", "p").replace("HELLO", "HELLO|k=${caps}");
        assert!(matches!(
            parse_descriptor(&bad),
            Err(PluginError::Validation(ValidationError::UnboundCapture { op: CanonicalOp::Handshake, .. }))
        ));
    }

    #[test]
    fn header_checks() {
        let text = minimal("m", "x", "p").replace("schema = 1", "schema = 2");
        assert_eq!(parse_descriptor(&text), Err(ValidationError::UnsupportedSchema(2).into()));
        let text = minimal("m", "x", "p").replace("model = \"m\"\n", "");
        assert_eq!(parse_descriptor(&text), Err(ValidationError::MissingHeader("model").into()));
        let text = minimal("m", "x", "p").replace("[seq.finalize]", "[seq.reboot]");
        assert!(matches!(parse_descriptor(&text), Err(PluginError::Parse(ParseError { line: 24, .. }))));
    }

    #[test]
    fn matching_precedence() {
        let exact = Arc::new(parse_descriptor(&minimal("WaspTemp3", "libelium", "exact")).unwrap());
        let wild = Arc::new(parse_descriptor(&minimal("*", "libelium", "wild")).unwrap());
        let id = ident("WaspTemp3", "libelium");

        assert_eq!(match_plugin(&id, &[exact.clone(), wild.clone()]).unwrap().id, "exact");
        assert_eq!(match_plugin(&id, &[wild.clone(), exact.clone()]).unwrap().id, "exact");
        assert_eq!(match_plugin(&id, std::slice::from_ref(&wild)).unwrap().id, "wild");
        assert!(match_plugin(&ident("Other", "acme"), &[exact.clone(), wild.clone()]).is_none());
        assert!(match_plugin(&ident("WaspTemp3", "Libelium"), &[exact]).is_none());
    }

    #[test]
    fn plugin_set_rejects_duplicate_match_keys() {
        let mut set = PluginSet::new();
        set.install(parse_descriptor(&minimal("WaspTemp3", "libelium", "a")).unwrap()).unwrap();
        let err = set.install(parse_descriptor(&minimal("WaspTemp3", "libelium", "b")).unwrap()).unwrap_err();
        assert_eq!(err.existing, "a");
        assert_eq!(set.len(), 1);
        assert_eq!(set.find(&ident("WaspTemp3", "libelium")).unwrap().id, "a");
    }
}
