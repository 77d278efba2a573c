//! Sensor-side dialect scripts.
//!
//! A dialect document has the plugin layout, seen from the device: `expect`
//! is the message the sensor waits for and `send` its reply. Placeholders in
//! `expect` that name a configuration field are captured and applied; all
//! others must equal the sensor's own facts (uid, nonce, ...).

use std::collections::BTreeMap;

use thiserror::Error;

use crate::plugin::document::parse_document;
use crate::plugin::{check_schema, collect_sequences, required_header, Bindings, CanonicalOp, PluginError, SequenceScript, SequenceStep};
use crate::wire::Message;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dialect {
    pub id: String,
    pub model: String,
    pub manufacturer: String,
    pub sequences: BTreeMap<CanonicalOp, SequenceScript>,
}

pub fn parse_dialect(text: &str) -> Result<Dialect, PluginError> {
    let doc = parse_document(text)?;
    let id = required_header(&doc, "id")?.to_string();
    let model = required_header(&doc, "model")?.to_string();
    let manufacturer = required_header(&doc, "manufacturer")?.to_string();
    check_schema(&doc)?;
    let sequences = collect_sequences(doc)?;
    Ok(Dialect { id, model, manufacturer, sequences })
}

impl Dialect {
    pub fn step(&self, op: CanonicalOp, idx: usize) -> Option<&SequenceStep> {
        self.sequences.get(&op).and_then(|s| s.steps.get(idx))
    }

    fn last_index(&self, op: CanonicalOp) -> usize {
        self.sequences[&op].steps.len() - 1
    }
}

/// Where a sensor is in its dialect, per connection.
#[derive(Debug, Clone, Default)]
pub struct Cursor {
    at: Option<(CanonicalOp, usize)>,
    handshake_done: bool,
}

impl Cursor {
    pub fn position(&self) -> Option<(CanonicalOp, usize)> {
        self.at
    }
}

/// A matched dialect step.
#[derive(Debug, Clone)]
pub struct Matched {
    pub op: CanonicalOp,
    pub index: usize,
    /// Whether this is the last step of its op.
    pub completes_op: bool,
    pub captures: Bindings,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no dialect step accepts {0}")]
pub struct NoMatch(pub String);

/// Finds the step `msg` answers: the next step of the current op, else the
/// first step of any op (only the handshake until it has completed), else a
/// repeat of the current step.
pub fn match_step(dialect: &Dialect, cursor: &Cursor, facts: &Bindings, msg: &Message) -> Result<Matched, NoMatch> {
    let mut candidates: Vec<(CanonicalOp, usize)> = Vec::new();
    if let Some((op, i)) = cursor.at {
        if i < dialect.last_index(op) {
            candidates.push((op, i + 1));
        }
    }
    if cursor.handshake_done {
        candidates.extend(CanonicalOp::ALL.into_iter().map(|op| (op, 0)));
    } else {
        candidates.push((CanonicalOp::Handshake, 0));
    }
    if let Some(at) = cursor.at {
        candidates.push(at);
    }
    for (op, index) in candidates {
        let step = dialect.step(op, index).expect("candidate exists");
        if let Ok(captures) = step.expect.matches(msg, facts) {
            return Ok(Matched { op, index, completes_op: index == dialect.last_index(op), captures });
        }
    }
    Err(NoMatch(msg.to_string()))
}

/// Moves the cursor onto a matched step.
pub fn advance(cursor: &mut Cursor, m: &Matched) {
    cursor.at = Some((m.op, m.index));
    if m.op == CanonicalOp::Handshake && m.completes_op {
        cursor.handshake_done = true;
    }
}
