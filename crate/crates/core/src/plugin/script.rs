//! Message templates, reply patterns and the step/sequence types built on them.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::wire::{is_valid_key, is_valid_verb, Message};

/// Named values flowing into templates and out of reply patterns.
pub type Bindings = BTreeMap<String, String>;

pub const DEFAULT_STEP_TIMEOUT: Duration = Duration::from_secs(2);
pub const DEFAULT_STEP_RETRIES: u32 = 1;

/// The closed set of configuration operations every plugin must implement,
/// in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CanonicalOp {
    Handshake,
    RetrieveProfile,
    SetSampling,
    SetCommfreq,
    SetSchedule,
    SetNetwork,
    Finalize,
}

const IDENTITY_PARAMS: &[&str] = &["uid", "model", "manufacturer"];
const CONFIG_PARAMS: &[&str] = &[
    "uid", "model", "manufacturer", "sampling", "mode", "commfreq", "acq", "freq", "schedule", "host", "port", "token",
];

impl CanonicalOp {
    pub const ALL: [CanonicalOp; 7] = [
        CanonicalOp::Handshake,
        CanonicalOp::RetrieveProfile,
        CanonicalOp::SetSampling,
        CanonicalOp::SetCommfreq,
        CanonicalOp::SetSchedule,
        CanonicalOp::SetNetwork,
        CanonicalOp::Finalize,
    ];

    /// The configuration phase, in the order it is pushed to the sensor.
    pub const CONFIGURE: [CanonicalOp; 5] = [
        CanonicalOp::SetSampling,
        CanonicalOp::SetCommfreq,
        CanonicalOp::SetSchedule,
        CanonicalOp::SetNetwork,
        CanonicalOp::Finalize,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CanonicalOp::Handshake => "handshake",
            CanonicalOp::RetrieveProfile => "retrieve_profile",
            CanonicalOp::SetSampling => "set_sampling",
            CanonicalOp::SetCommfreq => "set_commfreq",
            CanonicalOp::SetSchedule => "set_schedule",
            CanonicalOp::SetNetwork => "set_network",
            CanonicalOp::Finalize => "finalize",
        }
    }

    /// Parameter names the pipeline supplies when running this operation.
    pub fn params(self) -> &'static [&'static str] {
        match self {
            CanonicalOp::Handshake | CanonicalOp::RetrieveProfile => IDENTITY_PARAMS,
            _ => CONFIG_PARAMS,
        }
    }
}

impl fmt::Display for CanonicalOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CanonicalOp {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CanonicalOp::ALL.into_iter().find(|op| op.as_str() == s).ok_or_else(|| format!("unknown operation {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Var(String),
}

/// A message with `${name}` placeholders in its argument values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    verb: String,
    args: Vec<(String, Vec<Segment>)>,
}

/// One expected reply argument.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expect {
    Literal(String),
    Any,
    /// Checks against an existing binding, or binds when unbound.
    Bind(String),
}

/// The verb and per-key constraints a reply must satisfy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pattern {
    verb: String,
    args: Vec<(String, Expect)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Mismatch {
    Verb { expected: String, got: String },
    MissingKey(String),
    Value { key: String, expected: String, got: String },
}

impl fmt::Display for Mismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mismatch::Verb { expected, got } => write!(f, "expected verb {expected}, got {got}"),
            Mismatch::MissingKey(k) => write!(f, "reply lacks {k}"),
            Mismatch::Value { key, expected, got } => write!(f, "{key}={got:?}, expected {expected:?}"),
        }
    }
}

fn is_var_name(s: &str) -> bool {
    is_valid_key(s)
}

/// Splits `VERB|k=v|...` text and validates verb and keys.
fn split_frame(text: &str) -> Result<(String, Vec<(String, String)>), String> {
    let mut parts = text.split('|');
    let verb = parts.next().unwrap_or_default();
    if !is_valid_verb(verb) {
        return Err(format!("invalid verb {verb:?}"));
    }
    let mut args: Vec<(String, String)> = Vec::new();
    for part in parts {
        let (k, v) = part.split_once('=').ok_or_else(|| format!("argument {part:?} lacks '='"))?;
        if !is_valid_key(k) {
            return Err(format!("invalid key {k:?}"));
        }
        if args.iter().any(|(existing, _)| existing == k) {
            return Err(format!("duplicate key {k:?}"));
        }
        args.push((k.to_string(), v.to_string()));
    }
    Ok((verb.to_string(), args))
}

/// Decodes the wire escapes allowed inside literal template text.
fn unescape_literal(s: &str) -> Result<String, String> {
    crate::wire::decode(format!("X|v={s}\n").as_bytes())
        .map(|m| m.get("v").unwrap_or_default().to_string())
        .map_err(|_| format!("bad escape in {s:?}"))
}

fn parse_segments(value: &str) -> Result<Vec<Segment>, String> {
    let mut segs = Vec::new();
    let mut rest = value;
    while let Some(start) = rest.find("${") {
        if start > 0 {
            segs.push(Segment::Literal(unescape_literal(&rest[..start])?));
        }
        let end = rest[start..].find('}').ok_or_else(|| format!("unterminated placeholder in {value:?}"))? + start;
        let name = &rest[start + 2..end];
        if !is_var_name(name) {
            return Err(format!("invalid placeholder name {name:?}"));
        }
        segs.push(Segment::Var(name.to_string()));
        rest = &rest[end + 1..];
    }
    if !rest.is_empty() {
        segs.push(Segment::Literal(unescape_literal(rest)?));
    }
    Ok(segs)
}

impl Template {
    pub fn parse(text: &str) -> Result<Template, String> {
        let (verb, raw) = split_frame(text)?;
        let args = raw
            .into_iter()
            .map(|(k, v)| parse_segments(&v).map(|s| (k, s)))
            .collect::<Result<_, _>>()?;
        Ok(Template { verb, args })
    }

    pub fn verb(&self) -> &str {
        &self.verb
    }

    pub fn vars(&self) -> impl Iterator<Item = &str> {
        self.args.iter().flat_map(|(_, segs)| {
            segs.iter().filter_map(|s| match s {
                Segment::Var(v) => Some(v.as_str()),
                Segment::Literal(_) => None,
            })
        })
    }

    /// Substitutes placeholders; `Err` names the first unbound one.
    pub fn render(&self, scopes: &[&Bindings]) -> Result<Message, String> {
        let mut msg = Message::new(&self.verb);
        for (key, segs) in &self.args {
            let mut value = String::new();
            for seg in segs {
                match seg {
                    Segment::Literal(l) => value.push_str(l),
                    Segment::Var(name) => {
                        let v = scopes.iter().find_map(|b| b.get(name)).ok_or_else(|| name.clone())?;
                        value.push_str(v);
                    }
                }
            }
            msg.push_arg(key, value);
        }
        Ok(msg)
    }
}

impl Pattern {
    pub fn parse(text: &str) -> Result<Pattern, String> {
        let (verb, raw) = split_frame(text)?;
        let mut args = Vec::with_capacity(raw.len());
        for (k, v) in raw {
            let expect = if v == "*" {
                Expect::Any
            } else {
                match parse_segments(&v)?.as_slice() {
                    [Segment::Var(name)] => Expect::Bind(name.clone()),
                    segs if segs.iter().any(|s| matches!(s, Segment::Var(_))) => {
                        return Err(format!("placeholder in {k:?} must be the whole value"));
                    }
                    [Segment::Literal(l)] => Expect::Literal(l.clone()),
                    _ => Expect::Literal(String::new()),
                }
            };
            args.push((k, expect));
        }
        Ok(Pattern { verb, args })
    }

    pub fn verb(&self) -> &str {
        &self.verb
    }

    pub fn args(&self) -> &[(String, Expect)] {
        &self.args
    }

    /// Names this pattern may bind.
    pub fn binds(&self) -> impl Iterator<Item = &str> {
        self.args.iter().filter_map(|(_, e)| match e {
            Expect::Bind(n) => Some(n.as_str()),
            _ => None,
        })
    }

    /// Matches `msg`. On success returns every placeholder observed in the
    /// reply: new bindings plus values confirmed against `bound`.
    pub fn matches(&self, msg: &Message, bound: &Bindings) -> Result<Bindings, Mismatch> {
        if msg.verb() != self.verb {
            return Err(Mismatch::Verb { expected: self.verb.clone(), got: msg.verb().to_string() });
        }
        let mut seen = Bindings::new();
        for (key, expect) in &self.args {
            let got = msg.get(key).ok_or_else(|| Mismatch::MissingKey(key.clone()))?;
            match expect {
                Expect::Any => {}
                Expect::Literal(l) if l == got => {}
                Expect::Literal(l) => {
                    return Err(Mismatch::Value { key: key.clone(), expected: l.clone(), got: got.to_string() })
                }
                Expect::Bind(name) => {
                    let prior = bound.get(name).or_else(|| seen.get(name));
                    match prior {
                        Some(p) if p != got => {
                            return Err(Mismatch::Value { key: key.clone(), expected: p.clone(), got: got.to_string() })
                        }
                        _ => {
                            seen.insert(name.clone(), got.to_string());
                        }
                    }
                }
            }
        }
        Ok(seen)
    }
}

/// One send/await exchange of a sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceStep {
    pub send: Template,
    pub expect: Pattern,
    pub timeout: Duration,
    pub retries: u32,
    /// Reply keys captured verbatim under their own names.
    pub capture: Vec<String>,
}

impl SequenceStep {
    /// Names this step makes available to later steps.
    pub fn produces(&self) -> impl Iterator<Item = &str> {
        self.expect.binds().chain(self.capture.iter().map(String::as_str))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceScript {
    pub steps: Vec<SequenceStep>,
}
