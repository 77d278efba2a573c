//! The plugin document format.
//!
//! ```text
//! id = "libelium.wasptemp3.v1"
//! model = "WaspTemp3"
//! manufacturer = "libelium"
//! schema = 1
//!
//! [seq.handshake]
//! step = { send = "HELLO", expect = "OLLEH" }
//! ```
//!
//! Header values and step tables use TOML value syntax; each line is one
//! entry, and `step` may repeat inside a section (which plain TOML forbids).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

use super::script::{Pattern, SequenceStep, Template, DEFAULT_STEP_RETRIES, DEFAULT_STEP_TIMEOUT};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HeaderValue {
    Str(String),
    Int(i64),
}

#[derive(Debug, Clone)]
pub struct Section {
    pub name: String,
    pub line: usize,
    pub steps: Vec<SequenceStep>,
}

#[derive(Debug, Clone, Default)]
pub struct Document {
    pub header: BTreeMap<String, (usize, HeaderValue)>,
    pub sections: Vec<Section>,
}

impl Document {
    pub fn header_str(&self, key: &str) -> Option<&str> {
        match self.header.get(key) {
            Some((_, HeaderValue::Str(s))) => Some(s),
            _ => None,
        }
    }

    pub fn header_int(&self, key: &str) -> Option<i64> {
        match self.header.get(key) {
            Some((_, HeaderValue::Int(i))) => Some(*i),
            _ => None,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStep {
    send: String,
    expect: String,
    timeout_ms: Option<u64>,
    retries: Option<u32>,
    #[serde(default)]
    capture: Vec<String>,
}

#[derive(Deserialize)]
struct Wrapped<T> {
    v: T,
}

fn toml_value<T: serde::de::DeserializeOwned>(rhs: &str) -> Result<T, String> {
    toml::from_str::<Wrapped<T>>(&format!("v = {rhs}"))
        .map(|w| w.v)
        .map_err(|e| e.message().to_string())
}

pub fn parse_document(text: &str) -> Result<Document, ParseError> {
    let mut doc = Document::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let err = |message: String| ParseError { line, message };
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if let Some(inner) = trimmed.strip_prefix('[') {
            let inner = inner.strip_suffix(']').ok_or_else(|| err("unterminated section header".into()))?;
            let name = inner
                .trim()
                .strip_prefix("seq.")
                .ok_or_else(|| err(format!("unknown section [{inner}]")))?;
            doc.sections.push(Section { name: name.to_string(), line, steps: Vec::new() });
            continue;
        }
        let (key, rhs) = trimmed.split_once('=').ok_or_else(|| err(format!("expected key = value, got {trimmed:?}")))?;
        let key = key.trim();
        match doc.sections.last_mut() {
            Some(section) => {
                if key != "step" {
                    return Err(err(format!("unexpected key {key:?} in sequence block")));
                }
                let raw: RawStep = toml_value(rhs.trim()).map_err(err)?;
                let send = Template::parse(&raw.send).map_err(|m| err(format!("send: {m}")))?;
                let expect = Pattern::parse(&raw.expect).map_err(|m| err(format!("expect: {m}")))?;
                if let Some(bad) = raw.capture.iter().find(|c| !crate::wire::is_valid_key(c)) {
                    return Err(err(format!("invalid capture name {bad:?}")));
                }
                section.steps.push(SequenceStep {
                    send,
                    expect,
                    timeout: raw.timeout_ms.map(Duration::from_millis).unwrap_or(DEFAULT_STEP_TIMEOUT),
                    retries: raw.retries.unwrap_or(DEFAULT_STEP_RETRIES),
                    capture: raw.capture,
                });
            }
            None => {
                let value = match toml_value::<toml::Value>(rhs.trim()).map_err(err)? {
                    toml::Value::String(s) => HeaderValue::Str(s),
                    toml::Value::Integer(i) => HeaderValue::Int(i),
                    other => return Err(err(format!("unsupported header value {other}"))),
                };
                if doc.header.insert(key.to_string(), (line, value)).is_some() {
                    return Err(err(format!("duplicate header key {key:?}")));
                }
            }
        }
    }
    Ok(doc)
}

/// Textual step, for writing documents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepText {
    pub send: String,
    pub expect: String,
    pub timeout_ms: Option<u64>,
    pub retries: Option<u32>,
    pub capture: Vec<String>,
}

impl StepText {
    pub fn new(send: impl Into<String>, expect: impl Into<String>) -> Self {
        StepText { send: send.into(), expect: expect.into(), timeout_ms: None, retries: None, capture: Vec::new() }
    }
}

fn quote(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

/// Renders a document that [`parse_document`] reads back.
pub fn write_document(header: &[(&str, HeaderValue)], sections: &[(&str, Vec<StepText>)]) -> String {
    let mut out = String::new();
    for (k, v) in header {
        match v {
            HeaderValue::Str(s) => writeln!(out, "{k} = {}", quote(s)),
            HeaderValue::Int(i) => writeln!(out, "{k} = {i}"),
        }
        .unwrap();
    }
    for (name, steps) in sections {
        writeln!(out, "\n[seq.{name}]").unwrap();
        for s in steps {
            write!(out, "step = {{ send = {}, expect = {}", quote(&s.send), quote(&s.expect)).unwrap();
            if let Some(t) = s.timeout_ms {
                write!(out, ", timeout_ms = {t}").unwrap();
            }
            if let Some(r) = s.retries {
                write!(out, ", retries = {r}").unwrap();
            }
            if !s.capture.is_empty() {
                let caps: Vec<String> = s.capture.iter().map(|c| quote(c)).collect();
                write!(out, ", capture = [{}]", caps.join(", ")).unwrap();
            }
            out.push_str(" }\n");
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_header_sections_and_steps() {
        let text = r#"
# comment
id = "x.y.v1"
schema = 1

[seq.handshake]
step = { send = "HELLO", expect = "OLLEH" }
step = { send = "GET|uid=${uid}", expect = "VAL|v=*", timeout_ms = 500, retries = 3, capture = ["v"] } # trailing
"#;
        let doc = parse_document(text).unwrap();
        assert_eq!(doc.header_str("id"), Some("x.y.v1"));
        assert_eq!(doc.header_int("schema"), Some(1));
        assert_eq!(doc.sections.len(), 1);
        let s = &doc.sections[0];
        assert_eq!((s.name.as_str(), s.line), ("handshake", 6));
        assert_eq!(s.steps[0].timeout, DEFAULT_STEP_TIMEOUT);
        assert_eq!(s.steps[0].retries, DEFAULT_STEP_RETRIES);
        assert_eq!(s.steps[1].timeout, Duration::from_millis(500));
        assert_eq!(s.steps[1].retries, 3);
        assert_eq!(s.steps[1].capture, ["v"]);
    }

    #[test]
    fn reports_line_numbers() {
        let cases = [
            ("id = \"a\"\n[seq.x\n", 2),
            ("id = \"a\"\nnot a pair\n", 2),
            ("[seq.handshake]\nstep = { send = \"HELLO\" }\n", 2),
            ("[seq.handshake]\nstep = { send = \"hello\", expect = \"X\" }\n", 2),
            ("[seq.handshake]\nstep = { send = \"A\", expect = \"B\", bogus = 1 }\n", 2),
            ("[seq.handshake]\nother = 1\n", 2),
            ("[meta]\n", 1),
            ("a = 1\na = 2\n", 2),
            ("a = [1]\n", 1),
        ];
        for (text, line) in cases {
            let err = parse_document(text).unwrap_err();
            assert_eq!(err.line, line, "{text:?}: {err}");
        }
    }

    #[test]
    fn writer_output_parses_back() {
        let mut step = StepText::new("SET|v=${v}", "ACK|note=a \"quoted\" value");
        step.timeout_ms = Some(750);
        step.capture = vec!["note".into()];
        let text = write_document(
            &[("id", HeaderValue::Str("p".into())), ("schema", HeaderValue::Int(1))],
            &[("set_sampling", vec![step])],
        );
        let doc = parse_document(&text).unwrap();
        assert_eq!(doc.header_str("id"), Some("p"));
        let parsed = &doc.sections[0].steps[0];
        assert_eq!(parsed.timeout, Duration::from_millis(750));
        assert_eq!(parsed.expect, Pattern::parse("ACK|note=a \"quoted\" value").unwrap());
    }
}
