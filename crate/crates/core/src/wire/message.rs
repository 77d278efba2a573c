//! Line-oriented message grammar: `VERB|k1=v1|k2=v2\n`.
//!
//! Values are UTF-8 with `|`, `\n`, `%` and `=` percent-escaped as `%XX`
//! (uppercase hex). No other escape is produced or accepted, so every frame
//! has exactly one wire form.

use std::fmt;

use thiserror::Error;

/// Largest frame accepted or produced, newline included.
pub const MAX_FRAME: usize = 4096;

const MAX_VERB: usize = 16;

/// One protocol frame: an uppercase verb and ordered `key=value` arguments.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Message {
    verb: String,
    args: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("invalid verb {0:?}")]
    InvalidVerb(String),
    #[error("invalid argument key {0:?}")]
    InvalidKey(String),
    #[error("duplicate argument key {0:?}")]
    DuplicateKey(String),
    #[error("value of {key:?} contains unescapable byte 0x{byte:02X}")]
    Unescapable { key: String, byte: u8 },
    #[error("frame of {len} bytes exceeds {MAX_FRAME}")]
    Oversize { len: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeErrorKind {
    Malformed,
    DuplicateKey,
    Oversize,
}

impl fmt::Display for DecodeErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecodeErrorKind::Malformed => "malformed",
            DecodeErrorKind::DuplicateKey => "duplicate-key",
            DecodeErrorKind::Oversize => "oversize",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind} frame at byte {position}")]
pub struct DecodeError {
    pub kind: DecodeErrorKind,
    /// Byte offset into the frame where the problem was found.
    pub position: usize,
}

impl DecodeError {
    fn malformed(position: usize) -> Self {
        DecodeError { kind: DecodeErrorKind::Malformed, position }
    }
}

pub(crate) fn is_valid_verb(verb: &str) -> bool {
    let b = verb.as_bytes();
    !b.is_empty()
        && b.len() <= MAX_VERB
        && b[0].is_ascii_uppercase()
        && b.iter().all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || *c == b'_')
}

pub(crate) fn is_valid_key(key: &str) -> bool {
    let b = key.as_bytes();
    !b.is_empty()
        && b[0].is_ascii_lowercase()
        && b.iter().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || *c == b'_')
}

fn escape_code(b: u8) -> Option<&'static str> {
    match b {
        b'|' => Some("%7C"),
        b'\n' => Some("%0A"),
        b'%' => Some("%25"),
        b'=' => Some("%3D"),
        _ => None,
    }
}

fn unescape_code(hi: u8, lo: u8) -> Option<u8> {
    match (hi, lo) {
        (b'7', b'C') => Some(b'|'),
        (b'0', b'A') => Some(b'\n'),
        (b'2', b'5') => Some(b'%'),
        (b'3', b'D') => Some(b'='),
        _ => None,
    }
}

fn is_control(b: u8) -> bool {
    b < 0x20 || b == 0x7F
}

/// Appends the escaped form of `value` to `out`.
pub(crate) fn escape_into(key: &str, value: &str, out: &mut Vec<u8>) -> Result<(), EncodeError> {
    for &b in value.as_bytes() {
        if let Some(code) = escape_code(b) {
            out.extend_from_slice(code.as_bytes());
        } else if is_control(b) {
            return Err(EncodeError::Unescapable { key: key.to_string(), byte: b });
        } else {
            out.push(b);
        }
    }
    Ok(())
}

/// Reverses [`escape_into`]; `base` is the offset of `raw` in the frame, for
/// error positions.
pub(crate) fn unescape(raw: &[u8], base: usize) -> Result<String, DecodeError> {
    let mut out = Vec::with_capacity(raw.len());
    let mut i = 0;
    while i < raw.len() {
        let b = raw[i];
        match b {
            b'%' => {
                let decoded = raw
                    .get(i + 1)
                    .zip(raw.get(i + 2))
                    .and_then(|(&hi, &lo)| unescape_code(hi, lo))
                    .ok_or(DecodeError::malformed(base + i))?;
                out.push(decoded);
                i += 3;
            }
            b'=' | b'|' | b'\n' => return Err(DecodeError::malformed(base + i)),
            _ if is_control(b) => return Err(DecodeError::malformed(base + i)),
            _ => {
                out.push(b);
                i += 1;
            }
        }
    }
    String::from_utf8(out).map_err(|e| DecodeError::malformed(base + e.utf8_error().valid_up_to()))
}

impl Message {
    pub fn new(verb: impl Into<String>) -> Self {
        Message { verb: verb.into(), args: Vec::new() }
    }

    /// Builder-style argument append.
    pub fn arg(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.args.push((key.into(), value.into()));
        self
    }

    pub fn push_arg(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.args.push((key.into(), value.into()));
    }

    pub fn verb(&self) -> &str {
        &self.verb
    }

    pub fn args(&self) -> &[(String, String)] {
        &self.args
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.args.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn is(&self, verb: &str) -> bool {
        self.verb == verb
    }

    /// Canonical wire form, newline terminated.
    pub fn encode(&self) -> Result<Vec<u8>, EncodeError> {
        if !is_valid_verb(&self.verb) {
            return Err(EncodeError::InvalidVerb(self.verb.clone()));
        }
        let mut out = Vec::with_capacity(64);
        out.extend_from_slice(self.verb.as_bytes());
        for (i, (key, value)) in self.args.iter().enumerate() {
            if !is_valid_key(key) {
                return Err(EncodeError::InvalidKey(key.clone()));
            }
            if self.args[..i].iter().any(|(k, _)| k == key) {
                return Err(EncodeError::DuplicateKey(key.clone()));
            }
            out.push(b'|');
            out.extend_from_slice(key.as_bytes());
            out.push(b'=');
            escape_into(key, value, &mut out)?;
        }
        out.push(b'\n');
        if out.len() > MAX_FRAME {
            return Err(EncodeError::Oversize { len: out.len() });
        }
        Ok(out)
    }

    /// Parses exactly one newline-terminated frame.
    pub fn decode(bytes: &[u8]) -> Result<Message, DecodeError> {
        if bytes.len() > MAX_FRAME {
            return Err(DecodeError { kind: DecodeErrorKind::Oversize, position: MAX_FRAME });
        }
        let body = match bytes.split_last() {
            Some((b'\n', body)) => body,
            _ => return Err(DecodeError::malformed(bytes.len())),
        };
        if let Some(pos) = body.iter().position(|&b| b == b'\n') {
            return Err(DecodeError::malformed(pos));
        }

        let mut segments = body.split(|&b| b == b'|');
        let verb_raw = segments.next().unwrap_or_default();
        let verb = std::str::from_utf8(verb_raw)
            .ok()
            .filter(|v| is_valid_verb(v))
            .ok_or(DecodeError::malformed(0))?;

        let mut msg = Message::new(verb);
        let mut offset = verb_raw.len();
        for seg in segments {
            // skip the '|' separator
            offset += 1;
            let eq = seg.iter().position(|&b| b == b'=').ok_or(DecodeError::malformed(offset))?;
            let key = std::str::from_utf8(&seg[..eq])
                .ok()
                .filter(|k| is_valid_key(k))
                .ok_or(DecodeError::malformed(offset))?;
            if msg.get(key).is_some() {
                return Err(DecodeError { kind: DecodeErrorKind::DuplicateKey, position: offset });
            }
            let value = unescape(&seg[eq + 1..], offset + eq + 1)?;
            msg.args.push((key.to_string(), value));
            offset += seg.len();
        }
        Ok(msg)
    }
}

/// Wire form without the trailing newline; values are escaped but verbs and
/// keys are printed as-is even when invalid.
impl fmt::Display for Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.verb)?;
        for (k, v) in &self.args {
            let mut buf = Vec::new();
            for &b in v.as_bytes() {
                match escape_code(b) {
                    Some(code) => buf.extend_from_slice(code.as_bytes()),
                    None => buf.push(b),
                }
            }
            write!(f, "|{}={}", k, String::from_utf8_lossy(&buf))?;
        }
        Ok(())
    }
}

pub fn encode(msg: &Message) -> Result<Vec<u8>, EncodeError> {
    msg.encode()
}

pub fn decode(bytes: &[u8]) -> Result<Message, DecodeError> {
    Message::decode(bytes)
}
