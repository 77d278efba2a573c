//! Declarative protocol adapters: each plugin maps the canonical
//! configuration operations onto one sensor model's message dialect, and the
//! interpreter executes those sequences over a session.

mod descriptor;
pub mod document;
mod interpreter;
mod script;

pub use descriptor::{
    match_plugin, parse_descriptor, DuplicateMatchKeys, PluginDescriptor, PluginError, PluginSet, ValidationError,
    SCHEMA_VERSION, WILDCARD_MODEL,
};
pub(crate) use descriptor::{check_schema, collect_sequences, required_header};
pub use document::ParseError;
pub use interpreter::{run_sequence, SequenceError};
pub use script::{
    Bindings, CanonicalOp, Expect, Mismatch, Pattern, SequenceScript, SequenceStep, Template, DEFAULT_STEP_RETRIES,
    DEFAULT_STEP_TIMEOUT,
};
