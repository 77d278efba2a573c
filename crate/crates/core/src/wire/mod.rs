//! Frame codec and transports shared by the gateway and simulated sensors.

pub mod interval;
mod message;
mod transport;

pub use interval::{format_interval, parse_interval};
pub use message::{decode, encode, DecodeError, DecodeErrorKind, EncodeError, Message, MAX_FRAME};
pub(crate) use message::{is_valid_key, is_valid_verb};
pub use transport::{
    open_listener, Connection, Direction, Listener, LogEntry, Session, TransportKind, TransportProfile, WireError,
    ATTACH, BYE, DEFAULT_REQUEST_TIMEOUT, UDP_RETRIES,
};
