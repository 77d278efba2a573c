//! Simulated sensor fleet: per-model dialects, boot delays, transports and
//! the post-configuration join.

pub mod catalog;
pub mod dialect;
mod fleet;
mod sensor;

pub use fleet::{builtin_dialects, load_dialects, load_specs, spawn_fleet, DialectSet, Fleet, FleetFileError, SpawnError};
pub use sensor::{
    run_sensor, validate_field, Fault, Lifecycle, Responder, SensorSpec, SensorState, SharedState, CONNECT_RETRY,
};
