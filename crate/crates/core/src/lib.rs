pub mod bench;
pub mod cli;
pub mod gateway;
pub mod plugin;
pub mod registry;
pub mod simsensor;
pub mod testbed;
pub mod wire;
