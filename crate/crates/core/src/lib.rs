//! Discrete-event simulator of 802.11-style medium access, comparing a
//! conventional contention MAC with one that splits control and data planes.

pub mod config;
pub mod engine;
pub mod frame;
pub mod mac;
pub mod medium;
pub mod run;
pub mod scenarios;
pub mod summary;
pub mod trace;
pub mod validate;
pub mod world;

pub use config::{ConfigError, RunSpec, ScenarioConfig, VariantName};
pub use run::{run_config, run_scenario, sweep, RunError, RunResult};
pub use summary::{summarize, Summary};
pub use world::{simulate, World};
