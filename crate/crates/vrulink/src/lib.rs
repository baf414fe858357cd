//! Scenario engine, file formats, CLI plumbing and the live HMI gateway
//! around `vrulink-core`.

pub mod cli;
pub mod engine;
pub mod events;
pub mod hmi;
pub mod latency;
pub mod metrics;
pub mod mqtt;
pub mod noise;
pub mod scenario;
pub mod shared_bus;

pub use engine::{run, run_with_commands, ControlCommand, Engine, RunOutput, StateFrame};
pub use metrics::RunMetrics;
pub use scenario::{reference_scenario, reference_scenarios, ScenarioSpec};
