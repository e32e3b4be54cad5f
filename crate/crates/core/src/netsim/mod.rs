//! Two-host discrete-event simulator.

pub mod scenario;
pub mod sim;
pub mod trace;

pub use scenario::{load_scenario, Scenario, ScenarioError};
pub use sim::{run_simulation, ScriptedOracle, SimError, SimOutput, SimState};
pub use trace::{read_trace, trace_to_string, write_trace, ChannelMetrics, Metrics, TraceRecord};
