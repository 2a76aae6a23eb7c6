//! A miniature declarative control plane: a versioned object store with
//! watches, instrumented controllers that propagate trace contexts, a
//! non-instrumented kubelet, and scripted operator scenarios.

pub mod controllers;
pub mod object;
pub mod runner;
pub mod scenario;
pub mod store;
pub mod trace;

pub use object::{Kind, Phase, SimObject, Spec};
pub use runner::{
    converged, run_scenario, Mode, RunOutcome, ScenarioReport, SimConfig, SimError, Simulation,
};
pub use scenario::{Scenario, ScenarioError, Step};
pub use store::{EventType, ObjectStore, StoreError, WatchEvent};
pub use trace::{read_log, Audit, LogRecord, LogWriter, LogicalClock, Tracer};
