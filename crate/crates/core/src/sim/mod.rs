//! Scenario-driven simulation of the whole system.

pub mod report;
pub mod scenario;
pub mod world;

pub use report::{BootRecord, FileReport, FileStatus, RebootRecord, RunReport};
pub use scenario::{mission_sync_config, ChannelSpec, Expectation, FaultAction, Profile, Scenario, ScenarioError, ScheduledFault, BUILTIN};
pub use world::{run_scenario, SimError, World, SYSTEM_PROCESSES, TICK};
