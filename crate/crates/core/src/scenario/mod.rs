//! Scenario harness: declarative experiments run on a logical clock.
//!
//! A scenario file is TOML. Every key except `duration_s` is optional; see
//! `scenarios/README.md` for the full schema. A run steps the plant and the
//! device agent once per control period, routes telemetry and commands
//! through a control plane (embedded, or remote over TCP) and records a CSV
//! row for every uplinked sample.

mod sim;
mod spec;
mod stats;
mod uplink;

pub use sim::{
    autotune, replay_log, resolve_gains, run_to_dir, scenario_registry, Backend, OutputPaths,
    PlantUnderTest, ReplayReport, RunOutput, SimError, SimOptions, Simulation,
};
pub use spec::{
    load_scenario, ControlSection, Profile, ScenarioError, ScenarioSpec, StatsSection,
    TelemetrySection,
};
pub use stats::{
    mean, mode_stats, read_trace, sample_sd, steady_mask, summarize, ModeStats, SummaryStats,
    TraceRow, CSV_HEADER,
};
pub use uplink::{EmbeddedUplink, TcpUplink, Uplink};
