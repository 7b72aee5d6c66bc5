//! Software model of a portable, Peltier-conditioned vaccine chamber and the
//! services around it.
//!
//! - [`thermal`]: two-mass chamber/pouch plant with door and ambient coupling.
//! - [`pid`]: the firmware's PID loop, time-proportioned actuation, day/night
//!   scheduling and relay auto-tuning.
//! - [`agent`]: the per-device control loop with simulated sensors, battery,
//!   GPS, actuators and a local frame log.
//! - [`protocol`]: newline-delimited canonical frames and the store-and-forward
//!   send buffer.
//! - [`plane`]: the control-plane service (registry, ingestion, durable sample
//!   store, live fan-out, command dispatch, HTTP API, device port).
//! - [`scenario`]: declarative experiments, the logical-clock simulator, CSV
//!   traces and summary statistics.

pub mod agent;
pub mod clock;
pub mod pid;
pub mod plane;
pub mod protocol;
pub mod scenario;
pub mod thermal;
