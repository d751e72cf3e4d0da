//! Discrete-event simulator of BLE advertising, scanning and RSSI.
//!
//! Nodes advertise every `Ta + U[0, jitter]` on each advertising channel in
//! turn and scan one channel for `ds` out of every `Ts`, rotating channels
//! between windows. A packet is received when it lies entirely inside an open
//! window on its channel, the receiver is in range, and no other in-range
//! transmission overlaps it on that channel.

// `!(x > 0.0)` style checks are meant to reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod engine;
pub mod experiments;
pub mod mobility;
pub mod node;
pub mod radio;
pub mod scenario;
pub mod trace;

pub use engine::{collides, run_scenario, Transmission};
pub use mobility::{Trajectory, Waypoint};
pub use node::{Broadcast, ReplayWindow, SimNode};
pub use radio::{RadioConfig, RssiModel};
pub use scenario::Scenario;
pub use trace::{LatencyStats, PairLatency, Sighting, Trace};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("distance must be positive, got {0}")]
    Distance(f64),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("io: {0}")]
    Io(String),
}
