//! Runs the simulator over a set of devices and feeds what each one heard
//! into its store.

use chrono::{DateTime, Duration, TimeZone, Utc};
use contact_sim::{run_scenario, Broadcast, RadioConfig, RssiModel, SimNode, Trace, Trajectory};

use crate::device::Device;
use crate::HarnessError;

pub fn default_start() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2020, 4, 20, 10, 0, 0).unwrap()
}

/// One participant of an encounter.
pub struct Actor<'a> {
    pub device: &'a mut Device,
    pub trajectory: Trajectory,
    /// Overrides the device's own advertising.
    pub broadcast: Option<Broadcast>,
}

impl<'a> Actor<'a> {
    pub fn at(device: &'a mut Device, x: f64, y: f64) -> Self {
        Actor { device, trajectory: Trajectory::fixed(x, y), broadcast: None }
    }

    pub fn broadcasting(mut self, broadcast: Broadcast) -> Self {
        self.broadcast = Some(broadcast);
        self
    }
}

pub fn end_of(start: DateTime<Utc>, duration_us: u64) -> DateTime<Utc> {
    start + Duration::microseconds(duration_us as i64)
}

/// Simulates the actors from `start` for `duration_us` and records every
/// sighting in the receiving device.
pub fn encounter(
    actors: &mut [Actor<'_>],
    start: DateTime<Utc>,
    duration_us: u64,
    seed: u64,
) -> Result<Trace, HarnessError> {
    let end = end_of(start, duration_us);
    let mut nodes = Vec::with_capacity(actors.len());
    for actor in actors.iter_mut() {
        actor.device.ensure_keys(start.date_naive(), end.date_naive())?;
        let broadcast = actor.broadcast.clone().unwrap_or_else(|| actor.device.broadcast());
        nodes.push(SimNode::new(actor.device.id.clone(), actor.trajectory.clone(), broadcast));
    }
    let trace = run_scenario(&RadioConfig::default(), &RssiModel::default(), &nodes, start, duration_us, seed)?;
    for s in &trace.sightings {
        actors[s.rx as usize].device.ingest(&s.tcn, trace.timestamp(s), s.rssi_dbm)?;
    }
    Ok(trace)
}
