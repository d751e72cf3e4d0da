//! Scenario files driven end to end: simulate encounters, then replay the
//! scripted steps against the server in time order.
//!
//! Step actions:
//! - `report`: the node obtains a medical TAN and uploads its keys;
//! - `proof_report`: the node checks, proves one of its contacts to the
//!   server and uploads its keys under the second-order TAN it receives;
//! - `check`: the node checks the server and the result joins the timeline.
//!
//! Each upload is followed by sealing the open batch. After the last step
//! every node checks once more; that result is the scenario's outcome.

use chrono::Duration;
use contact_server::ServerConfig;
use contact_sim::{run_scenario, Broadcast, ReplayWindow, Scenario, SimError, SimNode, Trace};

use crate::client::Backend;
use crate::device::{Device, Mode};
use crate::outcome::{ScenarioOutcome, TimelineEntry};
use crate::HarnessError;

pub const ACTIONS: [&str; 3] = ["report", "proof_report", "check"];

fn secs_to_us(s: f64) -> u64 {
    (s * 1e6).round() as u64
}

pub fn parse(text: &str) -> Result<Scenario, HarnessError> {
    let scenario = Scenario::parse(text).map_err(|e| match e {
        SimError::Parse { line, message } => HarnessError::Scenario { line, message },
        other => HarnessError::Sim(other),
    })?;
    for step in &scenario.steps {
        let line = Scenario::line(text, step.action.span());
        if !ACTIONS.contains(&step.action.get_ref().as_str()) {
            let message = format!("unknown action {:?}, expected one of {ACTIONS:?}", step.action.get_ref());
            return Err(HarnessError::Scenario { line, message });
        }
        if !(0.0..=scenario.duration_s).contains(&step.at_s) {
            return Err(HarnessError::Scenario { line, message: "step lies outside the run".into() });
        }
    }
    Ok(scenario)
}

/// Builds one keyed device per node and runs the radio simulation. Node `i`
/// gets the device seed `seed * 7919 + i`.
pub fn simulate_scenario(scenario: &Scenario) -> Result<(Trace, Vec<Device>), HarnessError> {
    let start = scenario.start;
    let end = start + Duration::microseconds(scenario.duration_us() as i64);

    let mut devices = Vec::with_capacity(scenario.nodes.len());
    for (i, spec) in scenario.nodes.iter().enumerate() {
        let mut device = Device::new(spec.id.get_ref().clone(), scenario.seed.wrapping_mul(7919).wrapping_add(i as u64));
        device.ensure_keys(start.date_naive(), end.date_naive())?;
        devices.push(device);
    }
    let ids: Vec<String> = devices.iter().map(|d| d.id.clone()).collect();
    let index = |id: &str| ids.iter().position(|d| d == id).expect("validated node id");

    let mut nodes = Vec::with_capacity(devices.len());
    for (spec, device) in scenario.nodes.iter().zip(&devices) {
        let broadcast = if spec.replay.is_empty() {
            device.broadcast()
        } else {
            let windows = spec
                .replay
                .iter()
                .map(|r| {
                    let source = &devices[index(r.source.get_ref())];
                    let captured = start + Duration::microseconds(secs_to_us(r.captured_at_s) as i64);
                    ReplayWindow {
                        from_us: secs_to_us(r.from_s),
                        to_us: secs_to_us(r.to_s),
                        tcn: source.tcn_at(captured).expect("keys cover the run"),
                    }
                })
                .collect();
            Broadcast::Replay(windows)
        };
        let mut node = SimNode::new(device.id.clone(), scenario.trajectory(spec)?, broadcast);
        node.scans = spec.scans;
        nodes.push(node);
    }
    let trace = run_scenario(&scenario.radio, &scenario.rssi, &nodes, start, scenario.duration_us(), scenario.seed)?;
    Ok((trace, devices))

}

pub fn run_e2e(text: &str, name: &str, mode: Mode, config: ServerConfig) -> Result<ScenarioOutcome, HarnessError> {
    run_e2e_with_devices(text, name, mode, config).map(|(outcome, _)| outcome)
}

/// Like [`run_e2e`], also handing back the devices in their final state.
pub fn run_e2e_with_devices(
    text: &str,
    name: &str,
    mode: Mode,
    config: ServerConfig,
) -> Result<(ScenarioOutcome, Vec<Device>), HarnessError> {
    let scenario = parse(text)?;
    let start = scenario.start;
    let end = start + Duration::microseconds(scenario.duration_us() as i64);
    let (trace, mut devices) = simulate_scenario(&scenario)?;
    let ids: Vec<String> = devices.iter().map(|d| d.id.clone()).collect();
    let index = |id: &str| ids.iter().position(|d| d == id).expect("validated node id");

    let backend = Backend::start(config, start)?;
    let min_query = backend.server.config().min_query;
    let mut outcome = ScenarioOutcome::new(name, Some(mode));
    outcome.trials = 1;
    let mut steps: Vec<_> = scenario.steps.iter().collect();
    steps.sort_by(|a, b| a.at_s.total_cmp(&b.at_s));

    let mut delivered = 0;
    let mut uploads = Vec::new();
    let mut sessions = 0;
    for step in steps {
        let t_us = secs_to_us(step.at_s);
        while let Some(s) = trace.sightings.get(delivered).filter(|s| s.time_us <= t_us) {
            devices[s.rx as usize].ingest(&s.tcn, trace.timestamp(s), s.rssi_dbm)?;
            delivered += 1;
        }
        let now = start + Duration::microseconds(t_us as i64);
        backend.clock.set(now);
        let device = &mut devices[index(step.node.get_ref())];
        let action = step.action.get_ref().as_str();
        let tan = match action {
            "report" => Some(
                backend
                    .client
                    .issue_tan(backend.credential())?
                    .map_err(HarnessError::Rejected)?,
            ),
            "proof_report" | "check" => {
                let exposure = device.check(&backend.client, mode, min_query)?;
                sessions += exposure.sessions;
                outcome.timeline.push(TimelineEntry {
                    at_s: step.at_s,
                    node: device.id.clone(),
                    action: action.to_owned(),
                    notifications: exposure.notifications(&device.id),
                });
                if action == "check" {
                    None
                } else {
                    Some(device.prove_contact(&backend.client)?.map_err(HarnessError::Rejected)?)
                }
            }
            _ => unreachable!("validated action"),
        };
        if let Some(tan) = tan {
            let accepted = device.report(&backend.client, &tan.tan, now)?.map_err(HarnessError::Rejected)?;
            backend.server.seal_batch()?;
            uploads.push(serde_json::json!({ "node": device.id, "kind": tan.kind, "accepted_ce_tcns": accepted }));
        }
    }
    for s in &trace.sightings[delivered..] {
        devices[s.rx as usize].ingest(&s.tcn, trace.timestamp(s), s.rssi_dbm)?;
    }
    backend.clock.set(end);
    for device in &mut devices {
        let exposure = device.check(&backend.client, mode, min_query)?;
        sessions += exposure.sessions;
        outcome.notifications.extend(exposure.notifications(&device.id));
    }
    outcome.metric("sightings", trace.sightings.len());
    outcome.metric(
        "contacts",
        devices.iter().map(|d| (d.id.clone(), d.contacts().len())).collect::<std::collections::BTreeMap<_, _>>(),
    );
    outcome.metric("uploads", uploads);
    outcome.metric("psi_sessions", sessions);
    Ok((outcome, devices))
}
