//! Event loop. Times are integer microseconds from the scenario start.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use chrono::{DateTime, Duration, Utc};
use contact_core::Tcn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::mobility::{distance, range_entry};
use crate::node::SimNode;
use crate::radio::{ms_to_us, RadioConfig, RssiModel};
use crate::trace::{RangeEntry, Sighting, Trace};
use crate::SimError;

/// Ties at one instant resolve in this order, then by node index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum EventKind {
    AdvTx,
    ScanOpen,
    ScanClose,
    Rx,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Event {
    time_us: u64,
    kind: EventKind,
    node: u32,
    /// Transmission index for `Rx`.
    seq: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Transmission {
    pub node: u32,
    pub start_us: u64,
    pub end_us: u64,
    pub channel: u8,
    pub tcn: Tcn,
}

/// Two packets destroy each other at a receiver when they share a channel
/// and overlap in time.
pub fn collides(a: &Transmission, b: &Transmission) -> bool {
    a.channel == b.channel && a.start_us < b.end_us && b.start_us < a.end_us
}

#[derive(Clone, Copy, Debug, Default)]
struct Scanner {
    open_since: Option<u64>,
    channel: u8,
    window: u64,
}

pub fn run_scenario(
    config: &RadioConfig,
    rssi: &RssiModel,
    nodes: &[SimNode],
    start: DateTime<Utc>,
    duration_us: u64,
    seed: u64,
) -> Result<Trace, SimError> {
    config.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let ta = ms_to_us(config.adv_interval_ms);
    let jitter = ms_to_us(config.adv_jitter_max_ms);
    let ts = ms_to_us(config.scan_interval_ms);
    let ds = ms_to_us(config.scan_window_ms);
    let tx_dur = ms_to_us(config.tx_duration_ms);

    let mut queue = BinaryHeap::new();
    let mut scanners = vec![Scanner::default(); nodes.len()];
    let mut scan_phases = vec![0u64; nodes.len()];
    for (i, node) in nodes.iter().enumerate() {
        let idx = i as u32;
        let adv_phase = node.adv_phase_us.unwrap_or_else(|| rng.gen_range(0..ta));
        let scan_phase = node.scan_phase_us.unwrap_or_else(|| rng.gen_range(0..ts));
        let offset: u8 = rng.gen_range(0..config.channels);
        scanners[i].channel = offset;
        scan_phases[i] = scan_phase;
        queue.push(Reverse(Event { time_us: adv_phase, kind: EventKind::AdvTx, node: idx, seq: 0 }));
        if node.scans {
            queue.push(Reverse(Event { time_us: scan_phase, kind: EventKind::ScanOpen, node: idx, seq: 0 }));
        }
    }

    let mut txs: Vec<Transmission> = Vec::new();
    let mut recent: Vec<VecDeque<usize>> = vec![VecDeque::new(); usize::from(config.channels)];
    let mut tx_packets = vec![0u64; nodes.len()];
    let mut sightings = Vec::new();
    let wall = |t_us: u64| start + Duration::microseconds(t_us as i64);

    while let Some(Reverse(ev)) = queue.pop() {
        if ev.time_us > duration_us {
            break;
        }
        let n = ev.node as usize;
        match ev.kind {
            EventKind::AdvTx => {
                if let Some(tcn) = nodes[n].tcn_at(wall(ev.time_us), ev.time_us) {
                    for c in 0..config.channels {
                        let start_us = ev.time_us + u64::from(c) * tx_dur;
                        let tx = Transmission { node: ev.node, start_us, end_us: start_us + tx_dur, channel: c, tcn };
                        let idx = txs.len();
                        txs.push(tx);
                        recent[usize::from(c)].push_back(idx);
                        tx_packets[n] += 1;
                        queue.push(Reverse(Event { time_us: tx.end_us, kind: EventKind::Rx, node: ev.node, seq: idx }));
                    }
                }
                let next = ev.time_us + ta + rng.gen_range(0..=jitter);
                queue.push(Reverse(Event { time_us: next, kind: EventKind::AdvTx, node: ev.node, seq: 0 }));
            }
            EventKind::ScanOpen => {
                let s = &mut scanners[n];
                s.open_since = Some(ev.time_us);
                queue.push(Reverse(Event { time_us: ev.time_us + ds, kind: EventKind::ScanClose, node: ev.node, seq: 0 }));
            }
            EventKind::ScanClose => {
                let s = &mut scanners[n];
                let opened = s.open_since.take().expect("close follows open");
                s.window += 1;
                s.channel = (s.channel + 1) % config.channels;
                queue.push(Reverse(Event { time_us: opened + ts, kind: EventKind::ScanOpen, node: ev.node, seq: 0 }));
            }
            EventKind::Rx => {
                let tx = txs[ev.seq];
                let lane = &mut recent[usize::from(tx.channel)];
                // Nothing that ended a packet-length ago can overlap anything pending.
                while lane.front().is_some_and(|i| txs[*i].end_us + tx_dur <= ev.time_us) {
                    lane.pop_front();
                }
                let tx_pos = nodes[n].trajectory.position(tx.start_us);
                for (s_idx, scanner) in scanners.iter().enumerate() {
                    if s_idx == n || scanner.channel != tx.channel {
                        continue;
                    }
                    match scanner.open_since {
                        Some(open) if open <= tx.start_us => {}
                        _ => continue,
                    }
                    let s_pos = nodes[s_idx].trajectory.position(tx.start_us);
                    let d = distance(tx_pos, s_pos);
                    if d > config.range_m {
                        continue;
                    }
                    let collided = lane.iter().map(|i| &txs[*i]).any(|other| {
                        other.node != tx.node
                            && other.node as usize != s_idx
                            && collides(&tx, other)
                            && distance(nodes[other.node as usize].trajectory.position(other.start_us), s_pos)
                                <= config.range_m
                    });
                    if collided {
                        continue;
                    }
                    let at = wall(tx.start_us);
                    sightings.push(Sighting {
                        time_us: tx.end_us,
                        rx: s_idx as u32,
                        tx: tx.node,
                        tcn: tx.tcn,
                        mac: nodes[n].mac_at(at),
                        rssi_dbm: rssi.sample(d.max(0.1), &mut rng)?,
                        channel: tx.channel,
                    });
                }
            }
        }
    }

    let mut range_entries = Vec::new();
    for (a, na) in nodes.iter().enumerate() {
        for (b, nb) in nodes.iter().enumerate() {
            if a == b || !na.scans {
                continue;
            }
            if let Some(at_us) = range_entry(&na.trajectory, &nb.trajectory, config.range_m, duration_us) {
                range_entries.push(RangeEntry { rx: a as u32, tx: b as u32, at_us });
            }
        }
    }

    Ok(Trace {
        start,
        duration_us,
        config: *config,
        node_ids: nodes.iter().map(|n| n.id.clone()).collect(),
        sightings,
        tx_packets,
        scan_phases_us: scan_phases,
        range_entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tx(start_us: u64, channel: u8) -> Transmission {
        Transmission { node: 0, start_us, end_us: start_us + 1000, channel, tcn: Tcn::from_bytes([0; 16]) }
    }

    #[test]
    fn collision_rule() {
        assert!(!collides(&tx(0, 0), &tx(1000, 0)));
        assert!(!collides(&tx(0, 0), &tx(5000, 0)));
        assert!(collides(&tx(0, 0), &tx(0, 0)));
        assert!(collides(&tx(0, 0), &tx(999, 0)));
        assert!(!collides(&tx(0, 0), &tx(0, 1)));
    }

    #[test]
    fn event_order_breaks_ties_by_kind_then_node() {
        let mut heap = BinaryHeap::new();
        for (kind, node) in [(EventKind::Rx, 0), (EventKind::AdvTx, 2), (EventKind::ScanClose, 1), (EventKind::AdvTx, 1)] {
            heap.push(Reverse(Event { time_us: 5, kind, node, seq: 0 }));
        }
        let order: Vec<(EventKind, u32)> =
            std::iter::from_fn(|| heap.pop().map(|Reverse(e)| (e.kind, e.node))).collect();
        assert_eq!(
            order,
            vec![(EventKind::AdvTx, 1), (EventKind::AdvTx, 2), (EventKind::ScanClose, 1), (EventKind::Rx, 0)]
        );
    }
}
