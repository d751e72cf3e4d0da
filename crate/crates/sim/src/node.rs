use std::collections::BTreeMap;

use chrono::{DateTime, NaiveDate, Utc};
use contact_core::{DailyKey, Tcn, Tin};
use sha2::{Digest, Sha256};

use crate::mobility::Trajectory;

/// What a node puts in its advertisements.
#[derive(Clone, Debug)]
pub enum Broadcast {
    /// Its own TCN for the current interval, from the key of the current day.
    Keys(BTreeMap<NaiveDate, DailyKey>),
    /// Somebody else's TCN, re-sent during the given windows; silent otherwise.
    Replay(Vec<ReplayWindow>),
    Silent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReplayWindow {
    pub from_us: u64,
    pub to_us: u64,
    pub tcn: Tcn,
}

#[derive(Clone, Debug)]
pub struct SimNode {
    pub id: String,
    pub trajectory: Trajectory,
    pub broadcast: Broadcast,
    pub scans: bool,
    /// Fixed timing offsets; drawn from the run seed when `None`.
    pub adv_phase_us: Option<u64>,
    pub scan_phase_us: Option<u64>,
}

impl SimNode {
    pub fn new(id: impl Into<String>, trajectory: Trajectory, broadcast: Broadcast) -> Self {
        SimNode {
            id: id.into(),
            trajectory,
            broadcast,
            scans: true,
            adv_phase_us: None,
            scan_phase_us: None,
        }
    }

    /// The TCN advertised at sim time `t_us`, i.e. wall time `at`.
    pub fn tcn_at(&self, at: DateTime<Utc>, t_us: u64) -> Option<Tcn> {
        match &self.broadcast {
            Broadcast::Keys(keys) => keys.get(&at.date_naive()).map(|k| k.tcn(Tin::of(at))),
            Broadcast::Replay(windows) => windows
                .iter()
                .find(|w| w.from_us <= t_us && t_us < w.to_us)
                .map(|w| w.tcn),
            Broadcast::Silent => None,
        }
    }

    /// Link-layer address seen by any listener. It changes exactly at
    /// interval boundaries, together with the TCN.
    pub fn mac_at(&self, at: DateTime<Utc>) -> [u8; 6] {
        let mut h = Sha256::new();
        h.update(b"ble-mac");
        h.update(self.id.as_bytes());
        h.update(at.date_naive().to_string().as_bytes());
        h.update(Tin::of(at).value().to_be_bytes());
        let d = h.finalize();
        let mut mac = [0u8; 6];
        mac.copy_from_slice(&d[..6]);
        // Random static address: two top bits set.
        mac[0] |= 0xc0;
        mac
    }
}
