//! Link-layer timing and the log-distance RSSI model.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::SimError;

/// Advertising and scanning parameters. Times in milliseconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioConfig {
    pub adv_interval_ms: f64,
    /// Each advertising event is delayed by a uniform draw from `[0, max]`.
    pub adv_jitter_max_ms: f64,
    pub scan_interval_ms: f64,
    pub scan_window_ms: f64,
    pub tx_duration_ms: f64,
    /// Every advertising event sends one packet per channel, back to back.
    pub channels: u8,
    pub range_m: f64,
}

impl Default for RadioConfig {
    fn default() -> Self {
        RadioConfig {
            adv_interval_ms: 250.0,
            adv_jitter_max_ms: 10.0,
            scan_interval_ms: 4096.0,
            scan_window_ms: 1024.0,
            tx_duration_ms: 1.0,
            channels: 3,
            range_m: 30.0,
        }
    }
}

/// On-air time of a full 31-byte ADV_IND at 1 Mbit/s: 47 bytes at 8 µs each.
pub const ADV_IND_AIRTIME_MS: f64 = 0.376;

pub(crate) fn ms_to_us(ms: f64) -> u64 {
    (ms * 1000.0).round() as u64
}

impl RadioConfig {
    /// Defaults with packets lasting as long as a real advertisement.
    pub fn with_real_airtime() -> Self {
        RadioConfig { tx_duration_ms: ADV_IND_AIRTIME_MS, ..RadioConfig::default() }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.to_owned()));
        if !(self.adv_interval_ms > 0.0) {
            return bad("adv_interval_ms must be positive");
        }
        if !(self.adv_jitter_max_ms >= 0.0) {
            return bad("adv_jitter_max_ms must not be negative");
        }
        if !(self.scan_window_ms > 0.0 && self.scan_window_ms <= self.scan_interval_ms) {
            return bad("need 0 < scan_window_ms <= scan_interval_ms");
        }
        if !(self.tx_duration_ms > 0.0) {
            return bad("tx_duration_ms must be positive");
        }
        if self.channels == 0 {
            return bad("channels must be at least 1");
        }
        if !(self.range_m > 0.0) {
            return bad("range_m must be positive");
        }
        Ok(())
    }

    /// Radio-on fraction: scan duty plus transmit airtime.
    pub fn duty_proxy(&self, tx_packets: u64, duration_ms: f64) -> f64 {
        self.scan_window_ms / self.scan_interval_ms
            + tx_packets as f64 * self.tx_duration_ms / duration_ms
    }
}

/// `P0 - 10 n log10(d) + N(0, sigma^2)`, rounded and clamped.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RssiModel {
    pub p0_dbm: f64,
    pub path_loss_exponent: f64,
    pub sigma_db: f64,
    pub min_dbm: i32,
    pub max_dbm: i32,
}

impl Default for RssiModel {
    fn default() -> Self {
        RssiModel {
            p0_dbm: -45.0,
            path_loss_exponent: 2.2,
            sigma_db: 4.0,
            min_dbm: -120,
            max_dbm: -20,
        }
    }
}

impl RssiModel {
    pub fn mean_dbm(&self, distance_m: f64) -> Result<f64, SimError> {
        if !(distance_m > 0.0) {
            return Err(SimError::Distance(distance_m));
        }
        Ok(self.p0_dbm - 10.0 * self.path_loss_exponent * distance_m.log10())
    }

    pub fn sample<R: Rng + ?Sized>(&self, distance_m: f64, rng: &mut R) -> Result<i32, SimError> {
        let mean = self.mean_dbm(distance_m)?;
        let noise = if self.sigma_db > 0.0 {
            Normal::new(0.0, self.sigma_db)
                .map_err(|e| SimError::Config(e.to_string()))?
                .sample(rng)
        } else {
            0.0
        };
        Ok(((mean + noise).round() as i32).clamp(self.min_dbm, self.max_dbm))
    }
}
