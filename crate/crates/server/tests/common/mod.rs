#![allow(dead_code)]

use std::sync::Arc;

use chrono::{DateTime, Duration, NaiveDate, TimeZone, Utc};
use contact_core::DailyKey;
use contact_server::{ManualClock, ServerConfig, TracingServer};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub const CREDENTIAL: &str = "clinic-credential";

pub fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2020, 4, 20, 9, 0, 0).unwrap()
}

pub fn config() -> ServerConfig {
    ServerConfig {
        medical_credentials: vec![CREDENTIAL.into()],
        seed: Some(7),
        ..ServerConfig::default()
    }
}

pub fn server_with(config: ServerConfig) -> (Arc<TracingServer>, Arc<ManualClock>) {
    let clock = Arc::new(ManualClock::new(t0()));
    let server = TracingServer::open(config, clock.clone()).unwrap();
    (Arc::new(server), clock)
}

pub fn keys(seed: u64, days: i64, today: NaiveDate) -> Vec<DailyKey> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..days)
        .map(|age| {
            let mut bytes = [0u8; 32];
            rng.fill_bytes(&mut bytes);
            DailyKey::from_parts(today - Duration::days(age), bytes)
        })
        .collect()
}
