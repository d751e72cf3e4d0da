//! Standard discovery experiments: a close pair and a dense crowd.

use std::collections::BTreeMap;

use chrono::{DateTime, Duration, TimeZone, Utc};
use contact_core::DailyKey;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::engine::run_scenario;
use crate::mobility::Trajectory;
use crate::node::{Broadcast, SimNode};
use crate::radio::{RadioConfig, RssiModel};
use crate::trace::{percentile, Trace};
use crate::SimError;

pub fn default_start() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2020, 4, 20, 10, 0, 0).unwrap()
}

/// A node advertising its own keys for every day the run touches.
pub fn keyed_node(id: String, trajectory: Trajectory, start: DateTime<Utc>, duration_us: u64, seed: u64) -> SimNode {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut keys = BTreeMap::new();
    let last = (start + Duration::microseconds(duration_us as i64)).date_naive();
    let mut day = start.date_naive();
    while day <= last {
        keys.insert(day, DailyKey::generate(day, &mut rng).expect("ChaCha never fails"));
        day = day.succ_opt().expect("date in range");
    }
    SimNode::new(id, trajectory, Broadcast::Keys(keys))
}

/// `n` nodes on a circle of the given diameter, all mutually in range.
pub fn colocated(n: usize, diameter_m: f64, start: DateTime<Utc>, duration_us: u64, seed: u64) -> Vec<SimNode> {
    (0..n)
        .map(|i| {
            let angle = std::f64::consts::TAU * i as f64 / n as f64;
            let r = diameter_m / 2.0;
            let t = Trajectory::fixed(r * angle.cos(), r * angle.sin());
            keyed_node(format!("n{i}"), t, start, duration_us, seed.wrapping_mul(1_000_003).wrapping_add(i as u64))
        })
        .collect()
}

pub fn run_colocated(
    config: &RadioConfig,
    n: usize,
    diameter_m: f64,
    duration_us: u64,
    seed: u64,
) -> Result<Trace, SimError> {
    let start = default_start();
    let nodes = colocated(n, diameter_m, start, duration_us, seed);
    run_scenario(config, &RssiModel::default(), &nodes, start, duration_us, seed)
}

#[derive(Clone, Debug, Serialize)]
pub struct PairSweep {
    pub runs: usize,
    /// Mutual discovery latency per run: the later of the two directions.
    pub latencies_ms: Vec<Option<f64>>,
    pub undiscovered: usize,
    pub p95_ms: Option<f64>,
    pub median_ms: Option<f64>,
    pub max_ms: Option<f64>,
    pub under_5s_fraction: f64,
    pub duty_proxy: f64,
}

/// Two nodes 1 m apart for 60 s, one run per seed.
pub fn pair_sweep(config: &RadioConfig, seeds: std::ops::Range<u64>) -> Result<PairSweep, SimError> {
    let mut latencies = Vec::new();
    let mut duty = 0.0;
    for seed in seeds {
        let trace = run_colocated(config, 2, 1.0, 60_000_000, seed)?;
        let stats = trace.latency_stats();
        let mutual = stats
            .pairs
            .iter()
            .map(|p| p.latency_us)
            .collect::<Option<Vec<_>>>()
            .and_then(|v| v.into_iter().max())
            .map(|us| us as f64 / 1000.0);
        latencies.push(mutual);
        duty += trace.duty().iter().sum::<f64>() / 2.0;
    }
    let runs = latencies.len();
    // Undiscovered runs rank above every finite latency.
    let mut ranked: Vec<f64> = latencies.iter().map(|l| l.unwrap_or(f64::INFINITY)).collect();
    ranked.sort_by(f64::total_cmp);
    let finite = |v: Option<f64>| v.filter(|x| x.is_finite());
    Ok(PairSweep {
        runs,
        undiscovered: latencies.iter().filter(|l| l.is_none()).count(),
        p95_ms: finite(percentile(&ranked, 95.0)),
        median_ms: finite(percentile(&ranked, 50.0)),
        max_ms: finite(ranked.last().copied()),
        under_5s_fraction: ranked.iter().filter(|l| **l < 5000.0).count() as f64 / runs.max(1) as f64,
        duty_proxy: duty / runs.max(1) as f64,
        latencies_ms: latencies,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct CrowdSweep {
    pub nodes: usize,
    pub runs: usize,
    pub fractions: Vec<f64>,
    pub mean_fraction: f64,
    pub min_fraction: f64,
}

/// `n` co-located nodes for `duration_us`; fraction of ordered pairs
/// discovered, per seed.
pub fn crowd_sweep(
    config: &RadioConfig,
    n: usize,
    duration_us: u64,
    seeds: std::ops::Range<u64>,
) -> Result<CrowdSweep, SimError> {
    let mut fractions = Vec::new();
    for seed in seeds {
        let trace = run_colocated(config, n, 2.0, duration_us, seed)?;
        fractions.push(trace.latency_stats().discovered_fraction());
    }
    let runs = fractions.len();
    Ok(CrowdSweep {
        nodes: n,
        runs,
        mean_fraction: fractions.iter().sum::<f64>() / runs.max(1) as f64,
        min_fraction: fractions.iter().copied().fold(f64::INFINITY, f64::min),
        fractions,
    })
}
