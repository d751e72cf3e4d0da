//! Simulator output: sightings, range entries and derived statistics.

use std::collections::HashMap;
use std::io::{self, Read, Write};

use chrono::{DateTime, Duration, Utc};
use contact_core::Tcn;
use serde::{Deserialize, Serialize};

use crate::radio::RadioConfig;
use crate::SimError;

pub const CSV_HEADER: &str = "time_ms,rx_node,tx_node,tcn_hex,rssi_dbm,channel,mac";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Sighting {
    /// End of the received packet.
    pub time_us: u64,
    pub rx: u32,
    pub tx: u32,
    pub tcn: Tcn,
    pub mac: [u8; 6],
    pub rssi_dbm: i32,
    pub channel: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RangeEntry {
    pub rx: u32,
    pub tx: u32,
    pub at_us: u64,
}

#[derive(Clone, Debug)]
pub struct Trace {
    pub start: DateTime<Utc>,
    pub duration_us: u64,
    pub config: RadioConfig,
    pub node_ids: Vec<String>,
    pub sightings: Vec<Sighting>,
    pub tx_packets: Vec<u64>,
    pub scan_phases_us: Vec<u64>,
    /// First time each ordered (receiver, transmitter) pair came into range.
    pub range_entries: Vec<RangeEntry>,
}

fn fmt_ms(us: u64) -> String {
    format!("{}.{:03}", us / 1000, us % 1000)
}

impl Trace {
    pub fn timestamp(&self, s: &Sighting) -> DateTime<Utc> {
        self.start + Duration::microseconds(s.time_us as i64)
    }

    pub fn node_index(&self, id: &str) -> Option<u32> {
        self.node_ids.iter().position(|n| n == id).map(|i| i as u32)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for s in &self.sightings {
            w.serialize(CsvRow {
                time_ms: fmt_ms(s.time_us),
                rx_node: &self.node_ids[s.rx as usize],
                tx_node: &self.node_ids[s.tx as usize],
                tcn_hex: s.tcn.to_hex(),
                rssi_dbm: s.rssi_dbm,
                channel: s.channel,
                mac: hex::encode(s.mac),
            })
            .map_err(io::Error::other)?;
        }
        if self.sightings.is_empty() {
            w.write_record(CSV_HEADER.split(',')).map_err(io::Error::other)?;
        }
        w.flush()
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        buf
    }

    /// Radio-duty proxy per node.
    pub fn duty(&self) -> Vec<f64> {
        let duration_ms = self.duration_us as f64 / 1000.0;
        self.tx_packets
            .iter()
            .map(|n| self.config.duty_proxy(*n, duration_ms))
            .collect()
    }

    pub fn latency_stats(&self) -> LatencyStats {
        let mut first: HashMap<(u32, u32), u64> = HashMap::new();
        for s in &self.sightings {
            first.entry((s.rx, s.tx)).or_insert(s.time_us);
        }
        let pairs = self
            .range_entries
            .iter()
            .map(|e| PairLatency {
                rx: e.rx,
                tx: e.tx,
                range_entry_us: e.at_us,
                latency_us: first
                    .get(&(e.rx, e.tx))
                    .filter(|t| **t >= e.at_us)
                    .map(|t| t - e.at_us),
            })
            .collect();
        LatencyStats::from_pairs(pairs)
    }
}

/// One parsed CSV row, with node names instead of indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SightingRow {
    pub time_us: u64,
    pub rx: String,
    pub tx: String,
    pub tcn: Tcn,
    pub rssi_dbm: i32,
    pub channel: u8,
    pub mac: [u8; 6],
}

#[derive(Serialize, Deserialize)]
struct CsvRow<S> {
    time_ms: String,
    rx_node: S,
    tx_node: S,
    tcn_hex: String,
    rssi_dbm: i32,
    channel: u8,
    mac: String,
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<SightingRow>, SimError> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(|e| SimError::Io(e.to_string()))?;
    if header.iter().collect::<Vec<_>>().join(",") != CSV_HEADER {
        return Err(SimError::Parse { line: 1, message: "unexpected header".into() });
    }
    let mut rows = Vec::new();
    for record in r.deserialize::<CsvRow<String>>() {
        let record = record.map_err(|e| SimError::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = rows.len() + 2;
        let err = |m: &str| SimError::Parse { line, message: m.to_owned() };
        let time_us = record
            .time_ms
            .split_once('.')
            .filter(|(_, frac)| frac.len() == 3)
            .and_then(|(ms, frac)| Some(ms.parse::<u64>().ok()? * 1000 + frac.parse::<u64>().ok()?))
            .ok_or_else(|| err("time_ms needs 3 decimals"))?;
        let mut mac = [0u8; 6];
        hex::decode_to_slice(&record.mac, &mut mac).map_err(|_| err("bad mac"))?;
        rows.push(SightingRow {
            time_us,
            rx: record.rx_node,
            tx: record.tx_node,
            tcn: record.tcn_hex.parse().map_err(|_| err("bad tcn_hex"))?,
            rssi_dbm: record.rssi_dbm,
            channel: record.channel,
            mac,
        });
    }
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairLatency {
    pub rx: u32,
    pub tx: u32,
    pub range_entry_us: u64,
    /// `None` when the pair was in range but never discovered (censored).
    pub latency_us: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub pairs: Vec<PairLatency>,
    pub discovered: usize,
    pub censored: usize,
    pub min_ms: Option<f64>,
    pub median_ms: Option<f64>,
    pub p95_ms: Option<f64>,
    pub max_ms: Option<f64>,
}

/// Nearest-rank percentile of sorted data.
pub fn percentile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

impl LatencyStats {
    pub fn from_pairs(pairs: Vec<PairLatency>) -> Self {
        let mut ms: Vec<f64> = pairs
            .iter()
            .filter_map(|p| p.latency_us)
            .map(|us| us as f64 / 1000.0)
            .collect();
        ms.sort_by(f64::total_cmp);
        LatencyStats {
            discovered: ms.len(),
            censored: pairs.len() - ms.len(),
            min_ms: ms.first().copied(),
            median_ms: percentile(&ms, 50.0),
            p95_ms: percentile(&ms, 95.0),
            max_ms: ms.last().copied(),
            pairs,
        }
    }

    pub fn discovered_fraction(&self) -> f64 {
        if self.pairs.is_empty() {
            return 1.0;
        }
        self.discovered as f64 / self.pairs.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn trace(sightings: Vec<Sighting>, entries: Vec<RangeEntry>) -> Trace {
        Trace {
            start: Utc.with_ymd_and_hms(2020, 4, 20, 10, 0, 0).unwrap(),
            duration_us: 60_000_000,
            config: RadioConfig::default(),
            node_ids: vec!["a".into(), "b".into(), "c".into()],
            sightings,
            tx_packets: vec![0; 3],
            scan_phases_us: vec![0; 3],
            range_entries: entries,
        }
    }

    fn sighting(time_us: u64, rx: u32, tx: u32) -> Sighting {
        Sighting { time_us, rx, tx, tcn: Tcn::from_bytes([7; 16]), mac: [0xc1, 2, 3, 4, 5, 6], rssi_dbm: -50, channel: 1 }
    }

    #[test]
    fn latency_is_first_rx_minus_range_entry() {
        let t = trace(
            vec![sighting(3_200_000, 0, 1), sighting(4_000_000, 0, 1)],
            vec![RangeEntry { rx: 0, tx: 1, at_us: 0 }, RangeEntry { rx: 1, tx: 0, at_us: 0 }],
        );
        let stats = t.latency_stats();
        assert_eq!(stats.pairs[0].latency_us, Some(3_200_000));
        assert_eq!(stats.pairs[1].latency_us, None);
        assert_eq!(stats.censored, 1);
        assert_eq!(stats.min_ms, Some(3200.0));
        assert_eq!(stats.discovered_fraction(), 0.5);
    }

    #[test]
    fn percentiles() {
        let data: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&data, 95.0), Some(95.0));
        assert_eq!(percentile(&data, 50.0), Some(50.0));
        assert_eq!(percentile(&[], 50.0), None);
    }

    #[test]
    fn csv_round_trip() {
        let t = trace(vec![sighting(1_234_567, 2, 0)], vec![]);
        let csv = String::from_utf8(t.to_csv()).unwrap();
        assert_eq!(
            csv,
            format!("{CSV_HEADER}\n1234.567,c,a,07070707070707070707070707070707,-50,1,c10203040506\n")
        );
        let rows = read_csv(csv.as_bytes()).unwrap();
        assert_eq!(rows[0].time_us, 1_234_567);
        assert_eq!(rows[0].rx, "c");
        let bad = format!("{CSV_HEADER}\n1.000,a,b,zz,-50,1,c10203040506\n");
        assert_eq!(
            read_csv(bad.as_bytes()).unwrap_err(),
            SimError::Parse { line: 2, message: "bad tcn_hex".into() }
        );
    }
}
