//! Device-side state: own daily keys, the TCNs advertised from them, and the
//! encounters observed from other devices.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Nonce};
use chrono::{DateTime, Duration, NaiveDate, Utc};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};

use crate::tcn::{observe, CeTcn, DailyKey, Tcn, TcnError, Tin};

pub const RSSI_MIN_DBM: i32 = -120;
pub const RSSI_MAX_DBM: i32 = 0;

const SNAPSHOT_MAGIC: &[u8; 4] = b"CTS1";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("rssi {0} dBm outside [-120, 0]")]
    RssiOutOfRange(i32),
    #[error("nothing to report")]
    NothingToReport,
    #[error("retention window must be 14 or 21 days, got {0}")]
    InvalidWindow(u32),
    #[error(transparent)]
    Tcn(#[from] TcnError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed record on line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("store file is corrupt or the device secret is wrong")]
    Decrypt,
}

/// Coarse exposure level; ordered so that `High` compares greatest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExposureCategory {
    None,
    Low,
    Medium,
    High,
}

impl ExposureCategory {
    /// Categories that count as a contact, strongest first.
    pub const CONTACT: [ExposureCategory; 3] = [
        ExposureCategory::High,
        ExposureCategory::Medium,
        ExposureCategory::Low,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExposureCategory::None => "NONE",
            ExposureCategory::Low => "LOW",
            ExposureCategory::Medium => "MEDIUM",
            ExposureCategory::High => "HIGH",
        }
    }
}

/// Duration/RSSI decision table for [`ExposureCategory`].
///
/// Durations are measured inside one 10-minute interval, so the high bar
/// sits at 9 minutes: a contact spanning a whole interval still loses the
/// time before its first and after its last sighting.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExposureThresholds {
    pub high_secs: f64,
    pub high_rssi_dbm: f64,
    pub medium_secs: f64,
    pub medium_rssi_dbm: f64,
    pub low_secs: f64,
}

impl Default for ExposureThresholds {
    fn default() -> Self {
        ExposureThresholds {
            high_secs: 540.0,
            high_rssi_dbm: -65.0,
            medium_secs: 300.0,
            medium_rssi_dbm: -80.0,
            low_secs: 60.0,
        }
    }
}

impl ExposureThresholds {
    pub fn classify(&self, duration_secs: f64, median_rssi_dbm: f64) -> ExposureCategory {
        if duration_secs >= self.high_secs && median_rssi_dbm >= self.high_rssi_dbm {
            ExposureCategory::High
        } else if duration_secs >= self.medium_secs && median_rssi_dbm >= self.medium_rssi_dbm {
            ExposureCategory::Medium
        } else if duration_secs >= self.low_secs {
            ExposureCategory::Low
        } else {
            ExposureCategory::None
        }
    }
}

/// How many days of keys and encounters are kept.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct RetentionPolicy {
    window_days: u32,
}

impl Default for RetentionPolicy {
    fn default() -> Self {
        RetentionPolicy { window_days: 14 }
    }
}

impl TryFrom<u32> for RetentionPolicy {
    type Error = StoreError;

    fn try_from(window_days: u32) -> Result<Self, Self::Error> {
        RetentionPolicy::new(window_days)
    }
}

impl From<RetentionPolicy> for u32 {
    fn from(policy: RetentionPolicy) -> u32 {
        policy.window_days
    }
}

impl RetentionPolicy {
    pub fn new(window_days: u32) -> Result<Self, StoreError> {
        match window_days {
            14 | 21 => Ok(RetentionPolicy { window_days }),
            other => Err(StoreError::InvalidWindow(other)),
        }
    }

    pub fn window_days(self) -> u32 {
        self.window_days
    }

    /// A date is retained while it is fewer than `window_days` days old.
    pub fn retains(self, date: NaiveDate, today: NaiveDate) -> bool {
        (today - date).num_days() < i64::from(self.window_days)
    }

    /// Timestamp variant used for server-side batches.
    pub fn retains_instant(self, at: DateTime<Utc>, now: DateTime<Utc>) -> bool {
        now - at < Duration::days(i64::from(self.window_days))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RssiSample {
    pub at: DateTime<Utc>,
    pub dbm: i32,
}

/// Everything observed about one ceTCN.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncounterRecord {
    pub ce_tcn: CeTcn,
    pub date: NaiveDate,
    pub tin: Tin,
    pub first_seen: DateTime<Utc>,
    pub last_seen: DateTime<Utc>,
    pub rssi_samples: Vec<RssiSample>,
}

impl EncounterRecord {
    pub fn duration(&self) -> Duration {
        self.last_seen - self.first_seen
    }

    pub fn duration_secs(&self) -> f64 {
        self.duration().num_milliseconds() as f64 / 1000.0
    }

    pub fn median_rssi(&self) -> f64 {
        let mut values: Vec<i32> = self.rssi_samples.iter().map(|s| s.dbm).collect();
        values.sort_unstable();
        let n = values.len();
        if n % 2 == 1 {
            f64::from(values[n / 2])
        } else {
            (f64::from(values[n / 2 - 1]) + f64::from(values[n / 2])) / 2.0
        }
    }

    fn add_sample(&mut self, sample: RssiSample) {
        let pos = self.rssi_samples.partition_point(|s| *s <= sample);
        self.rssi_samples.insert(pos, sample);
        self.first_seen = self.first_seen.min(sample.at);
        self.last_seen = self.last_seen.max(sample.at);
    }
}

/// One of our own TCNs and the interval it was advertised in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdvertisedTcn {
    pub date: NaiveDate,
    pub tin: Tin,
    pub tcn: Tcn,
}

/// Keys uploaded when reporting an infection, oldest first.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportPayload {
    pub keys: Vec<DailyKey>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct EncounterStore {
    keys: BTreeMap<NaiveDate, DailyKey>,
    advertised: Vec<AdvertisedTcn>,
    records: BTreeMap<CeTcn, EncounterRecord>,
    rejected_sightings: u64,
    thresholds: ExposureThresholds,
}

impl EncounterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_thresholds(thresholds: ExposureThresholds) -> Self {
        EncounterStore {
            thresholds,
            ..Self::default()
        }
    }

    pub fn thresholds(&self) -> &ExposureThresholds {
        &self.thresholds
    }

    /// The key for `date`, drawing one if the day has none yet.
    pub fn key_for<R: RngCore + CryptoRng + ?Sized>(
        &mut self,
        date: NaiveDate,
        rng: &mut R,
    ) -> Result<&DailyKey, StoreError> {
        match self.keys.entry(date) {
            Entry::Occupied(slot) => Ok(slot.into_mut()),
            Entry::Vacant(slot) => Ok(slot.insert(DailyKey::generate(date, rng)?)),
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &DailyKey> {
        self.keys.values()
    }

    /// TCN to advertise at `now`; logs it in the advertised history.
    pub fn advertise<R: RngCore + CryptoRng + ?Sized>(
        &mut self,
        now: DateTime<Utc>,
        rng: &mut R,
    ) -> Result<Tcn, StoreError> {
        let date = now.date_naive();
        let tin = Tin::of(now);
        let tcn = self.key_for(date, rng)?.tcn(tin);
        let entry = AdvertisedTcn { date, tin, tcn };
        if self.advertised.last() != Some(&entry) {
            self.advertised.push(entry);
        }
        Ok(tcn)
    }

    pub fn advertised(&self) -> &[AdvertisedTcn] {
        &self.advertised
    }

    pub fn record_sighting(
        &mut self,
        raw_tcn: &Tcn,
        timestamp: DateTime<Utc>,
        rssi_dbm: i32,
    ) -> Result<&EncounterRecord, StoreError> {
        if !(RSSI_MIN_DBM..=RSSI_MAX_DBM).contains(&rssi_dbm) {
            self.rejected_sightings += 1;
            return Err(StoreError::RssiOutOfRange(rssi_dbm));
        }
        let (date, tin, ce_tcn) = observe(raw_tcn, timestamp);
        let sample = RssiSample {
            at: timestamp,
            dbm: rssi_dbm,
        };
        let record = self
            .records
            .entry(ce_tcn)
            .and_modify(|r| r.add_sample(sample))
            .or_insert_with(|| EncounterRecord {
                ce_tcn,
                date,
                tin,
                first_seen: timestamp,
                last_seen: timestamp,
                rssi_samples: vec![sample],
            });
        Ok(record)
    }

    pub fn rejected_sightings(&self) -> u64 {
        self.rejected_sightings
    }

    pub fn records(&self) -> impl Iterator<Item = &EncounterRecord> {
        self.records.values()
    }

    pub fn record(&self, ce_tcn: &CeTcn) -> Option<&EncounterRecord> {
        self.records.get(ce_tcn)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Drops encounters, keys and advertised TCNs that fell out of the
    /// retention window. Returns the number of encounter records removed.
    pub fn purge_expired(&mut self, now: DateTime<Utc>, policy: RetentionPolicy) -> usize {
        let today = now.date_naive();
        let before = self.records.len();
        self.records.retain(|_, r| policy.retains(r.date, today));
        self.keys.retain(|date, _| policy.retains(*date, today));
        self.advertised.retain(|a| policy.retains(a.date, today));
        before - self.records.len()
    }

    pub fn classify_exposures(&self) -> BTreeMap<CeTcn, ExposureCategory> {
        self.records
            .iter()
            .map(|(ce, r)| (*ce, self.thresholds.classify(r.duration_secs(), r.median_rssi())))
            .collect()
    }

    /// Keys inside the retention window, oldest first.
    pub fn prepare_report(
        &self,
        policy: RetentionPolicy,
        now: DateTime<Utc>,
    ) -> Result<ReportPayload, StoreError> {
        let today = now.date_naive();
        let keys: Vec<DailyKey> = self
            .keys
            .values()
            .filter(|k| k.date() <= today && policy.retains(k.date(), today))
            .cloned()
            .collect();
        if keys.is_empty() {
            return Err(StoreError::NothingToReport);
        }
        Ok(ReportPayload { keys })
    }

    /// Replaces today's key once a report has been acknowledged. TCNs
    /// already advertised stay in the history; new ones come from the fresh key.
    pub fn rotate_after_report<R: RngCore + CryptoRng + ?Sized>(
        &mut self,
        now: DateTime<Utc>,
        rng: &mut R,
    ) -> Result<DailyKey, StoreError> {
        let date = now.date_naive();
        let fresh = DailyKey::generate(date, rng)?;
        self.keys.insert(date, fresh.clone());
        Ok(fresh)
    }

    /// Writes the store encrypted under `device_secret`.
    pub fn save<R: RngCore + CryptoRng + ?Sized>(
        &self,
        path: &Path,
        device_secret: &[u8; 32],
        rng: &mut R,
    ) -> Result<(), StoreError> {
        let plain = serde_json::to_vec(self).expect("store serializes");
        let cipher = ChaCha20Poly1305::new(device_secret.into());
        let mut nonce = [0u8; 12];
        rng.try_fill_bytes(&mut nonce).map_err(TcnError::from)?;
        let sealed = cipher
            .encrypt(Nonce::from_slice(&nonce), plain.as_slice())
            .expect("encryption of in-memory buffer");

        let tmp = path.with_extension("tmp");
        {
            let mut file = std::fs::File::create(&tmp)?;
            file.write_all(SNAPSHOT_MAGIC)?;
            file.write_all(&nonce)?;
            file.write_all(&sealed)?;
            file.sync_all()?;
        }
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path, device_secret: &[u8; 32]) -> Result<Self, StoreError> {
        let raw = std::fs::read(path)?;
        if raw.len() < 16 || &raw[..4] != SNAPSHOT_MAGIC {
            return Err(StoreError::Decrypt);
        }
        let cipher = ChaCha20Poly1305::new(device_secret.into());
        let plain = cipher
            .decrypt(Nonce::from_slice(&raw[4..16]), &raw[16..])
            .map_err(|_| StoreError::Decrypt)?;
        serde_json::from_slice(&plain).map_err(|_| StoreError::Decrypt)
    }

    /// One JSON record per line.
    pub fn export_records<W: Write>(&self, mut out: W) -> Result<(), StoreError> {
        for record in self.records.values() {
            serde_json::to_writer(&mut out, record).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Merges records produced by [`export_records`](Self::export_records).
    pub fn import_records<R: BufRead>(&mut self, input: R) -> Result<usize, StoreError> {
        let mut imported = 0;
        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: EncounterRecord =
                serde_json::from_str(&line).map_err(|e| StoreError::Parse {
                    line: idx + 1,
                    message: e.to_string(),
                })?;
            validate_record(&record).map_err(|message| StoreError::Parse {
                line: idx + 1,
                message,
            })?;
            match self.records.get_mut(&record.ce_tcn) {
                Some(existing) => {
                    for sample in record.rssi_samples {
                        existing.add_sample(sample);
                    }
                }
                None => {
                    self.records.insert(record.ce_tcn, record);
                }
            }
            imported += 1;
        }
        Ok(imported)
    }
}

fn validate_record(record: &EncounterRecord) -> Result<(), String> {
    if record.rssi_samples.is_empty() {
        return Err("record has no rssi samples".into());
    }
    if record.first_seen > record.last_seen {
        return Err("first_seen after last_seen".into());
    }
    for at in [record.first_seen, record.last_seen] {
        if at.date_naive() != record.date || Tin::of(at) != record.tin {
            return Err("timestamp outside the record's interval".into());
        }
    }
    for sample in &record.rssi_samples {
        if sample.at < record.first_seen || sample.at > record.last_seen {
            return Err("rssi sample outside [first_seen, last_seen]".into());
        }
        if !(RSSI_MIN_DBM..=RSSI_MAX_DBM).contains(&sample.dbm) {
            return Err(format!("rssi {} out of range", sample.dbm));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn ts(d: u32, h: u32, m: u32, s: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2020, 4, d, h, m, s).unwrap()
    }

    fn tcn(byte: u8) -> Tcn {
        Tcn::from_bytes([byte; 16])
    }

    #[test]
    fn sightings_in_one_interval_aggregate() {
        let mut store = EncounterStore::new();
        store.record_sighting(&tcn(1), ts(20, 10, 0, 0), -60).unwrap();
        let r = store.record_sighting(&tcn(1), ts(20, 10, 5, 0), -62).unwrap();
        assert_eq!(r.duration_secs(), 300.0);
        assert_eq!(r.rssi_samples.len(), 2);
        assert_eq!(store.len(), 1);
    }

    #[test]
    fn interval_boundary_splits_records() {
        let mut store = EncounterStore::new();
        let a = store.record_sighting(&tcn(1), ts(20, 10, 5, 0), -60).unwrap().ce_tcn;
        let b = store.record_sighting(&tcn(1), ts(20, 10, 15, 0), -60).unwrap().ce_tcn;
        assert_ne!(a, b);
        assert_eq!(store.len(), 2);
        assert_eq!(b, crate::tcn::contact_event_tcn(&tcn(1), ts(20, 0, 0, 0).date_naive(), Tin::new(61).unwrap()));
    }

    #[test]
    fn out_of_range_rssi_is_counted_and_rejected() {
        let mut store = EncounterStore::new();
        assert!(matches!(
            store.record_sighting(&tcn(1), ts(20, 10, 0, 0), 10),
            Err(StoreError::RssiOutOfRange(10))
        ));
        assert!(store.record_sighting(&tcn(1), ts(20, 10, 0, 0), -121).is_err());
        assert_eq!(store.rejected_sightings(), 2);
        assert!(store.is_empty());
    }

    #[test]
    fn purge_boundaries() {
        let now = ts(30, 12, 0, 0);
        for (age, window, kept) in [(15, 14, false), (13, 14, true), (15, 21, true), (14, 14, false)] {
            let mut store = EncounterStore::new();
            store
                .record_sighting(&tcn(1), now - Duration::days(age), -60)
                .unwrap();
            let policy = RetentionPolicy::new(window).unwrap();
            let purged = store.purge_expired(now, policy);
            assert_eq!(store.len() == 1, kept, "age {age} window {window}");
            assert_eq!(purged, usize::from(!kept));
        }
    }

    #[test]
    fn only_14_and_21_day_windows() {
        assert!(RetentionPolicy::new(14).is_ok());
        assert!(RetentionPolicy::new(21).is_ok());
        assert!(RetentionPolicy::new(7).is_err());
        assert!(serde_json::from_str::<RetentionPolicy>("10").is_err());
    }

    #[test]
    fn decision_table() {
        let t = ExposureThresholds::default();
        assert_eq!(t.classify(900.0, -55.0), ExposureCategory::High);
        assert_eq!(t.classify(60.0, -90.0), ExposureCategory::Low);
        assert_eq!(t.classify(600.0, -65.0), ExposureCategory::High);
        assert_eq!(t.classify(600.0, -66.0), ExposureCategory::Medium);
        assert_eq!(t.classify(540.0, -65.0), ExposureCategory::High);
        assert_eq!(t.classify(539.0, -50.0), ExposureCategory::Medium);
        assert_eq!(t.classify(300.0, -80.0), ExposureCategory::Medium);
        assert_eq!(t.classify(299.0, -40.0), ExposureCategory::Low);
        assert_eq!(t.classify(59.0, -40.0), ExposureCategory::None);
    }

    #[test]
    fn single_sample_is_zero_duration() {
        let mut store = EncounterStore::new();
        let ce = store.record_sighting(&tcn(1), ts(20, 10, 0, 0), -50).unwrap().ce_tcn;
        assert_eq!(store.classify_exposures()[&ce], ExposureCategory::None);
    }

    #[test]
    fn classification_uses_median() {
        let mut store = EncounterStore::new();
        let start = ts(20, 10, 0, 0);
        // A mean of these samples would fall below -65 dBm; the median does not.
        for (offset, rssi) in [(0, -50), (100, -110), (200, -52), (300, -60), (599, -100)] {
            store
                .record_sighting(&tcn(2), start + Duration::seconds(offset), rssi)
                .unwrap();
        }
        let (ce, record) = store.records.iter().next().unwrap();
        assert_eq!(record.median_rssi(), -60.0);
        assert_eq!(store.classify_exposures()[ce], ExposureCategory::High);
    }

    #[test]
    fn report_window_truncates_and_orders() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let now = ts(30, 12, 0, 0);
        let mut store = EncounterStore::new();
        assert!(matches!(
            store.prepare_report(RetentionPolicy::default(), now),
            Err(StoreError::NothingToReport)
        ));
        for age in 0..20 {
            store
                .key_for((now - Duration::days(age)).date_naive(), &mut rng)
                .unwrap();
        }
        let report = store.prepare_report(RetentionPolicy::default(), now).unwrap();
        assert_eq!(report.keys.len(), 14);
        assert!(report.keys.windows(2).all(|w| w[0].date() < w[1].date()));
        assert_eq!(report.keys.last().unwrap().date(), now.date_naive());
        assert_eq!(
            report.keys.first().unwrap().date(),
            (now - Duration::days(13)).date_naive()
        );

        let mut fourteen = EncounterStore::new();
        for age in 0..14 {
            fourteen
                .key_for((now - Duration::days(age)).date_naive(), &mut rng)
                .unwrap();
        }
        assert_eq!(fourteen.prepare_report(RetentionPolicy::default(), now).unwrap().keys.len(), 14);
    }

    #[test]
    fn rotation_replaces_todays_key() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let morning = ts(20, 9, 0, 0);
        let noon = ts(20, 12, 0, 0);
        let mut store = EncounterStore::new();
        let before_key = store.key_for(morning.date_naive(), &mut rng).unwrap().clone();
        let tcn_before = store.advertise(morning, &mut rng).unwrap();
        let after_key = store.rotate_after_report(noon, &mut rng).unwrap();
        assert_ne!(before_key.bytes(), after_key.bytes());
        assert_ne!(after_key.tcn(Tin::of(morning)), tcn_before);

        let tcn_after = store.advertise(noon, &mut rng).unwrap();
        assert_eq!(tcn_after, after_key.tcn(Tin::of(noon)));
        // History before the rotation still holds the old key's TCN only.
        let history: Vec<_> = store.advertised().iter().map(|a| (a.tin, a.tcn)).collect();
        assert_eq!(history, vec![(Tin::of(morning), tcn_before), (Tin::of(noon), tcn_after)]);
        assert!(!history.contains(&(Tin::of(morning), after_key.tcn(Tin::of(morning)))));

        let report = store.prepare_report(RetentionPolicy::default(), noon).unwrap();
        assert_eq!(report.keys, vec![after_key]);
    }

    #[test]
    fn encrypted_snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("device.store");
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let mut store = EncounterStore::new();
        store.advertise(ts(20, 9, 0, 0), &mut rng).unwrap();
        store.record_sighting(&tcn(3), ts(20, 9, 1, 0), -70).unwrap();
        let secret = [7u8; 32];
        store.save(&path, &secret, &mut rng).unwrap();

        let raw = std::fs::read(&path).unwrap();
        let key = store.keys().next().unwrap().bytes().to_vec();
        assert!(!raw.windows(32).any(|w| w == key.as_slice()));
        assert!(!String::from_utf8_lossy(&raw).contains(&hex::encode(&key)));

        let loaded = EncounterStore::load(&path, &secret).unwrap();
        assert_eq!(loaded.records().count(), 1);
        assert_eq!(loaded.advertised(), store.advertised());
        assert!(matches!(EncounterStore::load(&path, &[8u8; 32]), Err(StoreError::Decrypt)));
    }

    #[test]
    fn export_import_round_trip_and_errors() {
        let mut store = EncounterStore::new();
        store.record_sighting(&tcn(1), ts(20, 10, 0, 0), -60).unwrap();
        store.record_sighting(&tcn(1), ts(20, 10, 3, 0), -61).unwrap();
        store.record_sighting(&tcn(2), ts(20, 11, 0, 0), -70).unwrap();
        let mut buf = Vec::new();
        store.export_records(&mut buf).unwrap();
        assert_eq!(buf.iter().filter(|b| **b == b'\n').count(), 2);

        let mut copy = EncounterStore::new();
        assert_eq!(copy.import_records(buf.as_slice()).unwrap(), 2);
        let original: Vec<_> = store.records().cloned().collect();
        let imported: Vec<_> = copy.records().cloned().collect();
        assert_eq!(original, imported);

        let bad = b"{\"nonsense\": true}\n";
        match copy.import_records(&bad[..]) {
            Err(StoreError::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn aggregation_is_order_independent(
                sightings in prop::collection::vec((0u8..4, 0i64..7200, -100i32..-30), 1..60),
                seed in any::<u64>(),
            ) {
                use rand::seq::SliceRandom;
                let start = ts(20, 10, 0, 0);
                let mut shuffled = sightings.clone();
                shuffled.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));

                let summarize = |items: &[(u8, i64, i32)]| {
                    let mut store = EncounterStore::new();
                    for (id, offset, rssi) in items {
                        store.record_sighting(&tcn(*id), start + Duration::seconds(*offset), *rssi).unwrap();
                    }
                    store
                        .records()
                        .map(|r| (r.ce_tcn, r.duration(), r.rssi_samples.clone()))
                        .collect::<Vec<_>>()
                };
                prop_assert_eq!(summarize(&sightings), summarize(&shuffled));
            }

            #[test]
            fn classification_is_monotone(
                d1 in 0.0f64..1200.0, d2 in 0.0f64..1200.0,
                r1 in -120.0f64..0.0, r2 in -120.0f64..0.0,
            ) {
                let t = ExposureThresholds::default();
                let (dlo, dhi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
                let (rlo, rhi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
                prop_assert!(t.classify(dlo, r1) <= t.classify(dhi, r1));
                prop_assert!(t.classify(d1, rlo) <= t.classify(d1, rhi));
            }

            #[test]
            fn purge_leaves_nothing_outside_window(
                ops in prop::collection::vec((0u8..8, 0i64..40 * 24, -90i32..-40, any::<bool>()), 1..80),
                window in prop::sample::select(vec![14u32, 21]),
            ) {
                let policy = RetentionPolicy::new(window).unwrap();
                let origin = ts(1, 0, 0, 0);
                let mut rng = ChaCha20Rng::seed_from_u64(0);
                let mut store = EncounterStore::new();
                let mut now = origin;
                for (id, hours, rssi, purge) in ops {
                    let at = origin + Duration::hours(hours);
                    now = now.max(at);
                    store.record_sighting(&tcn(id), at, rssi).unwrap();
                    store.advertise(at, &mut rng).unwrap();
                    if purge {
                        store.purge_expired(now, policy);
                        let today = now.date_naive();
                        prop_assert!(store.records().all(|r| policy.retains(r.date, today)));
                        prop_assert!(store.keys().all(|k| policy.retains(k.date(), today)));
                        prop_assert!(store.advertised().iter().all(|a| policy.retains(a.date, today)));
                    }
                }
            }
        }
    }
}
