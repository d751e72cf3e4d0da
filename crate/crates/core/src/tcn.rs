//! Temporary contact numbers.
//!
//! Every device draws a fresh random [`DailyKey`] each UTC day. The key is
//! expanded into one [`Tcn`] per ten-minute [`Tin`] and receivers bind each
//! observed TCN to the date and interval it was heard in, producing a
//! [`CeTcn`] which is the unit of matching everywhere else in the system.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, Timelike, Utc};
use hmac::{Hmac, Mac};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

/// Label prepended to the interval number before keying the HMAC.
pub const TCN_LABEL: &[u8; 6] = b"CT-RPI";

/// Length of one time interval in seconds.
pub const INTERVAL_SECS: u32 = 600;

/// Number of time intervals in a UTC day.
pub const INTERVALS_PER_DAY: u16 = 144;

#[derive(Debug, thiserror::Error)]
pub enum TcnError {
    #[error("random source failed: {0}")]
    Rng(#[from] rand::Error),
    #[error("time interval number {0} out of range 0..=143")]
    TinOutOfRange(u16),
    #[error("expected {expected} bytes, got {actual}")]
    Length { expected: usize, actual: usize },
    #[error("expected lowercase hex")]
    NotLowerHex,
    #[error("invalid hex: {0}")]
    Hex(#[from] hex::FromHexError),
}

/// Index of a ten-minute window inside a UTC day.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u16", into = "u16")]
pub struct Tin(u16);

impl Tin {
    pub const FIRST: Tin = Tin(0);
    pub const LAST: Tin = Tin(INTERVALS_PER_DAY - 1);

    pub fn new(value: u16) -> Result<Self, TcnError> {
        if value < INTERVALS_PER_DAY {
            Ok(Tin(value))
        } else {
            Err(TcnError::TinOutOfRange(value))
        }
    }

    /// Interval containing `timestamp`.
    pub fn of(timestamp: DateTime<Utc>) -> Self {
        Tin((timestamp.num_seconds_from_midnight() / INTERVAL_SECS) as u16)
    }

    pub fn value(self) -> u16 {
        self.0
    }

    /// All 144 intervals of a day in order.
    pub fn all() -> impl Iterator<Item = Tin> {
        (0..INTERVALS_PER_DAY).map(Tin)
    }

    /// Next interval on the same day, if any.
    pub fn next(self) -> Option<Tin> {
        Tin::new(self.0 + 1).ok()
    }

    /// Start of this interval on `date`.
    pub fn start_on(self, date: NaiveDate) -> DateTime<Utc> {
        let midnight = date.and_hms_opt(0, 0, 0).expect("midnight exists").and_utc();
        midnight + chrono::Duration::seconds(i64::from(self.0) * i64::from(INTERVAL_SECS))
    }

    fn to_be_bytes(self) -> [u8; 2] {
        self.0.to_be_bytes()
    }
}

impl TryFrom<u16> for Tin {
    type Error = TcnError;

    fn try_from(value: u16) -> Result<Self, Self::Error> {
        Tin::new(value)
    }
}

impl From<Tin> for u16 {
    fn from(tin: Tin) -> u16 {
        tin.0
    }
}

impl fmt::Display for Tin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

macro_rules! hex_bytes {
    ($name:ident, $len:expr) => {
        impl $name {
            pub const LEN: usize = $len;

            pub fn from_bytes(bytes: [u8; $len]) -> Self {
                Self(bytes)
            }

            pub fn from_slice(bytes: &[u8]) -> Result<Self, TcnError> {
                let arr: [u8; $len] = bytes.try_into().map_err(|_| TcnError::Length {
                    expected: $len,
                    actual: bytes.len(),
                })?;
                Ok(Self(arr))
            }

            pub fn as_bytes(&self) -> &[u8; $len] {
                &self.0
            }

            pub fn to_hex(&self) -> String {
                hex::encode(self.0)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.to_hex())
            }
        }

        impl FromStr for $name {
            type Err = TcnError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                if !s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
                    return Err(TcnError::NotLowerHex);
                }
                let bytes = hex::decode(s)?;
                Self::from_slice(&bytes)
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                serializer.serialize_str(&self.to_hex())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                let s = String::deserialize(deserializer)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

/// 16-byte identifier broadcast during one interval.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Tcn([u8; 16]);
hex_bytes!(Tcn, 16);

impl fmt::Debug for Tcn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tcn({})", self.to_hex())
    }
}

/// Observed TCN bound to the date and interval it was received in.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CeTcn([u8; 32]);
hex_bytes!(CeTcn, 32);

impl fmt::Debug for CeTcn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CeTcn({})", self.to_hex())
    }
}

impl CeTcn {
    /// Uniformly random value, used for query padding.
    pub fn random<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        let mut bytes = [0u8; 32];
        rng.fill_bytes(&mut bytes);
        CeTcn(bytes)
    }
}

/// Per-day secret from which all of that day's TCNs are derived.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DailyKey {
    date: NaiveDate,
    #[serde(with = "hex::serde")]
    bytes: [u8; 32],
}

impl fmt::Debug for DailyKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Never print key material.
        f.debug_struct("DailyKey").field("date", &self.date).finish_non_exhaustive()
    }
}

impl DailyKey {
    /// Draw a fresh key for `date`. Nothing about earlier keys is consulted.
    pub fn generate<R: RngCore + CryptoRng + ?Sized>(
        date: NaiveDate,
        rng: &mut R,
    ) -> Result<Self, TcnError> {
        let mut bytes = [0u8; 32];
        rng.try_fill_bytes(&mut bytes)?;
        Ok(DailyKey { date, bytes })
    }

    pub fn from_parts(date: NaiveDate, bytes: [u8; 32]) -> Self {
        DailyKey { date, bytes }
    }

    pub fn date(&self) -> NaiveDate {
        self.date
    }

    pub fn bytes(&self) -> &[u8; 32] {
        &self.bytes
    }

    pub fn tcn(&self, tin: Tin) -> Tcn {
        derive_tcn(&self.bytes, tin)
    }

    /// Every TCN of the key's day together with the ceTCN a receiver would
    /// have recorded for it.
    pub fn regenerate_day(&self) -> Vec<DayEntry> {
        Tin::all()
            .map(|tin| {
                let tcn = self.tcn(tin);
                DayEntry {
                    tin,
                    tcn,
                    ce_tcn: contact_event_tcn(&tcn, self.date, tin),
                }
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DayEntry {
    pub tin: Tin,
    pub tcn: Tcn,
    pub ce_tcn: CeTcn,
}

/// `Truncate(HMAC-SHA256(key, "CT-RPI" || tin_be16), 16)`.
pub fn derive_tcn(key: &[u8; 32], tin: Tin) -> Tcn {
    let mut mac = Hmac::<Sha256>::new_from_slice(key).expect("hmac accepts any key length");
    mac.update(TCN_LABEL);
    mac.update(&tin.to_be_bytes());
    let digest = mac.finalize().into_bytes();
    let mut out = [0u8; 16];
    out.copy_from_slice(&digest[..16]);
    Tcn(out)
}

/// `SHA256(tcn || "YYYY-MM-DD" || tin_be16)`.
pub fn contact_event_tcn(tcn: &Tcn, date: NaiveDate, tin: Tin) -> CeTcn {
    let mut hasher = Sha256::new();
    hasher.update(tcn.as_bytes());
    hasher.update(iso_date(date).as_bytes());
    hasher.update(tin.to_be_bytes());
    CeTcn(hasher.finalize().into())
}

/// Date, interval and ceTCN for a TCN heard at `timestamp`.
pub fn observe(tcn: &Tcn, timestamp: DateTime<Utc>) -> (NaiveDate, Tin, CeTcn) {
    let date = timestamp.date_naive();
    let tin = Tin::of(timestamp);
    (date, tin, contact_event_tcn(tcn, date, tin))
}

fn iso_date(date: NaiveDate) -> String {
    date.format("%Y-%m-%d").to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use std::collections::HashSet;

    fn date(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    fn at(h: u32, m: u32, s: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2020, 4, 20, h, m, s).unwrap()
    }

    #[test]
    fn tin_boundaries() {
        assert_eq!(Tin::of(at(0, 22, 0)).value(), 2);
        assert_eq!(Tin::of(at(0, 0, 0)).value(), 0);
        assert_eq!(Tin::of(at(23, 59, 59)).value(), 143);
        assert_eq!(Tin::of(at(10, 9, 59)).value(), 60);
        assert_eq!(Tin::of(at(10, 10, 0)).value(), 61);
        assert!(Tin::new(144).is_err());
        assert_eq!(Tin::all().count(), 144);
    }

    #[test]
    fn tin_start_round_trips() {
        for tin in Tin::all() {
            assert_eq!(Tin::of(tin.start_on(date(2020, 4, 20))), tin);
        }
    }

    #[test]
    fn seeded_keys_are_reproducible() {
        let d = date(2020, 4, 20);
        let k1 = DailyKey::generate(d, &mut ChaCha20Rng::seed_from_u64(1)).unwrap();
        let k1_again = DailyKey::generate(d, &mut ChaCha20Rng::seed_from_u64(1)).unwrap();
        let k2 = DailyKey::generate(d, &mut ChaCha20Rng::seed_from_u64(2)).unwrap();
        assert_eq!(k1, k1_again);
        assert_ne!(k1.bytes(), k2.bytes());
    }

    #[test]
    fn ten_thousand_keys_are_distinct() {
        let mut rng = rand::thread_rng();
        let d = date(2020, 4, 20);
        let keys: HashSet<[u8; 32]> = (0..10_000)
            .map(|_| *DailyKey::generate(d, &mut rng).unwrap().bytes())
            .collect();
        assert_eq!(keys.len(), 10_000);
    }

    struct FailingRng;

    impl RngCore for FailingRng {
        fn next_u32(&mut self) -> u32 {
            unreachable!()
        }
        fn next_u64(&mut self) -> u64 {
            unreachable!()
        }
        fn fill_bytes(&mut self, _: &mut [u8]) {
            unreachable!()
        }
        fn try_fill_bytes(&mut self, _: &mut [u8]) -> Result<(), rand::Error> {
            Err(rand::Error::new("entropy source unavailable"))
        }
    }

    impl CryptoRng for FailingRng {}

    #[test]
    fn rng_failure_emits_no_key() {
        let err = DailyKey::generate(date(2020, 4, 20), &mut FailingRng).unwrap_err();
        assert!(matches!(err, TcnError::Rng(_)));
    }

    // Frozen from Python's hmac/hashlib.
    #[test]
    fn known_answer_vectors() {
        let zero = derive_tcn(&[0u8; 32], Tin::FIRST);
        assert_eq!(zero.to_hex(), "660befc58809626aff166927100ae17f");

        let counting: [u8; 32] = std::array::from_fn(|i| i as u8);
        let tcn5 = derive_tcn(&counting, Tin::new(5).unwrap());
        assert_eq!(tcn5.to_hex(), "489885b81d083ab6f9c6cf26999e3688");

        let ce = contact_event_tcn(&zero, date(2020, 4, 20), Tin::FIRST);
        assert_eq!(
            ce.to_hex(),
            "2c5aaff72b1c676ec65d2c1bc735810e833549c3b1d59ddb1b4c889cc6294abb"
        );
        let ce2 = contact_event_tcn(&tcn5, date(2020, 4, 20), Tin::new(2).unwrap());
        assert_eq!(
            ce2.to_hex(),
            "c0412ee932a16aa1b9a73a50e1a996fa1781a035a8c15a600303d52edfb48ec4"
        );
    }

    #[test]
    fn derivation_separates_intervals_keys_and_dates() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let d = date(2020, 4, 20);
        let k1 = DailyKey::generate(d, &mut rng).unwrap();
        let k2 = DailyKey::generate(d, &mut rng).unwrap();
        let t5 = Tin::new(5).unwrap();
        let t6 = Tin::new(6).unwrap();
        assert_eq!(k1.tcn(t5), k1.tcn(t5));
        assert_ne!(k1.tcn(t5), k1.tcn(t6));
        assert_ne!(k1.tcn(t5), k2.tcn(t5));

        let tcn = k1.tcn(t5);
        let t2 = Tin::new(2).unwrap();
        let t3 = Tin::new(3).unwrap();
        assert_eq!(contact_event_tcn(&tcn, d, t2), contact_event_tcn(&tcn, d, t2));
        assert_ne!(contact_event_tcn(&tcn, d, t2), contact_event_tcn(&tcn, d, t3));
        assert_ne!(
            contact_event_tcn(&tcn, date(2020, 4, 20), t2),
            contact_event_tcn(&tcn, date(2020, 4, 21), t2)
        );
    }

    #[test]
    fn regenerated_day_is_consistent() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for _ in 0..1_000 {
            let key = DailyKey::generate(date(2020, 4, 20), &mut rng).unwrap();
            let day = key.regenerate_day();
            assert_eq!(day.len(), 144);
            let distinct: HashSet<Tcn> = day.iter().map(|e| e.tcn).collect();
            assert_eq!(distinct.len(), 144);
            for (i, entry) in day.iter().enumerate() {
                assert_eq!(entry.tin.value() as usize, i);
            }
        }
        let key = DailyKey::generate(date(2020, 4, 20), &mut rng).unwrap();
        for entry in key.regenerate_day() {
            assert_eq!(entry.tcn, key.tcn(entry.tin));
            assert_eq!(entry.ce_tcn, contact_event_tcn(&entry.tcn, key.date(), entry.tin));
        }
    }

    #[test]
    fn no_interval_collisions_over_random_pairs() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let d = date(2020, 4, 20);
        for _ in 0..100_000 {
            let key = DailyKey::generate(d, &mut rng).unwrap();
            let a = (rng.next_u32() % 144) as u16;
            let b = (a + 1 + (rng.next_u32() % 143) as u16) % 144;
            assert_ne!(
                key.tcn(Tin::new(a).unwrap()),
                key.tcn(Tin::new(b).unwrap())
            );
        }
    }

    #[test]
    fn contact_event_tcn_has_no_collisions_on_random_triples() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let base = date(2020, 1, 1);
        let mut seen = HashSet::new();
        for _ in 0..100_000 {
            let mut raw = [0u8; 16];
            rng.fill_bytes(&mut raw);
            let day = base + chrono::Duration::days(i64::from(rng.next_u32() % 365));
            let tin = Tin::new((rng.next_u32() % 144) as u16).unwrap();
            assert!(seen.insert(contact_event_tcn(&Tcn::from_bytes(raw), day, tin)));
        }
    }

    #[test]
    fn hex_rejects_uppercase_and_wrong_length() {
        assert!("660BEFC58809626AFF166927100AE17F".parse::<Tcn>().is_err());
        assert!("660bef".parse::<Tcn>().is_err());
        assert!("zz".repeat(16).parse::<Tcn>().is_err());
    }

    #[test]
    fn key_debug_hides_material() {
        let key = DailyKey::from_parts(date(2020, 4, 20), [0xab; 32]);
        assert!(!format!("{key:?}").contains("ab"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn tcn_hex_round_trip(bytes in any::<[u8; 16]>()) {
                let tcn = Tcn::from_bytes(bytes);
                let hex = tcn.to_hex();
                prop_assert_eq!(hex.len(), 32);
                prop_assert_eq!(hex.parse::<Tcn>().unwrap(), tcn);
            }

            #[test]
            fn ce_tcn_hex_round_trip(bytes in any::<[u8; 32]>()) {
                let ce = CeTcn::from_bytes(bytes);
                let json = serde_json::to_string(&ce).unwrap();
                prop_assert_eq!(json.len(), 66);
                prop_assert_eq!(serde_json::from_str::<CeTcn>(&json).unwrap(), ce);
            }

            #[test]
            fn tin_matches_minutes(secs in 0u32..86_400) {
                let ts = at(0, 0, 0) + chrono::Duration::seconds(i64::from(secs));
                prop_assert_eq!(u32::from(Tin::of(ts).value()), secs / 600);
            }
        }
    }
}
