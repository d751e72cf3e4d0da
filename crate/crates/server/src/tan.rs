//! Single-use, time-limited upload authorizations.

use std::collections::HashMap;

use chrono::{DateTime, Duration, Utc};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const TAN_LEN: usize = 12;

// No 0/O or 1/I: TANs get read out over the phone.
const ALPHABET: &[u8] = b"ABCDEFGHJKLMNPQRSTUVWXYZ23456789";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TanKind {
    Medical,
    SecondOrder,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UploadAuthorization {
    pub tan: String,
    pub kind: TanKind,
    pub issued_at: DateTime<Utc>,
    pub expires_at: DateTime<Utc>,
    pub consumed: bool,
}

#[derive(Debug, thiserror::Error, Clone, Copy, PartialEq, Eq)]
pub enum TanError {
    #[error("unknown TAN")]
    Unknown,
    #[error("TAN expired")]
    Expired,
    #[error("TAN already used")]
    Consumed,
}

#[derive(Debug, Default)]
pub struct TanTable {
    tans: HashMap<String, UploadAuthorization>,
}

impl TanTable {
    pub fn issue<R: Rng + ?Sized>(
        &mut self,
        kind: TanKind,
        now: DateTime<Utc>,
        validity: Duration,
        rng: &mut R,
    ) -> UploadAuthorization {
        let tan = loop {
            let candidate: String = (0..TAN_LEN)
                .map(|_| char::from(ALPHABET[rng.gen_range(0..ALPHABET.len())]))
                .collect();
            if !self.tans.contains_key(&candidate) {
                break candidate;
            }
        };
        let auth = UploadAuthorization {
            tan: tan.clone(),
            kind,
            issued_at: now,
            expires_at: now + validity,
            consumed: false,
        };
        self.tans.insert(tan, auth.clone());
        auth
    }

    pub fn insert(&mut self, auth: UploadAuthorization) {
        self.tans.insert(auth.tan.clone(), auth);
    }

    /// Validates without consuming.
    pub fn check(&self, tan: &str, now: DateTime<Utc>) -> Result<&UploadAuthorization, TanError> {
        let auth = self.tans.get(tan).ok_or(TanError::Unknown)?;
        if auth.consumed {
            return Err(TanError::Consumed);
        }
        if now >= auth.expires_at {
            return Err(TanError::Expired);
        }
        Ok(auth)
    }

    pub fn consume(&mut self, tan: &str) {
        if let Some(auth) = self.tans.get_mut(tan) {
            auth.consumed = true;
        }
    }

    /// Drops expired entries. Consumed TANs are kept until expiry so a
    /// replay still reads as "already used".
    pub fn purge_expired(&mut self, now: DateTime<Utc>) -> usize {
        let before = self.tans.len();
        self.tans.retain(|_, a| now < a.expires_at);
        before - self.tans.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = &UploadAuthorization> {
        self.tans.values()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2020, 4, 20, 9, 0, 0).unwrap()
    }

    #[test]
    fn tan_shape() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let mut table = TanTable::default();
        let auth = table.issue(TanKind::Medical, t0(), Duration::hours(24), &mut rng);
        assert_eq!(auth.tan.len(), TAN_LEN);
        assert!(auth.tan.bytes().all(|b| b.is_ascii_alphanumeric()));
        assert_eq!(auth.expires_at - auth.issued_at, Duration::hours(24));
    }

    #[test]
    fn single_use() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let mut table = TanTable::default();
        let tan = table.issue(TanKind::Medical, t0(), Duration::hours(24), &mut rng).tan;
        assert!(table.check(&tan, t0()).is_ok());
        table.consume(&tan);
        assert_eq!(table.check(&tan, t0()), Err(TanError::Consumed));
    }

    #[test]
    fn expiry() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let mut table = TanTable::default();
        let tan = table.issue(TanKind::Medical, t0(), Duration::hours(24), &mut rng).tan;
        assert!(table.check(&tan, t0() + Duration::hours(23)).is_ok());
        assert_eq!(table.check(&tan, t0() + Duration::hours(25)), Err(TanError::Expired));
        assert_eq!(table.check("NOPE", t0()), Err(TanError::Unknown));
        assert_eq!(table.purge_expired(t0() + Duration::hours(25)), 1);
        assert_eq!(table.check(&tan, t0()), Err(TanError::Unknown));
    }

    #[test]
    fn tans_are_distinct() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let mut table = TanTable::default();
        let tans: std::collections::HashSet<String> = (0..10_000)
            .map(|_| table.issue(TanKind::Medical, t0(), Duration::hours(24), &mut rng).tan)
            .collect();
        assert_eq!(tans.len(), 10_000);
    }
}
