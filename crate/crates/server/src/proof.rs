//! Server side of the proof-of-contact exchange.

use std::collections::{HashMap, HashSet};

use chrono::{DateTime, Duration, Utc};
use contact_core::proof::{contact_mac, ContactMac, NONCE_LEN};
use contact_core::CeTcn;
use rand::RngCore;

#[derive(Debug, thiserror::Error, Clone, Copy, PartialEq, Eq)]
pub enum ProofError {
    #[error("unknown or already used nonce")]
    UnknownNonce,
    #[error("nonce expired")]
    Expired,
    #[error("response carries {0} MACs, limit is {1}")]
    TooManyMacs(usize, usize),
    #[error("no MAC matches an infected contact")]
    NoMatch,
}

#[derive(Debug, Default)]
pub struct ProofVerifier {
    nonces: HashMap<[u8; NONCE_LEN], DateTime<Utc>>,
}

impl ProofVerifier {
    pub fn challenge<R: RngCore + ?Sized>(
        &mut self,
        now: DateTime<Utc>,
        ttl: Duration,
        rng: &mut R,
    ) -> ([u8; NONCE_LEN], DateTime<Utc>) {
        let mut nonce = [0u8; NONCE_LEN];
        rng.fill_bytes(&mut nonce);
        let expires_at = now + ttl;
        self.nonces.insert(nonce, expires_at);
        (nonce, expires_at)
    }

    /// Takes the nonce out of circulation before checking anything else, so a
    /// nonce is good for exactly one response whatever the outcome.
    pub fn redeem(
        &mut self,
        nonce: &[u8; NONCE_LEN],
        now: DateTime<Utc>,
    ) -> Result<(), ProofError> {
        let expires_at = self.nonces.remove(nonce).ok_or(ProofError::UnknownNonce)?;
        if now >= expires_at {
            return Err(ProofError::Expired);
        }
        Ok(())
    }

    pub fn forget_expired(&mut self, now: DateTime<Utc>) {
        self.nonces.retain(|_, exp| now < *exp);
    }
}

pub fn verify_macs<'a>(
    nonce: &[u8; NONCE_LEN],
    macs: &[ContactMac],
    infected: impl IntoIterator<Item = &'a CeTcn>,
) -> Result<(), ProofError> {
    let claimed: HashSet<&ContactMac> = macs.iter().collect();
    if infected
        .into_iter()
        .any(|ce| claimed.contains(&contact_mac(ce, nonce)))
    {
        Ok(())
    } else {
        Err(ProofError::NoMatch)
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
    fn holder_of_infected_cetcn_is_accepted() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let infected: Vec<CeTcn> = (0..100).map(|_| CeTcn::random(&mut rng)).collect();
        let mut v = ProofVerifier::default();
        let (nonce, _) = v.challenge(t0(), Duration::minutes(5), &mut rng);
        v.redeem(&nonce, t0()).unwrap();
        let macs = [contact_mac(&CeTcn::random(&mut rng), &nonce), contact_mac(&infected[42], &nonce)];
        assert_eq!(verify_macs(&nonce, &macs, &infected), Ok(()));
    }

    #[test]
    fn random_guesses_fail() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let infected: Vec<CeTcn> = (0..100).map(|_| CeTcn::random(&mut rng)).collect();
        let nonce = [9u8; 32];
        let guesses: Vec<ContactMac> = (0..10_000)
            .map(|_| {
                let mut m = [0u8; 32];
                rng.fill_bytes(&mut m);
                m
            })
            .collect();
        assert_eq!(verify_macs(&nonce, &guesses, &infected), Err(ProofError::NoMatch));
    }

    #[test]
    fn nonces_are_single_use_and_expire() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let mut v = ProofVerifier::default();
        let (nonce, _) = v.challenge(t0(), Duration::minutes(5), &mut rng);
        assert_eq!(v.redeem(&nonce, t0()), Ok(()));
        assert_eq!(v.redeem(&nonce, t0()), Err(ProofError::UnknownNonce));
        let (late, _) = v.challenge(t0(), Duration::minutes(5), &mut rng);
        assert_eq!(v.redeem(&late, t0() + Duration::minutes(6)), Err(ProofError::Expired));
    }
}
