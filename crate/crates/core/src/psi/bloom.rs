//! Bloom filter over encrypted group elements.
//!
//! Sized as `m = ceil(n * k / ln 2)` bits with `k = 20`, giving a false
//! positive rate near `2^-20` at capacity. Bit `i` lives in byte `i / 8`
//! under mask `0x80 >> (i % 8)`.

use std::collections::HashSet;

use sha2::{Digest, Sha256};

use super::group::GroupElement;

pub const DEFAULT_HASHES: u8 = 20;

/// Header: m (u64 BE), k (u8), n_capacity (u64 BE).
pub const HEADER_LEN: usize = 17;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum BloomError {
    #[error("filter encoding truncated")]
    Truncated,
    #[error("filter declares {declared} bit bytes but carries {actual}")]
    BitLength { declared: u64, actual: usize },
    #[error("filter needs at least one hash function")]
    NoHashes,
}

/// Set-membership oracle used at the end of a PSI round.
pub trait Membership {
    fn contains(&self, element: &GroupElement) -> bool;

    /// Probability that a non-member queries true.
    fn false_positive_rate(&self) -> f64;
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BloomFilter {
    bits: Vec<u8>,
    m: u64,
    k: u8,
    n_capacity: u64,
}

/// Bit count for `n` elements and `k` hash functions.
pub fn optimal_bits(n: u64, k: u8) -> u64 {
    (n as f64 * f64::from(k) / std::f64::consts::LN_2).ceil() as u64
}

impl BloomFilter {
    pub fn with_capacity(n_capacity: u64) -> Self {
        Self::with_params(n_capacity, DEFAULT_HASHES)
    }

    pub fn with_params(n_capacity: u64, k: u8) -> Self {
        let m = optimal_bits(n_capacity, k);
        BloomFilter {
            bits: vec![0u8; m.div_ceil(8) as usize],
            m,
            k,
            n_capacity,
        }
    }

    pub fn from_elements<'a>(elements: impl ExactSizeIterator<Item = &'a GroupElement>) -> Self {
        let mut filter = Self::with_capacity(elements.len() as u64);
        for e in elements {
            filter.insert(e.as_bytes());
        }
        filter
    }

    pub fn bit_len(&self) -> u64 {
        self.m
    }

    pub fn hash_count(&self) -> u8 {
        self.k
    }

    pub fn capacity(&self) -> u64 {
        self.n_capacity
    }

    /// Independent indices: block `j` of `SHA-256(j || item)` yields four
    /// big-endian u64 words, each reduced mod `m`, until `k` are drawn.
    fn positions(&self, item: &[u8]) -> Vec<u64> {
        let k = usize::from(self.k);
        let mut out = Vec::with_capacity(k);
        for block in 0u8.. {
            let digest = Sha256::new().chain_update([block]).chain_update(item).finalize();
            for word in digest.chunks_exact(8).take(k - out.len()) {
                out.push(u64::from_be_bytes(word.try_into().expect("8 bytes")) % self.m);
            }
            if out.len() == k {
                break;
            }
        }
        out
    }

    pub fn insert(&mut self, item: &[u8]) {
        if self.m == 0 {
            return;
        }
        for bit in self.positions(item) {
            self.bits[(bit / 8) as usize] |= 0x80 >> (bit % 8);
        }
    }

    pub fn contains_bytes(&self, item: &[u8]) -> bool {
        if self.m == 0 {
            return false;
        }
        self.positions(item)
            .into_iter()
            .all(|bit| self.bits[(bit / 8) as usize] & (0x80 >> (bit % 8)) != 0)
    }

    /// `(1 - e^(-k n / m))^k` at capacity.
    pub fn analytic_fpr(&self) -> f64 {
        if self.m == 0 {
            return 0.0;
        }
        let k = f64::from(self.k);
        (1.0 - (-k * self.n_capacity as f64 / self.m as f64).exp()).powf(k)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.bits.len());
        out.extend_from_slice(&self.m.to_be_bytes());
        out.push(self.k);
        out.extend_from_slice(&self.n_capacity.to_be_bytes());
        out.extend_from_slice(&self.bits);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, BloomError> {
        if bytes.len() < HEADER_LEN {
            return Err(BloomError::Truncated);
        }
        let m = u64::from_be_bytes(bytes[..8].try_into().expect("8 bytes"));
        let k = bytes[8];
        let n_capacity = u64::from_be_bytes(bytes[9..17].try_into().expect("8 bytes"));
        if k == 0 {
            return Err(BloomError::NoHashes);
        }
        let bits = &bytes[HEADER_LEN..];
        if bits.len() as u64 != m.div_ceil(8) {
            return Err(BloomError::BitLength {
                declared: m.div_ceil(8),
                actual: bits.len(),
            });
        }
        Ok(BloomFilter {
            bits: bits.to_vec(),
            m,
            k,
            n_capacity,
        })
    }
}

impl Membership for BloomFilter {
    fn contains(&self, element: &GroupElement) -> bool {
        self.contains_bytes(element.as_bytes())
    }

    fn false_positive_rate(&self) -> f64 {
        self.analytic_fpr()
    }
}

/// Exact set with the same interface, for testing protocol logic without
/// filter false positives.
#[derive(Clone, Debug, Default)]
pub struct ExactSet(HashSet<GroupElement>);

impl ExactSet {
    pub fn new(elements: impl IntoIterator<Item = GroupElement>) -> Self {
        ExactSet(elements.into_iter().collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Membership for ExactSet {
    fn contains(&self, element: &GroupElement) -> bool {
        self.0.contains(element)
    }

    fn false_positive_rate(&self) -> f64 {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngCore, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn random_items(rng: &mut impl RngCore, n: usize) -> Vec<[u8; 32]> {
        (0..n)
            .map(|_| {
                let mut b = [0u8; 32];
                rng.fill_bytes(&mut b);
                b
            })
            .collect()
    }

    #[test]
    fn sizing_follows_k_over_ln2() {
        let f = BloomFilter::with_capacity(1000);
        assert_eq!(f.hash_count(), 20);
        assert_eq!(f.bit_len(), 28_854);
        assert_eq!(BloomFilter::with_capacity(0).bit_len(), 0);
        // (1 - 1/2)^20 at the optimum.
        assert!((f.analytic_fpr() - 2f64.powi(-20)).abs() < 1e-8);
    }

    #[test]
    fn no_false_negatives() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let items = random_items(&mut rng, 5_000);
        let mut f = BloomFilter::with_capacity(items.len() as u64);
        for item in &items {
            f.insert(item);
        }
        assert!(items.iter().all(|i| f.contains_bytes(i)));
    }

    #[test]
    fn empirical_fpr_is_tiny() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let items = random_items(&mut rng, 2_000);
        let mut f = BloomFilter::with_capacity(items.len() as u64);
        for item in &items {
            f.insert(item);
        }
        let probes = random_items(&mut rng, 200_000);
        let hits = probes.iter().filter(|p| f.contains_bytes(*p)).count();
        // Expected 0.19 hits at 2^-20.
        assert!(hits <= 3, "{hits} false positives");
    }

    #[test]
    fn small_filters_keep_the_rate() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let mut hits = 0;
        for n in 1..=8 {
            let items = random_items(&mut rng, n);
            let mut f = BloomFilter::with_capacity(n as u64);
            for item in &items {
                f.insert(item);
            }
            hits += random_items(&mut rng, 25_000).iter().filter(|p| f.contains_bytes(*p)).count();
        }
        // Expected 0.19 hits over 200k probes.
        assert!(hits <= 3, "{hits} false positives");
    }

    #[test]
    fn empty_filter_matches_nothing() {
        let f = BloomFilter::with_capacity(0);
        assert!(!f.contains_bytes(b"anything"));
        assert_eq!(f.encode().len(), HEADER_LEN);
    }

    #[test]
    fn encoding_layout() {
        let mut f = BloomFilter::with_params(1, 1);
        assert_eq!(f.bit_len(), 2);
        f.bits[0] = 0x80;
        let enc = f.encode();
        assert_eq!(&enc[..8], &2u64.to_be_bytes());
        assert_eq!(enc[8], 1);
        assert_eq!(&enc[9..17], &1u64.to_be_bytes());
        assert_eq!(&enc[17..], &[0x80]);
        assert_eq!(BloomFilter::decode(&enc).unwrap(), f);
    }

    #[test]
    fn decode_rejects_bad_input() {
        assert_eq!(BloomFilter::decode(&[0; 5]), Err(BloomError::Truncated));
        let mut enc = BloomFilter::with_capacity(10).encode();
        enc.pop();
        assert!(matches!(BloomFilter::decode(&enc), Err(BloomError::BitLength { .. })));
        let mut zero_k = BloomFilter::with_capacity(10).encode();
        zero_k[8] = 0;
        assert_eq!(BloomFilter::decode(&zero_k), Err(BloomError::NoHashes));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn encode_decode_round_trip(items in prop::collection::vec(any::<[u8; 16]>(), 0..200)) {
                let mut f = BloomFilter::with_capacity(items.len() as u64);
                for item in &items {
                    f.insert(item);
                }
                let back = BloomFilter::decode(&f.encode()).unwrap();
                prop_assert_eq!(&back, &f);
                prop_assert!(items.iter().all(|i| back.contains_bytes(i)));
            }
        }
    }
}
