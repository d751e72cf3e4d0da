//! Pohlig-Hellman style commutative cipher over the quadratic residues of the
//! 2048-bit MODP safe prime (RFC 3526, group 14).
//!
//! Elements live in the subgroup of order `q = (p - 1) / 2`. A key is a
//! secret exponent `a` with `gcd(a, q) = 1`; encryption is `x^a mod p` and
//! removing a layer raises to `a^-1 mod q`. Because exponents commute,
//! `(x^a)^b = (x^b)^a`.

use std::cell::RefCell;
use std::fmt;
use std::sync::OnceLock;

use foreign_types::ForeignTypeRef;
use openssl::bn::{BigNum, BigNumContext, BigNumRef};
use rand::RngCore;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::tcn::CeTcn;

/// Wire width of a group element in bytes.
pub const ELEMENT_LEN: usize = 256;

/// Bit length of freshly generated key exponents.
pub const KEY_EXPONENT_BITS: i32 = 256;

const MODP_2048_HEX: &str = "\
FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD129024E088A67CC74\
020BBEA63B139B22514A08798E3404DDEF9519B3CD3A431B302B0A6DF25F1437\
4FE1356D6D51C245E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED\
EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3DC2007CB8A163BF05\
98DA48361C55D39A69163FA8FD24CF5F83655D23DCA3AD961C62F356208552BB\
9ED529077096966D670C354E4ABC9804F1746C08CA18217C32905E462E36CE3B\
E39E772C180E86039B2783A2EC07A28FB5C55DF06F4C52C9DE2BCBF695581718\
3995497CEA956AE515D2261898FA051015728E5A8AACAA68FFFFFFFFFFFFFFFF";

const HASH_TO_GROUP_DST: &[u8] = b"contact-trace/hash-to-group/v1";

#[derive(Debug, thiserror::Error)]
pub enum GroupError {
    #[error("group element must be {ELEMENT_LEN} bytes, got {0}")]
    Length(usize),
    #[error("value is not a quadratic residue in (1, p)")]
    NotInSubgroup,
    #[error("exponent must lie in [1, q-1]")]
    BadExponent,
    #[error("invalid hex: {0}")]
    Hex(#[from] hex::FromHexError),
    #[error("bignum: {0}")]
    Openssl(#[from] openssl::error::ErrorStack),
}

struct Params {
    p: BigNum,
    q: BigNum,
    one: BigNum,
}

fn params() -> &'static Params {
    static PARAMS: OnceLock<Params> = OnceLock::new();
    PARAMS.get_or_init(|| {
        let p = BigNum::from_hex_str(MODP_2048_HEX).expect("modulus parses");
        let mut q = BigNum::new().expect("alloc");
        q.rshift1(&p).expect("shift");
        Params {
            p,
            q,
            one: BigNum::from_u32(1).expect("alloc"),
        }
    })
}

thread_local! {
    static CTX: RefCell<BigNumContext> = RefCell::new(BigNumContext::new().expect("bn ctx"));
}

fn with_ctx<T>(f: impl FnOnce(&mut BigNumContext) -> T) -> T {
    CTX.with(|ctx| f(&mut ctx.borrow_mut()))
}

extern "C" {
    // Present in every libcrypto since 0.9.x; not wrapped by the openssl crate.
    fn BN_kronecker(
        a: *const openssl_sys::BIGNUM,
        b: *const openssl_sys::BIGNUM,
        ctx: *mut openssl_sys::BN_CTX,
    ) -> std::os::raw::c_int;
}

fn jacobi(a: &BigNumRef, n: &BigNumRef) -> i32 {
    with_ctx(|ctx| {
        // SAFETY: both bignums and the context are valid for the duration of
        // the call and BN_kronecker does not retain them.
        unsafe { BN_kronecker(a.as_ptr(), n.as_ptr(), ctx.as_ptr()) }
    })
}

/// The modulus `p`.
pub fn modulus() -> &'static BigNumRef {
    &params().p
}

/// The subgroup order `q = (p - 1) / 2`.
pub fn subgroup_order() -> &'static BigNumRef {
    &params().q
}

/// Element of the order-`q` subgroup, stored as its fixed-width encoding.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroupElement(Box<[u8; ELEMENT_LEN]>);

impl fmt::Debug for GroupElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GroupElement({}…)", hex::encode(&self.0[..8]))
    }
}

impl GroupElement {
    fn from_bignum(value: &BigNumRef) -> Self {
        let bytes = value.to_vec_padded(ELEMENT_LEN as i32).expect("value < p fits");
        let mut out = Box::new([0u8; ELEMENT_LEN]);
        out.copy_from_slice(&bytes);
        GroupElement(out)
    }

    fn to_bignum(&self) -> BigNum {
        BigNum::from_slice(&self.0[..]).expect("bignum from bytes")
    }

    /// Parses and validates a wire encoding: `1 < v < p` and `v` a quadratic
    /// residue (checked with the Jacobi symbol, no exponentiation needed).
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, GroupError> {
        if bytes.len() != ELEMENT_LEN {
            return Err(GroupError::Length(bytes.len()));
        }
        let value = BigNum::from_slice(bytes)?;
        let params = params();
        if value <= params.one || value >= params.p || jacobi(&value, &params.p) != 1 {
            return Err(GroupError::NotInSubgroup);
        }
        Ok(Self::from_bignum(&value))
    }

    pub fn from_hex(s: &str) -> Result<Self, GroupError> {
        Self::from_bytes(&hex::decode(s)?)
    }

    pub fn as_bytes(&self) -> &[u8; ELEMENT_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(&self.0[..])
    }

    /// Full membership test `v^q = 1 (mod p)`. Costs one full exponentiation.
    pub fn is_in_subgroup(&self) -> bool {
        let params = params();
        let value = self.to_bignum();
        if value <= params.one || value >= params.p {
            return false;
        }
        self.pow(&params.q).to_bignum() == params.one
    }

    pub fn pow(&self, exponent: &BigNumRef) -> GroupElement {
        let base = self.to_bignum();
        let mut out = BigNum::new().expect("alloc");
        with_ctx(|ctx| out.mod_exp(&base, exponent, &params().p, ctx)).expect("mod_exp");
        Self::from_bignum(&out)
    }

    /// Uniformly random subgroup element, used for tests and padding.
    pub fn random<R: RngCore + ?Sized>(rng: &mut R) -> GroupElement {
        hash_bytes_to_group(&{
            let mut seed = [0u8; 32];
            rng.fill_bytes(&mut seed);
            seed
        })
    }
}

impl Serialize for GroupElement {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for GroupElement {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        GroupElement::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// Maps a ceTCN into the subgroup: expand SHA-256 to 288 bytes, reduce mod
/// `p` and square. A result of 0 or 1 is re-hashed with the next counter.
pub fn hash_to_group(ce_tcn: &CeTcn) -> GroupElement {
    hash_bytes_to_group(ce_tcn.as_bytes())
}

fn hash_bytes_to_group(input: &[u8]) -> GroupElement {
    let params = params();
    for counter in 0u32.. {
        let mut wide = Vec::with_capacity(9 * 32);
        for block in 0u8..9 {
            let mut h = Sha256::new();
            h.update(HASH_TO_GROUP_DST);
            h.update(counter.to_be_bytes());
            h.update([block]);
            h.update(input);
            wide.extend_from_slice(&h.finalize());
        }
        let wide = BigNum::from_slice(&wide).expect("bignum");
        let mut square = BigNum::new().expect("alloc");
        with_ctx(|ctx| square.mod_sqr(&wide, &params.p, ctx)).expect("mod_sqr");
        if square > params.one {
            return GroupElement::from_bignum(&square);
        }
    }
    unreachable!("counter space exhausted")
}

/// Secret exponent of one party, with its inverse modulo `q` precomputed.
pub struct CommutativeKey {
    exponent: BigNum,
    inverse: BigNum,
}

impl Clone for CommutativeKey {
    fn clone(&self) -> Self {
        CommutativeKey {
            exponent: self.exponent.to_owned().expect("alloc"),
            inverse: self.inverse.to_owned().expect("alloc"),
        }
    }
}

impl fmt::Debug for CommutativeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CommutativeKey").finish_non_exhaustive()
    }
}

impl PartialEq for CommutativeKey {
    fn eq(&self, other: &Self) -> bool {
        self.exponent == other.exponent
    }
}

impl CommutativeKey {
    /// Fresh key with a random 256-bit exponent.
    pub fn generate<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        loop {
            let mut bytes = [0u8; (KEY_EXPONENT_BITS / 8) as usize];
            rng.fill_bytes(&mut bytes);
            if let Ok(key) = Self::from_exponent_bytes(&bytes) {
                return key;
            }
        }
    }

    /// Key with a uniformly random exponent in `[1, q-1]`.
    pub fn generate_full<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        loop {
            let mut bytes = [0u8; ELEMENT_LEN];
            rng.fill_bytes(&mut bytes);
            if let Ok(key) = Self::from_exponent_bytes(&bytes) {
                return key;
            }
        }
    }

    /// Big-endian exponent; must lie in `[1, q-1]` (so it is coprime to the
    /// prime `q`).
    pub fn from_exponent_bytes(bytes: &[u8]) -> Result<Self, GroupError> {
        let exponent = BigNum::from_slice(bytes)?;
        let params = params();
        if exponent < params.one || exponent >= params.q {
            return Err(GroupError::BadExponent);
        }
        let mut inverse = BigNum::new()?;
        with_ctx(|ctx| inverse.mod_inverse(&exponent, &params.q, ctx))?;
        Ok(CommutativeKey { exponent, inverse })
    }

    pub fn exponent_bytes(&self) -> Vec<u8> {
        self.exponent.to_vec()
    }

    pub fn exponent(&self) -> &BigNumRef {
        &self.exponent
    }

    /// `e^a mod p`.
    pub fn encrypt(&self, element: &GroupElement) -> GroupElement {
        element.pow(&self.exponent)
    }

    /// `e^(a^-1 mod q) mod p`; undoes one [`encrypt`](Self::encrypt) layer.
    pub fn strip(&self, element: &GroupElement) -> GroupElement {
        element.pow(&self.inverse)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    #[test]
    fn modulus_is_the_published_safe_prime() {
        let p = modulus();
        assert_eq!(p.num_bits(), 2048);
        let mut ctx = BigNumContext::new().unwrap();
        assert!(p.is_prime(20, &mut ctx).unwrap());
        assert!(subgroup_order().is_prime(20, &mut ctx).unwrap());
        let mut back = BigNum::new().unwrap();
        back.lshift1(subgroup_order()).unwrap();
        back.add_word(1).unwrap();
        assert_eq!(&*back, p);
    }

    #[test]
    fn hash_to_group_is_deterministic_and_in_subgroup() {
        let mut r = rng(1);
        let ce = CeTcn::random(&mut r);
        assert_eq!(hash_to_group(&ce), hash_to_group(&ce));
        for _ in 0..1_000 {
            let e = hash_to_group(&CeTcn::random(&mut r));
            assert!(e.is_in_subgroup());
        }
    }

    #[test]
    fn hash_to_group_separates_inputs() {
        let mut r = rng(2);
        let mut seen = std::collections::HashSet::new();
        for _ in 0..100_000 {
            assert!(seen.insert(hash_to_group(&CeTcn::random(&mut r))));
        }
    }

    #[test]
    fn decoding_rejects_non_residues_and_out_of_range() {
        let mut one = [0u8; ELEMENT_LEN];
        one[ELEMENT_LEN - 1] = 1;
        assert!(matches!(GroupElement::from_bytes(&one), Err(GroupError::NotInSubgroup)));
        assert!(GroupElement::from_bytes(&[0u8; ELEMENT_LEN]).is_err());
        assert!(GroupElement::from_bytes(&[0xff; ELEMENT_LEN]).is_err());
        assert!(matches!(GroupElement::from_bytes(&[1u8; 10]), Err(GroupError::Length(10))));

        // p - 1 = -1 is a non-residue for p = 3 mod 4.
        let mut minus_one = modulus().to_owned().unwrap();
        minus_one.sub_word(1).unwrap();
        let bytes = minus_one.to_vec_padded(ELEMENT_LEN as i32).unwrap();
        assert!(GroupElement::from_bytes(&bytes).is_err());

        let e = GroupElement::random(&mut rng(3));
        assert_eq!(GroupElement::from_bytes(e.as_bytes()).unwrap(), e);
    }

    #[test]
    fn exponent_one_is_identity() {
        let mut one = [0u8; 1];
        one[0] = 1;
        let key = CommutativeKey::from_exponent_bytes(&one).unwrap();
        let x = GroupElement::random(&mut rng(4));
        assert_eq!(key.encrypt(&x), x);
        assert_eq!(key.strip(&x), x);
    }

    #[test]
    fn exponent_range_is_enforced() {
        assert!(CommutativeKey::from_exponent_bytes(&[0]).is_err());
        assert!(CommutativeKey::from_exponent_bytes(&subgroup_order().to_vec()).is_err());
        let mut q_minus_1 = subgroup_order().to_owned().unwrap();
        q_minus_1.sub_word(1).unwrap();
        assert!(CommutativeKey::from_exponent_bytes(&q_minus_1.to_vec()).is_ok());
    }

    #[test]
    fn layers_commute_and_strip() {
        let mut r = rng(5);
        for i in 0..20 {
            let (a, b) = if i % 2 == 0 {
                (CommutativeKey::generate(&mut r), CommutativeKey::generate(&mut r))
            } else {
                (CommutativeKey::generate_full(&mut r), CommutativeKey::generate_full(&mut r))
            };
            let x = GroupElement::random(&mut r);
            let ab = b.encrypt(&a.encrypt(&x));
            let ba = a.encrypt(&b.encrypt(&x));
            assert_eq!(ab, ba);
            assert_eq!(a.strip(&ab), b.encrypt(&x));
            assert_eq!(a.strip(&a.encrypt(&x)), x);
        }
    }

    #[test]
    fn strip_then_encrypt_is_identity() {
        let mut r = rng(6);
        let key = CommutativeKey::generate(&mut r);
        for _ in 0..1_000 {
            let x = GroupElement::random(&mut r);
            assert_eq!(key.encrypt(&key.strip(&x)), x);
        }
    }

    #[test]
    fn serde_uses_fixed_width_hex() {
        let e = GroupElement::random(&mut rng(7));
        let json = serde_json::to_string(&e).unwrap();
        assert_eq!(json.len(), 2 * ELEMENT_LEN + 2);
        assert_eq!(serde_json::from_str::<GroupElement>(&json).unwrap(), e);
    }
}
