//! Proof of contact for second-order reports.
//!
//! The server sends a fresh nonce `r`. The client answers with
//! `HMAC-SHA256(key = ceTCN, msg = r)` for its observed ceTCNs. The server
//! recomputes the MAC for every infected ceTCN it holds and accepts on any
//! match. The ceTCN itself never crosses the wire, but the server does learn
//! which infected entry matched.

use hmac::{Hmac, Mac};
use sha2::Sha256;

use crate::tcn::CeTcn;

pub const NONCE_LEN: usize = 32;

pub type ContactMac = [u8; 32];

pub fn contact_mac(ce_tcn: &CeTcn, nonce: &[u8; NONCE_LEN]) -> ContactMac {
    let mut mac = Hmac::<Sha256>::new_from_slice(ce_tcn.as_bytes()).expect("any key length");
    mac.update(nonce);
    mac.finalize().into_bytes().into()
}
