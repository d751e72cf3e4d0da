//! Building blocks of a decentralized contact-tracing protocol.
//!
//! * [`tcn`]: daily keys, temporary contact numbers and contact-event TCNs.
//! * [`store`]: the device-side encounter store.
//! * [`proof`]: the proof-of-contact MAC.
//! * [`psi`]: the commutative cipher, Bloom filter and PSI-cardinality rounds.

pub mod proof;
pub mod psi;
pub mod store;
pub mod tcn;

pub use store::{EncounterRecord, EncounterStore, ExposureCategory, ExposureThresholds, RetentionPolicy};
pub use tcn::{CeTcn, DailyKey, Tcn, Tin};
