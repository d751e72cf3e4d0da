//! Reference tracing backend.
//!
//! Reports are verified by regenerating every ceTCN from the uploaded daily
//! keys. Verified entries collect in an open batch that is sealed hourly,
//! shuffled and sorted, and released either as sorted lists (direct
//! download) or as per-batch Bloom filters for PSI-cardinality queries.

pub mod api;
pub mod batch;
pub mod clock;
pub mod config;
mod journal;
pub mod proof;
pub mod rate;
mod server;
pub mod tan;

use contact_core::psi::PsiError;

pub use batch::{BatchEntry, BatchError, InfectedBatch, OrderTag};
pub use clock::{Clock, ManualClock, SystemClock};
pub use config::ServerConfig;
pub use proof::ProofError;
pub use rate::RateLimitConfig;
pub use server::{Health, PurgeCounts, TracingServer};
pub use tan::{TanError, TanKind, UploadAuthorization};

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error("invalid credential")]
    BadCredential,
    #[error(transparent)]
    Tan(#[from] TanError),
    #[error("reports must carry daily keys; raw TCNs are not accepted")]
    KeysRequired,
    #[error("invalid report: {0}")]
    InvalidReport(String),
    #[error("rate limit exceeded")]
    RateLimited { retry_after_secs: u64 },
    #[error(transparent)]
    Psi(#[from] PsiError),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("unknown batch {0}")]
    UnknownBatch(u64),
    #[error(transparent)]
    Proof(#[from] ProofError),
    #[error(transparent)]
    Batch(#[from] BatchError),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("storage: {0}")]
    Io(#[from] std::io::Error),
    #[error("journal line {line}: {message}")]
    Journal { line: usize, message: String },
}

impl ServerError {
    pub fn code(&self) -> &'static str {
        match self {
            ServerError::BadCredential => "bad_credential",
            ServerError::Tan(TanError::Unknown) => "tan_unknown",
            ServerError::Tan(TanError::Expired) => "tan_expired",
            ServerError::Tan(TanError::Consumed) => "tan_consumed",
            ServerError::KeysRequired => "keys_required",
            ServerError::InvalidReport(_) => "invalid_report",
            ServerError::RateLimited { .. } => "rate_limited",
            ServerError::Psi(PsiError::QueryTooSmall { .. }) => "query_too_small",
            ServerError::Psi(_) | ServerError::InvalidQuery(_) => "invalid_query",
            ServerError::UnknownBatch(_) => "unknown_batch",
            ServerError::Proof(ProofError::NoMatch) => "proof_rejected",
            ServerError::Proof(ProofError::TooManyMacs(..)) => "proof_too_large",
            ServerError::Proof(_) => "proof_nonce",
            ServerError::Batch(_) => "batch_sealed",
            ServerError::BadRequest(_) => "bad_request",
            ServerError::Io(_) | ServerError::Journal { .. } => "storage",
        }
    }

    pub fn http_status(&self) -> u16 {
        match self {
            ServerError::BadCredential | ServerError::Tan(TanError::Unknown) => 401,
            ServerError::Tan(TanError::Consumed) => 409,
            ServerError::Tan(TanError::Expired) => 410,
            ServerError::KeysRequired
            | ServerError::InvalidReport(_)
            | ServerError::Psi(_)
            | ServerError::InvalidQuery(_) => 422,
            ServerError::RateLimited { .. } => 429,
            ServerError::UnknownBatch(_) => 404,
            ServerError::Proof(_) => 403,
            ServerError::Batch(_) => 409,
            ServerError::BadRequest(_) => 400,
            ServerError::Io(_) | ServerError::Journal { .. } => 500,
        }
    }
}
