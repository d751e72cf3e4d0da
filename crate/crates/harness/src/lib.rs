//! Orchestration of end-to-end scenarios and attack experiments.
//!
//! Everything runs in process: the tracing server behind its HTTP router,
//! devices built on the encounter store, and encounters produced by the BLE
//! simulator.

pub mod attacks;
pub mod bench;
pub mod client;
pub mod device;
pub mod e2e;
pub mod outcome;
pub mod world;

pub use client::{ApiClient, Backend, Rejection};
pub use device::{Device, Exposure, Mode};
pub use outcome::{Notification, Order, ScenarioOutcome, Verdict};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("line {line}: {message}")]
    Scenario { line: usize, message: String },
    #[error(transparent)]
    Sim(#[from] contact_sim::SimError),
    #[error(transparent)]
    Store(#[from] contact_core::store::StoreError),
    #[error(transparent)]
    Psi(#[from] contact_core::psi::PsiError),
    #[error(transparent)]
    Server(#[from] contact_server::ServerError),
    #[error("server rejected request: {} {}", .0.status, .0.body.code)]
    Rejected(Rejection),
    #[error("http: {0}")]
    Http(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}
