use std::path::PathBuf;

use chrono::Duration;
use contact_core::psi::PsiParams;
use contact_core::RetentionPolicy;
use serde::{Deserialize, Serialize};

use crate::rate::RateLimitConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub retention_days: RetentionPolicy,
    pub tan_validity_secs: i64,
    pub batch_period_secs: i64,
    pub min_query: usize,
    pub max_query_groups: usize,
    /// Batches one PSI session may be answered against.
    pub max_query_batches: usize,
    pub rate_limit_enabled: bool,
    pub rate_limit: RateLimitConfig,
    pub medical_credentials: Vec<String>,
    pub proof_nonce_ttl_secs: i64,
    pub proof_max_macs: usize,
    /// Journal file; `None` keeps everything in memory.
    pub storage: Option<PathBuf>,
    /// Fixed RNG seed for reproducible runs. Never set in production.
    pub seed: Option<u64>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            retention_days: RetentionPolicy::default(),
            tan_validity_secs: 24 * 3600,
            batch_period_secs: 3600,
            min_query: 100,
            max_query_groups: 3,
            max_query_batches: 21 * 24,
            rate_limit_enabled: true,
            rate_limit: RateLimitConfig::default(),
            medical_credentials: Vec::new(),
            proof_nonce_ttl_secs: 300,
            proof_max_macs: 10_000,
            storage: None,
            seed: None,
        }
    }
}

impl ServerConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn psi_params(&self) -> PsiParams {
        PsiParams {
            min_query: self.min_query,
            max_groups: self.max_query_groups,
        }
    }

    pub fn rate_limit(&self) -> Option<RateLimitConfig> {
        self.rate_limit_enabled.then_some(self.rate_limit)
    }

    pub fn tan_validity(&self) -> Duration {
        Duration::seconds(self.tan_validity_secs)
    }

    pub fn batch_period(&self) -> Duration {
        Duration::seconds(self.batch_period_secs)
    }

    pub fn proof_nonce_ttl(&self) -> Duration {
        Duration::seconds(self.proof_nonce_ttl_secs)
    }
}
