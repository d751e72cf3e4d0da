//! Per-client PSI session limit.
//!
//! A bucket of `sessions` tokens where each spent token comes back
//! `period` after it was spent. Unlike a continuously refilling bucket this
//! caps every sliding window of length `period` at `sessions`.

use std::collections::{HashMap, VecDeque};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateLimitConfig {
    pub sessions: u32,
    pub period_secs: i64,
}

impl Default for RateLimitConfig {
    fn default() -> Self {
        RateLimitConfig {
            sessions: 12,
            period_secs: 24 * 3600,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RateDecision {
    Allow,
    RetryAfter(Duration),
}

#[derive(Debug, Default)]
pub struct RateLimiter {
    config: Option<RateLimitConfig>,
    spent: HashMap<String, VecDeque<DateTime<Utc>>>,
}

impl RateLimiter {
    /// `None` disables limiting.
    pub fn new(config: Option<RateLimitConfig>) -> Self {
        RateLimiter {
            config,
            spent: HashMap::new(),
        }
    }

    pub fn check(&mut self, client: &str, now: DateTime<Utc>) -> RateDecision {
        let Some(cfg) = self.config else {
            return RateDecision::Allow;
        };
        let period = Duration::seconds(cfg.period_secs);
        let stamps = self.spent.entry(client.to_owned()).or_default();
        while stamps.front().is_some_and(|t| now - *t >= period) {
            stamps.pop_front();
        }
        if stamps.len() < cfg.sessions as usize {
            stamps.push_back(now);
            return RateDecision::Allow;
        }
        let oldest = *stamps.front().expect("bucket is full");
        RateDecision::RetryAfter(oldest + period - now)
    }

    pub fn forget_idle(&mut self, now: DateTime<Utc>) {
        if let Some(cfg) = self.config {
            let period = Duration::seconds(cfg.period_secs);
            self.spent
                .retain(|_, s| s.back().is_some_and(|t| now - *t < period));
        }
    }
}
