use std::sync::{Arc, Mutex, MutexGuard};

use chrono::{DateTime, Utc};
use contact_core::proof::{ContactMac, NONCE_LEN};
use contact_core::psi::{server_respond, validate_query, PsiMessage};
use contact_core::DailyKey;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::batch::{BatchEntry, BatchLog, InfectedBatch, OrderTag};
use crate::clock::Clock;
use crate::config::ServerConfig;
use crate::journal::{Journal, JournalRecord};
use crate::proof::{verify_macs, ProofError, ProofVerifier};
use crate::rate::{RateDecision, RateLimiter};
use crate::tan::{TanKind, TanTable, UploadAuthorization};
use crate::ServerError;

#[derive(Debug)]
struct State {
    tans: TanTable,
    batches: BatchLog,
    limiter: RateLimiter,
    proofs: ProofVerifier,
    rng: ChaCha20Rng,
    journal: Option<Journal>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PurgeCounts {
    pub batches: usize,
    pub tans: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Health {
    pub status: String,
    pub open_batch_id: u64,
    pub open_entries: usize,
    pub latest_batch_id: u64,
    pub sealed_batches: usize,
}

/// The tracing backend. All methods take `&self`; one mutex guards the
/// mutable state and PSI exponentiation runs outside it.
pub struct TracingServer {
    config: ServerConfig,
    clock: Arc<dyn Clock>,
    state: Mutex<State>,
}

impl std::fmt::Debug for TracingServer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TracingServer").field("config", &self.config).finish_non_exhaustive()
    }
}

impl TracingServer {
    /// Opens the server, replaying the journal if one is configured. Entries
    /// enqueued before a crash land in the re-opened batch.
    pub fn open(config: ServerConfig, clock: Arc<dyn Clock>) -> Result<Self, ServerError> {
        let now = clock.now();
        let rng = match config.seed {
            Some(seed) => ChaCha20Rng::seed_from_u64(seed),
            None => ChaCha20Rng::from_entropy(),
        };
        let mut state = State {
            tans: TanTable::default(),
            batches: BatchLog::new(now),
            limiter: RateLimiter::new(config.rate_limit()),
            proofs: ProofVerifier::default(),
            rng,
            journal: None,
        };
        if let Some(path) = &config.storage {
            let (journal, records) = Journal::open(path)?;
            for (idx, record) in records.into_iter().enumerate() {
                apply(&mut state, record).map_err(|message| ServerError::Journal {
                    line: idx + 1,
                    message,
                })?;
            }
            state.journal = Some(journal);
        }
        Ok(TracingServer {
            config,
            clock,
            state: Mutex::new(state),
        })
    }

    pub fn config(&self) -> &ServerConfig {
        &self.config
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn issue_tan(&self, credential: &str) -> Result<UploadAuthorization, ServerError> {
        if !self.config.medical_credentials.iter().any(|c| c == credential) {
            return Err(ServerError::BadCredential);
        }
        let now = self.now();
        let mut st = self.lock();
        let st = &mut *st;
        let auth = st
            .tans
            .issue(TanKind::Medical, now, self.config.tan_validity(), &mut st.rng);
        journal_append(st, &[JournalRecord::Tan(auth.clone())])?;
        Ok(auth)
    }

    /// Regenerates every ceTCN of every reported day and queues them for the
    /// next batch. The keys are dropped on return and never persisted.
    pub fn accept_report(&self, tan: &str, keys: Vec<DailyKey>) -> Result<usize, ServerError> {
        let now = self.now();
        let mut st = self.lock();
        let kind = st.tans.check(tan, now)?.kind;
        self.validate_keys(&keys, now)?;
        let order = match kind {
            TanKind::Medical => OrderTag::FirstOrder,
            TanKind::SecondOrder => OrderTag::SecondOrder,
        };
        let entries: Vec<BatchEntry> = keys
            .iter()
            .flat_map(DailyKey::regenerate_day)
            .map(|d| BatchEntry {
                ce_tcn: d.ce_tcn,
                order,
            })
            .collect();
        drop(keys);
        let batch_id = st.batches.open().id;
        journal_append(
            &mut st,
            &[
                JournalRecord::Enqueue {
                    batch_id,
                    entries: entries.clone(),
                },
                JournalRecord::TanUsed { tan: tan.to_owned() },
            ],
        )?;
        st.batches.enqueue(batch_id, &entries)?;
        st.tans.consume(tan);
        Ok(entries.len())
    }

    fn validate_keys(&self, keys: &[DailyKey], now: DateTime<Utc>) -> Result<(), ServerError> {
        if keys.is_empty() {
            return Err(ServerError::KeysRequired);
        }
        let window = self.config.retention_days;
        if keys.len() > window.window_days() as usize {
            return Err(ServerError::InvalidReport(format!(
                "{} keys exceed the {}-day window",
                keys.len(),
                window.window_days()
            )));
        }
        let today = now.date_naive();
        let mut dates: Vec<_> = keys.iter().map(DailyKey::date).collect();
        dates.sort_unstable();
        if dates.windows(2).any(|w| w[0] == w[1]) {
            return Err(ServerError::InvalidReport("duplicate key dates".into()));
        }
        if let Some(bad) = dates.iter().find(|d| **d > today || !window.retains(**d, today)) {
            return Err(ServerError::InvalidReport(format!(
                "key date {bad} outside the retention window"
            )));
        }
        Ok(())
    }

    /// Seals the open batch if it has been open for a full batch period.
    pub fn tick(&self) -> Result<Option<Arc<InfectedBatch>>, ServerError> {
        let now = self.now();
        let due = now - self.lock().batches.open().opened_at >= self.config.batch_period();
        if due {
            self.seal_batch().map(Some)
        } else {
            Ok(None)
        }
    }

    /// Seals regardless of age. Empty batches are published too.
    pub fn seal_batch(&self) -> Result<Arc<InfectedBatch>, ServerError> {
        let now = self.now();
        let mut st = self.lock();
        let st = &mut *st;
        let batch = st.batches.seal(now, &mut st.rng);
        compact(st)?;
        Ok(batch)
    }

    pub fn release(&self, since: u64) -> Vec<Arc<InfectedBatch>> {
        self.lock().batches.since(since)
    }

    pub fn batch(&self, id: u64) -> Option<Arc<InfectedBatch>> {
        self.lock().batches.get(id)
    }

    /// Answers one PSI session against each requested batch. Counts against
    /// the client's rate limit only once the query shape is valid.
    pub fn psi_round1(
        &self,
        client_token: &str,
        batch_ids: &[u64],
        query: &PsiMessage,
    ) -> Result<Vec<(u64, PsiMessage)>, ServerError> {
        let params = self.config.psi_params();
        validate_query(query, &params)?;
        if batch_ids.is_empty() || batch_ids.len() > self.config.max_query_batches {
            return Err(ServerError::InvalidQuery(format!(
                "between 1 and {} batch ids required",
                self.config.max_query_batches
            )));
        }
        let now = self.now();
        let (batches, mut rng) = {
            let mut st = self.lock();
            let batches = batch_ids
                .iter()
                .map(|id| st.batches.get(*id).ok_or(ServerError::UnknownBatch(*id)))
                .collect::<Result<Vec<_>, _>>()?;
            if let RateDecision::RetryAfter(wait) = st.limiter.check(client_token, now) {
                return Err(ServerError::RateLimited {
                    retry_after_secs: wait.num_seconds().max(1) as u64,
                });
            }
            let mut seed = [0u8; 32];
            st.rng.fill_bytes(&mut seed);
            (batches, ChaCha20Rng::from_seed(seed))
        };
        Ok(batches
            .iter()
            .map(|b| {
                let reply = server_respond(b.server_key(), query, &params, &mut rng)
                    .expect("query validated above");
                (b.id(), reply)
            })
            .collect())
    }

    pub fn proof_challenge(&self) -> ([u8; NONCE_LEN], DateTime<Utc>) {
        let now = self.now();
        let mut st = self.lock();
        let st = &mut *st;
        st.proofs.challenge(now, self.config.proof_nonce_ttl(), &mut st.rng)
    }

    /// Accepts if any MAC matches a first-order infected ceTCN still held,
    /// and then issues a SECOND_ORDER TAN.
    pub fn proof_response(
        &self,
        nonce: &[u8; NONCE_LEN],
        macs: &[ContactMac],
    ) -> Result<UploadAuthorization, ServerError> {
        let now = self.now();
        let mut st = self.lock();
        st.proofs.redeem(nonce, now)?;
        if macs.len() > self.config.proof_max_macs {
            return Err(ProofError::TooManyMacs(macs.len(), self.config.proof_max_macs).into());
        }
        let infected = st.batches.sealed().flat_map(|b| {
            b.entries()
                .iter()
                .filter(|e| e.order == OrderTag::FirstOrder)
                .map(|e| &e.ce_tcn)
        });
        verify_macs(nonce, macs, infected)?;
        let st = &mut *st;
        let auth = st
            .tans
            .issue(TanKind::SecondOrder, now, self.config.tan_validity(), &mut st.rng);
        journal_append(st, &[JournalRecord::Tan(auth.clone())])?;
        Ok(auth)
    }

    /// Deletes batches sealed at least the retention window ago and expired
    /// TANs, then compacts the journal.
    pub fn purge(&self) -> Result<PurgeCounts, ServerError> {
        let now = self.now();
        let window = self.config.retention_days;
        let mut st = self.lock();
        let batches = st.batches.retain(|b| window.retains_instant(b.sealed_at(), now));
        let tans = st.tans.purge_expired(now);
        st.limiter.forget_idle(now);
        st.proofs.forget_expired(now);
        compact(&mut st)?;
        Ok(PurgeCounts { batches, tans })
    }

    pub fn health(&self) -> Health {
        let st = self.lock();
        Health {
            status: "ok".into(),
            open_batch_id: st.batches.open().id,
            open_entries: st.batches.open().entries.len(),
            latest_batch_id: st.batches.latest_sealed_id(),
            sealed_batches: st.batches.sealed().count(),
        }
    }
}

fn journal_append(st: &mut State, records: &[JournalRecord]) -> Result<(), ServerError> {
    match &mut st.journal {
        Some(j) => j.append(records),
        None => Ok(()),
    }
}

fn compact(st: &mut State) -> Result<(), ServerError> {
    let Some(journal) = &mut st.journal else {
        return Ok(());
    };
    let open = st.batches.open();
    let records = st
        .tans
        .iter()
        .cloned()
        .map(JournalRecord::Tan)
        .chain(st.batches.sealed().map(|b| JournalRecord::Sealed(b.to_record())))
        .chain([
            JournalRecord::Opened {
                batch_id: open.id,
                opened_at: open.opened_at,
            },
            JournalRecord::Enqueue {
                batch_id: open.id,
                entries: open.entries.clone(),
            },
        ]);
    journal.rewrite(records)
}

fn apply(st: &mut State, record: JournalRecord) -> Result<(), String> {
    match record {
        JournalRecord::Tan(auth) => st.tans.insert(auth),
        JournalRecord::TanUsed { tan } => st.tans.consume(&tan),
        JournalRecord::Opened {
            batch_id,
            opened_at,
        } => {
            if batch_id < st.batches.open().id {
                return Err(format!("batch {batch_id} re-opened after sealing"));
            }
            st.batches.reopen(batch_id, opened_at);
        }
        JournalRecord::Enqueue { batch_id, entries } => {
            st.batches.enqueue(batch_id, &entries).map_err(|e| e.to_string())?
        }
        JournalRecord::Sealed(record) => st.batches.insert_sealed(InfectedBatch::restore(record)?),
    }
    Ok(())
}
