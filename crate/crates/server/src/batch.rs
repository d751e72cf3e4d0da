//! Sealed infected batches and the open batch collecting new uploads.

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use chrono::{DateTime, Utc};
use contact_core::psi::{build_filter, BloomFilter, CommutativeKey};
use contact_core::CeTcn;
use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OrderTag {
    FirstOrder,
    SecondOrder,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BatchEntry {
    pub ce_tcn: CeTcn,
    pub order: OrderTag,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum BatchError {
    #[error("batch {0} is sealed")]
    Sealed(u64),
    #[error("no batch {0}")]
    Unknown(u64),
}

/// PSI filters over the batch entries encrypted under the batch key, one
/// per notification order.
#[derive(Debug)]
pub struct BatchFilters {
    pub first_order: BloomFilter,
    pub second_order: BloomFilter,
}

#[derive(Debug)]
pub struct InfectedBatch {
    id: u64,
    sealed_at: DateTime<Utc>,
    entries: Vec<BatchEntry>,
    server_key: CommutativeKey,
    filters: OnceLock<BatchFilters>,
}

impl InfectedBatch {
    /// Entries are shuffled across reports and then sorted, so their
    /// release order depends on the ceTCN values alone.
    pub fn seal<R: RngCore + ?Sized>(
        id: u64,
        sealed_at: DateTime<Utc>,
        mut entries: Vec<BatchEntry>,
        rng: &mut R,
    ) -> Self {
        entries.shuffle(rng);
        entries.sort_unstable();
        InfectedBatch {
            id,
            sealed_at,
            entries,
            server_key: CommutativeKey::generate(rng),
            filters: OnceLock::new(),
        }
    }

    pub(crate) fn restore(record: SealedBatchRecord) -> Result<Self, String> {
        let server_key = hex::decode(&record.server_key)
            .map_err(|e| e.to_string())
            .and_then(|b| CommutativeKey::from_exponent_bytes(&b).map_err(|e| e.to_string()))?;
        let mut entries = record.entries;
        entries.sort_unstable();
        Ok(InfectedBatch {
            id: record.id,
            sealed_at: record.sealed_at,
            entries,
            server_key,
            filters: OnceLock::new(),
        })
    }

    pub(crate) fn to_record(&self) -> SealedBatchRecord {
        SealedBatchRecord {
            id: self.id,
            sealed_at: self.sealed_at,
            entries: self.entries.clone(),
            server_key: hex::encode(self.server_key.exponent_bytes()),
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn sealed_at(&self) -> DateTime<Utc> {
        self.sealed_at
    }

    pub fn entries(&self) -> &[BatchEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sorted ascending, as released for direct download.
    pub fn ce_tcns(&self, order: OrderTag) -> Vec<CeTcn> {
        self.entries
            .iter()
            .filter(|e| e.order == order)
            .map(|e| e.ce_tcn)
            .collect()
    }

    pub fn server_key(&self) -> &CommutativeKey {
        &self.server_key
    }

    /// Computed on first use; direct-download deployments never pay for it.
    pub fn filters(&self) -> &BatchFilters {
        self.filters.get_or_init(|| BatchFilters {
            first_order: build_filter(&self.server_key, &self.ce_tcns(OrderTag::FirstOrder)),
            second_order: build_filter(&self.server_key, &self.ce_tcns(OrderTag::SecondOrder)),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub(crate) struct SealedBatchRecord {
    pub id: u64,
    pub sealed_at: DateTime<Utc>,
    pub entries: Vec<BatchEntry>,
    pub server_key: String,
}

#[derive(Debug)]
pub struct OpenBatch {
    pub id: u64,
    pub opened_at: DateTime<Utc>,
    pub entries: Vec<BatchEntry>,
}

#[derive(Debug)]
pub struct BatchLog {
    sealed: BTreeMap<u64, Arc<InfectedBatch>>,
    open: OpenBatch,
}

impl BatchLog {
    pub fn new(opened_at: DateTime<Utc>) -> Self {
        BatchLog {
            sealed: BTreeMap::new(),
            open: OpenBatch {
                id: 1,
                opened_at,
                entries: Vec::new(),
            },
        }
    }

    pub fn open(&self) -> &OpenBatch {
        &self.open
    }

    pub fn enqueue(&mut self, batch_id: u64, entries: &[BatchEntry]) -> Result<(), BatchError> {
        if batch_id == self.open.id {
            self.open.entries.extend_from_slice(entries);
            Ok(())
        } else if self.sealed.contains_key(&batch_id) {
            Err(BatchError::Sealed(batch_id))
        } else {
            Err(BatchError::Unknown(batch_id))
        }
    }

    /// Swaps in a fresh open batch and returns the sealed one.
    pub fn seal<R: RngCore + ?Sized>(&mut self, now: DateTime<Utc>, rng: &mut R) -> Arc<InfectedBatch> {
        let next = OpenBatch {
            id: self.open.id + 1,
            opened_at: now,
            entries: Vec::new(),
        };
        let open = std::mem::replace(&mut self.open, next);
        let batch = Arc::new(InfectedBatch::seal(open.id, now, open.entries, rng));
        self.sealed.insert(batch.id, batch.clone());
        batch
    }

    pub(crate) fn insert_sealed(&mut self, batch: InfectedBatch) {
        if batch.id >= self.open.id {
            self.open.id = batch.id + 1;
            self.open.entries.clear();
        }
        self.open.opened_at = self.open.opened_at.max(batch.sealed_at);
        self.sealed.insert(batch.id, Arc::new(batch));
    }

    pub(crate) fn reopen(&mut self, batch_id: u64, opened_at: DateTime<Utc>) {
        self.open = OpenBatch {
            id: batch_id,
            opened_at,
            entries: Vec::new(),
        };
    }

    pub fn since(&self, batch_id: u64) -> Vec<Arc<InfectedBatch>> {
        self.sealed
            .range(batch_id.saturating_add(1)..)
            .map(|(_, b)| b.clone())
            .collect()
    }

    pub fn get(&self, batch_id: u64) -> Option<Arc<InfectedBatch>> {
        self.sealed.get(&batch_id).cloned()
    }

    pub fn sealed(&self) -> impl Iterator<Item = &Arc<InfectedBatch>> {
        self.sealed.values()
    }

    pub fn latest_sealed_id(&self) -> u64 {
        self.sealed.keys().next_back().copied().unwrap_or(0)
    }

    pub fn retain(&mut self, mut keep: impl FnMut(&InfectedBatch) -> bool) -> usize {
        let before = self.sealed.len();
        self.sealed.retain(|_, b| keep(b));
        before - self.sealed.len()
    }
}
