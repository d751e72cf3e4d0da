//! A phone: encounter store, keys and the server-side checks it runs.

use std::collections::BTreeMap;

use chrono::{DateTime, NaiveDate, Utc};
use contact_core::proof::contact_mac;
use contact_core::psi::{refinement_groups, BloomFilter, PsiClientSession, QueryScope, StrippedReply};
use contact_core::{CeTcn, DailyKey, EncounterStore, ExposureCategory, RetentionPolicy, Tcn};
use contact_server::api::{ReleaseMode, TanResponse};
use contact_sim::Broadcast;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::client::{decode_filters, direct_lists, ApiClient, Rejection};
use crate::outcome::{Notification, Order};
use crate::HarnessError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Direct,
    Psi,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Direct => "direct",
            Mode::Psi => "psi",
        }
    }
}

/// What one check against the server revealed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Exposure {
    pub first: BTreeMap<ExposureCategory, usize>,
    pub second: BTreeMap<ExposureCategory, usize>,
    /// PSI sessions spent on this check.
    pub sessions: usize,
    pub decoy_sent: bool,
    /// Padding elements times filter FPR, summed over all tallies.
    pub expected_padding_hits: f64,
}

impl Exposure {
    pub fn first_total(&self) -> usize {
        self.first.values().sum()
    }

    pub fn second_total(&self) -> usize {
        self.second.values().sum()
    }

    pub fn notifications(&self, node: &str) -> Vec<Notification> {
        [(Order::First, &self.first), (Order::Second, &self.second)]
            .into_iter()
            .filter(|(_, counts)| counts.values().any(|n| *n > 0))
            .map(|(order, counts)| Notification { node: node.to_owned(), order, categories: counts.clone() })
            .collect()
    }
}

pub struct Device {
    pub id: String,
    pub store: EncounterStore,
    pub rng: ChaCha20Rng,
    /// Rate-limit identity presented to the server.
    pub client_token: String,
    pub retention: RetentionPolicy,
}

impl Device {
    pub fn new(id: impl Into<String>, seed: u64) -> Self {
        let id = id.into();
        Device {
            client_token: format!("device-{id}-{seed}"),
            id,
            store: EncounterStore::new(),
            rng: ChaCha20Rng::seed_from_u64(seed),
            retention: RetentionPolicy::default(),
        }
    }

    /// Keys for every day from `first` to `last`, drawing missing ones.
    pub fn ensure_keys(&mut self, first: NaiveDate, last: NaiveDate) -> Result<(), HarnessError> {
        let mut day = first;
        while day <= last {
            self.store.key_for(day, &mut self.rng)?;
            day = day.succ_opt().expect("date in range");
        }
        Ok(())
    }

    pub fn key(&self, date: NaiveDate) -> Option<&DailyKey> {
        self.store.keys().find(|k| k.date() == date)
    }

    pub fn tcn_at(&self, at: DateTime<Utc>) -> Option<Tcn> {
        self.key(at.date_naive()).map(|k| k.tcn(contact_core::Tin::of(at)))
    }

    /// Advertising schedule for the simulator: the device's own keys.
    pub fn broadcast(&self) -> Broadcast {
        Broadcast::Keys(self.store.keys().map(|k| (k.date(), k.clone())).collect())
    }

    pub fn ingest(&mut self, tcn: &Tcn, at: DateTime<Utc>, rssi_dbm: i32) -> Result<(), HarnessError> {
        self.store.record_sighting(tcn, at, rssi_dbm)?;
        Ok(())
    }

    /// Encounters long enough to count, with their category.
    pub fn contacts(&self) -> Vec<(CeTcn, ExposureCategory)> {
        self.store
            .classify_exposures()
            .into_iter()
            .filter(|(_, c)| *c != ExposureCategory::None)
            .collect()
    }

    pub fn check(&mut self, client: &ApiClient, mode: Mode, min_query: usize) -> Result<Exposure, HarnessError> {
        match mode {
            Mode::Direct => self.check_direct(client),
            Mode::Psi => self.check_psi(client, min_query),
        }
    }

    /// Downloads the sorted lists and binary-searches each contact.
    pub fn check_direct(&self, client: &ApiClient) -> Result<Exposure, HarnessError> {
        let released = client.batches(0, ReleaseMode::Direct)?;
        let mut exposure = Exposure::default();
        for (ce, category) in self.contacts() {
            let lists = released.batches.iter().map(direct_lists);
            let (mut first, mut second) = (false, false);
            for (f, s) in lists {
                first |= f.binary_search(&ce).is_ok();
                second |= s.binary_search(&ce).is_ok();
            }
            if first {
                *exposure.first.entry(category).or_default() += 1;
            }
            if second {
                *exposure.second.entry(category).or_default() += 1;
            }
        }
        Ok(exposure)
    }

    /// Cardinality check: one session over all contacts, then a per-category
    /// session, which is a decoy when the first found nothing.
    pub fn check_psi(&mut self, client: &ApiClient, min_query: usize) -> Result<Exposure, HarnessError> {
        let released = client.batches(0, ReleaseMode::Psi)?;
        let mut exposure = Exposure::default();
        let contacts = self.contacts();
        if released.batches.is_empty() || contacts.is_empty() {
            return Ok(exposure);
        }
        let filters = released.batches.iter().map(decode_filters).collect::<Result<Vec<_>, _>>()?;
        let ids: Vec<u64> = filters.iter().map(|f| f.batch_id).collect();
        let tally = |stripped: &[StrippedReply], pick: fn(&crate::client::BatchFilters) -> &BloomFilter| {
            stripped.iter().zip(&filters).map(|(s, f)| s.tally(pick(f))).collect::<Vec<_>>()
        };

        let ces: Vec<CeTcn> = contacts.iter().map(|(ce, _)| *ce).collect();
        let mut session = PsiClientSession::new(&mut self.rng);
        let query = session.round1(&ces, min_query, &mut self.rng)?;
        let stripped = self.exchange(client, &mut session, &ids, &query)?;
        exposure.sessions += 1;
        let first = tally(&stripped, |f| &f.first_order);
        let second = tally(&stripped, |f| &f.second_order);
        let hits: usize = first.iter().chain(&second).map(|o| o.total_hits()).sum();
        exposure.expected_padding_hits +=
            first.iter().chain(&second).flat_map(|o| &o.groups).map(|g| g.expected_padding_hits).sum::<f64>();

        let plan = refinement_groups(&contacts, hits, &mut self.rng);
        let mut session = PsiClientSession::new(&mut self.rng);
        let query = session.round1_grouped(&plan.groups, min_query, &mut self.rng)?;
        let stripped = self.exchange(client, &mut session, &ids, &query)?;
        exposure.sessions += 1;
        exposure.decoy_sent = plan.decoy;
        if plan.decoy {
            return Ok(exposure);
        }
        for (outcomes, into) in [
            (tally(&stripped, |f| &f.first_order), &mut exposure.first),
            (tally(&stripped, |f| &f.second_order), &mut exposure.second),
        ] {
            for group in outcomes.iter().flat_map(|o| &o.groups) {
                if let QueryScope::Category(c) = group.scope {
                    if group.hits > 0 {
                        *into.entry(c).or_default() += group.hits;
                    }
                }
            }
        }
        Ok(exposure)
    }

    fn exchange(
        &self,
        client: &ApiClient,
        session: &mut PsiClientSession,
        ids: &[u64],
        query: &contact_core::psi::PsiMessage,
    ) -> Result<Vec<StrippedReply>, HarnessError> {
        let replies = client
            .psi_round1(&self.client_token, ids, query)?
            .map_err(HarnessError::Rejected)?;
        if replies.iter().map(|(id, _)| *id).ne(ids.iter().copied()) {
            return Err(HarnessError::Http("replies out of batch order".into()));
        }
        let messages: Vec<_> = replies.into_iter().map(|(_, m)| m).collect();
        Ok(session.strip_replies(&messages)?)
    }

    /// Uploads keys inside the retention window under `tan`.
    pub fn report(
        &self,
        client: &ApiClient,
        tan: &str,
        now: DateTime<Utc>,
    ) -> Result<Result<usize, Rejection>, HarnessError> {
        let payload = self.store.prepare_report(self.retention, now)?;
        client.report(tan, &payload.keys)
    }

    /// Proves knowledge of contact ceTCNs to earn a second-order TAN.
    pub fn prove_contact(&self, client: &ApiClient) -> Result<Result<TanResponse, Rejection>, HarnessError> {
        let nonce = client.proof_challenge()?;
        let macs: Vec<_> = self.contacts().iter().map(|(ce, _)| contact_mac(ce, &nonce)).collect();
        client.proof_response(&nonce, &macs)
    }
}
