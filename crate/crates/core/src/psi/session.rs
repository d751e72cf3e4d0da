//! Client and server rounds of the PSI-cardinality exchange.
//!
//! 1. The client hashes its ceTCNs into the group, pads each query group to
//!    `min_query` with random values, shuffles and encrypts under a
//!    single-use key.
//! 2. The server re-encrypts every element under the batch key and shuffles
//!    inside each group, so positions no longer identify elements.
//! 3. The client strips its own layer and probes the batch filter, which
//!    holds the infected ceTCNs encrypted under the same batch key. It learns
//!    how many elements of each group matched and nothing about which.
//!
//! A query may carry up to three groups so that the per-category refinement
//! fits in one session.

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::bloom::{BloomFilter, Membership};
use super::group::{hash_to_group, CommutativeKey, GroupElement};
use crate::store::ExposureCategory;
use crate::tcn::CeTcn;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PsiError {
    #[error("session already used; create a new one per query")]
    SessionReused,
    #[error("session has no outstanding query")]
    NoOutstandingQuery,
    #[error("query group {group} has {len} elements, minimum is {min}")]
    QueryTooSmall { group: usize, len: usize, min: usize },
    #[error("query has {0} groups, allowed 1..={1}")]
    GroupCount(usize, usize),
    #[error("group sizes sum to {declared} but {actual} elements were sent")]
    GroupSizeMismatch { declared: usize, actual: usize },
    #[error("reply does not match the query shape")]
    ReplyMismatch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PsiParams {
    pub min_query: usize,
    pub max_groups: usize,
}

impl Default for PsiParams {
    fn default() -> Self {
        PsiParams {
            min_query: 100,
            max_groups: 3,
        }
    }
}

/// What a query group stands for on the client side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum QueryScope {
    AllContacts,
    Category(ExposureCategory),
}

/// Elements sent or returned, with the sizes of consecutive groups.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PsiMessage {
    pub elements: Vec<GroupElement>,
    pub groups: Vec<usize>,
}

impl PsiMessage {
    fn check_shape(&self) -> Result<(), PsiError> {
        let declared: usize = self.groups.iter().sum();
        if declared != self.elements.len() {
            return Err(PsiError::GroupSizeMismatch {
                declared,
                actual: self.elements.len(),
            });
        }
        Ok(())
    }

    fn group_slices(&self) -> impl Iterator<Item = &[GroupElement]> {
        let mut offset = 0;
        self.groups.iter().map(move |len| {
            let slice = &self.elements[offset..offset + len];
            offset += len;
            slice
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SessionState {
    Init,
    Round1Sent,
    Done,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct GroupPlan {
    scope: QueryScope,
    real: usize,
    padding: usize,
}

/// Client half of one PSI exchange. Single use: a fresh key per query keeps
/// the server from recognising repeated ceTCNs across sessions.
#[derive(Debug)]
pub struct PsiClientSession {
    key: CommutativeKey,
    state: SessionState,
    plan: Vec<GroupPlan>,
}

impl PsiClientSession {
    pub fn new<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        PsiClientSession {
            key: CommutativeKey::generate(rng),
            state: SessionState::Init,
            plan: Vec::new(),
        }
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    /// One group holding every observed ceTCN.
    pub fn round1<R: RngCore + ?Sized>(
        &mut self,
        observed: &[CeTcn],
        min_query: usize,
        rng: &mut R,
    ) -> Result<PsiMessage, PsiError> {
        self.round1_grouped(&[(QueryScope::AllContacts, observed.to_vec())], min_query, rng)
    }

    pub fn round1_grouped<R: RngCore + ?Sized>(
        &mut self,
        groups: &[(QueryScope, Vec<CeTcn>)],
        min_query: usize,
        rng: &mut R,
    ) -> Result<PsiMessage, PsiError> {
        if self.state != SessionState::Init {
            return Err(PsiError::SessionReused);
        }
        let mut elements = Vec::new();
        let mut sizes = Vec::with_capacity(groups.len());
        for (scope, members) in groups {
            let padding = min_query.saturating_sub(members.len());
            let mut plain: Vec<CeTcn> = members.clone();
            plain.extend((0..padding).map(|_| CeTcn::random(rng)));
            plain.shuffle(rng);
            elements.extend(plain.iter().map(|ce| self.key.encrypt(&hash_to_group(ce))));
            sizes.push(plain.len());
            self.plan.push(GroupPlan {
                scope: *scope,
                real: members.len(),
                padding,
            });
        }
        self.state = SessionState::Round1Sent;
        Ok(PsiMessage {
            elements,
            groups: sizes,
        })
    }

    /// Removes the client layer from a server reply. Ends the session.
    pub fn strip_reply(&mut self, reply: &PsiMessage) -> Result<StrippedReply, PsiError> {
        let mut stripped = self.strip_replies(std::slice::from_ref(reply))?;
        Ok(stripped.pop().expect("one reply in, one out"))
    }

    /// Same as [`strip_reply`](Self::strip_reply) for a query the server
    /// answered once per batch, each under that batch's key.
    pub fn strip_replies(&mut self, replies: &[PsiMessage]) -> Result<Vec<StrippedReply>, PsiError> {
        if self.state != SessionState::Round1Sent {
            return Err(PsiError::NoOutstandingQuery);
        }
        self.state = SessionState::Done;
        let expected: Vec<usize> = self.plan.iter().map(|g| g.real + g.padding).collect();
        if replies
            .iter()
            .any(|r| r.groups != expected || r.check_shape().is_err())
        {
            return Err(PsiError::ReplyMismatch);
        }
        Ok(replies
            .iter()
            .map(|reply| StrippedReply {
                groups: self
                    .plan
                    .iter()
                    .zip(reply.group_slices())
                    .map(|(plan, slice)| (*plan, slice.iter().map(|e| self.key.strip(e)).collect()))
                    .collect(),
            })
            .collect())
    }

    /// Strips the reply and counts filter hits per group.
    pub fn finish(
        &mut self,
        reply: &PsiMessage,
        filter: &dyn Membership,
    ) -> Result<PsiOutcome, PsiError> {
        Ok(self.strip_reply(reply)?.tally(filter))
    }
}

/// Reply elements carrying only the server layer, grouped as queried.
#[derive(Debug)]
pub struct StrippedReply {
    groups: Vec<(GroupPlan, Vec<GroupElement>)>,
}

impl StrippedReply {
    pub fn tally(&self, filter: &dyn Membership) -> PsiOutcome {
        let fpr = filter.false_positive_rate();
        PsiOutcome {
            groups: self
                .groups
                .iter()
                .map(|(plan, elements)| GroupCount {
                    scope: plan.scope,
                    hits: elements.iter().filter(|e| filter.contains(e)).count(),
                    real: plan.real,
                    padding: plan.padding,
                    expected_padding_hits: plan.padding as f64 * fpr,
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupCount {
    pub scope: QueryScope,
    /// Intersection cardinality, including any filter false positives.
    pub hits: usize,
    pub real: usize,
    pub padding: usize,
    /// Hits the padding is expected to contribute through false positives.
    pub expected_padding_hits: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsiOutcome {
    pub groups: Vec<GroupCount>,
}

impl PsiOutcome {
    pub fn total_hits(&self) -> usize {
        self.groups.iter().map(|g| g.hits).sum()
    }

    pub fn hits_for(&self, scope: QueryScope) -> usize {
        self.groups
            .iter()
            .filter(|g| g.scope == scope)
            .map(|g| g.hits)
            .sum()
    }
}

/// Server half: validates the query shape, applies the batch key and
/// shuffles inside each group.
pub fn server_respond<R: RngCore + ?Sized>(
    batch_key: &CommutativeKey,
    query: &PsiMessage,
    params: &PsiParams,
    rng: &mut R,
) -> Result<PsiMessage, PsiError> {
    validate_query(query, params)?;
    let mut elements = Vec::with_capacity(query.elements.len());
    for slice in query.group_slices() {
        let mut group: Vec<GroupElement> = slice.iter().map(|e| batch_key.encrypt(e)).collect();
        group.shuffle(rng);
        elements.extend(group);
    }
    Ok(PsiMessage {
        elements,
        groups: query.groups.clone(),
    })
}

pub fn validate_query(query: &PsiMessage, params: &PsiParams) -> Result<(), PsiError> {
    if query.groups.is_empty() || query.groups.len() > params.max_groups {
        return Err(PsiError::GroupCount(query.groups.len(), params.max_groups));
    }
    query.check_shape()?;
    for (group, len) in query.groups.iter().enumerate() {
        if *len < params.min_query {
            return Err(PsiError::QueryTooSmall {
                group,
                len: *len,
                min: params.min_query,
            });
        }
    }
    Ok(())
}

/// The infected set hashed into the group and encrypted under the batch key.
pub fn encrypt_set<'a>(
    batch_key: &CommutativeKey,
    ce_tcns: impl IntoIterator<Item = &'a CeTcn>,
) -> Vec<GroupElement> {
    ce_tcns
        .into_iter()
        .map(|ce| batch_key.encrypt(&hash_to_group(ce)))
        .collect()
}

pub fn build_filter<'a>(
    batch_key: &CommutativeKey,
    ce_tcns: impl IntoIterator<Item = &'a CeTcn>,
) -> BloomFilter {
    let encrypted = encrypt_set(batch_key, ce_tcns);
    BloomFilter::from_elements(encrypted.iter())
}

/// Groups for the category-refinement query.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RefinementPlan {
    pub groups: Vec<(QueryScope, Vec<CeTcn>)>,
    pub decoy: bool,
}

/// Builds the second query. After a match the contacts are partitioned by
/// category. Without one the same group sizes are filled with randomly
/// picked observed ceTCNs, so the server sees the same traffic either way.
pub fn refinement_groups<R: RngCore + ?Sized>(
    contacts: &[(CeTcn, ExposureCategory)],
    first_round_hits: usize,
    rng: &mut R,
) -> RefinementPlan {
    let real: Vec<(QueryScope, Vec<CeTcn>)> = ExposureCategory::CONTACT
        .iter()
        .map(|cat| {
            let members = contacts
                .iter()
                .filter(|(_, c)| c == cat)
                .map(|(ce, _)| *ce)
                .collect();
            (QueryScope::Category(*cat), members)
        })
        .collect();
    if first_round_hits > 0 {
        return RefinementPlan {
            groups: real,
            decoy: false,
        };
    }
    let mut picks: Vec<CeTcn> = contacts.iter().map(|(ce, _)| *ce).collect();
    picks.shuffle(rng);
    let mut rest = picks.as_slice();
    let groups = real
        .iter()
        .map(|(scope, members)| {
            let (head, tail) = rest.split_at(members.len());
            rest = tail;
            (*scope, head.to_vec())
        })
        .collect();
    RefinementPlan {
        groups,
        decoy: true,
    }
}
