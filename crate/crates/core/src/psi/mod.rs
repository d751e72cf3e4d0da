//! Private set intersection cardinality between a device's observed ceTCNs
//! and a released batch of infected ones.

pub mod bloom;
pub mod group;
pub mod session;

pub use bloom::{BloomError, BloomFilter, ExactSet, Membership};
pub use group::{hash_to_group, CommutativeKey, GroupElement, GroupError, ELEMENT_LEN};
pub use session::{
    build_filter, encrypt_set, refinement_groups, server_respond, validate_query, GroupCount,
    PsiClientSession, PsiError, PsiMessage, PsiOutcome, PsiParams, QueryScope, RefinementPlan,
    SessionState, StrippedReply,
};
