//! Deterministic guideline logic: data-complexity aggregation, the
//! two-of-three MDM combination, majority voting and code selection.
//!
//! Everything here is a pure function of its inputs.

mod data;
mod mapping;
mod vote;

pub use data::{derive_data_level, DataEvidence, DataEvidenceItem, DataEvidenceKind, EvidenceError};
pub use mapping::{
    select_cpt_code, CodeMappingConfig, CodeSelectionError, MappingError, OfficeRow, PreventiveRow, DEFAULT_MAPPING,
};
pub use vote::{combine_mdm, majority_vote, EmptyVoteList};
