//! Per-policy maps of retained positions over the full cache.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::harness::metrics::{coverage, recall};
use crate::harness::sweep::Prepared;
use crate::harness::workload::Instance;
use crate::kvcore::{exact_scores, top_k};
use crate::retrieval::PolicyKind;

#[derive(Debug, Clone, PartialEq)]
pub struct PositionMap {
    /// `None` for the exact Top-n reference row.
    pub policy: Option<PolicyKind>,
    /// `name` or `name:knob`.
    pub label: String,
    /// One 0/1 entry per cached token.
    pub mask: Vec<u8>,
    pub recall: f64,
}

/// Oracle map followed by one map per policy, for query `query` of `instance`.
pub fn token_position_map(
    instance: &Instance,
    query: usize,
    policies: &[PolicyKind],
    budget: usize,
    scaled: bool,
) -> Result<Vec<PositionMap>> {
    let len = instance.len();
    if query >= instance.queries.len() {
        return Err(Error::IndexOutOfRange { index: query, len: instance.queries.len() });
    }
    if budget == 0 || budget > len {
        return Err(Error::BudgetExceedsLength { budget, len });
    }
    let exact = exact_scores(&instance.queries[query], &instance.keys, false)?;
    let oracle = top_k(exact.values(), budget)?;
    let prepared = Prepared::new(instance, policies)?;
    let eviction = prepared.eviction_before(query, scaled)?;

    let mut maps = Vec::with_capacity(policies.len() + 1);
    maps.push(PositionMap { policy: None, label: "oracle".into(), mask: oracle.to_mask(len), recall: 1.0 });
    for kind in policies {
        let result = prepared.run(kind, budget, query, &eviction, scaled)?;
        let r = match kind {
            PolicyKind::Full => coverage(&result.selection, &oracle),
            _ => recall(&result.selection, &oracle)?,
        };
        let knob = kind.knob();
        let label = if knob.is_empty() { String::from(kind.name()) } else { alloc::format!("{}:{}", kind.name(), knob) };
        maps.push(PositionMap { policy: Some(*kind), label, mask: result.selection.to_mask(len), recall: r });
    }
    Ok(maps)
}
