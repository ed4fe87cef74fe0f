//! Token-level retrieval and uniform dispatch over every selection policy.
//!
//! A query is answered in three steps: estimate every token's logit from the
//! 1-bit index, keep the `n` best estimates, then run exact attention over
//! the kept rows. Quantization is hoisted out of the per-query path, so one
//! [`PackedKeys`] serves every decode step over a fixed prefix cache.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::baselines::{
    h2o_select, quest_page_scores, quest_select, quest_select_quantized, streaming_llm_select, EvictionState,
    PageSummaries, QuestVariant,
};
use crate::error::{Error, Result};
use crate::kvcore::{
    exact_scores, gather_attention, top_k, topk_oracle, AttentionOutput, KeyCache, QueryVector, ScoreVector,
    Selection, ValueCache,
};
use crate::quant1bit::{
    approx_scores, load_ratio_fier, load_ratio_quest_counted, LoadRatio, PackedKeys,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    /// Token-level Top-n over 1-bit quantized logits.
    Fier { group_size: usize },
    /// Quest page ranking from min/max page summaries.
    Quest { page_size: usize, variant: QuestVariant },
    /// Quest page ranking by the mean quantized logit of each page.
    QuestQuantized { page_size: usize, group_size: usize },
    /// Attention sinks plus a recent window; query-independent.
    StreamingLlm { sink: usize },
    /// Heavy hitters by cumulative attention plus a recent window.
    H2o { recent: usize },
    /// Exact Top-n; the recall reference.
    Oracle,
    /// Every token.
    Full,
}

impl PolicyKind {
    pub const NAMES: [&'static str; 7] = ["fier", "quest", "quest_quant", "streaming_llm", "h2o", "oracle", "full"];

    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::Fier { .. } => "fier",
            PolicyKind::Quest { .. } => "quest",
            PolicyKind::QuestQuantized { .. } => "quest_quant",
            PolicyKind::StreamingLlm { .. } => "streaming_llm",
            PolicyKind::H2o { .. } => "h2o",
            PolicyKind::Oracle => "oracle",
            PolicyKind::Full => "full",
        }
    }

    /// Compact parameter label such as `g32`, `p16`, `p16-max` or `sink4`.
    pub fn knob(&self) -> String {
        let mut s = String::new();
        let _ = match *self {
            PolicyKind::Fier { group_size } => write!(s, "g{group_size}"),
            PolicyKind::Quest { page_size, variant: QuestVariant::SumOverChannels } => write!(s, "p{page_size}"),
            PolicyKind::Quest { page_size, variant: QuestVariant::MaxOverChannels } => write!(s, "p{page_size}-max"),
            PolicyKind::QuestQuantized { page_size, group_size } => write!(s, "p{page_size}-g{group_size}"),
            PolicyKind::StreamingLlm { sink } => write!(s, "sink{sink}"),
            PolicyKind::H2o { recent } => write!(s, "recent{recent}"),
            PolicyKind::Oracle | PolicyKind::Full => Ok(()),
        };
        s
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            PolicyKind::Fier { group_size: 0 } | PolicyKind::QuestQuantized { group_size: 0, .. } => {
                Err(Error::InvalidParameter("group size must be at least 1"))
            }
            PolicyKind::Quest { page_size: 0, .. } | PolicyKind::QuestQuantized { page_size: 0, .. } => {
                Err(Error::InvalidParameter("page size must be at least 1"))
            }
            _ => Ok(()),
        }
    }

    /// Estimation cost against a 16-bit key cache of `len` tokens.
    pub fn load_ratio(&self, len: usize) -> Result<LoadRatio> {
        let len_bits = len as u64 * 16;
        match *self {
            PolicyKind::Fier { group_size } | PolicyKind::QuestQuantized { group_size, .. } => {
                load_ratio_fier(len, group_size)
            }
            PolicyKind::Quest { page_size, .. } => load_ratio_quest_counted(len, page_size),
            PolicyKind::Oracle => Ok(LoadRatio::from_bits(len_bits, len_bits, true)),
            PolicyKind::StreamingLlm { .. } | PolicyKind::H2o { .. } | PolicyKind::Full => {
                Ok(LoadRatio::from_bits(0, len_bits.max(16), true))
            }
        }
    }
}

/// A policy with its token budget `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BudgetPolicy {
    pub kind: PolicyKind,
    pub budget: usize,
    /// Divide attention logits by `sqrt(d)` when computing outputs.
    pub scaled: bool,
}

impl BudgetPolicy {
    pub fn new(kind: PolicyKind, budget: usize) -> Result<Self> {
        kind.validate()?;
        if budget == 0 {
            return Err(Error::InvalidParameter("budget must be at least 1"));
        }
        Ok(Self { kind, budget, scaled: true })
    }
}

/// Per-cache precomputation a policy may need.
#[derive(Debug, Clone, Copy, Default)]
pub struct SideState<'a> {
    pub packed: Option<&'a PackedKeys>,
    pub pages: Option<&'a PageSummaries>,
    pub eviction: Option<&'a EvictionState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub selection: Selection,
    pub output: AttentionOutput,
    /// Per-token scores the policy ranked by; `None` for query-independent
    /// rules. Page-level policies report each token's page score.
    pub est_scores: Option<ScoreVector>,
    pub bytes_loaded_for_estimation: u64,
}

fn check_budget(budget: usize, len: usize) -> Result<()> {
    if budget == 0 {
        return Err(Error::InvalidParameter("budget must be at least 1"));
    }
    if budget > len {
        return Err(Error::BudgetExceedsLength { budget, len });
    }
    Ok(())
}

/// Top-`n` tokens by quantized logit.
pub fn fier_select(q: &QueryVector, pk: &PackedKeys, budget: usize) -> Result<Selection> {
    check_budget(budget, pk.len())?;
    top_k(approx_scores(q, pk)?.values(), budget)
}

fn check_index_matches(keys: &KeyCache, pk: &PackedKeys) -> Result<()> {
    if pk.len() != keys.len() {
        return Err(Error::DimensionMismatch { expected: keys.len(), actual: pk.len() });
    }
    if pk.dim() != keys.dim() {
        return Err(Error::DimensionMismatch { expected: keys.dim(), actual: pk.dim() });
    }
    Ok(())
}

/// Full retrieval pipeline with scaled attention over the selected rows.
pub fn fier_attend(
    q: &QueryVector,
    keys: &KeyCache,
    values: &ValueCache,
    pk: &PackedKeys,
    budget: usize,
) -> Result<RetrievalResult> {
    check_index_matches(keys, pk)?;
    check_budget(budget, keys.len())?;
    let est = approx_scores(q, pk)?;
    let selection = topk_oracle(&est, budget)?;
    let output = gather_attention(q, keys, values, &selection, true)?;
    Ok(RetrievalResult { selection, output, est_scores: Some(est), bytes_loaded_for_estimation: pk.payload_bytes() })
}

fn broadcast_pages(page_scores: &[f64], page_size: usize, len: usize) -> Result<ScoreVector> {
    ScoreVector::logits((0..len).map(|t| page_scores[t / page_size]).collect())
}

fn packed_for<'a>(side: &SideState<'a>, policy: &'static str, keys: &KeyCache, group_size: usize) -> Result<&'a PackedKeys> {
    let pk = side.packed.ok_or(Error::MissingSideState(policy))?;
    if pk.group_size() != group_size {
        return Err(Error::SideStateMismatch(policy));
    }
    check_index_matches(keys, pk)?;
    Ok(pk)
}

/// Applies `policy` to one query: select, then exact attention over the selection.
pub fn run_policy(
    policy: &BudgetPolicy,
    q: &QueryVector,
    keys: &KeyCache,
    values: &ValueCache,
    side: &SideState<'_>,
) -> Result<RetrievalResult> {
    policy.kind.validate()?;
    let len = keys.len();
    check_budget(policy.budget, len)?;
    let n = policy.budget;
    let name = policy.kind.name();
    let half_key_bytes = |rows: usize| rows as u64 * keys.dim() as u64 * 2;

    let (selection, est_scores, bytes) = match policy.kind {
        PolicyKind::Fier { group_size } => {
            let pk = packed_for(side, name, keys, group_size)?;
            let est = approx_scores(q, pk)?;
            (topk_oracle(&est, n)?, Some(est), pk.payload_bytes())
        }
        PolicyKind::Quest { page_size, variant } => {
            let ps = side.pages.ok_or(Error::MissingSideState(name))?;
            if ps.page_size() != page_size || ps.len() != len || ps.dim() != keys.dim() {
                return Err(Error::SideStateMismatch(name));
            }
            let page_scores = quest_page_scores(q, ps, variant)?;
            let sel = quest_select(q, ps, n, variant)?;
            (sel, Some(broadcast_pages(&page_scores, page_size, len)?), 2 * half_key_bytes(ps.page_count()))
        }
        PolicyKind::QuestQuantized { page_size, group_size } => {
            let pk = packed_for(side, name, keys, group_size)?;
            let est = approx_scores(q, pk)?;
            let means: Vec<f64> = est
                .values()
                .chunks(page_size)
                .map(|p| p.iter().sum::<f64>() / p.len() as f64)
                .collect();
            let sel = quest_select_quantized(q, pk, page_size, n)?;
            (sel, Some(broadcast_pages(&means, page_size, len)?), pk.payload_bytes())
        }
        PolicyKind::StreamingLlm { sink } => (streaming_llm_select(len, n, sink.min(n))?, None, 0),
        PolicyKind::H2o { recent } => {
            let state = side.eviction.ok_or(Error::MissingSideState(name))?;
            if state.len() != len {
                return Err(Error::SideStateMismatch(name));
            }
            (h2o_select(state, n, recent.min(n))?, None, 0)
        }
        PolicyKind::Oracle => {
            let exact = exact_scores(q, keys, false)?;
            (topk_oracle(&exact, n)?, Some(exact), half_key_bytes(len))
        }
        PolicyKind::Full => (Selection::all(len), None, 0),
    };
    let output = gather_attention(q, keys, values, &selection, policy.scaled)?;
    Ok(RetrievalResult { selection, output, est_scores, bytes_loaded_for_estimation: bytes })
}
