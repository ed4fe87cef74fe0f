//! Page-level retrieval (Quest) and eviction baselines (StreamingLLM, H2O).
//!
//! Budgets are always counted in tokens. Quest takes whole pages in score
//! order and fills any remainder from the next-ranked page, lowest positions
//! first, so every policy returns exactly `n` tokens.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kvcore::{top_k, KeyCache, Matrix, QueryVector, ScoreKind, ScoreVector, Selection};
use crate::quant1bit::{approx_scores, PackedKeys};

/// Channel-wise min/max key vectors for every page of `L` tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct PageSummaries {
    page_size: usize,
    len: usize,
    max_vecs: Matrix,
    min_vecs: Matrix,
}

impl PageSummaries {
    #[inline]
    pub fn page_size(&self) -> usize {
        self.page_size
    }

    /// Token count of the summarized cache.
    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.max_vecs.cols()
    }

    #[inline]
    pub fn page_count(&self) -> usize {
        self.max_vecs.rows()
    }

    pub fn max_vecs(&self) -> &Matrix {
        &self.max_vecs
    }

    pub fn min_vecs(&self) -> &Matrix {
        &self.min_vecs
    }
}

pub fn build_page_summaries(keys: &KeyCache, page_size: usize) -> Result<PageSummaries> {
    if page_size == 0 {
        return Err(Error::InvalidParameter("page size must be at least 1"));
    }
    let (len, dim) = (keys.len(), keys.dim());
    let pages = len.div_ceil(page_size);
    let mut max = Vec::with_capacity(pages * dim);
    let mut min = Vec::with_capacity(pages * dim);
    for p in 0..pages {
        let members = p * page_size..((p + 1) * page_size).min(len);
        max.extend_from_slice(keys.row(members.start));
        min.extend_from_slice(keys.row(members.start));
        let (hi, lo) = (&mut max[p * dim..], &mut min[p * dim..]);
        for t in members.skip(1) {
            for (c, &v) in keys.row(t).iter().enumerate() {
                hi[c] = hi[c].max(v);
                lo[c] = lo[c].min(v);
            }
        }
    }
    Ok(PageSummaries {
        page_size,
        len,
        max_vecs: Matrix::new(pages, dim, max)?,
        min_vecs: Matrix::new(pages, dim, min)?,
    })
}

/// How channel contributions combine into one page score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QuestVariant {
    /// `max_i max(q_i·kmax_i, q_i·kmin_i)`.
    MaxOverChannels,
    /// `Σ_i max(q_i·kmax_i, q_i·kmin_i)`, an upper bound on every member's logit.
    #[default]
    SumOverChannels,
}

impl QuestVariant {
    pub fn name(self) -> &'static str {
        match self {
            QuestVariant::MaxOverChannels => "max",
            QuestVariant::SumOverChannels => "sum",
        }
    }
}

pub fn quest_page_scores(q: &QueryVector, ps: &PageSummaries, variant: QuestVariant) -> Result<Vec<f64>> {
    if q.dim() != ps.dim() {
        return Err(Error::DimensionMismatch { expected: ps.dim(), actual: q.dim() });
    }
    let q = q.as_slice();
    let scores = (0..ps.page_count())
        .map(|p| {
            let channel = q
                .iter()
                .zip(ps.max_vecs.row(p).iter().zip(ps.min_vecs.row(p)))
                .map(|(&qi, (&hi, &lo))| (qi * hi).max(qi * lo));
            match variant {
                QuestVariant::MaxOverChannels => channel.fold(f64::NEG_INFINITY, f64::max),
                QuestVariant::SumOverChannels => channel.sum(),
            }
        })
        .collect();
    Ok(scores)
}

/// Ranks pages (ties to the lower page) and takes members until `budget` tokens are held.
pub(crate) fn fill_pages(page_scores: &[f64], page_size: usize, len: usize, budget: usize) -> Result<Selection> {
    if budget == 0 {
        return Err(Error::InvalidParameter("budget must be at least 1"));
    }
    if budget > len {
        return Err(Error::BudgetExceedsLength { budget, len });
    }
    if let Some(i) = page_scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let mut ranked: Vec<usize> = (0..page_scores.len()).collect();
    ranked.sort_by(|&a, &b| (page_scores[b] + 0.0).total_cmp(&(page_scores[a] + 0.0)).then(a.cmp(&b)));

    let mut indices = Vec::with_capacity(budget);
    for p in ranked {
        let remaining = budget - indices.len();
        if remaining == 0 {
            break;
        }
        let start = p * page_size;
        let end = (start + page_size).min(len);
        indices.extend(start..end.min(start + remaining));
    }
    Ok(Selection::from_unsorted(indices, budget))
}

pub fn quest_select(q: &QueryVector, ps: &PageSummaries, budget: usize, variant: QuestVariant) -> Result<Selection> {
    let scores = quest_page_scores(q, ps, variant)?;
    fill_pages(&scores, ps.page_size, ps.len, budget)
}

/// Quest page ranking by the mean quantized logit of each page's members.
pub fn quest_select_quantized(q: &QueryVector, pk: &PackedKeys, page_size: usize, budget: usize) -> Result<Selection> {
    if page_size == 0 {
        return Err(Error::InvalidParameter("page size must be at least 1"));
    }
    let est = approx_scores(q, pk)?;
    let scores: Vec<f64> = est
        .values()
        .chunks(page_size)
        .map(|page| page.iter().sum::<f64>() / page.len() as f64)
        .collect();
    fill_pages(&scores, page_size, pk.len(), budget)
}

/// First `sink` positions plus the most recent `budget - sink`.
pub fn streaming_llm_select(len: usize, budget: usize, sink: usize) -> Result<Selection> {
    if budget == 0 {
        return Err(Error::InvalidParameter("budget must be at least 1"));
    }
    if budget > len {
        return Err(Error::BudgetExceedsLength { budget, len });
    }
    if sink > budget {
        return Err(Error::InvalidParameter("sink count must not exceed the budget"));
    }
    let indices = (0..sink).chain(len - (budget - sink)..len).collect();
    Ok(Selection::from_unsorted(indices, budget))
}

/// Accumulated attention mass per token.
#[derive(Debug, Clone, PartialEq)]
pub struct EvictionState {
    cumulative_scores: Vec<f64>,
    steps: usize,
}

impl EvictionState {
    pub fn new(len: usize) -> Self {
        Self { cumulative_scores: alloc::vec![0.0; len], steps: 0 }
    }

    pub fn cumulative_scores(&self) -> &[f64] {
        &self.cumulative_scores
    }

    /// Number of accumulated attention distributions.
    pub fn steps(&self) -> usize {
        self.steps
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.cumulative_scores.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.cumulative_scores.is_empty()
    }
}

pub fn h2o_accumulate(state: &mut EvictionState, scores: &ScoreVector) -> Result<()> {
    if scores.kind() != ScoreKind::Softmax {
        return Err(Error::WrongScoreKind("softmax"));
    }
    if scores.len() != state.len() {
        return Err(Error::DimensionMismatch { expected: state.len(), actual: scores.len() });
    }
    for (acc, &s) in state.cumulative_scores.iter_mut().zip(scores.values()) {
        *acc += s;
    }
    state.steps += 1;
    Ok(())
}

/// Last `recent` positions plus the heaviest `budget - recent` of the rest.
pub fn h2o_select(state: &EvictionState, budget: usize, recent: usize) -> Result<Selection> {
    let len = state.len();
    if budget == 0 {
        return Err(Error::InvalidParameter("budget must be at least 1"));
    }
    if budget > len {
        return Err(Error::BudgetExceedsLength { budget, len });
    }
    if recent > budget {
        return Err(Error::InvalidParameter("recent window must not exceed the budget"));
    }
    let older = len - recent;
    let heavy = budget - recent;
    let mut indices: Vec<usize> = (older..len).collect();
    if heavy > 0 {
        indices.extend_from_slice(top_k(&state.cumulative_scores[..older], heavy)?.indices());
    }
    Ok(Selection::from_unsorted(indices, budget))
}
