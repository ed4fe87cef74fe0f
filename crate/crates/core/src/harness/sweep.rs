//! Factorial policy × budget × trial evaluation.
//!
//! A trial is one instance. Every query of the instance is answered by every
//! policy at every budget; trial metrics average over the queries. H2O sees
//! the exact attention of all earlier queries in the trial. Aggregation sorts
//! records by trial before reducing, so it is independent of evaluation order.

use alloc::vec::Vec;

use crate::baselines::{build_page_summaries, h2o_accumulate, EvictionState, PageSummaries};
use crate::error::{Error, Result};
use crate::harness::metrics::{coverage, margin_from_logits, recall, relative_l2};
use crate::harness::workload::{generate_trial, Instance, WorkloadSpec};
use crate::kvcore::{exact_scores, full_attention, softmax, top_k, ScoreVector};
use crate::quant1bit::{approx_scores, quantize, GroupSpec, LoadRatio, PackedKeys};
use crate::retrieval::{run_policy, BudgetPolicy, PolicyKind, RetrievalResult, SideState};

/// Yields the instance evaluated in each trial.
pub trait InstanceSource {
    fn len(&self) -> usize;
    fn dim(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn seed(&self) -> u64;
    fn instance(&self, trial: u64) -> Result<Instance>;
}

impl InstanceSource for WorkloadSpec {
    fn len(&self) -> usize {
        self.len
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn seed(&self) -> u64 {
        self.seed
    }

    fn instance(&self, trial: u64) -> Result<Instance> {
        generate_trial(self, trial)
    }
}

/// A captured cache replayed unchanged in every trial.
impl InstanceSource for Instance {
    fn len(&self) -> usize {
        self.keys.len()
    }

    fn dim(&self) -> usize {
        self.keys.dim()
    }

    fn seed(&self) -> u64 {
        0
    }

    fn instance(&self, _trial: u64) -> Result<Instance> {
        Ok(self.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub policies: Vec<PolicyKind>,
    pub budgets: Vec<usize>,
    pub trials: usize,
    /// `sqrt(d)` scaling of attention outputs and of H2O's attention mass.
    pub scaled: bool,
}

impl SweepConfig {
    pub fn new(policies: Vec<PolicyKind>, budgets: Vec<usize>) -> Self {
        Self { policies, budgets, trials: 100, scaled: true }
    }

    pub fn with_trials(mut self, trials: usize) -> Self {
        self.trials = trials;
        self
    }

    fn validate(&self, len: usize) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidParameter("at least one trial is required"));
        }
        if self.policies.is_empty() {
            return Err(Error::InvalidParameter("at least one policy is required"));
        }
        if self.budgets.is_empty() {
            return Err(Error::InvalidParameter("at least one budget is required"));
        }
        for p in &self.policies {
            p.validate()?;
        }
        for &n in &self.budgets {
            if n == 0 {
                return Err(Error::InvalidParameter("budget must be at least 1"));
            }
            if n > len {
                return Err(Error::BudgetExceedsLength { budget: n, len });
            }
        }
        Ok(())
    }
}

/// Per-instance side state shared by every query and policy.
pub(crate) struct Prepared<'a> {
    pub instance: &'a Instance,
    packed: Vec<PackedKeys>,
    pages: Vec<PageSummaries>,
}

impl<'a> Prepared<'a> {
    pub fn new(instance: &'a Instance, policies: &[PolicyKind]) -> Result<Self> {
        let mut packed: Vec<PackedKeys> = Vec::new();
        let mut pages: Vec<PageSummaries> = Vec::new();
        for p in policies {
            match *p {
                PolicyKind::Fier { group_size } | PolicyKind::QuestQuantized { group_size, .. } => {
                    if !packed.iter().any(|pk| pk.group_size() == group_size) {
                        packed.push(quantize(&instance.keys, GroupSpec::new(group_size)?));
                    }
                }
                PolicyKind::Quest { page_size, .. } if !pages.iter().any(|ps| ps.page_size() == page_size) => {
                    pages.push(build_page_summaries(&instance.keys, page_size)?);
                }
                _ => {}
            }
        }
        Ok(Self { instance, packed, pages })
    }

    pub fn packed(&self, group_size: usize) -> Option<&PackedKeys> {
        self.packed.iter().find(|pk| pk.group_size() == group_size)
    }

    fn side<'s>(&'s self, kind: &PolicyKind, eviction: &'s EvictionState) -> SideState<'s> {
        match *kind {
            PolicyKind::Fier { group_size } | PolicyKind::QuestQuantized { group_size, .. } => {
                SideState { packed: self.packed(group_size), ..SideState::default() }
            }
            PolicyKind::Quest { page_size, .. } => {
                SideState { pages: self.pages.iter().find(|ps| ps.page_size() == page_size), ..SideState::default() }
            }
            PolicyKind::H2o { .. } => SideState { eviction: Some(eviction), ..SideState::default() },
            _ => SideState::default(),
        }
    }

    pub fn run(&self, kind: &PolicyKind, budget: usize, query: usize, eviction: &EvictionState, scaled: bool) -> Result<RetrievalResult> {
        let mut policy = BudgetPolicy::new(*kind, budget)?;
        policy.scaled = scaled;
        let inst = self.instance;
        run_policy(&policy, &inst.queries[query], &inst.keys, &inst.values, &self.side(kind, eviction))
    }

    /// Eviction state after observing the attention of queries `0..query`.
    pub fn eviction_before(&self, query: usize, scaled: bool) -> Result<EvictionState> {
        let inst = self.instance;
        let mut state = EvictionState::new(inst.len());
        for q in &inst.queries[..query] {
            h2o_accumulate(&mut state, &softmax(&exact_scores(q, &inst.keys, scaled)?))?;
        }
        Ok(state)
    }
}

/// One (policy, budget, trial) measurement, averaged over the trial's queries.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    /// Index into [`SweepConfig::policies`].
    pub policy: usize,
    pub budget: usize,
    pub trial: u64,
    pub recall: f64,
    /// Relative L2 error of the attention output against full attention.
    pub out_err: f64,
    pub est_bytes: u64,
    /// Exact-logit margin at `k = budget`; undefined when the budget is the whole cache.
    pub margin: Option<f64>,
    /// Largest quantized-logit error; only for policies that read the 1-bit index.
    pub max_err: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Evaluates every policy and budget on trial `trial` of `source`.
pub fn evaluate_trial<S: InstanceSource + ?Sized>(source: &S, config: &SweepConfig, trial: u64) -> Result<Vec<TrialRecord>> {
    let instance = source.instance(trial)?;
    config.validate(instance.len())?;
    let prepared = Prepared::new(&instance, &config.policies)?;
    let len = instance.len();

    struct QueryContext {
        exact: ScoreVector,
        full: Vec<f64>,
        eviction: EvictionState,
        /// `(group_size, max |exact − approx|)`.
        max_errs: Vec<(usize, f64)>,
    }
    let mut contexts = Vec::with_capacity(instance.queries.len());
    let mut eviction = EvictionState::new(len);
    for q in &instance.queries {
        let exact = exact_scores(q, &instance.keys, false)?;
        let full = full_attention(q, &instance.keys, &instance.values, config.scaled)?.0;
        let mut max_errs = Vec::new();
        for pk in &prepared.packed {
            let approx = approx_scores(q, pk)?;
            let err = exact.values().iter().zip(approx.values()).map(|(a, b)| libm::fabs(a - b)).fold(0.0, f64::max);
            max_errs.push((pk.group_size(), err));
        }
        contexts.push(QueryContext { exact, full, eviction: eviction.clone(), max_errs });
        h2o_accumulate(&mut eviction, &softmax(&exact_scores(q, &instance.keys, config.scaled)?))?;
    }

    let mut records = Vec::with_capacity(config.policies.len() * config.budgets.len());
    for (pi, kind) in config.policies.iter().enumerate() {
        for &n in &config.budgets {
            let (mut recalls, mut errs, mut margins, mut maxes) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            let mut est_bytes = 0;
            for (qi, ctx) in contexts.iter().enumerate() {
                let result = prepared.run(kind, n, qi, &ctx.eviction, config.scaled)?;
                let oracle = top_k(ctx.exact.values(), n)?;
                recalls.push(match kind {
                    PolicyKind::Full => coverage(&result.selection, &oracle),
                    _ => recall(&result.selection, &oracle)?,
                });
                errs.push(relative_l2(result.output.as_slice(), &ctx.full));
                if n < len {
                    margins.push(margin_from_logits(ctx.exact.values(), ctx.exact.values(), n)?.margin);
                }
                if let PolicyKind::Fier { group_size } | PolicyKind::QuestQuantized { group_size, .. } = *kind {
                    if let Some(&(_, e)) = ctx.max_errs.iter().find(|(g, _)| *g == group_size) {
                        maxes.push(e);
                    }
                }
                est_bytes = result.bytes_loaded_for_estimation;
            }
            records.push(TrialRecord {
                policy: pi,
                budget: n,
                trial,
                recall: mean(recalls.into_iter()).unwrap_or(0.0),
                out_err: mean(errs.into_iter()).unwrap_or(0.0),
                est_bytes,
                margin: mean(margins.into_iter()),
                max_err: mean(maxes.into_iter()),
            });
        }
    }
    Ok(records)
}

/// Aggregate statistics of one (policy, budget) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub policy: PolicyKind,
    pub budget: usize,
    pub load_ratio: LoadRatio,
    pub recall_mean: f64,
    /// Sample standard deviation (`n − 1`); zero for a single trial.
    pub recall_std: f64,
    pub out_err_mean: f64,
    pub margin_mean: Option<f64>,
    pub maxerr_mean: Option<f64>,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecallReport {
    pub rows: Vec<AggregateRow>,
    pub records: Vec<TrialRecord>,
}

impl RecallReport {
    pub fn row(&self, policy: &PolicyKind, budget: usize) -> Option<&AggregateRow> {
        self.rows.iter().find(|r| r.policy == *policy && r.budget == budget)
    }
}

/// Reduces trial records (in any order) to one row per (policy, budget).
pub fn aggregate(config: &SweepConfig, mut records: Vec<TrialRecord>, len: usize, seed: u64) -> Result<RecallReport> {
    records.sort_by_key(|r| (r.policy, r.budget, r.trial));
    let mut rows = Vec::new();
    for (pi, kind) in config.policies.iter().enumerate() {
        for &n in &config.budgets {
            let cell: Vec<&TrialRecord> = records.iter().filter(|r| r.policy == pi && r.budget == n).collect();
            let trials = cell.len();
            let recall_mean = mean(cell.iter().map(|r| r.recall)).unwrap_or(0.0);
            let recall_std = if trials > 1 {
                let ss: f64 = cell.iter().map(|r| (r.recall - recall_mean) * (r.recall - recall_mean)).sum();
                libm::sqrt(ss / (trials - 1) as f64)
            } else {
                0.0
            };
            rows.push(AggregateRow {
                policy: *kind,
                budget: n,
                load_ratio: kind.load_ratio(len)?,
                recall_mean,
                recall_std,
                out_err_mean: mean(cell.iter().map(|r| r.out_err)).unwrap_or(0.0),
                margin_mean: mean(cell.iter().filter_map(|r| r.margin)),
                maxerr_mean: mean(cell.iter().filter_map(|r| r.max_err)),
                trials,
                seed,
            });
        }
    }
    // Restore the canonical (trial-major) record order.
    records.sort_by_key(|r| (r.trial, r.policy, r.budget));
    Ok(RecallReport { rows, records })
}

/// Sequential sweep over `config.trials` trials.
pub fn sweep<S: InstanceSource + ?Sized>(source: &S, config: &SweepConfig) -> Result<RecallReport> {
    config.validate(source.len())?;
    let mut records = Vec::new();
    for trial in 0..config.trials as u64 {
        records.extend(evaluate_trial(source, config, trial)?);
    }
    aggregate(config, records, source.len(), source.seed())
}
