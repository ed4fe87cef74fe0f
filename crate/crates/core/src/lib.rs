//! Token-level KV-cache retrieval with 1-bit group-wise quantized keys.
//!
//! The crate is `no_std` (it needs `alloc`). It holds the per-head cache model
//! with exact attention oracles ([`kvcore`]), the 1-bit key quantizer and its
//! bit-packed score estimator ([`quant1bit`]), the retrieval engine and policy
//! dispatch ([`retrieval`]), page-level and eviction baselines ([`baselines`])
//! and the synthetic evaluation harness ([`harness`]).
//!
//! File formats, reports and the command-line tool live in the `fier` crate.
#![no_std]
#![deny(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod baselines;
pub mod error;
pub mod harness;
pub mod kvcore;
pub mod quant1bit;
pub mod retrieval;

pub use error::{Error, Result};
pub use kvcore::{
    exact_scores, full_attention, gather_attention, softmax, topk_oracle, AttentionOutput,
    KeyCache, Matrix, QueryVector, ScoreKind, ScoreVector, Selection, ValueCache,
};
pub use quant1bit::{
    approx_scores, dequantize, load_ratio_fier, load_ratio_quest, quantize, quantize_with,
    GroupSpec, LoadRatio, PackedKeys, ParamPrecision,
};
pub use retrieval::{fier_attend, fier_select, run_policy, BudgetPolicy, PolicyKind, RetrievalResult, SideState};
