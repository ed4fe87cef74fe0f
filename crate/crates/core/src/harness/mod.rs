//! Synthetic workloads, retrieval-quality metrics and the factorial sweep.

pub mod metrics;
pub mod posmap;
pub mod sweep;
pub mod workload;

pub use metrics::{coverage, margin_and_errors, margin_from_logits, recall, relative_l2, MarginReport};
pub use posmap::{token_position_map, PositionMap};
pub use sweep::{aggregate, evaluate_trial, sweep, AggregateRow, InstanceSource, RecallReport, SweepConfig, TrialRecord};
pub use workload::{generate, generate_trial, Generator, Instance, WorkloadSpec};
