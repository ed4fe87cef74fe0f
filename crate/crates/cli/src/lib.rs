//! File formats, reports and the command-line front end for `fier-core`.
//!
//! * [`dump`]: `KVD1` cache dumps (keys, values and queries of one head).
//! * [`packed`]: `FIER` packed 1-bit key indexes.
//! * [`report`]: CSV/JSON sweep reports and position-map CSV.
//! * [`run`]: trial-parallel sweeps and atomic writes.
//! * [`cli`]: the `fier` binary.

pub mod cli;
pub mod dump;
pub mod error;
pub mod packed;
pub mod policy;
pub mod report;
pub mod run;

pub use dump::{CacheDump, Dtype};
pub use error::FormatError;
pub use policy::{format_policy, parse_policy};
