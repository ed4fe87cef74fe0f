//! Trial-parallel sweeps and atomic file output.

use std::io::Write;
use std::path::Path;

use fier_core::harness::{aggregate, evaluate_trial, InstanceSource, RecallReport, SweepConfig, TrialRecord};
use rayon::prelude::*;

pub const THREADS_ENV: &str = "FIER_THREADS";

/// Worker count from `FIER_THREADS`; `0`, unset or unparsable means one per core.
pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse().ok()).unwrap_or(0)
}

/// Same report as [`fier_core::harness::sweep`], with trials spread over `threads` workers.
pub fn parallel_sweep<S>(source: &S, config: &SweepConfig, threads: usize) -> anyhow::Result<RecallReport>
where
    S: InstanceSource + Sync + ?Sized,
{
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    let per_trial: Vec<Vec<TrialRecord>> = pool.install(|| {
        (0..config.trials as u64)
            .into_par_iter()
            .map(|t| evaluate_trial(source, config, t))
            .collect::<Result<_, _>>()
    })?;
    Ok(aggregate(config, per_trial.into_iter().flatten().collect(), source.len(), source.seed())?)
}

/// Writes through a temporary file in the destination directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
