//! Seeded synthetic cache generators.
//!
//! Every instance draws keys, values and queries from a standard normal in
//! that order; generator-specific structure is applied afterwards. Trial `t`
//! of a workload uses ChaCha stream `t` under the workload seed.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kvcore::{KeyCache, QueryVector, ValueCache};

#[derive(Debug, Clone, PartialEq)]
pub enum Generator {
    /// i.i.d. standard normal keys, values and queries.
    Gaussian,
    /// Gaussian base plus, per query, `count` keys shifted by `gain · q/|q|` at
    /// random positions drawn from `[avoid_head, len - avoid_tail)`.
    PlantedSpikes { count: usize, gain: f64, avoid_head: usize, avoid_tail: usize },
    /// Gaussian base with `count` random key channels multiplied by `scale`.
    OutlierChannels { count: usize, scale: f64 },
    /// Externally captured cache; loaded by the IO layer, never generated here.
    FromDump { path: Option<String> },
}

impl Generator {
    pub fn name(&self) -> &'static str {
        match self {
            Generator::Gaussian => "gaussian",
            Generator::PlantedSpikes { .. } => "planted_spikes",
            Generator::OutlierChannels { .. } => "outlier_channels",
            Generator::FromDump { .. } => "from_dump",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadSpec {
    pub len: usize,
    pub dim: usize,
    /// Decode-step queries per instance.
    pub queries: usize,
    pub generator: Generator,
    pub seed: u64,
}

impl WorkloadSpec {
    pub fn new(len: usize, dim: usize, generator: Generator, seed: u64) -> Self {
        Self { len, dim, queries: 1, generator, seed }
    }

    pub fn with_queries(mut self, queries: usize) -> Self {
        self.queries = queries;
        self
    }
}

/// One cache with its decode-step queries.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub keys: KeyCache,
    pub values: ValueCache,
    pub queries: Vec<QueryVector>,
    /// Planted positions per query (sorted); empty for unplanted workloads.
    pub spikes: Vec<Vec<usize>>,
}

impl Instance {
    pub fn new(keys: KeyCache, values: ValueCache, queries: Vec<QueryVector>) -> Result<Self> {
        if keys.len() != values.len() {
            return Err(Error::DimensionMismatch { expected: keys.len(), actual: values.len() });
        }
        if keys.dim() != values.dim() {
            return Err(Error::DimensionMismatch { expected: keys.dim(), actual: values.dim() });
        }
        if queries.is_empty() {
            return Err(Error::InvalidParameter("an instance needs at least one query"));
        }
        if let Some(q) = queries.iter().find(|q| q.dim() != keys.dim()) {
            return Err(Error::DimensionMismatch { expected: keys.dim(), actual: q.dim() });
        }
        Ok(Self { keys, values, queries, spikes: Vec::new() })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.keys.len() == 0
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.keys.dim()
    }
}

pub fn generate(spec: &WorkloadSpec) -> Result<Instance> {
    generate_trial(spec, 0)
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn generate_trial(spec: &WorkloadSpec, trial: u64) -> Result<Instance> {
    match &spec.generator {
        Generator::FromDump { path: None } => return Err(Error::MissingDumpPath),
        Generator::FromDump { path: Some(_) } => return Err(Error::DumpRequiresIo),
        _ => {}
    }
    let (len, dim) = (spec.len, spec.dim);
    if len == 0 || dim == 0 {
        return Err(Error::Empty);
    }
    if spec.queries == 0 {
        return Err(Error::InvalidParameter("an instance needs at least one query"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(trial);

    let mut keys = normals(&mut rng, len * dim);
    let values = normals(&mut rng, len * dim);
    let queries: Vec<Vec<f64>> = (0..spec.queries).map(|_| normals(&mut rng, dim)).collect();
    let mut spikes = Vec::new();

    match spec.generator {
        Generator::PlantedSpikes { count, gain, avoid_head, avoid_tail } => {
            if !gain.is_finite() {
                return Err(Error::InvalidParameter("spike gain must be finite"));
            }
            let window = len.saturating_sub(avoid_head + avoid_tail);
            let total = count * spec.queries;
            if total > window {
                return Err(Error::InvalidParameter("not enough positions for the requested spikes"));
            }
            let picks = index::sample(&mut rng, window, total).into_vec();
            for (q, chunk) in queries.iter().zip(picks.chunks(count.max(1))) {
                let norm = libm::sqrt(q.iter().map(|x| x * x).sum::<f64>());
                let mut positions: Vec<usize> = chunk.iter().map(|&p| p + avoid_head).collect();
                positions.sort_unstable();
                if norm > 0.0 {
                    for &t in &positions {
                        for (k, &qc) in keys[t * dim..(t + 1) * dim].iter_mut().zip(q) {
                            *k += gain * qc / norm;
                        }
                    }
                }
                spikes.push(positions);
            }
            spikes.resize(spec.queries, Vec::new());
        }
        Generator::OutlierChannels { count, scale } => {
            if count > dim {
                return Err(Error::InvalidParameter("more outlier channels than dimensions"));
            }
            if !scale.is_finite() {
                return Err(Error::InvalidParameter("outlier scale must be finite"));
            }
            let mut channels = index::sample(&mut rng, dim, count).into_vec();
            channels.sort_unstable();
            for row in keys.chunks_exact_mut(dim) {
                for &c in &channels {
                    row[c] *= scale;
                }
            }
        }
        Generator::Gaussian | Generator::FromDump { .. } => {}
    }

    let queries = queries.into_iter().map(QueryVector::new).collect::<Result<Vec<_>>>()?;
    let mut instance = Instance::new(KeyCache::new(len, dim, keys)?, ValueCache::new(len, dim, values)?, queries)?;
    instance.spikes = spikes;
    Ok(instance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kvcore::{exact_scores, topk_oracle};

    #[test]
    fn generation_is_deterministic() {
        let spec = WorkloadSpec::new(32, 4, Generator::Gaussian, 7).with_queries(3);
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        assert_ne!(generate_trial(&spec, 0).unwrap(), generate_trial(&spec, 1).unwrap());
        let spiky = WorkloadSpec::new(64, 8, Generator::PlantedSpikes { count: 3, gain: 5.0, avoid_head: 0, avoid_tail: 0 }, 7);
        assert_eq!(generate(&spiky).unwrap(), generate(&spiky).unwrap());
    }

    #[test]
    fn dump_generator_is_not_synthetic() {
        let spec = WorkloadSpec::new(8, 2, Generator::FromDump { path: None }, 0);
        assert_eq!(generate(&spec), Err(Error::MissingDumpPath));
        let spec = WorkloadSpec::new(8, 2, Generator::FromDump { path: Some("x.kvd".into()) }, 0);
        assert_eq!(generate(&spec), Err(Error::DumpRequiresIo));
    }

    #[test]
    fn huge_spikes_hold_the_top_logits() {
        let spec = WorkloadSpec::new(512, 16, Generator::PlantedSpikes { count: 8, gain: 1e3, avoid_head: 0, avoid_tail: 0 }, 3)
            .with_queries(2);
        let inst = generate(&spec).unwrap();
        for (q, spikes) in inst.queries.iter().zip(&inst.spikes) {
            assert_eq!(spikes.len(), 8);
            let top = topk_oracle(&exact_scores(q, &inst.keys, false).unwrap(), 8).unwrap();
            assert_eq!(top.indices(), spikes.as_slice());
        }
    }

    #[test]
    fn spikes_respect_excluded_windows() {
        let g = Generator::PlantedSpikes { count: 16, gain: 2.0, avoid_head: 100, avoid_tail: 100 };
        let inst = generate(&WorkloadSpec::new(300, 4, g, 1).with_queries(4)).unwrap();
        for s in &inst.spikes {
            assert!(s.iter().all(|&t| (100..200).contains(&t)));
        }
        let too_many = Generator::PlantedSpikes { count: 30, gain: 2.0, avoid_head: 100, avoid_tail: 100 };
        assert!(generate(&WorkloadSpec::new(300, 4, too_many, 1).with_queries(4)).is_err());
    }

    #[test]
    fn outlier_channels_are_scaled() {
        let base = generate(&WorkloadSpec::new(16, 8, Generator::Gaussian, 9)).unwrap();
        let out = generate(&WorkloadSpec::new(16, 8, Generator::OutlierChannels { count: 2, scale: 10.0 }, 9)).unwrap();
        let scaled: Vec<usize> = (0..8).filter(|&c| out.keys.get(0, c) != base.keys.get(0, c)).collect();
        assert_eq!(scaled.len(), 2);
        for t in 0..16 {
            for c in 0..8 {
                let factor = if scaled.contains(&c) { 10.0 } else { 1.0 };
                assert_eq!(out.keys.get(t, c), base.keys.get(t, c) * factor);
            }
        }
        assert_eq!(out.values, base.values);
    }
}
