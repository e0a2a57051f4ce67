use super::{DatasetError, EpisodeDataset, EpisodeMeta, SourceTag};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    /// Probability that an element comes from simulation.
    pub lambda: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(DatasetError::Mixture(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if self.batch_size == 0 {
            return Err(DatasetError::Mixture("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Where one sampled element lives.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SampleIndex {
    pub source: SourceTag,
    pub episode: String,
    pub step: usize,
}

struct Pool {
    ids: Vec<String>,
    /// Exclusive prefix sums of step counts, plus the total.
    offsets: Vec<usize>,
}

impl Pool {
    fn new(tag: SourceTag, metas: &[EpisodeMeta]) -> Result<Self, DatasetError> {
        let mut ids = Vec::with_capacity(metas.len());
        let mut offsets = vec![0];
        for m in metas {
            if m.source != tag {
                return Err(DatasetError::Mixture(format!(
                    "episode {} is tagged {} but sits in the {tag} dataset",
                    m.id, m.source
                )));
            }
            ids.push(m.id.clone());
            offsets.push(offsets.last().expect("nonempty") + m.steps);
        }
        Ok(Self { ids, offsets })
    }

    fn total(&self) -> usize {
        *self.offsets.last().expect("nonempty")
    }

    /// Maps a global step number to (episode, step).
    fn locate(&self, k: usize) -> (usize, usize) {
        let e = self.offsets.partition_point(|&o| o <= k) - 1;
        (e, k - self.offsets[e])
    }
}

/// Infinite, seeded stream of batches mixing pretraining and simulation
/// steps. Each element is independently from sim with probability λ, then
/// uniform over the steps of its source. The stream depends only on the two
/// manifests (as read at construction) and the [`MixtureSpec`].
pub struct MixedSampler {
    spec: MixtureSpec,
    pre: Pool,
    sim: Pool,
    rng: ChaCha8Rng,
}

impl MixedSampler {
    pub fn new(pre: &EpisodeDataset, sim: &EpisodeDataset, spec: MixtureSpec) -> Result<Self, DatasetError> {
        Self::from_manifests(&pre.episodes()?, &sim.episodes()?, spec)
    }

    pub fn from_manifests(pre: &[EpisodeMeta], sim: &[EpisodeMeta], spec: MixtureSpec) -> Result<Self, DatasetError> {
        spec.validate()?;
        let pre = Pool::new(SourceTag::Pretrain, pre)?;
        let sim = Pool::new(SourceTag::Sim, sim)?;
        if spec.lambda > 0.0 && sim.total() == 0 {
            return Err(DatasetError::Mixture("lambda > 0 needs simulation steps".into()));
        }
        if spec.lambda < 1.0 && pre.total() == 0 {
            return Err(DatasetError::Mixture("lambda < 1 needs pretraining steps".into()));
        }
        Ok(Self {
            spec,
            pre,
            sim,
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
        })
    }

    pub fn next_element(&mut self) -> SampleIndex {
        // gen::<f64>() is in [0, 1): λ = 0 never and λ = 1 always picks sim
        let from_sim = self.rng.gen::<f64>() < self.spec.lambda;
        let (tag, pool) = if from_sim {
            (SourceTag::Sim, &self.sim)
        } else {
            (SourceTag::Pretrain, &self.pre)
        };
        let k = self.rng.gen_range(0..pool.total());
        let (e, step) = pool.locate(k);
        SampleIndex {
            source: tag,
            episode: pool.ids[e].clone(),
            step,
        }
    }

    pub fn next_batch(&mut self) -> Vec<SampleIndex> {
        (0..self.spec.batch_size).map(|_| self.next_element()).collect()
    }
}

impl Iterator for MixedSampler {
    type Item = Vec<SampleIndex>;
    fn next(&mut self) -> Option<Self::Item> {
        Some(self.next_batch())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureStats {
    pub n: usize,
    pub pretrain: usize,
    pub sim: usize,
    pub sim_fraction: f64,
    /// Draws per (source, episode).
    pub per_episode: BTreeMap<SourceTag, BTreeMap<String, usize>>,
}

/// Counts `n` elements drawn from `sampler`.
pub fn mixture_stats(sampler: &mut MixedSampler, n: usize) -> Result<MixtureStats, DatasetError> {
    if n == 0 {
        return Err(DatasetError::Mixture("n must be at least 1".into()));
    }
    let mut per_episode: BTreeMap<SourceTag, BTreeMap<String, usize>> = BTreeMap::new();
    let mut sim = 0;
    for _ in 0..n {
        let s = sampler.next_element();
        if s.source == SourceTag::Sim {
            sim += 1;
        }
        *per_episode.entry(s.source).or_default().entry(s.episode).or_default() += 1;
    }
    Ok(MixtureStats {
        n,
        pretrain: n - sim,
        sim,
        sim_fraction: sim as f64 / n as f64,
        per_episode,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn metas(tag: SourceTag, steps: &[usize]) -> Vec<EpisodeMeta> {
        steps
            .iter()
            .enumerate()
            .map(|(i, &s)| EpisodeMeta {
                id: format!("{i:06}"),
                steps: s,
                source: tag,
                action_dim: 8,
                proprio_dim: 8,
                instruction: String::new(),
            })
            .collect()
    }

    #[test]
    fn locate_walks_prefix_sums() {
        let p = Pool::new(SourceTag::Sim, &metas(SourceTag::Sim, &[3, 1, 2])).unwrap();
        let got: Vec<(usize, usize)> = (0..6).map(|k| p.locate(k)).collect();
        assert_eq!(got, [(0, 0), (0, 1), (0, 2), (1, 0), (2, 0), (2, 1)]);
    }

    #[test]
    fn degenerate_mixtures() {
        let pre = metas(SourceTag::Pretrain, &[4, 4]);
        let sim = metas(SourceTag::Sim, &[2]);
        let spec = |lambda| MixtureSpec {
            lambda,
            batch_size: 16,
            seed: 3,
        };
        let mut s = MixedSampler::from_manifests(&pre, &sim, spec(0.0)).unwrap();
        assert_eq!(mixture_stats(&mut s, 10).unwrap().sim_fraction, 0.0);
        let mut s = MixedSampler::from_manifests(&pre, &sim, spec(1.0)).unwrap();
        assert!(s.next().unwrap().iter().all(|e| e.source == SourceTag::Sim && e.step < 2));
        assert!(MixedSampler::from_manifests(&pre, &[], spec(0.1)).is_err());
        assert!(MixedSampler::from_manifests(&[], &sim, spec(0.9)).is_err());
        assert!(MixedSampler::from_manifests(&[], &sim, spec(1.0)).is_ok());
        assert!(MixedSampler::from_manifests(&sim, &pre, spec(0.5)).is_err());
        assert!(MixedSampler::from_manifests(&pre, &sim, spec(1.5)).is_err());
    }
}
