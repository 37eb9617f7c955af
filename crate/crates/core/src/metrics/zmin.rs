//! Z-min: majority-vote accuracy of the argmin-variance latent dimension
//! under a fixed generative factor.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LatentTable;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Source of latent batches with one generative factor held fixed.
pub trait FactorSampler {
    fn factor_count(&self) -> usize;

    /// Number of distinct values the factor can be fixed at.
    fn level_count(&self, factor: usize) -> usize;

    /// `n` latent rows; with `Some(k)`, factor `k` is fixed at one random
    /// level and every other factor is drawn freshly per row.
    fn sample(
        &mut self,
        fixed: Option<usize>,
        n: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Vec<f64>>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZminConfig {
    pub batches: usize,
    pub batch_size: usize,
    pub trials: usize,
    /// Unconstrained rows used to estimate per-dimension scale.
    pub scale_samples: usize,
    pub seed: u64,
}

impl Default for ZminConfig {
    fn default() -> Self {
        Self {
            batches: 50,
            batch_size: 64,
            trials: 5,
            scale_samples: 2048,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZminResult {
    pub mean: f64,
    pub std: f64,
    pub trials: Vec<f64>,
    /// Factors with fewer than two levels; they cast no votes.
    pub excluded_factors: Vec<usize>,
}

fn variance(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let (n, s) = values
        .clone()
        .fold((0.0, 0.0), |(n, s), v| (n + 1.0, s + v));
    let m = s / n;
    values.map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)
}

/// `active[j] == false` removes dimension `j` from the argmin (e.g. collapsed
/// dimensions); dimensions with zero spread are always removed.
pub fn zmin_score(
    sampler: &mut dyn FactorSampler,
    active: Option<&[bool]>,
    cfg: &ZminConfig,
) -> Result<ZminResult> {
    if cfg.batches < 2 || cfg.batch_size < 2 || cfg.trials == 0 || cfg.scale_samples < 2 {
        return Err(Error::Config(
            "z-min needs >= 2 batches of >= 2 rows, >= 1 trial and >= 2 scale samples".into(),
        ));
    }
    let k = sampler.factor_count();
    let (eligible, excluded): (Vec<usize>, Vec<usize>) =
        (0..k).partition(|&f| sampler.level_count(f) >= 2);
    if eligible.is_empty() {
        return Err(Error::Contract("no factor has two or more levels".into()));
    }

    let mut scale_rng = rng::stream(cfg.seed, Stream::Eval);
    let reference = sampler.sample(None, cfg.scale_samples, &mut scale_rng)?;
    let d = reference.first().map_or(0, Vec::len);
    let std: Vec<f64> = (0..d)
        .map(|j| variance(reference.iter().map(|r| r[j])).sqrt())
        .collect();
    let usable: Vec<usize> = (0..d)
        .filter(|&j| std[j] > 0.0 && std[j].is_finite() && active.map_or(true, |a| a[j]))
        .collect();
    if usable.is_empty() {
        return Err(Error::CollapsedSpace);
    }

    let mut trials = Vec::with_capacity(cfg.trials);
    for t in 0..cfg.trials {
        let mut rng = rng::stream(cfg.seed.wrapping_add(1 + t as u64), Stream::Eval);
        let mut votes = Vec::with_capacity(cfg.batches);
        for _ in 0..cfg.batches {
            let factor = eligible[rng.random_range(0..eligible.len())];
            let batch = sampler.sample(Some(factor), cfg.batch_size, &mut rng)?;
            let dim = usable
                .iter()
                .map(|&j| (j, variance(batch.iter().map(|r| r[j] / std[j]))))
                .fold((usize::MAX, f64::INFINITY), |best, (j, v)| {
                    if v < best.1 {
                        (j, v)
                    } else {
                        best
                    }
                })
                .0;
            if dim == usize::MAX {
                return Err(Error::Contract("non-finite latents in z-min batch".into()));
            }
            votes.push((dim, factor));
        }
        let (train, test) = votes.split_at(votes.len() / 2);
        let mut table = vec![vec![0usize; k]; d];
        for &(dim, f) in train {
            table[dim][f] += 1;
        }
        let predict = |dim: usize| -> Option<usize> {
            let row = &table[dim];
            let best = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))?;
            (*best.1 > 0).then_some(best.0)
        };
        let correct = test
            .iter()
            .filter(|&&(dim, f)| predict(dim) == Some(f))
            .count();
        trials.push(correct as f64 / test.len() as f64);
    }
    let mean = trials.iter().sum::<f64>() / trials.len() as f64;
    let std = if trials.len() > 1 {
        variance(trials.iter().copied()).sqrt()
    } else {
        0.0
    };
    Ok(ZminResult {
        mean,
        std,
        trials,
        excluded_factors: excluded,
    })
}

/// Samples rows of an encoded dataset. Fixing factor `k` picks one of its
/// observed values uniformly, then draws rows sharing that value, so the
/// other factors follow their conditional distribution in the data.
#[derive(Debug, Clone)]
pub struct TableSampler {
    latents: Vec<Vec<f64>>,
    /// Per factor, row indices grouped by exact label value.
    groups: Vec<Vec<Vec<usize>>>,
}

impl TableSampler {
    pub fn new(table: &LatentTable) -> Self {
        let groups = (0..table.factor_count())
            .map(|k| {
                let mut by_value: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
                for (i, row) in table.labels.iter().enumerate() {
                    by_value.entry(row[k].to_bits()).or_default().push(i);
                }
                by_value.into_values().collect()
            })
            .collect();
        Self {
            latents: table.latents.clone(),
            groups,
        }
    }

    fn draw(&self, pool: &[usize], n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        if pool.len() >= n {
            pool.choose_multiple(rng, n)
                .map(|&i| self.latents[i].clone())
                .collect()
        } else {
            (0..n)
                .map(|_| self.latents[pool[rng.random_range(0..pool.len())]].clone())
                .collect()
        }
    }
}

impl FactorSampler for TableSampler {
    fn factor_count(&self) -> usize {
        self.groups.len()
    }

    fn level_count(&self, factor: usize) -> usize {
        self.groups[factor].len()
    }

    fn sample(
        &mut self,
        fixed: Option<usize>,
        n: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Vec<f64>>> {
        if self.latents.is_empty() {
            return Err(Error::Contract("cannot sample an empty table".into()));
        }
        Ok(match fixed {
            None => (0..n)
                .map(|_| self.latents[rng.random_range(0..self.latents.len())].clone())
                .collect(),
            Some(k) => {
                let groups = self
                    .groups
                    .get(k)
                    .ok_or_else(|| Error::Contract(format!("no factor {k}")))?;
                let pool = groups.choose(rng).expect("factor has levels");
                self.draw(pool, n, rng)
            }
        })
    }
}
