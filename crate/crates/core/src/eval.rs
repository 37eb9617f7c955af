//! Evaluate a trained model on a dataset split.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{LoadedDataset, FACTOR_NAMES};
use crate::error::{Error, Result};
use crate::losses::kl_per_dim;
use crate::metrics::{
    self, LatentTable, MetricReport, Stat, TableSampler, ZminConfig, MIR_KL_THRESHOLD,
};
use crate::model::{FactorVae, LatentCode, NormalPyramid};
use crate::rng::{self, Stream};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub zmin: ZminConfig,
    /// Label shuffles for the chance-level MIR baseline.
    pub shuffles: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            zmin: ZminConfig::default(),
            shuffles: 5,
            seed: 0,
        }
    }
}

/// Posterior parameters for the listed entries.
pub fn encode_entries<T: Scalar>(
    model: &FactorVae<T>,
    data: &LoadedDataset,
    indices: &[usize],
) -> Result<Vec<LatentCode>> {
    let images: Vec<&[f32]> = indices.iter().map(|&i| data.images[i].as_slice()).collect();
    model.encode_batch(&images)
}

/// Per-geometry decoder conditioning for `data`.
pub fn pyramids<T: Scalar>(
    model: &FactorVae<T>,
    data: &LoadedDataset,
) -> Result<Vec<NormalPyramid>> {
    data.conditioning.iter().map(|c| model.pyramid(c)).collect()
}

/// Reconstruction, disentanglement and interpretability metrics.
///
/// PSNR, SSIM, GTC, MIS and MIR use the `holdout` entries; Z-min draws its
/// fixed-factor batches from every entry of `data`.
pub fn evaluate<T: Scalar>(
    model: &FactorVae<T>,
    data: &LoadedDataset,
    holdout: &[usize],
    cfg: &EvalConfig,
) -> Result<MetricReport> {
    if model.resolution() != data.resolution {
        return Err(Error::Config(format!(
            "dataset is {}px but the model expects {}px",
            data.resolution,
            model.resolution()
        )));
    }
    if holdout.is_empty() {
        return Err(Error::Contract(
            "evaluation needs at least one held-out entry".into(),
        ));
    }
    let d = model.latent_dim();
    let all: Vec<usize> = (0..data.len()).collect();
    let codes = encode_entries(model, data, &all)?;
    let pyr = pyramids(model, data)?;

    let mus: Vec<Vec<f64>> = holdout.iter().map(|&i| codes[i].mu.clone()).collect();
    let flat_mu: Vec<f64> = mus.iter().flatten().copied().collect();
    let flat_lv: Vec<f64> = holdout
        .iter()
        .flat_map(|&i| codes[i].logvar.iter().copied())
        .collect();
    let kl = kl_per_dim(&flat_mu, &flat_lv, d)?;

    let conds: Vec<&NormalPyramid> = holdout.iter().map(|&i| &pyr[data.geometry_of[i]]).collect();
    let recons = model.decode_batch(&mus, &conds)?;
    let (mut psnr_sum, mut ssim_sum) = (0.0, 0.0);
    for (&i, recon) in holdout.iter().zip(&recons) {
        let target = data.image(i);
        psnr_sum += metrics::psnr(&target, recon)?;
        ssim_sum += metrics::ssim(&target, recon)?;
    }
    let n = holdout.len() as f64;

    let labels: Vec<Vec<f64>> = holdout
        .iter()
        .map(|&i| data.factors[i].to_array().to_vec())
        .collect();
    let table = LatentTable::new(mus.clone(), labels.clone())?.with_kl(kl.clone());
    let gtc = metrics::gtc(&mus)?;
    let mis = metrics::mis(&mus)?;
    let mir = metrics::mir_score(&table)?;

    let mut shuffled = Vec::with_capacity(cfg.shuffles);
    for s in 0..cfg.shuffles {
        let mut rng = rng::stream(cfg.seed.wrapping_add(1000 + s as u64), Stream::Eval);
        let mut perm = labels.clone();
        perm.shuffle(&mut rng);
        let t = LatentTable::new(mus.clone(), perm)?.with_kl(kl.clone());
        shuffled.push(metrics::mir_score(&t)?.score);
    }

    let pool = LatentTable::new(
        codes.iter().map(|c| c.mu.clone()).collect(),
        data.factors.iter().map(|f| f.to_array().to_vec()).collect(),
    )?;
    let active: Vec<bool> = kl.iter().map(|&v| v > MIR_KL_THRESHOLD).collect();
    let mut sampler = TableSampler::new(&pool);
    let zcfg = ZminConfig {
        seed: cfg.seed,
        ..cfg.zmin.clone()
    };
    let zmin = metrics::zmin_score(&mut sampler, Some(&active), &zcfg)?;

    Ok(MetricReport {
        gtc: Stat::single(gtc.value),
        gtc_degenerate: gtc.degenerate,
        mis: Stat::single(mis),
        zmin: Stat::from_values(zmin.trials),
        mir: Stat::single(mir.score),
        mir_shuffled: if shuffled.is_empty() {
            Stat::single(f64::NAN)
        } else {
            Stat::from_values(shuffled)
        },
        psnr_mean: Stat::single(psnr_sum / n),
        ssim_mean: Stat::single(ssim_sum / n),
        trial_count: zcfg.trials,
        rows: holdout.len(),
        kl_per_dim: kl,
        suggested_labels: mir
            .per_dim
            .iter()
            .map(|e| e.map(|(k, _)| FACTOR_NAMES[k].to_string()))
            .collect(),
    })
}
