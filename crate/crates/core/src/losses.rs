//! Training objective: reconstruction, order-n KL regularizer with linear
//! β annealing, and the discriminator total-correlation estimate.
//!
//! Each term exists twice: as a plain function over `f64` slices, and as a
//! tape builder used for training. Tests check the two against each other.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result, ShapeError};
use crate::tensor::Scalar;

/// Threshold of the Huber reconstruction variant.
pub const HUBER_DELTA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconKind {
    /// Mean smooth-L1 over pixels and batch.
    SmoothL1,
    /// Mean Huber loss with threshold [`HUBER_DELTA`].
    Huber,
    /// Bernoulli negative log-likelihood: per-image sum, batch mean.
    Bernoulli,
    /// Binary cross-entropy averaged over every element.
    Bce,
}

/// How the mean-reduced reconstruction kinds are scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Mean over every element of the batch.
    #[default]
    Mean,
    /// Sum over each image, mean over the batch.
    ImageSum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub beta_max: f64,
    /// Epochs of linear warm-up; 0 applies `beta_max` from the start.
    pub anneal_epochs: usize,
    pub gamma: f64,
    pub n: u32,
    pub recon_kind: ReconKind,
    /// Ignored by [`ReconKind::Bernoulli`], which always sums per image.
    pub reduction: Reduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            beta_max: 2.0,
            anneal_epochs: 1000,
            gamma: 6.0,
            n: 3,
            recon_kind: ReconKind::SmoothL1,
            reduction: Reduction::Mean,
        }
    }
}

impl LossConfig {
    /// Plain β-VAE: no TC term, summed KL, constant β.
    pub fn beta_vae(beta: f64) -> Self {
        Self {
            beta_max: beta,
            anneal_epochs: 0,
            gamma: 0.0,
            n: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta_max >= 0.0) || !(self.gamma >= 0.0) {
            return Err(Error::Config(format!(
                "beta_max ({}) and gamma ({}) must be >= 0",
                self.beta_max, self.gamma
            )));
        }
        if self.n < 1 {
            return Err(Error::Config("KL norm order n must be >= 1".into()));
        }
        Ok(())
    }
}

/// Loss terms of one step; `total = recon + beta_now * kl_reg + gamma * tc`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recon: f64,
    pub kl_reg: f64,
    pub tc: f64,
    pub beta_now: f64,
    pub total: f64,
}

/// `beta_max * min(1, epochs / anneal_epochs)`. `epochs` is training
/// progress and may be fractional, so β rises with every step.
pub fn beta_at(epochs: f64, cfg: &LossConfig) -> f64 {
    if cfg.anneal_epochs == 0 {
        return cfg.beta_max;
    }
    cfg.beta_max * (epochs.max(0.0) / cfg.anneal_epochs as f64).min(1.0)
}

fn check_len(a: usize, b: usize, what: &str) -> Result<(), ShapeError> {
    if a != b {
        return Err(ShapeError::new(format!("{what}: {a} vs {b} values")));
    }
    Ok(())
}

fn huber_elem(e: f64, delta: f64) -> f64 {
    let e = e.abs();
    if e < delta {
        0.5 * e * e
    } else {
        delta * (e - 0.5 * delta)
    }
}

/// Mean of `0.5 e^2` for `|e| < 1`, else `|e| - 0.5`.
pub fn smooth_l1(recon: &[f64], target: &[f64]) -> Result<f64, ShapeError> {
    check_len(recon.len(), target.len(), "smooth_l1")?;
    Ok(recon
        .iter()
        .zip(target)
        .map(|(a, b)| huber_elem(a - b, 1.0))
        .sum::<f64>()
        / recon.len() as f64)
}

/// Reconstruction penalty over a batch of `batch` equally sized images.
pub fn recon_loss(
    kind: ReconKind,
    recon: &[f64],
    target: &[f64],
    batch: usize,
) -> Result<f64, ShapeError> {
    check_len(recon.len(), target.len(), "reconstruction")?;
    let bce = |p: f64, t: f64| {
        let p = p.clamp(1e-6, 1.0 - 1e-6);
        -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
    };
    let n = recon.len() as f64;
    let pairs = recon.iter().zip(target);
    Ok(match kind {
        ReconKind::SmoothL1 => smooth_l1(recon, target)?,
        ReconKind::Huber => {
            pairs
                .map(|(a, b)| huber_elem(a - b, HUBER_DELTA))
                .sum::<f64>()
                / n
        }
        ReconKind::Bce => pairs.map(|(&p, &t)| bce(p, t)).sum::<f64>() / n,
        ReconKind::Bernoulli => pairs.map(|(&p, &t)| bce(p, t)).sum::<f64>() / batch as f64,
    })
}

/// Batch mean of `0.5 (mu^2 + sigma^2 - log sigma^2 - 1)` per dimension.
/// `mu` and `logvar` are row-major `[N, d]`.
pub fn kl_per_dim(mu: &[f64], logvar: &[f64], d: usize) -> Result<Vec<f64>, ShapeError> {
    check_len(mu.len(), logvar.len(), "kl_per_dim")?;
    if d == 0 || mu.len() % d != 0 || mu.is_empty() {
        return Err(ShapeError::new(format!(
            "{} values do not form rows of {d}",
            mu.len()
        )));
    }
    let rows = mu.len() / d;
    let mut out = vec![0.0; d];
    for (m, lv) in mu.chunks(d).zip(logvar.chunks(d)) {
        for j in 0..d {
            out[j] += 0.5 * (m[j] * m[j] + lv[j].exp() - lv[j] - 1.0);
        }
    }
    out.iter_mut().for_each(|v| *v /= rows as f64);
    Ok(out)
}

/// `(sum_j v_j^n)^(1/n)` for a non-negative vector.
pub fn kl_norm(v: &[f64], n: u32) -> Result<f64> {
    if n < 1 {
        return Err(Error::Config("KL norm order n must be >= 1".into()));
    }
    let s: f64 = v.iter().map(|x| x.abs().powi(n as i32)).sum();
    Ok(s.powf(1.0 / n as f64))
}

/// Batch mean of `logit_joint - logit_permuted` over `[N, 2]` logits.
pub fn tc_estimate(logits: &[f64]) -> f64 {
    let rows = logits.len() / 2;
    logits.chunks(2).map(|r| r[0] - r[1]).sum::<f64>() / rows as f64
}

fn cross_entropy_rows(logits: &[f64], class: usize) -> f64 {
    let rows = logits.len() / 2;
    logits
        .chunks(2)
        .map(|r| {
            let m = r[0].max(r[1]);
            m + ((r[0] - m).exp() + (r[1] - m).exp()).ln() - r[class]
        })
        .sum::<f64>()
        / rows as f64
}

/// `0.5 [CE(joint, class 0) + CE(permuted, class 1)]`.
pub fn discriminator_loss(logits_joint: &[f64], logits_perm: &[f64]) -> f64 {
    0.5 * (cross_entropy_rows(logits_joint, 0) + cross_entropy_rows(logits_perm, 1))
}

fn finite(v: f64, term: &'static str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteLoss { term })
    }
}

/// Full objective on plain values. `recon`/`target` hold `batch` images,
/// `mu`/`logvar` are `[batch, d]`, `tc_logits` is `[batch, 2]`.
#[allow(clippy::too_many_arguments)]
pub fn vae_loss(
    recon: &[f64],
    target: &[f64],
    mu: &[f64],
    logvar: &[f64],
    tc_logits: &[f64],
    d: usize,
    epoch: usize,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    cfg.validate()?;
    let batch = mu.len() / d.max(1);
    let mut r = recon_loss(cfg.recon_kind, recon, target, batch)?;
    if cfg.reduction == Reduction::ImageSum && cfg.recon_kind != ReconKind::Bernoulli {
        r *= (recon.len() / batch.max(1)) as f64;
    }
    let r = finite(r, "reconstruction")?;
    let kl = finite(kl_norm(&kl_per_dim(mu, logvar, d)?, cfg.n)?, "KL")?;
    let tc = finite(tc_estimate(tc_logits), "total correlation")?;
    let beta = beta_at(epoch as f64, cfg);
    let total = finite(r + beta * kl + cfg.gamma * tc, "total")?;
    Ok(LossBreakdown {
        recon: r,
        kl_reg: kl,
        tc,
        beta_now: beta,
        total,
    })
}

/// Handles to the loss terms recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub recon: Var,
    pub kl_dims: Var,
    pub kl_reg: Var,
    pub tc: Var,
    pub beta: f64,
}

impl LossVars {
    /// Read the recorded values, rejecting non-finite terms by name.
    pub fn breakdown<T: Scalar>(&self, tape: &Tape<T>) -> Result<LossBreakdown> {
        let get = |v: Var| tape.value(v).item().as_f64();
        Ok(LossBreakdown {
            recon: finite(get(self.recon), "reconstruction")?,
            kl_reg: finite(get(self.kl_reg), "KL")?,
            tc: finite(get(self.tc), "total correlation")?,
            beta_now: self.beta,
            total: finite(get(self.total), "total")?,
        })
    }

    pub fn kl_per_dim<T: Scalar>(&self, tape: &Tape<T>) -> Vec<f64> {
        tape.value(self.kl_dims).to_f64_vec()
    }
}

pub fn recon_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    kind: ReconKind,
    recon: Var,
    target: Var,
) -> Result<Var> {
    let s = tape.shape(recon).to_vec();
    let n = s.first().copied().unwrap_or(1);
    Ok(match kind {
        ReconKind::SmoothL1 => tape.smooth_l1(recon, target)?,
        ReconKind::Huber => tape.huber(recon, target, T::cast(HUBER_DELTA))?,
        ReconKind::Bce => tape.bce(recon, target, false)?,
        ReconKind::Bernoulli => {
            let flat = tape.reshape(recon, &[n, s.iter().skip(1).product()])?;
            let tflat = tape.reshape(target, &[n, s.iter().skip(1).product()])?;
            tape.bce(flat, tflat, true)?
        }
    })
}

/// Per-dimension KL `[d]` from `mu[N,d]`, `logvar[N,d]`.
pub fn kl_per_dim_on_tape<T: Scalar>(tape: &mut Tape<T>, mu: Var, logvar: Var) -> Result<Var> {
    let mu2 = tape.square(mu);
    let var = tape.exp(logvar);
    let a = tape.add(mu2, var)?;
    let b = tape.sub(a, logvar)?;
    let c = tape.offset(b, -T::one());
    let half = tape.scale(c, T::cast(0.5));
    Ok(tape.mean_rows(half)?)
}

/// Mean of column 0 minus column 1 of `logits[N,2]`.
pub fn tc_on_tape<T: Scalar>(tape: &mut Tape<T>, logits: Var) -> Result<Var> {
    let a = tape.columns(logits, 0, 1)?;
    let b = tape.columns(logits, 1, 1)?;
    let diff = tape.sub(a, b)?;
    Ok(tape.mean(diff))
}

pub fn discriminator_loss_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    joint: Var,
    perm: Var,
) -> Result<Var> {
    let nj = tape.shape(joint)[0];
    let np = tape.shape(perm)[0];
    let a = tape.cross_entropy(joint, &vec![0; nj])?;
    let b = tape.cross_entropy(perm, &vec![1; np])?;
    let s = tape.add(a, b)?;
    Ok(tape.scale(s, T::cast(0.5)))
}

/// Record the full objective. `beta` is the annealed weight for this epoch.
#[allow(clippy::too_many_arguments)]
pub fn vae_loss_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    recon: Var,
    target: Var,
    mu: Var,
    logvar: Var,
    tc_logits: Var,
    beta: f64,
    cfg: &LossConfig,
) -> Result<LossVars> {
    let mut r = recon_on_tape(tape, cfg.recon_kind, recon, target)?;
    if cfg.reduction == Reduction::ImageSum && cfg.recon_kind != ReconKind::Bernoulli {
        let s = tape.shape(recon);
        let per_image: usize = s.iter().skip(1).product();
        r = tape.scale(r, T::cast(per_image as f64));
    }
    let kl_dims = kl_per_dim_on_tape(tape, mu, logvar)?;
    let kl = tape.pnorm(kl_dims, T::cast(cfg.n as f64));
    let tc = tc_on_tape(tape, tc_logits)?;
    let bk = tape.scale(kl, T::cast(beta));
    let gt = tape.scale(tc, T::cast(cfg.gamma));
    let s = tape.add(r, bk)?;
    let total = tape.add(s, gt)?;
    Ok(LossVars {
        total,
        recon: r,
        kl_dims,
        kl_reg: kl,
        tc,
        beta,
    })
}
