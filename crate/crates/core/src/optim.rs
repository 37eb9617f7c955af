//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::nn::ParamStore;
use crate::tensor::Scalar;

/// Default autoencoder learning rate.
pub const LR_VAE: f64 = 1e-3;
/// Default discriminator learning rate.
pub const LR_DISC: f64 = 7e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: LR_VAE,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state for one [`ParamStore`]; moments are kept in f64.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step_count: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<T: Scalar>(config: AdamConfig, params: &ParamStore<T>) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        Self {
            config,
            step_count: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    /// Apply one update from the accumulated `grad` buffers. Rejects the
    /// whole step, leaving parameters and state untouched, if any gradient
    /// element is non-finite.
    pub fn step<T: Scalar>(&mut self, params: &mut ParamStore<T>) -> Result<(), Error> {
        for (i, p) in params.iter().enumerate() {
            if let Some(e) = p.grad.iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    param: i,
                    name: p.name.clone(),
                    element: e,
                });
            }
            if p.grad.len() != self.first_moment[i].len() {
                return Err(Error::Contract(format!(
                    "optimizer state does not match parameter `{}`",
                    p.name
                )));
            }
        }
        self.step_count += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step_count as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for ((p, m), v) in params
            .iter_mut()
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            for (((w, g), m), v) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(&p.grad)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                let g = g.as_f64();
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let update = lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                *w = T::cast(w.as_f64() - update);
            }
        }
        Ok(())
    }
}
