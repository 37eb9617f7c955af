//! Reconstruction, disentanglement and interpretability metrics.

mod info;
mod report;
mod zmin;

pub use info::{
    discretize, entropy, mir_score, mis, mutual_information, LatentTable, Mir, HIST_BINS,
    MIR_KL_THRESHOLD,
};
pub use report::{MetricReport, Stat};
pub use zmin::{zmin_score, FactorSampler, TableSampler, ZminConfig, ZminResult};

use crate::error::{Error, Result, ShapeError};
use crate::image::Image;

/// Ridge added to a singular covariance before factorization.
pub const GTC_RIDGE: f64 = 1e-8;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn same_shape(a: &Image, b: &Image) -> Result<(), ShapeError> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(ShapeError::new(format!(
            "images differ in size: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB for unit peak; `+inf` when identical.
pub fn psnr(a: &Image, b: &Image) -> Result<f64, ShapeError> {
    same_shape(a, b)?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Valid-mode separable filtering of a `w x h` plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ow, oh) = (w - k + 1, h - k + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&src[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for (i, t) in taps.iter().enumerate() {
            let src = &rows[(y + i) * ow..(y + i + 1) * ow];
            for (o, v) in out[y * ow..(y + 1) * ow].iter_mut().zip(src) {
                *o += t * v;
            }
        }
    }
    out
}

/// Mean SSIM over valid 11x11 Gaussian windows of the channel-mean images.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    same_shape(a, b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(ShapeError::new(format!(
            "image {w}x{h} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        ))
        .into());
    }
    let x: Vec<f64> = a.luminance().into_iter().map(f64::from).collect();
    let y: Vec<f64> = b.luminance().into_iter().map(f64::from).collect();
    let taps = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
    let mx = filter_valid(&x, w, h, &taps);
    let my = filter_valid(&y, w, h, &taps);
    let sxx = filter_valid(&prod(&x, &x), w, h, &taps);
    let syy = filter_valid(&prod(&y, &y), w, h, &taps);
    let sxy = filter_valid(&prod(&x, &y), w, h, &taps);
    let mut total = 0.0;
    for i in 0..mx.len() {
        let (ux, uy) = (mx[i], my[i]);
        let vx = sxx[i] - ux * ux;
        let vy = syy[i] - uy * uy;
        let cxy = sxy[i] - ux * uy;
        total += ((2.0 * ux * uy + SSIM_C1) * (2.0 * cxy + SSIM_C2))
            / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2));
    }
    Ok(total / mx.len() as f64)
}

/// Gaussian total correlation of a latent sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gtc {
    pub value: f64,
    /// The covariance was singular and [`GTC_RIDGE`] was added.
    pub degenerate: bool,
}

/// Sample covariance of `rows` (each of length `d`).
pub fn covariance(rows: &[Vec<f64>], d: usize) -> Vec<f64> {
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n;
        }
    }
    let mut cov = vec![0.0; d * d];
    for r in rows {
        for i in 0..d {
            let di = r[i] - mean[i];
            for j in i..d {
                cov[i * d + j] += di * (r[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / (n - 1.0);
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }
    cov
}

/// `log det` of a symmetric matrix by Cholesky; `None` unless every pivot
/// is safely positive relative to its diagonal entry.
fn log_det_cholesky(a: &[f64], d: usize) -> Option<f64> {
    let mut l = vec![0.0; d * d];
    let mut log_det = 0.0;
    for j in 0..d {
        let mut s = a[j * d + j];
        for k in 0..j {
            s -= l[j * d + k] * l[j * d + k];
        }
        if !(s > 1e-12 * a[j * d + j]) {
            return None;
        }
        let pivot = s.sqrt();
        l[j * d + j] = pivot;
        log_det += 2.0 * pivot.ln();
        for i in j + 1..d {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            l[i * d + j] = s / pivot;
        }
    }
    Some(log_det)
}

/// `½ (Σ_j log Σ_jj − log det Σ)` of the sample covariance.
pub fn gtc(rows: &[Vec<f64>]) -> Result<Gtc> {
    let d = rows.first().map_or(0, Vec::len);
    if d == 0 || rows.len() <= d {
        return Err(Error::Contract(format!(
            "gtc needs more rows than dimensions (got {} x {d})",
            rows.len()
        )));
    }
    if rows.iter().any(|r| r.len() != d) {
        return Err(ShapeError::new("latent rows have different lengths").into());
    }
    let mut cov = covariance(rows, d);
    let mut degenerate = false;
    let log_det = match log_det_cholesky(&cov, d) {
        Some(v) => v,
        None => {
            degenerate = true;
            for i in 0..d {
                cov[i * d + i] += GTC_RIDGE;
            }
            log_det_cholesky(&cov, d)
                .ok_or_else(|| Error::Contract("covariance not positive definite".into()))?
        }
    };
    let log_diag: f64 = (0..d).map(|i| cov[i * d + i].ln()).sum();
    Ok(Gtc {
        value: 0.5 * (log_diag - log_det),
        degenerate,
    })
}
