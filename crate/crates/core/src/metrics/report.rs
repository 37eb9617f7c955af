use serde::{Deserialize, Serialize};

/// Mean and sample standard deviation over trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub values: Vec<f64>,
}

impl Stat {
    pub fn from_values(values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std, values }
    }

    pub fn single(value: f64) -> Self {
        Self::from_values(vec![value])
    }
}

/// Table-1 style evaluation of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub gtc: Stat,
    pub gtc_degenerate: bool,
    pub mis: Stat,
    pub zmin: Stat,
    pub mir: Stat,
    /// MIR with labels shuffled against latents: the chance-level baseline.
    pub mir_shuffled: Stat,
    pub psnr_mean: Stat,
    pub ssim_mean: Stat,
    pub trial_count: usize,
    /// Rows in the evaluation table.
    pub rows: usize,
    /// Mean KL per latent dimension over the evaluation rows.
    pub kl_per_dim: Vec<f64>,
    /// Per latent dimension, the factor its MI concentrates on.
    pub suggested_labels: Vec<Option<String>>,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str =
        "label,gtc,gtc_std,mis,mis_std,zmin,zmin_std,mir,mir_std,mir_shuffled,psnr,psnr_std,ssim,ssim_std";

    pub fn csv_row(&self, label: &str) -> String {
        let cols = [&self.gtc, &self.mis, &self.zmin, &self.mir];
        let mut out = label.replace(',', ";");
        for s in cols {
            out.push_str(&format!(",{:.6},{:.6}", s.mean, s.std));
        }
        out.push_str(&format!(",{:.6}", self.mir_shuffled.mean));
        for s in [&self.psnr_mean, &self.ssim_mean] {
            out.push_str(&format!(",{:.6},{:.6}", s.mean, s.std));
        }
        out
    }
}
