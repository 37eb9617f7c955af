//! Latent-dimensionality sweep and loss/architecture ablations.

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::dataset::LoadedDataset;
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalConfig};
use crate::metrics::MetricReport;
use crate::model::save_weights;
use crate::train::{train, TrainConfig, TrainOutputs};

pub const DEFAULT_SWEEP_DIMS: [usize; 8] = [3, 4, 5, 6, 7, 8, 9, 10];

/// Shared harness settings.
#[derive(Debug, Clone, Default)]
pub struct ExperimentSetup {
    pub eval: EvalConfig,
    /// Each run writes logs and final weights under `<dir>/<run name>/`.
    pub out_dir: Option<PathBuf>,
}

impl ExperimentSetup {
    fn run(&self, name: &str, cfg: &TrainConfig, data: &LoadedDataset) -> Result<MetricReport> {
        let (train_idx, holdout) = data.split();
        let dir = match &self.out_dir {
            Some(root) => {
                let dir = root.join(name);
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                Some(dir)
            }
            None => None,
        };
        log::info!(
            "run {name}: {} epochs, d = {}",
            cfg.epochs,
            cfg.model.latent_dim
        );
        let outcome = train(
            cfg,
            data,
            Some(train_idx),
            &TrainOutputs { dir: dir.clone() },
        )?;
        let report = evaluate(
            &outcome.model,
            data,
            &holdout,
            &EvalConfig {
                seed: cfg.seed,
                ..self.eval.clone()
            },
        )?;
        if let Some(dir) = dir {
            let meta = serde_json::json!({ "run": name, "train_config": cfg });
            save_weights(&dir.join("weights.bin"), &outcome.model, &meta, None)?;
            let p = dir.join("metrics.json");
            std::fs::write(&p, serde_json::to_vec_pretty(&report)?)
                .map_err(|e| Error::io(&p, e))?;
        }
        Ok(report)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub latent_dim: usize,
    pub report: MetricReport,
}

/// One model per latent dimensionality, evaluated for MIR and MIS.
pub fn dimensionality_sweep(
    base: &TrainConfig,
    data: &LoadedDataset,
    dims: &[usize],
    setup: &ExperimentSetup,
) -> Result<Vec<SweepRow>> {
    if dims.is_empty() {
        return Err(Error::Config(
            "dimensionality sweep needs at least one dimension".into(),
        ));
    }
    dims.iter()
        .map(|&d| {
            let mut cfg = base.clone();
            cfg.model.latent_dim = d;
            let report = setup.run(&format!("d{d:02}"), &cfg, data)?;
            Ok(SweepRow {
                latent_dim: d,
                report,
            })
        })
        .collect()
}

/// Tab-separated MIR/MIS table, one row per dimensionality.
pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut out = String::from("d\tMIR\tMIS\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{:.4}\t{:.4}\n",
            r.latent_dim, r.report.mir.mean, r.report.mis.mean
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// KL regularizer with n = 1.
    Summation,
    /// β annealed to 1 instead of 2.
    MaximumBeta1,
    /// β held at its maximum from the first epoch.
    NoAnnealing,
    /// Decoder without normal-map inputs.
    WithoutNormals,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Summation,
        Variant::MaximumBeta1,
        Variant::NoAnnealing,
        Variant::WithoutNormals,
        Variant::Full,
    ];

    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        match self {
            Variant::Summation => cfg.loss.n = 1,
            Variant::MaximumBeta1 => cfg.loss.beta_max = 1.0,
            Variant::NoAnnealing => cfg.loss.anneal_epochs = 0,
            Variant::WithoutNormals => cfg.model.use_normals = false,
            Variant::Full => {}
        }
        cfg
    }

    pub fn from_slug(slug: &str) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.slug() == slug)
    }

    pub fn slug(self) -> &'static str {
        match self {
            Variant::Summation => "summation",
            Variant::MaximumBeta1 => "maximum_beta_1",
            Variant::NoAnnealing => "no_annealing",
            Variant::WithoutNormals => "without_normals",
            Variant::Full => "full",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Summation => "(a) Summation",
            Variant::MaximumBeta1 => "(b) Maximum beta=1",
            Variant::NoAnnealing => "(c) No beta annealing",
            Variant::WithoutNormals => "(d) Without normals",
            Variant::Full => "Full model",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub seed: u64,
    pub report: MetricReport,
}

/// Seed-paired ablation runs: every variant trains once per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    fn mean(&self, v: Variant, metric: impl Fn(&MetricReport) -> f64) -> f64 {
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.variant == v)
            .map(|r| metric(&r.report))
            .collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    }

    /// Seed-averaged MIR of a variant.
    pub fn mean_mir(&self, v: Variant) -> f64 {
        self.mean(v, |r| r.mir.mean)
    }

    /// Seed-averaged held-out PSNR of a variant.
    pub fn mean_psnr(&self, v: Variant) -> f64 {
        self.mean(v, |r| r.psnr_mean.mean)
    }

    /// Each expected ordering with its outcome.
    pub fn orderings(&self) -> Vec<(String, bool)> {
        let full = self.mean_mir(Variant::Full);
        let mut out: Vec<(String, bool)> = [
            Variant::Summation,
            Variant::NoAnnealing,
            Variant::MaximumBeta1,
        ]
        .iter()
        .map(|&v| {
            let other = self.mean_mir(v);
            (
                format!("MIR(full) {full:.4} >= MIR({}) {other:.4}", v.slug()),
                full >= other,
            )
        })
        .collect();
        let (pf, pn) = (
            self.mean_psnr(Variant::Full),
            self.mean_psnr(Variant::WithoutNormals),
        );
        out.push((
            format!("PSNR(full) {pf:.2} >= PSNR(without_normals) {pn:.2}"),
            pf >= pn,
        ));
        out
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("variant\tMIR\tPSNR\n");
        for v in Variant::ALL {
            out.push_str(&format!(
                "{v}\t{:.4}\t{:.2}\n",
                self.mean_mir(v),
                self.mean_psnr(v)
            ));
        }
        out
    }
}

pub fn ablation_suite(
    base: &TrainConfig,
    data: &LoadedDataset,
    seeds: &[u64],
    variants: &[Variant],
    setup: &ExperimentSetup,
) -> Result<AblationTable> {
    if seeds.is_empty() || variants.is_empty() {
        return Err(Error::Config(
            "ablation needs at least one seed and one variant".into(),
        ));
    }
    let mut rows = Vec::new();
    for &seed in seeds {
        for &v in variants {
            let cfg = TrainConfig {
                seed,
                ..v.apply(base)
            };
            let report = setup.run(&format!("{}_s{seed}", v.slug()), &cfg, data)?;
            rows.push(AblationRow {
                variant: v,
                seed,
                report,
            });
        }
    }
    Ok(AblationTable {
        seeds: seeds.to_vec(),
        rows,
    })
}
