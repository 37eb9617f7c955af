//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! `FAVAE_ACCEPT_PROFILE=quick` (default) trains reduced models at 32x32 so
//! the whole report fits in a test run; `desk` uses the 64x64 desk settings
//! and takes hours. `FAVAE_ACCEPT_ONLY=A3,A5` limits the run to a subset.
//!
//! The process exits non-zero only when a criterion could not be evaluated.
//! Verdicts of the training criteria are reported, not enforced; the exact
//! criteria are also enforced by the ordinary test targets.

mod common;
#[path = "metric_oracles.rs"]
mod metric_oracles;

use std::cell::OnceCell;
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use favae_core::dataset::{DatasetConfig, LoadedDataset};
use favae_core::eval::{evaluate, EvalConfig};
use favae_core::experiments::{
    ablation_suite, dimensionality_sweep, sweep_table, ExperimentSetup, Variant,
};
use favae_core::losses::{beta_at, kl_norm, kl_per_dim, smooth_l1, LossConfig};
use favae_core::model::ModelConfig;
use favae_core::train::{train, TrainConfig, TrainOutputs};

const PSNR_MIN: f64 = 22.0;
const ZMIN_MIN: f64 = 0.5;
const MIR_MARGIN: f64 = 0.10;
const TC_TOL: f64 = 0.1;
const SEEDS: [u64; 3] = [0, 1, 2];
const SWEEP_DIMS: [usize; 3] = [3, 6, 10];

struct Profile {
    name: &'static str,
    data: DatasetConfig,
    /// Settings for the single desk-scale run.
    main: TrainConfig,
    ablation_epochs: usize,
    sweep_epochs: usize,
}

impl Profile {
    fn from_env() -> Result<Self, String> {
        match std::env::var("FAVAE_ACCEPT_PROFILE")
            .as_deref()
            .unwrap_or("quick")
        {
            "quick" => {
                let model = ModelConfig {
                    image_resolution: 32,
                    encoder_channels: vec![8, 8, 16],
                    decoder_channels: vec![16, 16, 8, 8],
                    encoder_hidden: 64,
                    decoder_hidden: 64,
                    discriminator_width: 128,
                    discriminator_depth: 3,
                    ..ModelConfig::default()
                };
                Ok(Self {
                    name: "quick",
                    data: DatasetConfig {
                        resolution: 32,
                        ..DatasetConfig::desk(0)
                    },
                    main: scaled(
                        TrainConfig {
                            model,
                            ..TrainConfig::desk()
                        },
                        8,
                    ),
                    ablation_epochs: 3,
                    sweep_epochs: 2,
                })
            }
            "desk" => Ok(Self {
                name: "desk",
                data: DatasetConfig::desk(0),
                main: TrainConfig::desk(),
                ablation_epochs: 50,
                sweep_epochs: 20,
            }),
            other => Err(format!(
                "unknown FAVAE_ACCEPT_PROFILE {other:?} (expected quick or desk)"
            )),
        }
    }
}

/// Same warm-up fraction as the desk schedule over `epochs` epochs.
fn scaled(mut cfg: TrainConfig, epochs: usize) -> TrainConfig {
    let desk = TrainConfig::desk();
    cfg.loss.anneal_epochs = (epochs * desk.loss.anneal_epochs).div_ceil(desk.epochs);
    cfg.epochs = epochs;
    cfg
}

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

type Outcome = Result<Verdict, String>;

/// Runs every case and counts the ones that return without panicking.
fn run_cases(cases: &[(&str, fn())]) -> Outcome {
    let mut failed = Vec::new();
    for (name, f) in cases {
        if panic::catch_unwind(*f).is_err() {
            failed.push(*name);
        }
    }
    let ok = cases.len() - failed.len();
    let mut detail = format!("{ok}/{} checks", cases.len());
    if !failed.is_empty() {
        detail.push_str(&format!("; failed: {}", failed.join(", ")));
    }
    Ok(Verdict::new(failed.is_empty(), detail))
}

fn loss_analytics() -> Outcome {
    let err = |e: favae_core::Error| e.to_string();
    let mut bad = Vec::new();
    if kl_per_dim(&[0.0; 4], &[0.0; 4], 2).map_err(|e| e.to_string())? != vec![0.0, 0.0] {
        bad.push("kl_per_dim(0, 0)");
    }
    if (kl_norm(&[0.5; 6], 3).map_err(err)? - 0.75f64.cbrt()).abs() > 1e-9 {
        bad.push("kl_norm(0.5 x 6, 3)");
    }
    let cfg = LossConfig {
        beta_max: 2.0,
        anneal_epochs: 80,
        ..LossConfig::default()
    };
    if beta_at(0.0, &cfg) != 0.0 || beta_at(80.0, &cfg) != 2.0 || beta_at(40.0, &cfg) != 1.0 {
        bad.push("beta_at endpoints");
    }
    let sl1 = |a: &[f64], b: &[f64]| smooth_l1(a, b).map_err(|e| e.to_string());
    if sl1(&[0.5], &[0.0])? != 0.125
        || sl1(&[0.0], &[3.0])? != 2.5
        || sl1(&[1.0, -2.0], &[0.0, 0.0])? != 1.0
    {
        bad.push("smooth_l1 cases");
    }
    Ok(Verdict::new(
        bad.is_empty(),
        if bad.is_empty() {
            "all exact".to_string()
        } else {
            bad.join(", ")
        },
    ))
}

fn tc_oracle() -> Outcome {
    let t = Instant::now();
    let oracle = common::TcOracle::default();
    let truth = common::gaussian_tc(0.8);
    let corr = common::tc_via_discriminator(0.8, &oracle, 1);
    let indep = common::tc_via_discriminator(0.0, &oracle, 2);
    let secs = t.elapsed().as_secs_f64();
    let pass = (corr - truth).abs() <= TC_TOL && indep.abs() < TC_TOL && secs < 600.0;
    Ok(Verdict::new(
        pass,
        format!("rho=0.8: {corr:.3} (analytic {truth:.3}, tol {TC_TOL}); independent: {indep:.3}; {secs:.0} s"),
    ))
}

fn desk_training(p: &Profile, data: &LoadedDataset) -> Outcome {
    let (train_idx, holdout) = data.split();
    let cfg = &p.main;
    let t = Instant::now();
    let outcome =
        train(cfg, data, Some(train_idx), &TrainOutputs::default()).map_err(|e| e.to_string())?;
    let train_secs = t.elapsed().as_secs_f64();
    let r = evaluate(
        &outcome.model,
        data,
        &holdout,
        &EvalConfig {
            seed: cfg.seed,
            ..EvalConfig::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let margin = r.mir.mean - r.mir_shuffled.mean;
    let checks = [
        r.psnr_mean.mean >= PSNR_MIN,
        r.zmin.mean >= ZMIN_MIN,
        margin >= MIR_MARGIN,
    ];
    Ok(Verdict::new(
        checks.iter().all(|&c| c),
        format!(
            "{}px, {} epochs, {} holdout rows, trained in {:.0} s: PSNR {:.2} dB (>= {PSNR_MIN}) {}; \
             Z-min {:.3} (>= {ZMIN_MIN}) {}; MIR {:.3} - shuffled {:.3} = {margin:.3} (>= {MIR_MARGIN}) {}",
            cfg.model.image_resolution,
            cfg.epochs,
            holdout.len(),
            train_secs,
            r.psnr_mean.mean,
            mark(checks[0]),
            r.zmin.mean,
            mark(checks[1]),
            r.mir.mean,
            r.mir_shuffled.mean,
            mark(checks[2]),
        ),
    ))
}

fn mark(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "MISSED"
    }
}

fn ablation(p: &Profile, data: &LoadedDataset) -> Outcome {
    let base = scaled(p.main.clone(), p.ablation_epochs);
    let table = ablation_suite(
        &base,
        data,
        &SEEDS,
        &Variant::ALL,
        &ExperimentSetup::default(),
    )
    .map_err(|e| e.to_string())?;
    let orderings = table.orderings();
    let detail: Vec<String> = orderings
        .iter()
        .map(|(s, ok)| format!("{s} {}", mark(*ok)))
        .collect();
    Ok(Verdict::new(
        orderings.iter().all(|(_, ok)| *ok),
        format!(
            "{} epochs x {} seeds: {}",
            base.epochs,
            SEEDS.len(),
            detail.join("; ")
        ),
    ))
}

fn sweep(p: &Profile, data: &LoadedDataset) -> Outcome {
    let base = scaled(p.main.clone(), p.sweep_epochs);
    let rows = dimensionality_sweep(&base, data, &SWEEP_DIMS, &ExperimentSetup::default())
        .map_err(|e| e.to_string())?;
    let populated = rows.len() == SWEEP_DIMS.len()
        && rows.iter().zip(SWEEP_DIMS).all(|(r, d)| r.latent_dim == d)
        && rows
            .iter()
            .all(|r| r.report.mir.mean.is_finite() && r.report.mis.mean.is_finite());
    let table = sweep_table(&rows);
    println!("{}", table.trim_end().replace('\n', "\n    "));
    Ok(Verdict::new(
        populated,
        format!(
            "{} epochs, {} rows, all finite: {populated}",
            base.epochs,
            rows.len()
        ),
    ))
}

/// Renders the profile's dataset on first use.
fn load_once<'a>(
    cell: &'a OnceCell<LoadedDataset>,
    cfg: &DatasetConfig,
) -> Result<&'a LoadedDataset, String> {
    if cell.get().is_none() {
        let t = Instant::now();
        let d = LoadedDataset::render(cfg).map_err(|e| e.to_string())?;
        println!(
            "    rendered {} images at {}px in {:.0} s",
            d.len(),
            d.resolution,
            t.elapsed().as_secs_f64()
        );
        let _ = cell.set(d);
    }
    Ok(cell.get().expect("set above"))
}

fn main() -> ExitCode {
    let profile = match Profile::from_env() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::FAILURE;
        }
    };
    let only: Option<Vec<String>> = std::env::var("FAVAE_ACCEPT_ONLY")
        .ok()
        .map(|s| s.split(',').map(|x| x.trim().to_uppercase()).collect());
    let wanted = |id: &str| only.as_ref().map_or(true, |o| o.iter().any(|x| x == id));
    // Case failures are summarized in the report; their panic messages
    // still go to stderr through the default hook.
    println!("acceptance profile: {}", profile.name);

    let data = OnceCell::new();
    let dataset = || load_once(&data, &profile.data);

    let criteria: [(&str, &str); 9] = [
        ("A1", "gradient correctness"),
        ("A2", "loss analytics"),
        ("A3", "TC estimator oracle"),
        ("A4", "metric oracles"),
        ("A5", "desk-scale training"),
        ("A6", "ablation ordering"),
        ("A7", "determinism"),
        ("A8", "traversal contracts"),
        ("A9", "dimensionality sweep"),
    ];
    let mut incomplete = false;
    for (id, title) in criteria {
        if !wanted(id) {
            continue;
        }
        let t = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(|| match id {
            "A1" => run_cases(gradients::CASES),
            "A2" => loss_analytics(),
            "A3" => tc_oracle(),
            "A4" => run_cases(metric_oracles::CASES),
            "A5" => desk_training(&profile, dataset()?),
            "A6" => ablation(&profile, dataset()?),
            "A7" => run_cases(determinism::CASES),
            "A8" => run_cases(traversals::CASES),
            "A9" => sweep(&profile, dataset()?),
            _ => unreachable!("criteria are listed above"),
        }))
        .unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(v) => println!(
                "{id} {} {title}: {} [{secs:.0} s]",
                if v.pass { "PASS" } else { "FAIL" },
                v.detail
            ),
            Err(e) => {
                incomplete = true;
                println!("{id} FAIL {title}: not evaluated: {e} [{secs:.0} s]");
            }
        }
    }
    if incomplete {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
