use std::fs;
use std::path::{Path, PathBuf};

use favae_core::dataset::{
    generate_dataset, DatasetConfig, GeometrySpec, LoadedDataset, MANIFEST_FILE,
};
use favae_core::eval::evaluate;
use favae_core::experiments::{
    ablation_suite, dimensionality_sweep, sweep_table, ExperimentSetup, Variant,
};
use favae_core::metrics::MetricReport;
use favae_core::model::{load_weights, prepare_image, save_weights, FactorVae};
use favae_core::train::{train, TrainConfig, TrainOutputs};
use favae_core::traverse::{
    conditioning_for, decode_png, dim_label, encode_any, pair_grid, posterior_traversal,
    prior_traversal, selective_mix,
};
use favae_core::Image;
use serde::Serialize;
use serde_json::json;

use crate::args::*;
use crate::config::{echo, FileConfig};
use crate::service::{self, ServiceState};
use crate::CliError;

pub fn dispatch(cli: Cli) -> Result<(), CliError> {
    let file = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::GenData(a) => gen_data(file, a),
        Command::Train(a) => train_cmd(file, a),
        Command::Eval(a) => eval_cmd(file, a),
        Command::Traverse(a) => traverse(file, a),
        Command::Encode(a) => encode(a),
        Command::Decode(a) => decode(file, a),
        Command::Mix(a) => mix(file, a),
        Command::Sweep(a) => sweep(file, a),
        Command::Ablate(a) => ablate(file, a),
        Command::Serve(a) => serve(file, a),
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| favae_core::Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| favae_core::Error::io(path, e).into())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(favae_core::Error::from)?;
    bytes.push(b'\n');
    write(path, bytes)
}

fn print_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    println!(
        "{}",
        serde_json::to_string(value).map_err(favae_core::Error::from)?
    );
    Ok(())
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| favae_core::Error::io(dir, e).into())
}

fn manifest_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(MANIFEST_FILE)
    } else {
        p.to_path_buf()
    }
}

fn load_data(p: &Path) -> Result<(PathBuf, LoadedDataset), CliError> {
    let path = manifest_path(p);
    let data = LoadedDataset::load(&path)?;
    log::info!(
        "loaded {} entries at {}px from {}",
        data.len(),
        data.resolution,
        path.display()
    );
    Ok((path, data))
}

fn apply_train(cfg: &mut TrainConfig, o: &TrainOverrides) {
    macro_rules! set {
        ($field:expr, $flag:expr) => {
            if let Some(v) = $flag {
                $field = v;
            }
        };
    }
    set!(cfg.seed, o.seed);
    set!(cfg.epochs, o.epochs);
    set!(cfg.batch_size, o.batch_size);
    set!(cfg.model.latent_dim, o.latent_dim);
    set!(cfg.loss.beta_max, o.beta_max);
    set!(cfg.loss.anneal_epochs, o.anneal_epochs);
    set!(cfg.loss.gamma, o.gamma);
    set!(cfg.loss.n, o.kl_order);
    set!(cfg.lr_vae, o.lr);
    set!(cfg.lr_disc, o.lr_disc);
    set!(cfg.checkpoint_every, o.checkpoint_every);
    if o.no_normals {
        cfg.model.use_normals = false;
    }
}

fn parse_vector(text: &str) -> Result<Vec<f64>, CliError> {
    let f: Vec<f64> = serde_json::from_str(text)
        .map_err(|e| CliError::Usage(format!("`{text}` is not a JSON array of numbers: {e}")))?;
    Ok(f)
}

fn gen_data(file: FileConfig, a: GenDataArgs) -> Result<(), CliError> {
    let mut sec = file.dataset;
    if let Some(p) = a.preset {
        sec.preset = p;
    }
    if let Some(s) = a.seed {
        sec.seed = s;
    }
    if a.resolution.is_some() {
        sec.resolution = a.resolution;
    }
    echo("dataset", &sec);
    let mut cfg = DatasetConfig::preset(&sec.preset, sec.seed)?;
    if let Some(r) = sec.resolution {
        cfg.resolution = r;
    }
    let manifest = generate_dataset(&cfg, &a.out)?;
    print_json(&json!({
        "manifest": a.out.join(MANIFEST_FILE),
        "entries": manifest.entries.len(),
        "resolution": manifest.resolution,
    }))
}

fn train_cmd(file: FileConfig, a: TrainArgs) -> Result<(), CliError> {
    let (path, data) = load_data(&a.data)?;
    let mut cfg = file.train;
    apply_train(&mut cfg, &a.train);
    cfg.model.image_resolution = data.resolution;
    cfg.dataset_manifest = Some(path.clone());
    echo("train", &cfg);
    create_dir(&a.out)?;
    let (train_idx, _) = data.split();
    let outcome = train(
        &cfg,
        &data,
        Some(train_idx),
        &TrainOutputs {
            dir: Some(a.out.clone()),
        },
    )?;
    let final_kl = outcome.log.final_kl().map(<[f64]>::to_vec);
    let meta = json!({ "train_config": cfg, "final_kl_per_dim": final_kl });
    let weights = a.out.join("weights.bin");
    let checksum = save_weights(&weights, &outcome.model, &meta, None)?;
    print_json(&json!({ "weights": weights, "model_id": checksum, "final_kl_per_dim": final_kl }))
}

fn report_csv(report: &MetricReport, label: &str) -> String {
    format!("{}\n{}\n", MetricReport::CSV_HEADER, report.csv_row(label))
}

fn eval_cmd(file: FileConfig, a: EvalArgs) -> Result<(), CliError> {
    let mut cfg = file.eval;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(t) = a.trials {
        cfg.zmin.trials = t;
    }
    if let Some(s) = a.shuffles {
        cfg.shuffles = s;
    }
    echo("eval", &cfg);
    let (model, _) = load_weights(&a.weights)?;
    let (_, data) = load_data(&a.data)?;
    let (_, holdout) = data.split();
    let report = evaluate(&model, &data, &holdout, &cfg)?;
    if let Some(out) = &a.out {
        let label = a
            .weights
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        write_json(&out.join("metrics.json"), &report)?;
        write(&out.join("metrics.csv"), report_csv(&report, &label))?;
    }
    print_json(&report)
}

fn geometry(name: &str) -> Result<GeometrySpec, CliError> {
    Ok(GeometrySpec::named(name)?)
}

fn two<T: Copy>(flag: &str, v: &[T]) -> Result<[T; 2], CliError> {
    match v {
        [a, b] => Ok([*a, *b]),
        _ => Err(CliError::Usage(format!(
            "--{flag} takes exactly two comma-separated values, got {}",
            v.len()
        ))),
    }
}

fn traverse(file: FileConfig, a: TraverseArgs) -> Result<(), CliError> {
    let pair = a.pair.as_deref().map(|p| two("pair", p)).transpose()?;
    let mut spec = file.traverse;
    if let Some(g) = a.geometry {
        spec.geometry = g;
    }
    if a.dims.is_some() {
        spec.dims = a.dims;
    }
    if let Some(r) = &a.range {
        spec.range = two("range", r)?;
    }
    if let Some(s) = a.steps {
        spec.steps = s;
    }
    echo("traverse", &spec);
    let (model, info) = load_weights(&a.weights)?;
    let cond = conditioning_for(&geometry(&spec.geometry)?, model.resolution())?;
    let labels = info.dim_labels.as_deref();
    let mut grid = match (pair, &a.image) {
        (Some([i, j]), _) => pair_grid(&model, i, j, spec.range, spec.steps, &cond)?,
        (None, Some(path)) => {
            let image = prepare_image(&Image::load_png(path)?, model.resolution());
            posterior_traversal(&model, &model, &image, &spec, &cond)?
        }
        (None, None) => prior_traversal(&model, &spec, &cond)?,
    };
    if pair.is_none() {
        let dims = spec
            .dims
            .clone()
            .unwrap_or_else(|| (0..model.latent_dim()).collect());
        grid.row_labels = dims.iter().map(|&j| dim_label(j, labels)).collect();
    }
    write(&a.out, grid.render().to_png()?)?;
    let sidecar = a.out.with_extension("json");
    write_json(&sidecar, &grid.sidecar())?;
    print_json(&json!({ "grid": a.out, "sidecar": sidecar, "rows": grid.rows, "cols": grid.cols }))
}

fn encode(a: EncodeArgs) -> Result<(), CliError> {
    let (model, _) = load_weights(&a.weights)?;
    let f = encode_any(&model, &Image::load_png(&a.image)?)?;
    print_json(&f)
}

fn decode(file: FileConfig, a: DecodeArgs) -> Result<(), CliError> {
    let f = parse_vector(&a.f)?;
    let name = a.geometry.unwrap_or(file.traverse.geometry);
    let (model, _) = load_weights(&a.weights)?;
    let png = decode_png(&model, &f, &geometry(&name)?)?;
    write(&a.out, png)
}

/// `SOURCE:DIMS` where SOURCE is a JSON array or a PNG path.
fn parse_source(model: &FactorVae<f32>, spec: &str) -> Result<(Vec<f64>, Vec<usize>), CliError> {
    let (src, dims) = spec.rsplit_once(':').ok_or_else(|| {
        CliError::Usage(format!(
            "--src `{spec}` must look like SOURCE:DIMS, e.g. a.png:0,1,2"
        ))
    })?;
    let dims = dims
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|e| CliError::Usage(format!("--src `{spec}`: bad dimension `{s}`: {e}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let f = if src.trim_start().starts_with('[') {
        parse_vector(src)?
    } else {
        encode_any(model, &Image::load_png(Path::new(src))?)?
    };
    Ok((f, dims))
}

fn mix(file: FileConfig, a: MixArgs) -> Result<(), CliError> {
    let (model, _) = load_weights(&a.weights)?;
    let parsed = a
        .sources
        .iter()
        .map(|s| parse_source(&model, s))
        .collect::<Result<Vec<_>, _>>()?;
    let sources: Vec<(&[f64], &[usize])> = parsed
        .iter()
        .map(|(f, d)| (f.as_slice(), d.as_slice()))
        .collect();
    let f = selective_mix(&sources, model.latent_dim())?;
    if let Some(out) = &a.out {
        let name = a.geometry.unwrap_or(file.traverse.geometry);
        write(out, decode_png(&model, &f, &geometry(&name)?)?)?;
    }
    print_json(&f)
}

fn sweep(file: FileConfig, a: SweepArgs) -> Result<(), CliError> {
    let (_, data) = load_data(&a.data)?;
    let mut cfg = file.train;
    apply_train(&mut cfg, &a.train);
    cfg.model.image_resolution = data.resolution;
    let dims = a.dims.unwrap_or(file.sweep.dims);
    echo("train", &cfg);
    echo("sweep", &json!({ "dims": dims }));
    let setup = ExperimentSetup {
        eval: file.eval,
        out_dir: Some(a.out.clone()),
    };
    let rows = dimensionality_sweep(&cfg, &data, &dims, &setup)?;
    let table = sweep_table(&rows);
    write(&a.out.join("sweep.tsv"), &table)?;
    write_json(&a.out.join("sweep.json"), &rows)?;
    print!("{table}");
    Ok(())
}

fn ablate(file: FileConfig, a: AblateArgs) -> Result<(), CliError> {
    let (_, data) = load_data(&a.data)?;
    let mut cfg = file.train;
    apply_train(&mut cfg, &a.train);
    cfg.model.image_resolution = data.resolution;
    let seeds = a.seeds.unwrap_or(file.ablate.seeds);
    let variants = match a.variants {
        Some(names) => names
            .iter()
            .map(|n| {
                Variant::from_slug(n).ok_or_else(|| {
                    let known: Vec<_> = Variant::ALL.iter().map(|v| v.slug()).collect();
                    CliError::Usage(format!(
                        "unknown variant `{n}`; expected one of {}",
                        known.join(", ")
                    ))
                })
            })
            .collect::<Result<Vec<_>, _>>()?,
        None => file.ablate.variants,
    };
    echo("train", &cfg);
    echo("ablate", &json!({ "seeds": seeds, "variants": variants }));
    let setup = ExperimentSetup {
        eval: file.eval,
        out_dir: Some(a.out.clone()),
    };
    let table = ablation_suite(&cfg, &data, &seeds, &variants, &setup)?;
    let tsv = table.to_tsv();
    write(&a.out.join("ablation.tsv"), &tsv)?;
    write_json(&a.out.join("ablation.json"), &table)?;
    print!("{tsv}");
    if variants.len() == Variant::ALL.len() {
        for (line, ok) in table.orderings() {
            println!("{} {line}", if ok { "holds" } else { "VIOLATED" });
        }
    }
    Ok(())
}

fn serve(file: FileConfig, a: ServeArgs) -> Result<(), CliError> {
    let mut cfg = file.serve;
    if let Some(b) = a.bind {
        cfg.bind = b;
    }
    if let Some(m) = a.max_concurrent {
        cfg.max_concurrent = m;
    }
    if let Some(m) = a.max_body_bytes {
        cfg.max_body_bytes = m;
    }
    if let Some(g) = a.geometries {
        cfg.geometries = g;
    }
    echo("serve", &cfg);
    let (model, info) = load_weights(&a.weights)?;
    log::info!(
        "loaded weights {} ({}-dimensional, {}px)",
        info.checksum,
        model.latent_dim(),
        model.resolution()
    );
    let state = ServiceState::new(model, info, &cfg)?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    rt.block_on(service::serve(state, &cfg))?;
    Ok(())
}
