mod common;

use std::fs;
use std::path::Path;

use common::*;
use favae_core::dataset::{GeometrySpec, MANIFEST_FILE};
use favae_core::traverse::decode_png;
use favae_core::Image;
use tempfile::tempdir;

const SUBCOMMANDS: [&str; 10] = [
    "gen-data", "train", "eval", "traverse", "encode", "decode", "mix", "sweep", "ablate", "serve",
];

fn same_tree(a: &Path, b: &Path) {
    let mut names: Vec<_> = fs::read_dir(a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    let mut other: Vec<_> = fs::read_dir(b)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    other.sort();
    assert_eq!(names, other, "{} vs {}", a.display(), b.display());
    for n in names {
        let (pa, pb) = (a.join(&n), b.join(&n));
        if pa.is_dir() {
            same_tree(&pa, &pb);
        } else {
            assert!(
                fs::read(&pa).unwrap() == fs::read(&pb).unwrap(),
                "{} differs",
                pa.display()
            );
        }
    }
}

#[test]
fn every_subcommand_documents_every_flag() {
    for sub in SUBCOMMANDS {
        let out = ok(favae(&[sub, "--help"]));
        let text = stdout(&out);
        assert!(text.contains("Usage: favae"), "{sub}: {text}");
        let lines: Vec<&str> = text.lines().collect();
        let mut flags = 0;
        for (i, line) in lines.iter().enumerate() {
            if !line.trim_start().starts_with("--") {
                continue;
            }
            flags += 1;
            // Short help puts the description on the same line, long help on the next.
            let inline = line
                .trim_start()
                .split_once("  ")
                .map(|(_, d)| d.trim())
                .unwrap_or("");
            let next = lines.get(i + 1).map(|l| l.trim()).unwrap_or("");
            let documented = !inline.is_empty() || (!next.is_empty() && !next.starts_with('-'));
            assert!(documented, "{sub}: undocumented flag in `{line}`");
        }
        assert!(flags >= 2 && text.contains("--config"), "{sub}");
    }
    ok(favae(&["--help"]));
    ok(favae(&["--version"]));
}

#[test]
fn unknown_flag_is_a_usage_error_naming_the_flag() {
    let out = favae(&[
        "encode",
        "--weights",
        "w.bin",
        "--image",
        "x.png",
        "--frobnicate",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--frobnicate"));
    assert!(stderr(&out).contains("Usage:"));

    let out = favae(&["teleport"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("teleport"));

    let out = favae(&["decode", "--weights", "w.bin"]);
    assert_eq!(out.status.code(), Some(1), "missing required flags");
}

#[test]
fn bad_config_files_are_usage_errors() {
    let dir = tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[dataset]\nflavour = 3\n").unwrap();
    let out = favae(&[
        "--config",
        cfg.to_str().unwrap(),
        "gen-data",
        "--out",
        "unused",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("flavour"));

    let missing = dir.path().join("nope.toml");
    let out = favae(&[
        "--config",
        missing.to_str().unwrap(),
        "gen-data",
        "--out",
        "unused",
    ]);
    assert_eq!(out.status.code(), Some(1));

    let out = favae(&[
        "gen-data",
        "--out",
        dir.path().join("d").to_str().unwrap(),
        "--preset",
        "huge",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("huge"));
}

#[test]
fn runtime_failures_exit_2() {
    let dir = tempdir().unwrap();
    let missing = dir.path().join("missing.bin");
    let out = favae(&[
        "encode",
        "--weights",
        missing.to_str().unwrap(),
        "--image",
        "x.png",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("missing.bin"));

    let corrupt = dir.path().join("corrupt.bin");
    let (w, _) = write_weights(dir.path());
    let mut bytes = fs::read(&w).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 1;
    fs::write(&corrupt, bytes).unwrap();
    let out = favae(&[
        "decode",
        "--weights",
        corrupt.to_str().unwrap(),
        "--f",
        "[0,0,0,0,0,0]",
        "--out",
        "y.png",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("checksum"));
}

#[test]
fn gen_data_is_byte_identical_and_echoes_the_effective_config() {
    let dir = tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[dataset]\nseed = 7\nresolution = 64\n").unwrap();
    let run = |name: &str| {
        let out_dir = dir.path().join(name);
        let out = ok(favae(&[
            "--config",
            cfg.to_str().unwrap(),
            "gen-data",
            "--out",
            out_dir.to_str().unwrap(),
            "--resolution",
            "16",
        ]));
        (out_dir, out)
    };
    let (a, out) = run("a");
    let echoed = stderr(&out);
    assert!(echoed.contains("# effective config"));
    assert!(echoed.contains("seed = 7"), "config value kept: {echoed}");
    assert!(
        echoed.contains("resolution = 16"),
        "flag wins over config: {echoed}"
    );

    let report: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(report["resolution"], 16);
    assert_eq!(report["entries"], 6912);
    assert!(a.join(MANIFEST_FILE).is_file());

    let (b, _) = run("b");
    same_tree(&a, &b);
}

#[test]
fn encode_prints_d_finite_reals_and_is_deterministic() {
    let dir = tempdir().unwrap();
    let (w, _) = write_weights(dir.path());
    // Not square and not at model resolution: exercises crop and resize.
    let mut img = disc_image(48, [0.8, 0.3, 0.2]);
    img = Image::new(48, 40, img.data()[..48 * 40 * 3].to_vec()).unwrap();
    let png = write_png(dir.path(), "x.png", &img);
    let args = [
        "encode",
        "--weights",
        w.to_str().unwrap(),
        "--image",
        png.to_str().unwrap(),
        "--seed",
        "3",
    ];
    let first = json_vec(&ok(favae(&args)));
    assert_eq!(first.len(), D);
    assert!(first.iter().all(|v| v.is_finite()));
    assert_eq!(first, json_vec(&ok(favae(&args))));

    let out = favae(&[
        "encode",
        "--weights",
        w.to_str().unwrap(),
        "--image",
        w.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "weights file is not a PNG");
}

#[test]
fn decode_writes_the_library_png() {
    let dir = tempdir().unwrap();
    let (w, _) = write_weights(dir.path());
    let f = "[0.5,-1,0,0,2,0.25]";
    let out = dir.path().join("nested/y.png");
    ok(favae(&[
        "decode",
        "--weights",
        w.to_str().unwrap(),
        "--f",
        f,
        "--geometry",
        "torus",
        "--out",
        out.to_str().unwrap(),
    ]));
    let expected = decode_png(
        &tiny_model(),
        &[0.5, -1.0, 0.0, 0.0, 2.0, 0.25],
        &GeometrySpec::named("torus").unwrap(),
    )
    .unwrap();
    assert!(fs::read(&out).unwrap() == expected);
    let img = Image::load_png(&out).unwrap();
    assert_eq!((img.width(), img.height()), (32, 32));

    let bad_len = favae(&[
        "decode",
        "--weights",
        w.to_str().unwrap(),
        "--f",
        "[0,0]",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(bad_len.status.code(), Some(2));
    assert!(stderr(&bad_len).contains("expects 6"));

    let not_json = favae(&[
        "decode",
        "--weights",
        w.to_str().unwrap(),
        "--f",
        "zeros",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(not_json.status.code(), Some(1));

    let teapot = favae(&[
        "decode",
        "--weights",
        w.to_str().unwrap(),
        "--f",
        "[0,0,0,0,0,0]",
        "--geometry",
        "teapot2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_ne!(teapot.status.code(), Some(0));
    for g in ["sphere", "blob", "torus"] {
        assert!(
            stderr(&teapot).contains(g),
            "supported list: {}",
            stderr(&teapot)
        );
    }
}

#[test]
fn mix_selects_dimensions_from_each_source() {
    let dir = tempdir().unwrap();
    let (w, _) = write_weights(dir.path());
    let w = w.to_str().unwrap();
    let red = write_png(dir.path(), "red.png", &disc_image(32, [0.9, 0.1, 0.1]));
    let blue = write_png(dir.path(), "blue.png", &disc_image(64, [0.1, 0.2, 0.9]));
    let enc = |p: &Path| {
        json_vec(&ok(favae(&[
            "encode",
            "--weights",
            w,
            "--image",
            p.to_str().unwrap(),
        ])))
    };
    let (fr, fb) = (enc(&red), enc(&blue));

    let whole = format!("{}:0,1,2,3,4,5", red.display());
    assert_eq!(
        json_vec(&ok(favae(&["mix", "--weights", w, "--src", &whole]))),
        fr,
        "one source is plain encode"
    );

    let a = format!("{}:0,1,2", red.display());
    let b = format!("{}:3,4,5", blue.display());
    let out_png = dir.path().join("mixed.png");
    let mixed = json_vec(&ok(favae(&[
        "mix",
        "--weights",
        w,
        "--src",
        &a,
        "--src",
        &b,
        "--out",
        out_png.to_str().unwrap(),
    ])));
    assert_eq!(&mixed[..3], &fr[..3]);
    assert_eq!(&mixed[3..], &fb[3..]);
    assert!(Image::load_png(&out_png).is_ok());

    let literal = ok(favae(&[
        "mix",
        "--weights",
        w,
        "--src",
        "[1,2,3,4,5,6]:1,3",
        "--src",
        "[-1,-2,-3,-4,-5,-6]:0,2",
        "--src",
        &format!("{}:4,5", blue.display()),
    ]));
    let three = json_vec(&literal);
    assert_eq!(&three[..4], &[-1.0, 2.0, -3.0, 4.0]);
    assert_eq!(&three[4..], &fb[4..]);

    let overlap = favae(&[
        "mix",
        "--weights",
        w,
        "--src",
        "[0,0,0,0,0,0]:0,1,2,3",
        "--src",
        "[1,1,1,1,1,1]:3,4,5",
    ]);
    assert_eq!(overlap.status.code(), Some(1));
    assert!(
        stderr(&overlap).contains("dimension 3 claimed by sources 0 and 1"),
        "{}",
        stderr(&overlap)
    );

    let gap = favae(&["mix", "--weights", w, "--src", "[0,0,0,0,0,0]:0,1,2"]);
    assert_eq!(gap.status.code(), Some(1));
    assert!(stderr(&gap).contains("not assigned: 3, 4, 5"));

    let malformed = favae(&["mix", "--weights", w, "--src", "no-colon-here"]);
    assert_eq!(malformed.status.code(), Some(1));
}

#[test]
fn traverse_writes_grid_and_sidecar_deterministically() {
    let dir = tempdir().unwrap();
    let (w, _) = write_weights(dir.path());
    let w = w.to_str().unwrap();
    let run = |name: &str, extra: &[&str]| {
        let out = dir.path().join(name);
        let mut args = vec!["traverse", "--weights", w, "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        ok(favae(&args));
        (
            fs::read(&out).unwrap(),
            fs::read_to_string(out.with_extension("json")).unwrap(),
        )
    };
    let (png, sidecar) = run(
        "g/prior.png",
        &["--dims", "0,2", "--steps", "3", "--range", "-1,1"],
    );
    assert_eq!(
        run(
            "g/prior2.png",
            &["--dims", "0,2", "--steps", "3", "--range", "-1,1"]
        ),
        (png, sidecar.clone())
    );
    let meta: serde_json::Value = serde_json::from_str(&sidecar).unwrap();
    assert_eq!(
        (meta["rows"].as_u64(), meta["cols"].as_u64()),
        (Some(2), Some(3))
    );
    assert_eq!(
        meta["row_labels"][1], "2:factor2",
        "labels come from the weights file"
    );
    assert_eq!(meta["latents"][1][0][2], -1.0);

    let (_, pair) = run("g/pair.png", &["--pair", "1,4", "--steps", "4"]);
    let meta: serde_json::Value = serde_json::from_str(&pair).unwrap();
    assert_eq!(
        (meta["rows"].as_u64(), meta["cols"].as_u64()),
        (Some(4), Some(4))
    );

    let img = write_png(dir.path(), "src.png", &disc_image(32, [0.3, 0.7, 0.3]));
    let (_, post) = run(
        "g/post.png",
        &[
            "--image",
            img.to_str().unwrap(),
            "--steps",
            "2",
            "--geometry",
            "blob",
        ],
    );
    let meta: serde_json::Value = serde_json::from_str(&post).unwrap();
    assert_eq!(meta["rows"].as_u64(), Some(D as u64));

    let bad = favae(&["traverse", "--weights", w, "--out", "x.png", "--pair", "1"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn train_then_eval_is_reproducible() {
    let dir = tempdir().unwrap();
    let data = dir.path().join("data");
    ok(favae(&[
        "gen-data",
        "--out",
        data.to_str().unwrap(),
        "--resolution",
        "32",
    ]));
    let cfg = dir.path().join("tiny.toml");
    fs::write(
        &cfg,
        "[train]\nepochs = 1\nbatch_size = 128\n\n[train.model]\nencoder_channels = [4, 4, 8]\n\
         decoder_channels = [8, 8, 4, 4]\nencoder_hidden = 16\ndecoder_hidden = 16\n\
         normal_injection_skip = 1\ndiscriminator_width = 16\ndiscriminator_depth = 2\n",
    )
    .unwrap();
    let train = |name: &str| {
        let out = dir.path().join(name);
        let o = ok(favae(&[
            "--config",
            cfg.to_str().unwrap(),
            "train",
            "--data",
            data.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "4",
            "--gamma",
            "3",
        ]));
        (out, o)
    };
    let (a, out) = train("a");
    let echoed = stderr(&out);
    assert!(
        echoed.contains("gamma = 3.0") && echoed.contains("batch_size = 128"),
        "{echoed}"
    );
    let report: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(report["final_kl_per_dim"].as_array().map(Vec::len), Some(D));
    let (b, _) = train("b");
    same_tree(&a, &b);

    let weights = a.join("weights.bin");
    let eval = |name: &str| {
        let out = dir.path().join(name);
        ok(favae(&[
            "eval",
            "--weights",
            weights.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--trials",
            "2",
            "--shuffles",
            "2",
        ]));
        out
    };
    let (ea, eb) = (eval("eval_a"), eval("eval_b"));
    same_tree(&ea, &eb);
    let metrics: serde_json::Value =
        serde_json::from_slice(&fs::read(ea.join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["psnr_mean"]["mean"].as_f64().unwrap().is_finite());
    let csv = fs::read_to_string(ea.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn serve_validates_before_listening() {
    let dir = tempdir().unwrap();
    let (w, _) = write_weights(dir.path());
    let w = w.to_str().unwrap();
    let zero = favae(&[
        "serve",
        "--weights",
        w,
        "--max-concurrent",
        "0",
        "--bind",
        "127.0.0.1:0",
    ]);
    assert_eq!(zero.status.code(), Some(1));
    let teapot = favae(&[
        "serve",
        "--weights",
        w,
        "--geometries",
        "sphere,teapot",
        "--bind",
        "127.0.0.1:0",
    ]);
    assert_ne!(teapot.status.code(), Some(0));
    assert!(stderr(&teapot).contains("teapot"));
    let missing = dir.path().join("none.bin");
    let out = favae(&[
        "serve",
        "--weights",
        missing.to_str().unwrap(),
        "--bind",
        "127.0.0.1:0",
    ]);
    assert_eq!(out.status.code(), Some(2));
}
