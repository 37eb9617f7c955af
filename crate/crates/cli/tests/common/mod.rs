#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use favae_core::model::{save_weights, FactorVae, ModelConfig};
use favae_core::Image;
use serde_json::json;

pub const D: usize = 6;

/// Untrained but fully functional model at the smallest user-facing size.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        latent_dim: D,
        image_resolution: 32,
        encoder_channels: vec![4, 4, 8],
        encoder_hidden: 16,
        decoder_hidden: 16,
        decoder_channels: vec![8, 8, 4, 4],
        normal_injection_skip: 1,
        discriminator_width: 16,
        discriminator_depth: 2,
        ..ModelConfig::default()
    }
}

pub fn tiny_model() -> FactorVae<f32> {
    FactorVae::new(tiny_config(), 11).unwrap()
}

pub fn write_weights(dir: &Path) -> (PathBuf, String) {
    let path = dir.join("weights.bin");
    let labels: Vec<String> = (0..D).map(|j| format!("factor{j}")).collect();
    let id = save_weights(
        &path,
        &tiny_model(),
        &json!({ "note": "random init" }),
        Some(&labels),
    )
    .unwrap();
    (path, id)
}

/// A colored disc on black, like a masked render but not at model resolution.
pub fn disc_image(size: usize, rgb: [f32; 3]) -> Image {
    let mut img = Image::black(size, size);
    let c = size as f32 / 2.0;
    for y in 0..size {
        for x in 0..size {
            let (dx, dy) = (x as f32 + 0.5 - c, y as f32 + 0.5 - c);
            if dx * dx + dy * dy < 0.16 * (size * size) as f32 {
                let shade = 0.4 + 0.6 * (1.0 - (dx + dy) / size as f32).clamp(0.0, 1.0);
                img.set_pixel(x, y, rgb.map(|v| v * shade));
            }
        }
    }
    img
}

pub fn write_png(dir: &Path, name: &str, img: &Image) -> PathBuf {
    let p = dir.join(name);
    img.save_png(&p).unwrap();
    p
}

pub fn favae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_favae"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn ok(o: Output) -> Output {
    assert_eq!(o.status.code(), Some(0), "stderr:\n{}", stderr(&o));
    o
}

pub fn json_vec(o: &Output) -> Vec<f64> {
    serde_json::from_str(stdout(o).trim()).unwrap()
}
