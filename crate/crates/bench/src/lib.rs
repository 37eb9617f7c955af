//! Fixtures shared by the benchmarks.

use favae_core::dataset::{DatasetConfig, LoadedDataset};
use favae_core::model::ModelConfig;

/// Model sized like the quick acceptance profile.
pub fn bench_model(resolution: usize) -> ModelConfig {
    let layers = resolution.ilog2() as usize - 2;
    let mut encoder_channels = vec![16, 16, 32, 64];
    encoder_channels.truncate(layers);
    let mut decoder_channels = vec![64, 32, 16, 16, 8];
    decoder_channels.truncate(layers + 1);
    ModelConfig {
        image_resolution: resolution,
        encoder_channels,
        decoder_channels,
        discriminator_width: 256,
        discriminator_depth: 4,
        ..ModelConfig::default()
    }
}

/// 96 renders of the desk geometries at `resolution`.
pub fn bench_data(resolution: usize) -> LoadedDataset {
    let cfg = DatasetConfig {
        resolution,
        lightness: vec![0.4, 0.9],
        hue_angles: 4,
        chroma_radii: vec![0.5],
        gloss: vec![0.0, 1.0],
        light_elev: vec![0.0],
        light_azim: vec![-0.8, 0.8],
        ..DatasetConfig::desk(0)
    };
    LoadedDataset::render(&cfg).expect("bench dataset renders")
}
