//! Procedural factor-labeled renders of opaque objects.
//!
//! A dataset is the Cartesian product geometry x material x light. Every image
//! is a pure function of its manifest entry, so the manifest alone is enough
//! to reproduce or audit the corpus.

pub mod geometry;
pub mod shade;

use std::collections::HashMap;
use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::{self, Stream};
pub use geometry::{make_normal_map, GeometrySpec, NormalMap, CONDITIONING_CHANNELS};
pub use shade::{shade, shade_with, ShadingParams};

pub const FACTOR_COUNT: usize = 6;
pub const FACTOR_NAMES: [&str; FACTOR_COUNT] = [
    "lightness",
    "hue_a",
    "hue_b",
    "light_elev",
    "light_azim",
    "gloss",
];
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
/// Original-scale corpus: 30 objects x 365 materials x 9 lights.
pub const FULL_SCALE_COUNT: usize = 98_550;

/// Ground-truth generative factors of one render.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorVector {
    pub lightness: f64,
    pub hue_a: f64,
    pub hue_b: f64,
    pub light_elev: f64,
    pub light_azim: f64,
    pub gloss: f64,
}

impl FactorVector {
    pub fn to_array(&self) -> [f64; FACTOR_COUNT] {
        [
            self.lightness,
            self.hue_a,
            self.hue_b,
            self.light_elev,
            self.light_azim,
            self.gloss,
        ]
    }

    pub fn from_array(v: [f64; FACTOR_COUNT]) -> Self {
        Self {
            lightness: v[0],
            hue_a: v[1],
            hue_b: v[2],
            light_elev: v[3],
            light_azim: v[4],
            gloss: v[5],
        }
    }

    /// Mid-gray, slightly glossy, frontal light.
    pub fn neutral() -> Self {
        Self {
            lightness: 0.5,
            hue_a: 0.0,
            hue_b: 0.0,
            light_elev: 0.3,
            light_azim: 0.0,
            gloss: 0.3,
        }
    }

    pub fn is_valid(&self) -> bool {
        (0.15..=0.9).contains(&self.lightness)
            && self.hue_a * self.hue_a + self.hue_b * self.hue_b <= 1.0 + 1e-12
            && (-0.9..=0.9).contains(&self.light_elev)
            && (-1.2..=1.2).contains(&self.light_azim)
            && (0.0..=1.0).contains(&self.gloss)
    }
}

/// How material factors are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MaterialDesign {
    /// Full product of the lightness, hue-angle, chroma and gloss levels.
    Grid,
    /// `count` materials from a Latin hypercube over lightness, hue angle,
    /// chroma radius and gloss.
    LatinHypercube { count: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub preset: String,
    pub resolution: usize,
    pub seed: u64,
    pub geometries: Vec<GeometrySpec>,
    pub materials: MaterialDesign,
    pub lightness: Vec<f64>,
    pub hue_angles: usize,
    pub chroma_radii: Vec<f64>,
    pub gloss: Vec<f64>,
    pub light_elev: Vec<f64>,
    pub light_azim: Vec<f64>,
    pub max_entries: usize,
    pub shading: ShadingParams,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

impl DatasetConfig {
    /// 3 geometries x 4 lightness x 8 hue angles x 2 chroma radii x 3 x 3
    /// lights x 4 gloss levels = 6,912 renders at 64x64.
    pub fn desk(seed: u64) -> Self {
        Self {
            preset: "desk".into(),
            resolution: 64,
            seed,
            geometries: geometry::SUPPORTED
                .iter()
                .map(|n| GeometrySpec::named(n).expect("shipped"))
                .collect(),
            materials: MaterialDesign::Grid,
            lightness: vec![0.15, 0.4, 0.65, 0.9],
            hue_angles: 8,
            chroma_radii: vec![0.35, 0.7],
            gloss: linspace(0.0, 1.0, 4),
            light_elev: vec![-0.6, 0.0, 0.6],
            light_azim: vec![-0.8, 0.0, 0.8],
            max_entries: 250_000,
            shading: ShadingParams::default(),
        }
    }

    /// 30 seeded object variants x 365 materials x 9 lights = 98,550 renders.
    pub fn full(seed: u64) -> Self {
        let mut grng = rng::stream(seed, Stream::Geometry);
        let geometries = geometry::SUPPORTED
            .iter()
            .flat_map(|fam| (0..10).map(move |k| (*fam, k)))
            .map(|(fam, k)| GeometrySpec::variant(fam, k, &mut grng).expect("shipped family"))
            .collect();
        Self {
            preset: "full".into(),
            resolution: 256,
            geometries,
            materials: MaterialDesign::LatinHypercube { count: 365 },
            ..Self::desk(seed)
        }
    }

    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk(seed)),
            "full" => Ok(Self::full(seed)),
            _ => Err(Error::Config(format!(
                "unknown dataset preset `{name}` (expected desk or full)"
            ))),
        }
    }

    pub fn material_count(&self) -> usize {
        match self.materials {
            MaterialDesign::Grid => {
                self.lightness.len() * self.hue_angles * self.chroma_radii.len() * self.gloss.len()
            }
            MaterialDesign::LatinHypercube { count } => count,
        }
    }

    pub fn grid_size(&self) -> usize {
        self.geometries.len()
            * self.material_count()
            * self.light_elev.len()
            * self.light_azim.len()
    }

    fn validate(&self) -> Result<()> {
        let counts = [
            ("geometries", self.geometries.len()),
            ("lightness", self.lightness.len()),
            ("hue_angles", self.hue_angles),
            ("chroma_radii", self.chroma_radii.len()),
            ("gloss", self.gloss.len()),
            ("light_elev", self.light_elev.len()),
            ("light_azim", self.light_azim.len()),
            ("materials", self.material_count()),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, c)| *c == 0) {
            return Err(Error::Config(format!(
                "factor `{name}` needs at least one level"
            )));
        }
        if self.resolution < 16 {
            return Err(Error::Config(format!(
                "resolution must be >= 16, got {}",
                self.resolution
            )));
        }
        let mut names: Vec<&str> = self.geometries.iter().map(|g| g.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("geometry names must be unique".into()));
        }
        Ok(())
    }
}

/// One point of the factor grid. `levels` holds the level index of each
/// factor in [`FACTOR_NAMES`] order, except that positions 1 and 2 index the
/// hue angle and chroma radius the two hue coordinates were built from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub geometry: usize,
    pub factors: FactorVector,
    pub levels: [usize; FACTOR_COUNT],
}

struct Material {
    lightness: f64,
    angle: f64,
    radius: f64,
    gloss: f64,
    levels: [usize; 4],
}

fn materials(cfg: &DatasetConfig) -> Vec<Material> {
    match cfg.materials {
        MaterialDesign::Grid => {
            let mut out = Vec::with_capacity(cfg.material_count());
            for (li, &l) in cfg.lightness.iter().enumerate() {
                for hi in 0..cfg.hue_angles {
                    for (ri, &r) in cfg.chroma_radii.iter().enumerate() {
                        for (gi, &g) in cfg.gloss.iter().enumerate() {
                            let angle = TAU * hi as f64 / cfg.hue_angles as f64;
                            out.push(Material {
                                lightness: l,
                                angle,
                                radius: r,
                                gloss: g,
                                levels: [li, hi, ri, gi],
                            });
                        }
                    }
                }
            }
            out
        }
        MaterialDesign::LatinHypercube { count } => {
            let mut rng = rng::stream(cfg.seed, Stream::Materials);
            let mut perms: Vec<Vec<usize>> = (0..4)
                .map(|_| {
                    let mut p: Vec<usize> = (0..count).collect();
                    p.shuffle(&mut rng);
                    p
                })
                .collect();
            let lo_l = cfg.lightness.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi_l = cfg
                .lightness
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            let hi_r = cfg.chroma_radii.iter().cloned().fold(0.0, f64::max);
            let n = count as f64;
            (0..count)
                .map(|i| {
                    let mut u = [0.0; 4];
                    let mut levels = [0; 4];
                    for (d, p) in perms.iter_mut().enumerate() {
                        levels[d] = p[i];
                        u[d] = (p[i] as f64 + rng.random::<f64>()) / n;
                    }
                    Material {
                        lightness: lo_l + (hi_l - lo_l) * u[0],
                        angle: TAU * u[1],
                        // Area-uniform inside the chroma disc.
                        radius: hi_r * u[2].sqrt(),
                        gloss: u[3],
                        levels,
                    }
                })
                .collect()
        }
    }
}

/// Deterministic, seed-shuffled list of grid entries.
pub fn sample_factor_grid(cfg: &DatasetConfig) -> Result<Vec<GridEntry>> {
    cfg.validate()?;
    let size = cfg.grid_size();
    if size > cfg.max_entries {
        return Err(Error::GridTooLarge {
            size,
            max: cfg.max_entries,
        });
    }
    let mats = materials(cfg);
    let mut entries = Vec::with_capacity(size);
    for g in 0..cfg.geometries.len() {
        for m in &mats {
            for (ei, &e) in cfg.light_elev.iter().enumerate() {
                for (ai, &a) in cfg.light_azim.iter().enumerate() {
                    let factors = FactorVector {
                        lightness: m.lightness,
                        hue_a: m.radius * m.angle.cos(),
                        hue_b: m.radius * m.angle.sin(),
                        light_elev: e,
                        light_azim: a,
                        gloss: m.gloss,
                    };
                    let [li, hi, ri, gi] = m.levels;
                    entries.push(GridEntry {
                        geometry: g,
                        factors,
                        levels: [li, hi, ri, ei, ai, gi],
                    });
                }
            }
        }
    }
    entries.shuffle(&mut rng::stream(cfg.seed, Stream::DataOrder));
    Ok(entries)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image: String,
    pub normals: String,
    pub geometry: String,
    pub factors: FactorVector,
    pub levels: [usize; FACTOR_COUNT],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub preset: String,
    pub resolution: usize,
    pub seed: u64,
    pub complete: bool,
    pub factor_names: Vec<String>,
    pub geometries: Vec<GeometrySpec>,
    pub shading: ShadingParams,
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text)?;
        if m.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "manifest schema {} is not supported (expected {MANIFEST_SCHEMA_VERSION})",
                m.schema_version
            )));
        }
        if !m.complete {
            return Err(Error::Config(format!(
                "{} is flagged incomplete",
                path.display()
            )));
        }
        Ok(m)
    }

    pub fn geometry(&self, name: &str) -> Result<&GeometrySpec> {
        self.geometries
            .iter()
            .find(|g| g.name == name)
            .ok_or_else(|| Error::UnknownGeometry {
                name: name.to_string(),
                supported: self.geometries.iter().map(|g| g.name.clone()).collect(),
            })
    }

    /// Re-render an entry from its factors alone.
    pub fn render(&self, entry: &ManifestEntry) -> Result<Image> {
        let nm = make_normal_map(self.geometry(&entry.geometry)?, self.resolution)?;
        Ok(shade_with(&nm, &entry.factors, &self.shading))
    }

    /// Factor rows in entry order.
    pub fn factor_table(&self) -> Vec<[f64; FACTOR_COUNT]> {
        self.entries.iter().map(|e| e.factors.to_array()).collect()
    }
}

/// Every tenth entry (positions 9, 19, ...) of the shuffled order is held out.
pub fn is_holdout(position: usize) -> bool {
    position % 10 == 9
}

/// Render every entry and write `images/`, `normals/` and `manifest.json`
/// under `out_dir`. On failure the files written by this call are removed.
pub fn generate_dataset(cfg: &DatasetConfig, out_dir: &Path) -> Result<DatasetManifest> {
    let entries = sample_factor_grid(cfg)?;
    let mut written: Vec<PathBuf> = Vec::new();
    let result = write_dataset(cfg, &entries, out_dir, &mut written);
    if result.is_err() {
        for p in written.iter().rev() {
            let _ = fs::remove_file(p);
        }
    }
    result
}

fn write_dataset(
    cfg: &DatasetConfig,
    entries: &[GridEntry],
    out_dir: &Path,
    written: &mut Vec<PathBuf>,
) -> Result<DatasetManifest> {
    for sub in ["images", "normals"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut write = |rel: &str, bytes: &[u8]| -> Result<()> {
        let p = out_dir.join(rel);
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
        written.push(p);
        Ok(())
    };

    let mut maps = Vec::with_capacity(cfg.geometries.len());
    for g in &cfg.geometries {
        let nm = make_normal_map(g, cfg.resolution)?;
        write(&format!("normals/{}.png", g.name), &nm.to_png()?)?;
        maps.push(nm);
    }

    let mut manifest_entries = Vec::with_capacity(entries.len());
    for (i, e) in entries.iter().enumerate() {
        let geom = &cfg.geometries[e.geometry];
        let image = format!("images/{i:06}.png");
        write(
            &image,
            &shade_with(&maps[e.geometry], &e.factors, &cfg.shading).to_png()?,
        )?;
        manifest_entries.push(ManifestEntry {
            image,
            normals: format!("normals/{}.png", geom.name),
            geometry: geom.name.clone(),
            factors: e.factors,
            levels: e.levels,
        });
    }

    let manifest = DatasetManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        preset: cfg.preset.clone(),
        resolution: cfg.resolution,
        seed: cfg.seed,
        complete: true,
        factor_names: FACTOR_NAMES.iter().map(|s| s.to_string()).collect(),
        geometries: cfg.geometries.clone(),
        shading: cfg.shading,
        entries: manifest_entries,
    };
    let tmp = out_dir.join("manifest.json.tmp");
    let final_path = out_dir.join(MANIFEST_FILE);
    let json = serde_json::to_vec_pretty(&manifest)?;
    fs::write(&tmp, json).map_err(|e| Error::io(&tmp, e))?;
    written.push(tmp.clone());
    fs::rename(&tmp, &final_path).map_err(|e| Error::io(&final_path, e))?;
    written.pop();
    written.push(final_path);
    Ok(manifest)
}

/// Decoded training data: images as channel-first floats and one
/// conditioning tensor per geometry.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub resolution: usize,
    pub images: Vec<Vec<f32>>,
    pub geometry_of: Vec<usize>,
    pub geometry_names: Vec<String>,
    pub conditioning: Vec<Vec<f32>>,
    pub factors: Vec<FactorVector>,
}

impl LoadedDataset {
    /// Read a manifest and every file it references.
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let manifest = DatasetManifest::load(manifest_path)?;
        let root = manifest_path.parent().unwrap_or(Path::new("."));
        let r = manifest.resolution;
        let mut geometry_names = Vec::new();
        let mut conditioning = Vec::new();
        let mut by_name: HashMap<String, usize> = HashMap::new();
        let mut images = Vec::with_capacity(manifest.entries.len());
        let mut geometry_of = Vec::with_capacity(manifest.entries.len());
        for e in &manifest.entries {
            let gi = match by_name.get(&e.normals) {
                Some(&gi) => gi,
                None => {
                    let p = root.join(&e.normals);
                    let bytes = fs::read(&p).map_err(|err| Error::io(&p, err))?;
                    let (res, planes) = geometry::conditioning_from_png(&bytes)?;
                    if res != r {
                        return Err(Error::Config(format!(
                            "{} is {res}px, manifest declares {r}",
                            p.display()
                        )));
                    }
                    conditioning.push(planes);
                    geometry_names.push(e.geometry.clone());
                    by_name.insert(e.normals.clone(), conditioning.len() - 1);
                    conditioning.len() - 1
                }
            };
            let p = root.join(&e.image);
            let img = Image::load_png(&p)?;
            if img.width() != r || img.height() != r {
                return Err(Error::Config(format!(
                    "{} is {}x{}, manifest declares {r}",
                    p.display(),
                    img.width(),
                    img.height()
                )));
            }
            images.push(img.to_chw());
            geometry_of.push(gi);
        }
        Ok(Self {
            resolution: r,
            images,
            geometry_of,
            geometry_names,
            conditioning,
            factors: manifest.entries.iter().map(|e| e.factors).collect(),
        })
    }

    /// Render in memory with the same 8-bit quantization as [`Self::load`]
    /// applied to a freshly generated dataset.
    pub fn render(cfg: &DatasetConfig) -> Result<Self> {
        let entries = sample_factor_grid(cfg)?;
        let maps: Vec<NormalMap> = cfg
            .geometries
            .iter()
            .map(|g| make_normal_map(g, cfg.resolution))
            .collect::<Result<_>>()?;
        let images = entries
            .iter()
            .map(|e| {
                shade_with(&maps[e.geometry], &e.factors, &cfg.shading)
                    .quantized()
                    .to_chw()
            })
            .collect();
        // Geometries are numbered in order of first appearance, as in `load`.
        let mut order: Vec<usize> = Vec::new();
        let mut geometry_of = Vec::with_capacity(entries.len());
        for e in &entries {
            let gi = match order.iter().position(|&g| g == e.geometry) {
                Some(p) => p,
                None => {
                    order.push(e.geometry);
                    order.len() - 1
                }
            };
            geometry_of.push(gi);
        }
        Ok(Self {
            resolution: cfg.resolution,
            images,
            geometry_of,
            geometry_names: order
                .iter()
                .map(|&g| cfg.geometries[g].name.clone())
                .collect(),
            conditioning: order.iter().map(|&g| maps[g].conditioning()).collect(),
            factors: entries.iter().map(|e| e.factors).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Indices of the training and held-out entries.
    pub fn split(&self) -> (Vec<usize>, Vec<usize>) {
        (0..self.len()).partition(|&i| !is_holdout(i))
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            resolution: self.resolution,
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            geometry_of: indices.iter().map(|&i| self.geometry_of[i]).collect(),
            geometry_names: self.geometry_names.clone(),
            conditioning: self.conditioning.clone(),
            factors: indices.iter().map(|&i| self.factors[i]).collect(),
        }
    }

    pub fn image(&self, i: usize) -> Image {
        Image::from_chw(self.resolution, self.resolution, &self.images[i])
            .expect("stored at dataset resolution")
    }
}
