//! Ambient + Lambert + Blinn shading of a normal map under one directional light.

use serde::{Deserialize, Serialize};

use super::geometry::NormalMap;
use super::FactorVector;
use crate::image::Image;

/// Unit chroma axis along red versus green+blue.
pub const CHROMA_U: [f64; 3] = [
    0.816_496_580_927_726,
    -0.408_248_290_463_863,
    -0.408_248_290_463_863,
];
/// Unit chroma axis along green versus blue.
pub const CHROMA_W: [f64; 3] = [
    0.0,
    std::f64::consts::FRAC_1_SQRT_2,
    -std::f64::consts::FRAC_1_SQRT_2,
];

/// Reflectance coefficients. `k_s(g) = spec_base + spec_gain * g` and
/// `alpha(g) = 2^(1 + 10 g)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShadingParams {
    pub ambient: f64,
    pub diffuse: f64,
    pub spec_base: f64,
    pub spec_gain: f64,
}

impl Default for ShadingParams {
    fn default() -> Self {
        Self {
            ambient: 0.08,
            diffuse: 0.75,
            spec_base: 0.08,
            spec_gain: 0.6,
        }
    }
}

impl ShadingParams {
    pub fn specular_weight(&self, gloss: f64) -> f64 {
        self.spec_base + self.spec_gain * gloss
    }
}

pub fn shininess(gloss: f64) -> f64 {
    2f64.powf(1.0 + 10.0 * gloss)
}

/// `lightness * (1 + 0.8 (a u + b w))`, clamped per channel.
pub fn albedo(f: &FactorVector) -> [f64; 3] {
    let mut c = [0.0; 3];
    for (k, out) in c.iter_mut().enumerate() {
        let chroma = f.hue_a * CHROMA_U[k] + f.hue_b * CHROMA_W[k];
        *out = (f.lightness * (1.0 + 0.8 * chroma)).clamp(0.0, 1.0);
    }
    c
}

/// Unit direction towards the light.
pub fn light_direction(elevation: f64, azimuth: f64) -> [f64; 3] {
    [
        elevation.cos() * azimuth.sin(),
        elevation.sin(),
        elevation.cos() * azimuth.cos(),
    ]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn half_vector(l: [f64; 3]) -> [f64; 3] {
    let h = [l[0], l[1], l[2] + 1.0];
    let len = dot(h, h).sqrt();
    [h[0] / len, h[1] / len, h[2] / len]
}

/// Per-pixel specular term `k_s max(0, n.h)^alpha` (zero off-mask).
pub fn specular_map(normals: &NormalMap, f: &FactorVector, params: &ShadingParams) -> Vec<f64> {
    let h = half_vector(light_direction(f.light_elev, f.light_azim));
    let (ks, alpha) = (params.specular_weight(f.gloss), shininess(f.gloss));
    normals
        .normals()
        .iter()
        .zip(normals.mask())
        .map(|(&n, &m)| {
            if m {
                ks * dot(n, h).max(0.0).powf(alpha)
            } else {
                0.0
            }
        })
        .collect()
}

pub fn shade_with(normals: &NormalMap, f: &FactorVector, params: &ShadingParams) -> Image {
    let r = normals.resolution();
    let a = albedo(f);
    let l = light_direction(f.light_elev, f.light_azim);
    let spec = specular_map(normals, f, params);
    let mut img = Image::black(r, r);
    for (i, (&n, &m)) in normals.normals().iter().zip(normals.mask()).enumerate() {
        if !m {
            continue;
        }
        let shade = params.ambient + params.diffuse * dot(n, l).max(0.0);
        let px = [0, 1, 2].map(|c| (a[c] * shade + spec[i]).clamp(0.0, 1.0) as f32);
        img.set_pixel(i % r, i / r, px);
    }
    img
}

/// Render with the default coefficients.
pub fn shade(normals: &NormalMap, f: &FactorVector) -> Image {
    shade_with(normals, f, &ShadingParams::default())
}
