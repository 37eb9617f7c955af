//! Analytic height-field objects and their camera-space normal maps.
//!
//! Coordinates are normalized device coordinates: pixel `(col, row)` of an
//! `R x R` grid sits at `x = (col + 0.5) / R * 2 - 1`, `y = 1 - (row + 0.5) / R * 2`
//! (y points up). The camera looks down `-z`, so visible normals have `z > 0`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{decode_png_rgba, encode_png, to_u8};

/// Names accepted by [`GeometrySpec::named`].
pub const SUPPORTED: [&str; 3] = ["sphere", "blob", "torus"];

/// One Gaussian bump of a blob height field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lobe {
    pub cx: f64,
    pub cy: f64,
    pub sigma: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Sphere {
        radius: f64,
    },
    /// `h = sum_i w_i exp(-|p - c_i|^2 / (2 s_i^2))`, footprint `h > threshold`.
    Blob {
        lobes: Vec<Lobe>,
        threshold: f64,
    },
    /// Ring of radius `major` with tube radius `minor`, seen along its axis.
    Torus {
        major: f64,
        minor: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometrySpec {
    pub name: String,
    pub shape: Shape,
}

impl GeometrySpec {
    /// The shipped geometry with default parameters.
    pub fn named(name: &str) -> Result<Self> {
        let shape = match name {
            "sphere" => Shape::Sphere { radius: 1.0 },
            "blob" => Shape::Blob {
                lobes: vec![
                    Lobe {
                        cx: -0.3,
                        cy: -0.2,
                        sigma: 0.34,
                        weight: 1.0,
                    },
                    Lobe {
                        cx: 0.32,
                        cy: -0.12,
                        sigma: 0.3,
                        weight: 0.85,
                    },
                    Lobe {
                        cx: 0.0,
                        cy: 0.36,
                        sigma: 0.3,
                        weight: 0.9,
                    },
                ],
                threshold: 0.3,
            },
            "torus" => Shape::Torus {
                major: 0.55,
                minor: 0.3,
            },
            _ => {
                return Err(Error::UnknownGeometry {
                    name: name.to_string(),
                    supported: SUPPORTED.iter().map(|s| s.to_string()).collect(),
                })
            }
        };
        Ok(Self {
            name: name.to_string(),
            shape,
        })
    }

    /// Randomized member of one of the shipped families, named `<family>-<k>`.
    pub fn variant(family: &str, k: usize, rng: &mut impl Rng) -> Result<Self> {
        let shape = match family {
            "sphere" => Shape::Sphere {
                radius: rng.random_range(0.6..1.0),
            },
            "blob" => {
                let lobes = (0..3)
                    .map(|_| Lobe {
                        cx: rng.random_range(-0.35..0.35),
                        cy: rng.random_range(-0.35..0.35),
                        sigma: rng.random_range(0.22..0.4),
                        weight: rng.random_range(0.7..1.1),
                    })
                    .collect();
                Shape::Blob {
                    lobes,
                    threshold: rng.random_range(0.2..0.35),
                }
            }
            "torus" => {
                let minor = rng.random_range(0.18..0.32);
                Shape::Torus {
                    major: rng.random_range(minor + 0.15..0.95 - minor),
                    minor,
                }
            }
            _ => return Self::named(family),
        };
        Ok(Self {
            name: format!("{family}-{k:02}"),
            shape,
        })
    }

    /// Height and its gradient at `(x, y)`, or `None` outside the footprint.
    pub fn height(&self, x: f64, y: f64) -> Option<(f64, f64, f64)> {
        match &self.shape {
            Shape::Sphere { radius } => {
                let s = radius * radius - x * x - y * y;
                (s > 0.0).then(|| {
                    let h = s.sqrt();
                    (h, -x / h, -y / h)
                })
            }
            Shape::Blob { lobes, threshold } => {
                let (h, hx, hy) = blob_height(lobes, x, y);
                (h > *threshold).then_some((h, hx, hy))
            }
            Shape::Torus { major, minor } => {
                let rho = (x * x + y * y).sqrt();
                let d = rho - major;
                let s = minor * minor - d * d;
                (s > 0.0 && rho > 0.0).then(|| {
                    let h = s.sqrt();
                    let dh = -d / h;
                    (h, dh * x / rho, dh * y / rho)
                })
            }
        }
    }
}

pub(crate) fn blob_height(lobes: &[Lobe], x: f64, y: f64) -> (f64, f64, f64) {
    let (mut h, mut hx, mut hy) = (0.0, 0.0, 0.0);
    for l in lobes {
        let (dx, dy) = (x - l.cx, y - l.cy);
        let s2 = l.sigma * l.sigma;
        let g = l.weight * (-(dx * dx + dy * dy) / (2.0 * s2)).exp();
        h += g;
        hx -= g * dx / s2;
        hy -= g * dy / s2;
    }
    (h, hx, hy)
}

/// NDC coordinate of a pixel center.
pub fn pixel_center(col: usize, row: usize, resolution: usize) -> (f64, f64) {
    let r = resolution as f64;
    (
        (col as f64 + 0.5) / r * 2.0 - 1.0,
        1.0 - (row as f64 + 0.5) / r * 2.0,
    )
}

/// Per-pixel unit normals over a square grid, zero outside the mask.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalMap {
    resolution: usize,
    normals: Vec<[f64; 3]>,
    mask: Vec<bool>,
}

/// Number of decoder conditioning channels: three normal components and the mask.
pub const CONDITIONING_CHANNELS: usize = 4;

pub fn make_normal_map(geom: &GeometrySpec, resolution: usize) -> Result<NormalMap> {
    if resolution < 16 {
        return Err(Error::Config(format!(
            "normal map resolution must be >= 16, got {resolution}"
        )));
    }
    let mut normals = vec![[0.0; 3]; resolution * resolution];
    let mut mask = vec![false; resolution * resolution];
    for row in 0..resolution {
        for col in 0..resolution {
            let (x, y) = pixel_center(col, row, resolution);
            if let Some((_, hx, hy)) = geom.height(x, y) {
                let len = (hx * hx + hy * hy + 1.0).sqrt();
                let i = row * resolution + col;
                normals[i] = [-hx / len, -hy / len, 1.0 / len];
                mask[i] = true;
            }
        }
    }
    Ok(NormalMap {
        resolution,
        normals,
        mask,
    })
}

impl NormalMap {
    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn normal(&self, col: usize, row: usize) -> [f64; 3] {
        self.normals[row * self.resolution + col]
    }

    pub fn masked(&self, col: usize, row: usize) -> bool {
        self.mask[row * self.resolution + col]
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn normals(&self) -> &[[f64; 3]] {
        &self.normals
    }

    /// RGBA PNG: `(n + 1) / 2` in RGB, mask in alpha.
    pub fn to_png(&self) -> Result<Vec<u8>> {
        let mut px = Vec::with_capacity(self.normals.len() * 4);
        for (n, &m) in self.normals.iter().zip(&self.mask) {
            if m {
                px.extend(n.iter().map(|&c| to_u8(((c + 1.0) / 2.0) as f32)));
                px.push(255);
            } else {
                px.extend([0, 0, 0, 0]);
            }
        }
        encode_png(self.resolution, self.resolution, png::ColorType::Rgba, &px)
    }

    /// Channel-first `4 x R x R` decoder input as it is stored on disk: the
    /// 8-bit normal components mapped back to `[-1, 1]`, then the mask.
    pub fn conditioning(&self) -> Vec<f32> {
        let plane = self.resolution * self.resolution;
        let mut out = vec![0.0; CONDITIONING_CHANNELS * plane];
        for (i, (n, &m)) in self.normals.iter().zip(&self.mask).enumerate() {
            if m {
                for c in 0..3 {
                    out[c * plane + i] = dequantize(to_u8(((n[c] + 1.0) / 2.0) as f32));
                }
                out[3 * plane + i] = 1.0;
            }
        }
        out
    }
}

fn dequantize(q: u8) -> f32 {
    q as f32 / 255.0 * 2.0 - 1.0
}

/// Decoder conditioning read back from a normal-map PNG. Returns the
/// resolution and `4 x R x R` planes identical to [`NormalMap::conditioning`].
pub fn conditioning_from_png(bytes: &[u8]) -> Result<(usize, Vec<f32>)> {
    let (w, h, rgba) = decode_png_rgba(bytes)?;
    if w != h {
        return Err(Error::ImageDecode(format!(
            "normal map must be square, got {w}x{h}"
        )));
    }
    let plane = w * h;
    let mut out = vec![0.0; CONDITIONING_CHANNELS * plane];
    for (i, p) in rgba.chunks(4).enumerate() {
        if p[3] >= 128 {
            for c in 0..3 {
                out[c * plane + i] = dequantize(p[c]);
            }
            out[3 * plane + i] = 1.0;
        }
    }
    Ok((w, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_apex_faces_camera() {
        let g = GeometrySpec::named("sphere").unwrap();
        let nm = make_normal_map(&g, 17).unwrap();
        assert_eq!(nm.normal(8, 8), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn sphere_normals_are_analytic() {
        let g = GeometrySpec::named("sphere").unwrap();
        let nm = make_normal_map(&g, 32).unwrap();
        for row in 0..32 {
            for col in 0..32 {
                let (x, y) = pixel_center(col, row, 32);
                let n = nm.normal(col, row);
                if x * x + y * y < 1.0 {
                    let z = (1.0 - x * x - y * y).sqrt();
                    assert!(
                        (n[0] - x).abs() < 1e-12
                            && (n[1] - y).abs() < 1e-12
                            && (n[2] - z).abs() < 1e-12
                    );
                } else {
                    assert_eq!(n, [0.0; 3]);
                }
            }
        }
    }

    #[test]
    fn unknown_geometry_lists_supported() {
        let err = GeometrySpec::named("teapot2").unwrap_err();
        let msg = err.to_string();
        assert!(SUPPORTED.iter().all(|s| msg.contains(s)), "{msg}");
        assert!(make_normal_map(&GeometrySpec::named("torus").unwrap(), 8).is_err());
    }

    #[test]
    fn png_conditioning_matches_in_memory() {
        for name in SUPPORTED {
            let nm = make_normal_map(&GeometrySpec::named(name).unwrap(), 32).unwrap();
            let (res, planes) = conditioning_from_png(&nm.to_png().unwrap()).unwrap();
            assert_eq!(res, 32);
            assert_eq!(planes, nm.conditioning());
        }
    }
}
