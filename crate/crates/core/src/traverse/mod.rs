//! Latent traversals, pair grids, interpolation and selective mixing.

mod font;

use serde::{Deserialize, Serialize};

use crate::dataset::{make_normal_map, GeometrySpec};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::{prepare_image, LatentDecoder, LatentEncoder};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraversalSpec {
    /// Rows of the grid; `None` sweeps every dimension.
    pub dims: Option<Vec<usize>>,
    pub range: [f64; 2],
    pub steps: usize,
    /// Starting vector for prior traversals; `None` is the zero vector.
    pub base: Option<Vec<f64>>,
    pub geometry: String,
}

impl Default for TraversalSpec {
    fn default() -> Self {
        Self {
            dims: None,
            range: [-2.0, 2.0],
            steps: 7,
            base: None,
            geometry: "sphere".into(),
        }
    }
}

impl TraversalSpec {
    fn resolve_dims(&self, d: usize) -> Result<Vec<usize>> {
        if self.steps < 2 {
            return Err(Error::Config(format!(
                "traversal needs >= 2 steps, got {}",
                self.steps
            )));
        }
        let [lo, hi] = self.range;
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Config(format!(
                "traversal range [{lo}, {hi}] is not an interval"
            )));
        }
        let dims = self.dims.clone().unwrap_or_else(|| (0..d).collect());
        if let Some(&bad) = dims.iter().find(|&&j| j >= d) {
            return Err(Error::Contract(format!(
                "dimension {bad} out of range for a {d}-dimensional space"
            )));
        }
        Ok(dims)
    }
}

/// `steps` evenly spaced values; with a symmetric range and an odd count the
/// middle value is exactly zero.
pub fn sweep_values(range: [f64; 2], steps: usize) -> Vec<f64> {
    let [lo, hi] = range;
    (0..steps)
        .map(|c| lo + (hi - lo) * c as f64 / (steps - 1) as f64)
        .collect()
}

/// Decoded cells in row-major order with the latent behind each cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<Image>,
    pub latents: Vec<Vec<f64>>,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    /// Per row, the column holding the reconstruction (posterior traversals).
    pub marker: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSidecar {
    pub rows: usize,
    pub cols: usize,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    /// `latents[r][c]` is the vector decoded into cell `(r, c)`.
    pub latents: Vec<Vec<Vec<f64>>>,
    pub marker: Option<Vec<usize>>,
}

impl Grid {
    pub fn cell(&self, r: usize, c: usize) -> &Image {
        &self.cells[r * self.cols + c]
    }

    pub fn sidecar(&self) -> GridSidecar {
        GridSidecar {
            rows: self.rows,
            cols: self.cols,
            row_labels: self.row_labels.clone(),
            col_labels: self.col_labels.clone(),
            latents: self.latents.chunks(self.cols).map(|r| r.to_vec()).collect(),
            marker: self.marker.clone(),
        }
    }

    /// Tile the cells with 2-pixel white gutters and a label margin on the
    /// top and left. Marker cells get a black frame inside their gutter.
    pub fn render(&self) -> Image {
        const GUTTER: usize = 2;
        let r = self.cells.first().map_or(1, Image::width);
        let scale = (r / 32).max(1);
        let widest = self
            .row_labels
            .iter()
            .map(|l| font::text_width(l, scale))
            .max()
            .unwrap_or(0);
        let left = widest + 2 * GUTTER;
        let top = font::GLYPH_H * scale + 2 * GUTTER;
        let width = left + self.cols * (r + GUTTER) + GUTTER;
        let height = top + self.rows * (r + GUTTER) + GUTTER;
        let mut out = Image::filled(width, height, [1.0; 3]);
        let origin = |row: usize, col: usize| {
            (
                left + GUTTER + col * (r + GUTTER),
                top + GUTTER + row * (r + GUTTER),
            )
        };
        for row in 0..self.rows {
            for col in 0..self.cols {
                let (x0, y0) = origin(row, col);
                let cell = self.cell(row, col);
                for y in 0..r {
                    for x in 0..r {
                        out.set_pixel(x0 + x, y0 + y, cell.pixel(x, y));
                    }
                }
            }
            let (_, y0) = origin(row, 0);
            let ty = y0 + r.saturating_sub(font::GLYPH_H * scale) / 2;
            font::draw_text(&self.row_labels[row], GUTTER, ty, scale, |x, y| {
                out.set_pixel(x, y, [0.0; 3])
            });
            if let Some(m) = self.marker.as_ref().map(|m| m[row]) {
                let (x0, y0) = origin(row, m);
                for i in 0..r + 2 {
                    for (x, y) in [
                        (x0 - 1 + i, y0 - 1),
                        (x0 - 1 + i, y0 + r),
                        (x0 - 1, y0 - 1 + i),
                        (x0 + r, y0 - 1 + i),
                    ] {
                        out.set_pixel(x, y, [0.0; 3]);
                    }
                }
            }
        }
        for (col, label) in self.col_labels.iter().enumerate() {
            let (x0, _) = origin(0, col);
            let tx = x0 + r.saturating_sub(font::text_width(label, scale)) / 2;
            font::draw_text(label, tx, GUTTER, scale, |x, y| {
                if x < width {
                    out.set_pixel(x, y, [0.0; 3])
                }
            });
        }
        out
    }
}

fn value_label(v: f64) -> String {
    format!("{v:+.1}")
}

/// Default row label for a latent dimension.
pub fn dim_label(j: usize, labels: Option<&[String]>) -> String {
    match labels.and_then(|l| l.get(j)) {
        Some(name) => format!("{j}:{name}"),
        None => format!("dim {j}"),
    }
}

fn decode_all(
    decoder: &dyn LatentDecoder,
    latents: &[Vec<f64>],
    conditioning: &[f32],
) -> Result<Vec<Image>> {
    latents
        .iter()
        .map(|z| decoder.decode_latent(z, conditioning))
        .collect()
}

/// Row `r` sweeps `dims[r]` over the range with every other coordinate at the base.
pub fn prior_traversal(
    decoder: &dyn LatentDecoder,
    spec: &TraversalSpec,
    conditioning: &[f32],
) -> Result<Grid> {
    let d = decoder.latent_dim();
    let dims = spec.resolve_dims(d)?;
    let base = match &spec.base {
        Some(b) if b.len() != d => {
            return Err(Error::Contract(format!(
                "base vector has {} entries, space has {d}",
                b.len()
            )));
        }
        Some(b) => b.clone(),
        None => vec![0.0; d],
    };
    let values = sweep_values(spec.range, spec.steps);
    let mut latents = Vec::with_capacity(dims.len() * values.len());
    for &j in &dims {
        for &v in &values {
            let mut z = base.clone();
            z[j] = v;
            latents.push(z);
        }
    }
    Ok(Grid {
        rows: dims.len(),
        cols: values.len(),
        cells: decode_all(decoder, &latents, conditioning)?,
        latents,
        row_labels: dims.iter().map(|&j| dim_label(j, None)).collect(),
        col_labels: values.iter().map(|&v| value_label(v)).collect(),
        marker: None,
    })
}

/// Sweeps re-centered at the posterior mean of `image`; the marker column
/// is the one whose value is nearest the mean.
pub fn posterior_traversal(
    encoder: &dyn LatentEncoder,
    decoder: &dyn LatentDecoder,
    image: &Image,
    spec: &TraversalSpec,
    conditioning: &[f32],
) -> Result<Grid> {
    let mu = encoder.encode_mean(image)?;
    let d = decoder.latent_dim();
    if mu.len() != d {
        return Err(Error::Contract(format!(
            "encoder gives {} dimensions, decoder expects {d}",
            mu.len()
        )));
    }
    let dims = spec.resolve_dims(d)?;
    let offsets = sweep_values(spec.range, spec.steps);
    let marker_col = offsets
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |b, (c, &o)| {
            if o.abs() < b.1 {
                (c, o.abs())
            } else {
                b
            }
        })
        .0;
    let mut latents = Vec::with_capacity(dims.len() * offsets.len());
    for &j in &dims {
        for &o in &offsets {
            let mut z = mu.clone();
            z[j] = mu[j] + o;
            latents.push(z);
        }
    }
    Ok(Grid {
        rows: dims.len(),
        cols: offsets.len(),
        cells: decode_all(decoder, &latents, conditioning)?,
        latents,
        row_labels: dims.iter().map(|&j| dim_label(j, None)).collect(),
        col_labels: offsets.iter().map(|&v| value_label(v)).collect(),
        marker: Some(vec![marker_col; dims.len()]),
    })
}

/// Cell `(r, c)` decodes the zero vector with `dim_i = v_r` and `dim_j = v_c`.
pub fn pair_grid(
    decoder: &dyn LatentDecoder,
    dim_i: usize,
    dim_j: usize,
    range: [f64; 2],
    steps: usize,
    conditioning: &[f32],
) -> Result<Grid> {
    let d = decoder.latent_dim();
    if dim_i == dim_j {
        return Err(Error::Contract(format!(
            "pair grid needs two different dimensions, got {dim_i} twice"
        )));
    }
    let spec = TraversalSpec {
        dims: Some(vec![dim_i, dim_j]),
        range,
        steps,
        ..TraversalSpec::default()
    };
    spec.resolve_dims(d)?;
    let values = sweep_values(range, steps);
    let mut latents = Vec::with_capacity(steps * steps);
    for &vr in &values {
        for &vc in &values {
            let mut z = vec![0.0; d];
            z[dim_i] = vr;
            z[dim_j] = vc;
            latents.push(z);
        }
    }
    Ok(Grid {
        rows: steps,
        cols: steps,
        cells: decode_all(decoder, &latents, conditioning)?,
        latents,
        row_labels: values
            .iter()
            .map(|&v| format!("{dim_i}:{}", value_label(v)))
            .collect(),
        col_labels: values.iter().map(|&v| value_label(v)).collect(),
        marker: None,
    })
}

/// Decodes `(1 - t) f_a + t f_b` for `steps` evenly spaced `t` in `[0, 1]`.
pub fn interpolate(
    decoder: &dyn LatentDecoder,
    f_a: &[f64],
    f_b: &[f64],
    steps: usize,
    conditioning: &[f32],
) -> Result<Vec<Image>> {
    if steps < 2 {
        return Err(Error::Config(format!(
            "interpolation needs >= 2 steps, got {steps}"
        )));
    }
    if f_a.len() != f_b.len() {
        return Err(Error::Contract(
            "interpolation endpoints differ in length".into(),
        ));
    }
    let latents: Vec<Vec<f64>> = (0..steps)
        .map(|s| {
            let t = s as f64 / (steps - 1) as f64;
            f_a.iter()
                .zip(f_b)
                .map(|(a, b)| (1.0 - t) * a + t * b)
                .collect()
        })
        .collect();
    decode_all(decoder, &latents, conditioning)
}

/// Compose a vector taking each dimension from the one source that claims it.
/// The dimension sets must partition `0..d`.
pub fn selective_mix(sources: &[(&[f64], &[usize])], d: usize) -> Result<Vec<f64>> {
    let mut owner: Vec<Option<usize>> = vec![None; d];
    let mut problems = Vec::new();
    for (s, (f, dims)) in sources.iter().enumerate() {
        if f.len() != d {
            problems.push(format!("source {s} has {} entries, expected {d}", f.len()));
            continue;
        }
        for &j in dims.iter() {
            match owner.get(j) {
                None => problems.push(format!("source {s} claims dimension {j}, outside 0..{d}")),
                Some(Some(prev)) => {
                    problems.push(format!("dimension {j} claimed by sources {prev} and {s}"))
                }
                Some(None) => owner[j] = Some(s),
            }
        }
    }
    let gaps: Vec<String> = owner
        .iter()
        .enumerate()
        .filter(|(_, o)| o.is_none())
        .map(|(j, _)| j.to_string())
        .collect();
    if !gaps.is_empty() {
        problems.push(format!("dimensions not assigned: {}", gaps.join(", ")));
    }
    if !problems.is_empty() {
        return Err(Error::Partition(problems.join("; ")));
    }
    Ok(owner
        .iter()
        .enumerate()
        .map(|(j, o)| sources[o.expect("checked")].0[j])
        .collect())
}

/// Decoder conditioning for a geometry at `resolution`.
pub fn conditioning_for(geometry: &GeometrySpec, resolution: usize) -> Result<Vec<f32>> {
    Ok(make_normal_map(geometry, resolution)?.conditioning())
}

/// Decode `f` onto a geometry and encode as PNG. The one path every front
/// end uses, so identical inputs give identical bytes.
pub fn decode_png(
    decoder: &dyn LatentDecoder,
    f: &[f64],
    geometry: &GeometrySpec,
) -> Result<Vec<u8>> {
    if f.len() != decoder.latent_dim() {
        return Err(Error::Contract(format!(
            "f has {} entries, model expects {}",
            f.len(),
            decoder.latent_dim()
        )));
    }
    if let Some(bad) = f.iter().position(|v| !v.is_finite()) {
        return Err(Error::Contract(format!("f[{bad}] is not finite")));
    }
    let cond = conditioning_for(geometry, decoder.resolution())?;
    decoder.decode_latent(f, &cond)?.to_png()
}

/// Posterior mean of an arbitrary image after center-cropping and resizing
/// it to the model resolution. Shared by every front end, like [`decode_png`].
pub fn encode_any(encoder: &dyn LatentEncoder, image: &Image) -> Result<Vec<f64>> {
    let f = encoder.encode_mean(&prepare_image(image, encoder.resolution()))?;
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::Contract(
            "encoder produced a non-finite latent".into(),
        ));
    }
    Ok(f)
}
