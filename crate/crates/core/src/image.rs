//! RGB float images and 8-bit PNG encoding.

use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result, ShapeError};

/// Row-major `height x width x 3` image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

/// Clamp to `[0, 1]` and round to 8 bits.
pub fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self, ShapeError> {
        if width == 0 || height == 0 || data.len() != width * height * 3 {
            return Err(ShapeError::new(format!(
                "image {width}x{height} needs {} values, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn black(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Per-pixel mean of the three channels.
    pub fn luminance(&self) -> Vec<f32> {
        self.data
            .chunks(3)
            .map(|p| (p[0] + p[1] + p[2]) / 3.0)
            .collect()
    }

    /// Channel-first `3 x H x W` copy.
    pub fn to_chw(&self) -> Vec<f32> {
        let plane = self.width * self.height;
        let mut out = vec![0.0; plane * 3];
        for (i, px) in self.data.chunks(3).enumerate() {
            for c in 0..3 {
                out[c * plane + i] = px[c];
            }
        }
        out
    }

    pub fn from_chw(width: usize, height: usize, chw: &[f32]) -> Result<Self, ShapeError> {
        let plane = width * height;
        if chw.len() != plane * 3 {
            return Err(ShapeError::new(format!(
                "expected {} channel-first values, got {}",
                plane * 3,
                chw.len()
            )));
        }
        let mut data = vec![0.0; plane * 3];
        for i in 0..plane {
            for c in 0..3 {
                data[i * 3 + c] = chw[c * plane + i];
            }
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Round-trip through 8-bit quantization.
    pub fn quantized(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| to_u8(v) as f32 / 255.0).collect(),
        }
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| to_u8(v)).collect()
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        encode_png(
            self.width,
            self.height,
            png::ColorType::Rgb,
            &self.to_rgb8(),
        )
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes = self.to_png()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    /// Decode any 8/16-bit PNG to RGB. Alpha is multiplied in, so transparent
    /// regions become black background.
    pub fn from_png(bytes: &[u8]) -> Result<Self> {
        let (width, height, rgba) = decode_png_rgba(bytes)?;
        let data = rgba
            .chunks(4)
            .flat_map(|p| {
                let a = p[3] as f32 / 255.0;
                [
                    p[0] as f32 / 255.0 * a,
                    p[1] as f32 / 255.0 * a,
                    p[2] as f32 / 255.0 * a,
                ]
            })
            .collect();
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_png(&bytes)
    }

    /// Largest centered square crop.
    pub fn center_crop_square(&self) -> Self {
        let side = self.width.min(self.height);
        let (x0, y0) = ((self.width - side) / 2, (self.height - side) / 2);
        let mut out = Self::black(side, side);
        for y in 0..side {
            for x in 0..side {
                out.set_pixel(x, y, self.pixel(x0 + x, y0 + y));
            }
        }
        out
    }

    /// Area-averaging resize when shrinking by an integer factor, bilinear
    /// (half-pixel centers) otherwise.
    pub fn resized(&self, width: usize, height: usize) -> Self {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let chw = self.to_chw();
        let out = resample_planes(
            &chw,
            3,
            self.width,
            self.height,
            width,
            height,
            Filter::Area,
        );
        Self::from_chw(width, height, &out).expect("resample keeps channel count")
    }

    /// Mean absolute difference over all channels.
    pub fn mean_abs_diff(&self, other: &Image) -> Result<f64, ShapeError> {
        self.check_same(other)?;
        let s: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs() as f64)
            .sum();
        Ok(s / self.data.len() as f64)
    }

    pub(crate) fn check_same(&self, other: &Image) -> Result<(), ShapeError> {
        if self.width != other.width || self.height != other.height {
            return Err(ShapeError::new(format!(
                "image sizes differ: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }
}

/// Resampling filter for [`resample_planes`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Filter {
    /// Bilinear interpolation at half-pixel centers.
    Bilinear,
    /// Box average for integer downscales, bilinear otherwise.
    Area,
}

/// Resize channel-first planes.
pub fn resample_planes(
    src: &[f32],
    channels: usize,
    w: usize,
    h: usize,
    ow: usize,
    oh: usize,
    filter: Filter,
) -> Vec<f32> {
    let mut out = vec![0.0f32; channels * ow * oh];
    let integer_down =
        filter == Filter::Area && w % ow == 0 && h % oh == 0 && w / ow == h / oh && w >= ow;
    for c in 0..channels {
        let plane = &src[c * w * h..(c + 1) * w * h];
        let dst = &mut out[c * ow * oh..(c + 1) * ow * oh];
        if integer_down {
            let f = w / ow;
            let inv = 1.0 / (f * f) as f32;
            for y in 0..oh {
                for x in 0..ow {
                    let mut s = 0.0;
                    for dy in 0..f {
                        let row = &plane[(y * f + dy) * w + x * f..(y * f + dy) * w + x * f + f];
                        s += row.iter().sum::<f32>();
                    }
                    dst[y * ow + x] = s * inv;
                }
            }
        } else {
            for y in 0..oh {
                let sy = ((y as f32 + 0.5) * h as f32 / oh as f32 - 0.5).clamp(0.0, (h - 1) as f32);
                let (y0, ty) = (sy.floor() as usize, sy.fract());
                let y1 = (y0 + 1).min(h - 1);
                for x in 0..ow {
                    let sx =
                        ((x as f32 + 0.5) * w as f32 / ow as f32 - 0.5).clamp(0.0, (w - 1) as f32);
                    let (x0, tx) = (sx.floor() as usize, sx.fract());
                    let x1 = (x0 + 1).min(w - 1);
                    let top = plane[y0 * w + x0] * (1.0 - tx) + plane[y0 * w + x1] * tx;
                    let bottom = plane[y1 * w + x0] * (1.0 - tx) + plane[y1 * w + x1] * tx;
                    dst[y * ow + x] = top * (1.0 - ty) + bottom * ty;
                }
            }
        }
    }
    out
}

pub(crate) fn encode_png(
    width: usize,
    height: usize,
    color: png::ColorType,
    pixels: &[u8],
) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::ImageDecode(e.to_string()))?;
        writer
            .write_image_data(pixels)
            .map_err(|e| Error::ImageDecode(e.to_string()))?;
    }
    Ok(out)
}

/// Decode to 8-bit RGBA regardless of the stored color type.
pub(crate) fn decode_png_rgba(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::ImageDecode(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::ImageDecode("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::ImageDecode(e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let buf = &buf[..info.buffer_size()];
    let rgba: Vec<u8> = match info.color_type {
        png::ColorType::Rgba => buf.to_vec(),
        png::ColorType::Rgb => buf
            .chunks(3)
            .flat_map(|p| [p[0], p[1], p[2], 255])
            .collect(),
        png::ColorType::Grayscale => buf.iter().flat_map(|&g| [g, g, g, 255]).collect(),
        png::ColorType::GrayscaleAlpha => buf
            .chunks(2)
            .flat_map(|p| [p[0], p[0], p[0], p[1]])
            .collect(),
        png::ColorType::Indexed => {
            return Err(Error::ImageDecode("unexpanded palette image".into()))
        }
    };
    if rgba.len() != w * h * 4 {
        return Err(Error::ImageDecode("truncated pixel data".into()));
    }
    Ok((w, h, rgba))
}
