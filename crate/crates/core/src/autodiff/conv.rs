//! im2col / col2im lowering for 2-D convolutions on NCHW data.

use crate::error::ShapeError;

/// Spatial hyperparameters of a square-kernel convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel,
            stride,
            padding,
        }
    }

    /// 1x1, stride 1, no padding: im2col is the identity.
    pub fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    /// Output extent of a forward convolution over `input` pixels.
    pub fn conv_out(&self, input: usize) -> Result<usize, ShapeError> {
        if self.stride == 0 {
            return Err(ShapeError::new("stride must be >= 1"));
        }
        let padded = input + 2 * self.padding;
        if self.kernel > padded {
            return Err(ShapeError::new(format!(
                "kernel {} larger than padded input {padded}",
                self.kernel
            )));
        }
        Ok((padded - self.kernel) / self.stride + 1)
    }

    /// Output extent of a transposed convolution over `input` pixels.
    pub fn transpose_out(&self, input: usize) -> Result<usize, ShapeError> {
        if self.stride == 0 {
            return Err(ShapeError::new("stride must be >= 1"));
        }
        let full = (input - 1) * self.stride + self.kernel;
        if full <= 2 * self.padding {
            return Err(ShapeError::new(format!(
                "transposed conv output would be empty (input {input}, {self:?})"
            )));
        }
        Ok(full - 2 * self.padding)
    }
}

/// Unfold one `channels x h x w` image into a `(channels*k*k) x (oh*ow)` matrix.
#[allow(clippy::too_many_arguments)]
pub(crate) fn im2col<T: Copy + Default>(
    img: &[T],
    channels: usize,
    h: usize,
    w: usize,
    g: ConvGeom,
    oh: usize,
    ow: usize,
    cols: &mut [T],
) {
    let k = g.kernel;
    let p = oh * ow;
    debug_assert_eq!(cols.len(), channels * k * k * p);
    for c in 0..channels {
        let plane = &img[c * h * w..(c + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = ((c * k + ki) * k + kj) * p;
                let dst = &mut cols[row..row + p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        line.fill(T::default());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, out) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                        *out = if ix < 0 || ix >= w as isize {
                            T::default()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Fold a column matrix back into an image, accumulating overlaps.
#[allow(clippy::too_many_arguments)]
pub(crate) fn col2im<T: Copy + std::ops::AddAssign>(
    cols: &[T],
    channels: usize,
    h: usize,
    w: usize,
    g: ConvGeom,
    oh: usize,
    ow: usize,
    img: &mut [T],
) {
    let k = g.kernel;
    let p = oh * ow;
    for c in 0..channels {
        let plane = &mut img[c * h * w..(c + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = ((c * k + ki) * k + kj) * p;
                let src = &cols[row..row + p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let line = &src[oy * ow..(oy + 1) * ow];
                    for (ox, &v) in line.iter().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}
