//! Dense row-major image buffers and the resampling used by the pyramids.

use crate::error::{Error, Result};

/// `height x width x channels` grid of `f64`, row-major, channels interleaved.
///
/// Photographs carry intensities in `[0, 1]`; the same container also holds
/// single-channel fields (disparity, depth, mask probabilities).
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {width}x{height}x{channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::dims(
                format!("{} values", width * height * channels),
                format!("{} values", data.len()),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite value at index {i}"
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0 && channels > 0);
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    /// Builds an image from `f(x, y, c)`.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    /// Single-channel field from a row-major slice.
    pub fn from_field(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(width, height, 1, data)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.index(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = self.index(x, y, c);
        self.data[i] = v;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn shape_string(&self) -> String {
        format!("{}x{}x{}", self.width, self.height, self.channels)
    }

    pub(crate) fn check_same_shape(&self, other: &Image) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::dims(self.shape_string(), other.shape_string()))
        }
    }

    pub(crate) fn check_size(&self, width: usize, height: usize) -> Result<()> {
        if self.width == width && self.height == height {
            Ok(())
        } else {
            Err(Error::dims(
                format!("{width}x{height}"),
                format!("{}x{}", self.width, self.height),
            ))
        }
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    /// Mirrors columns: `out(x) = in(W - 1 - x)`.
    pub fn flip_horizontal(&self) -> Image {
        let (w, c) = (self.width, self.channels);
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..w {
                for k in 0..c {
                    out.data[(y * w + x) * c + k] = self.data[(y * w + (w - 1 - x)) * c + k];
                }
            }
        }
        out
    }

    /// Halves resolution with a 2x2 box average (a bilinear resample at the
    /// half-resolution pixel centres). Odd trailing rows/columns are dropped.
    pub fn downsample2(&self) -> Image {
        let (w2, h2, c) = (self.width / 2, self.height / 2, self.channels);
        assert!(w2 > 0 && h2 > 0, "cannot downsample {}", self.shape_string());
        let mut data = Vec::with_capacity(w2 * h2 * c);
        for y in 0..h2 {
            for x in 0..w2 {
                for k in 0..c {
                    let s = self.get(2 * x, 2 * y, k)
                        + self.get(2 * x + 1, 2 * y, k)
                        + self.get(2 * x, 2 * y + 1, k)
                        + self.get(2 * x + 1, 2 * y + 1, k);
                    data.push(0.25 * s);
                }
            }
        }
        Image {
            width: w2,
            height: h2,
            channels: c,
            data,
        }
    }

    /// Adjoint of [`Image::downsample2`]: spreads each coarse value over its
    /// 2x2 block with weight 1/4 into a `width x height` image.
    pub fn downsample2_adjoint(&self, width: usize, height: usize) -> Image {
        assert_eq!(width / 2, self.width);
        assert_eq!(height / 2, self.height);
        let c = self.channels;
        let mut out = Image::zeros(width, height, c);
        for y in 0..self.height {
            for x in 0..self.width {
                for k in 0..c {
                    let g = 0.25 * self.get(x, y, k);
                    for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                        let i = out.index(2 * x + dx, 2 * y + dy, k);
                        out.data[i] += g;
                    }
                }
            }
        }
        out
    }

    /// Bilinear resize to `width x height` with pixel-centre alignment.
    ///
    /// Interpolates as `a + t * (b - a)` so constant inputs stay bit-exact.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Image {
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let axis = |i: usize, scale: f64, n: usize| -> (usize, usize, f64) {
            let p = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = (p.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, p - i0 as f64)
        };
        let c = self.channels;
        let mut data = Vec::with_capacity(width * height * c);
        for y in 0..height {
            let (y0, y1, ty) = axis(y, sy, self.height);
            for x in 0..width {
                let (x0, x1, tx) = axis(x, sx, self.width);
                for k in 0..c {
                    let lerp = |a: f64, b: f64, t: f64| a + t * (b - a);
                    let top = lerp(self.get(x0, y0, k), self.get(x1, y0, k), tx);
                    let bot = lerp(self.get(x0, y1, k), self.get(x1, y1, k), tx);
                    data.push(lerp(top, bot, ty));
                }
            }
        }
        Image {
            width,
            height,
            channels: c,
            data,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_buffers() {
        assert!(Image::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(Image::new(0, 2, 1, vec![]).is_err());
        assert!(Image::new(1, 1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn flip_is_an_involution() {
        let img = Image::from_fn(5, 3, 3, |x, y, c| (x * 7 + y * 3 + c) as f64 / 40.0);
        assert_ne!(img.flip_horizontal(), img);
        assert_eq!(img.flip_horizontal().flip_horizontal(), img);
    }

    #[test]
    fn downsample_averages_blocks() {
        let img = Image::from_fn(5, 4, 1, |x, y, _| (x + 10 * y) as f64);
        let d = img.downsample2();
        assert_eq!((d.width(), d.height()), (2, 2));
        assert_eq!(d.get(0, 0, 0), (0.0 + 1.0 + 10.0 + 11.0) / 4.0);
        assert_eq!(d.get(1, 1, 0), (22.0 + 23.0 + 32.0 + 33.0) / 4.0);
    }

    #[test]
    fn downsample_adjoint_matches_inner_product() {
        let a = Image::from_fn(6, 5, 2, |x, y, c| ((x * 13 + y * 7 + c * 3) % 11) as f64);
        let b = Image::from_fn(3, 2, 2, |x, y, c| ((x * 5 + y * 3 + c) % 7) as f64 - 2.0);
        let lhs: f64 = a
            .downsample2()
            .data()
            .iter()
            .zip(b.data())
            .map(|(p, q)| p * q)
            .sum();
        let adj = b.downsample2_adjoint(6, 5);
        let rhs: f64 = a.data().iter().zip(adj.data()).map(|(p, q)| p * q).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn resize_keeps_constants_exact() {
        let c = Image::filled(7, 4, 1, 0.123_456_789);
        let up = c.resize_bilinear(14, 8);
        assert!(up.data().iter().all(|&v| v == 0.123_456_789));
    }
}
