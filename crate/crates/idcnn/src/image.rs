//! Color images and noise maps, the units every filter and metric consumes.

use crate::error::{Error, Result};

/// H×W image with three 8-bit channels per pixel, interleaved row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColorImage {
    h: usize,
    w: usize,
    data: Vec<u8>,
}

impl ColorImage {
    pub fn new(h: usize, w: usize) -> Self {
        assert!(h >= 1 && w >= 1, "image dims must be at least 1x1");
        ColorImage {
            h,
            w,
            data: vec![0; 3 * h * w],
        }
    }

    pub fn from_raw(h: usize, w: usize, data: Vec<u8>) -> Result<Self> {
        if h == 0 || w == 0 {
            return Err(Error::contract("image dims must be at least 1x1"));
        }
        if data.len() != 3 * h * w {
            return Err(Error::contract(format!(
                "image data length {} does not match {}x{}x3",
                data.len(),
                h,
                w
            )));
        }
        Ok(ColorImage { h, w, data })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }
    pub fn height(&self) -> usize {
        self.h
    }
    pub fn width(&self) -> usize {
        self.w
    }
    /// Number of pixels Q.
    pub fn pixel_count(&self) -> usize {
        self.h * self.w
    }
    pub fn data(&self) -> &[u8] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = 3 * (y * self.w + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [u8; 3]) {
        let i = 3 * (y * self.w + x);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    #[inline]
    pub fn channel(&self, y: usize, x: usize, q: usize) -> u8 {
        self.data[3 * (y * self.w + x) + q]
    }

    pub fn rot90(&self) -> ColorImage {
        let mut out = ColorImage::new(self.w, self.h);
        for y in 0..self.h {
            for x in 0..self.w {
                out.set_pixel(x, self.h - 1 - y, self.pixel(y, x));
            }
        }
        out
    }

    pub fn rot180(&self) -> ColorImage {
        let mut out = ColorImage::new(self.h, self.w);
        for y in 0..self.h {
            for x in 0..self.w {
                out.set_pixel(self.h - 1 - y, self.w - 1 - x, self.pixel(y, x));
            }
        }
        out
    }

    pub fn rot270(&self) -> ColorImage {
        let mut out = ColorImage::new(self.w, self.h);
        for y in 0..self.h {
            for x in 0..self.w {
                out.set_pixel(self.w - 1 - x, y, self.pixel(y, x));
            }
        }
        out
    }

    /// Mirror in the up-down direction.
    pub fn flip_ud(&self) -> ColorImage {
        let mut out = ColorImage::new(self.h, self.w);
        for y in 0..self.h {
            let src = &self.data[3 * y * self.w..3 * (y + 1) * self.w];
            let dy = self.h - 1 - y;
            out.data[3 * dy * self.w..3 * (dy + 1) * self.w].copy_from_slice(src);
        }
        out
    }
}

/// Per-pixel impulse map: ground truth holds {0, 1}, network estimates hold
/// probabilities in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseMap {
    h: usize,
    w: usize,
    data: Vec<f32>,
}

impl NoiseMap {
    pub fn zeros(h: usize, w: usize) -> Self {
        assert!(h >= 1 && w >= 1, "map dims must be at least 1x1");
        NoiseMap {
            h,
            w,
            data: vec![0.0; h * w],
        }
    }

    pub fn from_raw(h: usize, w: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::contract(format!(
                "map data length {} does not match {}x{}",
                data.len(),
                h,
                w
            )));
        }
        if data.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::contract("map values must lie in [0, 1]"));
        }
        Ok(NoiseMap { h, w, data })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }
    pub fn height(&self) -> usize {
        self.h
    }
    pub fn width(&self) -> usize {
        self.w
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f32) {
        debug_assert!((0.0..=1.0).contains(&v));
        self.data[y * self.w + x] = v;
    }

    /// True when every value is exactly 0 or 1.
    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    #[inline]
    pub fn flagged(&self, y: usize, x: usize) -> bool {
        self.at(y, x) != 0.0
    }

    pub fn flagged_count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }

    pub fn rot90(&self) -> NoiseMap {
        let mut out = NoiseMap::zeros(self.w, self.h);
        for y in 0..self.h {
            for x in 0..self.w {
                out.set(x, self.h - 1 - y, self.at(y, x));
            }
        }
        out
    }

    pub fn rot180(&self) -> NoiseMap {
        let mut out = NoiseMap::zeros(self.h, self.w);
        for y in 0..self.h {
            for x in 0..self.w {
                out.set(self.h - 1 - y, self.w - 1 - x, self.at(y, x));
            }
        }
        out
    }

    pub fn rot270(&self) -> NoiseMap {
        let mut out = NoiseMap::zeros(self.w, self.h);
        for y in 0..self.h {
            for x in 0..self.w {
                out.set(self.w - 1 - x, y, self.at(y, x));
            }
        }
        out
    }

    pub fn flip_ud(&self) -> NoiseMap {
        let mut out = NoiseMap::zeros(self.h, self.w);
        for y in 0..self.h {
            for x in 0..self.w {
                out.set(self.h - 1 - y, x, self.at(y, x));
            }
        }
        out
    }
}
