//! Dense HWC images.

use crate::error::{mismatch, Result};
use crate::Scalar;

/// Row-major `height × width × channels` image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Image<T> {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self { width, height, channels, data: vec![T::zero(); width * height * channels] }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(mismatch(format!(
                "{} values for a {width}x{height}x{channels} image",
                data.len()
            )));
        }
        Ok(Self { width, height, channels, data })
    }

    pub fn filled(width: usize, height: usize, channels: usize, v: T) -> Self {
        Self { width, height, channels, data: vec![v; width * height * channels] }
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> T {
        self.data[self.idx(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: T) {
        let i = self.idx(x, y, c);
        self.data[i] = v;
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(mismatch(format!(
                "{}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )))
        }
    }

    pub fn cast<U: Scalar>(&self) -> Image<U> {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        }
    }

    /// Zeroes every pixel whose mask entry is false.
    pub fn masked(&self, mask: &PixelMask) -> Self {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                if !mask.get(x, y) {
                    for c in 0..self.channels {
                        out.set(x, y, c, T::zero());
                    }
                }
            }
        }
        out
    }
}

/// Per-pixel boolean mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelMask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl PixelMask {
    pub fn new(width: usize, height: usize, value: bool) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Square dilation with a `side × side` kernel covering offsets
    /// `-side/2 ..= side - 1 - side/2`, clipped at the borders.
    pub fn dilate(&self, side: usize) -> Self {
        if side <= 1 {
            return self.clone();
        }
        let lo = (side / 2) as isize;
        let hi = (side - 1 - side / 2) as isize;
        let (w, h) = (self.width as isize, self.height as isize);
        // A pixel q is set if some set pixel p has q - p in [-lo, hi].
        let mut rows = vec![false; self.data.len()];
        for y in 0..h {
            for x in 0..w {
                if self.data[(y * w + x) as usize] {
                    for qx in (x - lo).max(0)..=(x + hi).min(w - 1) {
                        rows[(y * w + qx) as usize] = true;
                    }
                }
            }
        }
        let mut out = vec![false; self.data.len()];
        for y in 0..h {
            for x in 0..w {
                if rows[(y * w + x) as usize] {
                    for qy in (y - lo).max(0)..=(y + hi).min(h - 1) {
                        out[(qy * w + x) as usize] = true;
                    }
                }
            }
        }
        Self { width: self.width, height: self.height, data: out }
    }

    pub fn union(&self, other: &Self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a || *b).collect(),
        }
    }
}
