//! Dense 2D image containers shared by the measurement model, the
//! reconstructors and the metrics.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major complex image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexImage {
    pub height: usize,
    pub width: usize,
    pub values: Vec<Complex64>,
}

/// Row-major real image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealImage {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl ComplexImage {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![Complex64::new(0.0, 0.0); height * width],
        }
    }

    pub fn from_values(height: usize, width: usize, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Extent(format!(
                "{} values for a {height}x{width} image",
                values.len()
            )));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn from_real(image: &RealImage) -> Self {
        Self {
            height: image.height,
            width: image.width,
            values: image.values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.values[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: Complex64) {
        self.values[row * self.width + col] = v;
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_extents(&self, other: &ComplexImage) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn abs(&self) -> RealImage {
        RealImage {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|v| v.norm()).collect(),
        }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// Inner product `<self, other> = sum conj(self) * other`.
    pub fn dot(&self, other: &ComplexImage) -> Complex64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    /// Centered crop to `height` x `width`.
    pub fn center_crop(&self, height: usize, width: usize) -> Result<ComplexImage> {
        let (r0, c0) = crop_origin(self.height, self.width, height, width)?;
        let mut out = ComplexImage::zeros(height, width);
        for r in 0..height {
            let src = (r0 + r) * self.width + c0;
            out.values[r * width..(r + 1) * width].copy_from_slice(&self.values[src..src + width]);
        }
        Ok(out)
    }
}

impl RealImage {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![0.0; height * width],
        }
    }

    pub fn from_values(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Extent(format!(
                "{} values for a {height}x{width} image",
                values.len()
            )));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                values.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            values,
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.values[row * self.width + col] = v;
    }

    pub fn same_extents(&self, other: &RealImage) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Population variance.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.values.len() as f64
    }

    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<RealImage> {
        if row + height > self.height || col + width > self.width {
            return Err(Error::Extent(format!(
                "crop ({row},{col}) {height}x{width} exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut out = RealImage::zeros(height, width);
        for r in 0..height {
            let src = (row + r) * self.width + col;
            out.values[r * width..(r + 1) * width].copy_from_slice(&self.values[src..src + width]);
        }
        Ok(out)
    }

    pub fn center_crop(&self, height: usize, width: usize) -> Result<RealImage> {
        let (r0, c0) = crop_origin(self.height, self.width, height, width)?;
        self.crop(r0, c0, height, width)
    }
}

fn crop_origin(h: usize, w: usize, height: usize, width: usize) -> Result<(usize, usize)> {
    if height > h || width > w {
        return Err(Error::Extent(format!(
            "cannot center-crop {h}x{w} to {height}x{width}"
        )));
    }
    Ok(((h - height) / 2, (w - width) / 2))
}

/// Complex 3D array, row-major over `dims`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexVolume {
    pub dims: [usize; 3],
    pub values: Vec<Complex64>,
}

impl ComplexVolume {
    pub fn new(dims: [usize; 3], values: Vec<Complex64>) -> Result<Self> {
        if dims.iter().product::<usize>() != values.len() || dims.contains(&0) {
            return Err(Error::Extent(format!(
                "{} values for volume {:?}",
                values.len(),
                dims
            )));
        }
        Ok(Self { dims, values })
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    pub fn norm_sqr(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum()
    }
}
