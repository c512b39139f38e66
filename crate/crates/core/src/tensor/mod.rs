//! Dense `f64` tensors with a reverse-mode gradient tape.
//!
//! Image-like tensors are `[channels, height, width]`; complex images are
//! two-channel tensors (real, imaginary).

mod gradcheck;
mod tape;

pub use gradcheck::{grad_check, grad_check_normwise, gradient_pairs};
pub use tape::{Gradients, OpKind, Tape, Var};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ComplexImage, RealImage};
use num_complex::Complex64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {:?} holds {n} values, got {}", shape, data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// `[1, H, W]` tensor from a real image.
    pub fn from_real_image(image: &RealImage) -> Self {
        Self {
            shape: vec![1, image.height, image.width],
            data: image.values.clone(),
        }
    }

    /// `[2, H, W]` tensor (real plane, imaginary plane) from a complex image.
    pub fn from_complex_image(image: &ComplexImage) -> Self {
        let n = image.len();
        let mut data = vec![0.0; 2 * n];
        for (i, v) in image.values.iter().enumerate() {
            data[i] = v.re;
            data[n + i] = v.im;
        }
        Self {
            shape: vec![2, image.height, image.width],
            data,
        }
    }

    /// Inverse of [`Tensor::from_real_image`]; accepts `[H, W]` or `[1, H, W]`.
    pub fn to_real_image(&self) -> Result<RealImage> {
        let (h, w) = match self.shape.as_slice() {
            [h, w] | [1, h, w] => (*h, *w),
            s => return Err(Error::shape("to_real_image", format!("expected [1,H,W], got {s:?}"))),
        };
        RealImage::from_values(h, w, self.data.clone())
    }

    pub fn to_complex_image(&self) -> Result<ComplexImage> {
        match self.shape.as_slice() {
            [2, h, w] => {
                let n = h * w;
                let values = (0..n).map(|i| Complex64::new(self.data[i], self.data[n + i])).collect();
                ComplexImage::from_values(*h, *w, values)
            }
            s => Err(Error::shape("to_complex_image", format!("expected [2,H,W], got {s:?}"))),
        }
    }
}

#[cfg(test)]
mod tests;
