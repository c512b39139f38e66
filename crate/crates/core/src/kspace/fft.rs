//! Centered, unitary discrete Fourier transforms.
//!
//! DC sits at index `n / 2` (integer division) on both sides of the transform,
//! i.e. `fft2c(x) = fftshift(fft(ifftshift(x))) / sqrt(N)`.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::image::ComplexImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, direction: Direction) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        match direction {
            Direction::Forward => p.plan_fft_forward(n),
            Direction::Inverse => p.plan_fft_inverse(n),
        }
    })
}

/// In-place centered unitary 1D transform.
pub fn fft1c_inplace(buf: &mut [Complex64], direction: Direction) {
    let n = buf.len();
    if n == 0 {
        return;
    }
    buf.rotate_left(n / 2);
    plan(n, direction).process(buf);
    buf.rotate_right(n / 2);
    let scale = 1.0 / (n as f64).sqrt();
    for v in buf.iter_mut() {
        *v *= scale;
    }
}

/// Centered unitary 2D transform of a row-major `height` x `width` buffer.
pub fn fft2c_inplace(values: &mut [Complex64], height: usize, width: usize, direction: Direction) {
    debug_assert_eq!(values.len(), height * width);
    if width > 0 {
        let row_fft = plan(width, direction);
        for row in values.chunks_exact_mut(width) {
            row.rotate_left(width / 2);
            row_fft.process(row);
            row.rotate_right(width / 2);
        }
    }
    let mut column = vec![Complex64::new(0.0, 0.0); height];
    let col_fft = plan(height, direction);
    for c in 0..width {
        for r in 0..height {
            column[r] = values[r * width + c];
        }
        column.rotate_left(height / 2);
        col_fft.process(&mut column);
        column.rotate_right(height / 2);
        for r in 0..height {
            values[r * width + c] = column[r];
        }
    }
    let scale = 1.0 / ((height * width) as f64).sqrt();
    for v in values.iter_mut() {
        *v *= scale;
    }
}

/// Centered unitary 2D transform of an image.
pub fn fft2c(image: &ComplexImage, direction: Direction) -> ComplexImage {
    let mut out = image.clone();
    fft2c_inplace(&mut out.values, out.height, out.width, direction);
    out
}

pub fn ifft2c(image: &ComplexImage) -> ComplexImage {
    fft2c(image, Direction::Inverse)
}
