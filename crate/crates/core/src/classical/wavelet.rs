//! Orthonormal multi-level 2D Haar transform in the Mallat layout: after
//! each level the approximation band occupies the top-left quarter of the
//! previous band.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::image::ComplexImage;

fn check_levels(height: usize, width: usize, levels: usize) -> Result<()> {
    if levels == 0 {
        return Err(Error::invalid("wavelet levels must be >= 1"));
    }
    let block = 1usize.checked_shl(levels as u32).filter(|b| *b <= height.max(width));
    match block {
        Some(b) if height % b == 0 && width % b == 0 => Ok(()),
        _ => Err(Error::Extent(format!(
            "{height}x{width} is not divisible by 2^{levels} for a {levels}-level Haar transform"
        ))),
    }
}

fn analysis(line: &mut [Complex64], scratch: &mut Vec<Complex64>) {
    let half = line.len() / 2;
    scratch.clear();
    scratch.extend_from_slice(line);
    for i in 0..half {
        let (a, b) = (scratch[2 * i], scratch[2 * i + 1]);
        line[i] = (a + b) * std::f64::consts::FRAC_1_SQRT_2;
        line[half + i] = (a - b) * std::f64::consts::FRAC_1_SQRT_2;
    }
}

fn synthesis(line: &mut [Complex64], scratch: &mut Vec<Complex64>) {
    let half = line.len() / 2;
    scratch.clear();
    scratch.extend_from_slice(line);
    for i in 0..half {
        let (s, d) = (scratch[i], scratch[half + i]);
        line[2 * i] = (s + d) * std::f64::consts::FRAC_1_SQRT_2;
        line[2 * i + 1] = (s - d) * std::f64::consts::FRAC_1_SQRT_2;
    }
}

/// Applies `op` to every row and then every column of the top-left `h x w`
/// block (or columns first, for the inverse).
fn block_pass(img: &mut ComplexImage, h: usize, w: usize, inverse: bool) {
    let op = if inverse { synthesis } else { analysis };
    let stride = img.width;
    let mut scratch = Vec::new();
    let mut col = vec![Complex64::new(0.0, 0.0); h];
    let mut rows = |img: &mut ComplexImage| {
        for r in 0..h {
            op(&mut img.values[r * stride..r * stride + w], &mut scratch);
        }
    };
    let mut cols = |img: &mut ComplexImage, scratch: &mut Vec<Complex64>| {
        for c in 0..w {
            for r in 0..h {
                col[r] = img.values[r * stride + c];
            }
            op(&mut col, scratch);
            for r in 0..h {
                img.values[r * stride + c] = col[r];
            }
        }
    };
    if inverse {
        let mut s = Vec::new();
        cols(img, &mut s);
        rows(img);
    } else {
        rows(img);
        let mut s = Vec::new();
        cols(img, &mut s);
    }
}

pub fn haar_dwt(image: &ComplexImage, levels: usize) -> Result<ComplexImage> {
    check_levels(image.height, image.width, levels)?;
    let mut out = image.clone();
    for l in 0..levels {
        block_pass(&mut out, image.height >> l, image.width >> l, false);
    }
    Ok(out)
}

pub fn haar_idwt(coeffs: &ComplexImage, levels: usize) -> Result<ComplexImage> {
    check_levels(coeffs.height, coeffs.width, levels)?;
    let mut out = coeffs.clone();
    for l in (0..levels).rev() {
        block_pass(&mut out, coeffs.height >> l, coeffs.width >> l, true);
    }
    Ok(out)
}

/// Proximal operator of `t |.|`: shrinks the magnitude by `t`, keeps the phase.
pub fn soft_threshold(v: Complex64, t: f64) -> Complex64 {
    let m = v.norm();
    if m <= t {
        Complex64::new(0.0, 0.0)
    } else {
        v * (1.0 - t / m)
    }
}
