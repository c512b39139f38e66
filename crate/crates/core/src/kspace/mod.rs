//! Multi-coil Cartesian measurement model `y_i = M F S_i x + z_i`, its
//! adjoint, coil combination and k-space utilities.

mod coils;
mod fft;
mod mask;

pub use coils::{simulate_sensitivities, CoilSensitivities};
pub(crate) use coils::lowpass_field;
pub use fft::{fft1c_inplace, fft2c, fft2c_inplace, ifft2c, Direction};
pub use mask::{make_equispaced_mask, MaskPolicy, SamplingMask, DEFAULT_CENTER_FRACTION};

use num_complex::Complex64;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ComplexImage, ComplexVolume, RealImage};
use crate::seed;

/// Per-coil k-space arrays of identical extents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSpaceData {
    pub coils: Vec<ComplexImage>,
}

impl KSpaceData {
    pub fn new(coils: Vec<ComplexImage>) -> Result<Self> {
        let first = coils
            .first()
            .ok_or_else(|| Error::invalid("k-space needs at least one coil"))?;
        if coils.iter().any(|c| !c.same_extents(first)) {
            return Err(Error::Extent("coil k-spaces have differing extents".into()));
        }
        Ok(Self { coils })
    }

    pub fn num_coils(&self) -> usize {
        self.coils.len()
    }

    pub fn height(&self) -> usize {
        self.coils[0].height
    }

    pub fn width(&self) -> usize {
        self.coils[0].width
    }

    pub fn norm_sqr(&self) -> f64 {
        self.coils.iter().map(ComplexImage::norm_sqr).sum()
    }

    pub fn dot(&self, other: &KSpaceData) -> Complex64 {
        self.coils.iter().zip(&other.coils).map(|(a, b)| a.dot(b)).sum()
    }
}

/// Additive white complex Gaussian noise with per-coil standard deviation
/// `sigma` (each of the real and imaginary parts has variance `sigma^2 / 2`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn none() -> Self {
        Self { sigma: 0.0, seed: 0 }
    }
}

fn check_extents(height: usize, width: usize, s: &CoilSensitivities, mask: &SamplingMask) -> Result<()> {
    if s.height() != height || s.width() != width {
        return Err(Error::Extent(format!(
            "sensitivities are {}x{}, data is {height}x{width}",
            s.height(),
            s.width()
        )));
    }
    if mask.width != width {
        return Err(Error::Extent(format!(
            "mask has {} columns, data has {width}",
            mask.width
        )));
    }
    Ok(())
}

fn apply_mask(k: &mut ComplexImage, mask: &SamplingMask) {
    let zero = Complex64::new(0.0, 0.0);
    for row in k.values.chunks_exact_mut(k.width) {
        for (v, &m) in row.iter_mut().zip(&mask.sampled) {
            if !m {
                *v = zero;
            }
        }
    }
}

/// `y_i = M F (S_i x) + z_i` for every coil.
pub fn apply_forward(
    x: &ComplexImage,
    s: &CoilSensitivities,
    mask: &SamplingMask,
    noise: &NoiseModel,
) -> Result<KSpaceData> {
    check_extents(x.height, x.width, s, mask)?;
    let coils = s
        .maps
        .iter()
        .map(|map| {
            let mut k = ComplexImage {
                height: x.height,
                width: x.width,
                values: x.values.iter().zip(&map.values).map(|(a, b)| a * b).collect(),
            };
            fft2c_inplace(&mut k.values, k.height, k.width, Direction::Forward);
            apply_mask(&mut k, mask);
            k
        })
        .collect();
    let y = KSpaceData { coils };
    add_noise(&y, mask, noise)
}

/// `x = sum_i conj(S_i) F^-1 (M y_i)`.
pub fn apply_adjoint(y: &KSpaceData, s: &CoilSensitivities, mask: &SamplingMask) -> Result<ComplexImage> {
    check_extents(y.height(), y.width(), s, mask)?;
    if y.num_coils() != s.coils() {
        return Err(Error::Extent(format!(
            "{} k-space coils but {} sensitivity maps",
            y.num_coils(),
            s.coils()
        )));
    }
    let mut out = ComplexImage::zeros(y.height(), y.width());
    for (k, map) in y.coils.iter().zip(&s.maps) {
        let mut img = k.clone();
        apply_mask(&mut img, mask);
        fft2c_inplace(&mut img.values, img.height, img.width, Direction::Inverse);
        for ((o, v), sv) in out.values.iter_mut().zip(&img.values).zip(&map.values) {
            *o += sv.conj() * v;
        }
    }
    Ok(out)
}

/// `A^H A x` without noise.
pub fn normal_op(x: &ComplexImage, s: &CoilSensitivities, mask: &SamplingMask) -> Result<ComplexImage> {
    let y = apply_forward(x, s, mask, &NoiseModel::none())?;
    apply_adjoint(&y, s, mask)
}

/// Pixelwise root-sum-of-squares coil combination.
pub fn rss(coil_images: &[ComplexImage]) -> Result<RealImage> {
    let first = coil_images
        .first()
        .ok_or_else(|| Error::invalid("rss of an empty coil list"))?;
    if coil_images.iter().any(|c| !c.same_extents(first)) {
        return Err(Error::Extent("rss inputs have differing extents".into()));
    }
    let values = (0..first.len())
        .map(|p| coil_images.iter().map(|c| c.values[p].norm_sqr()).sum::<f64>().sqrt())
        .collect();
    RealImage::from_values(first.height, first.width, values)
}

/// RSS of the per-coil inverse transforms of (already zero-filled) k-space.
pub fn zero_filled_rss(y: &KSpaceData) -> RealImage {
    let images: Vec<ComplexImage> = y.coils.iter().map(ifft2c).collect();
    rss(&images).expect("k-space has at least one coil")
}

/// Adds complex Gaussian noise on sampled columns only.
pub fn add_noise(y: &KSpaceData, mask: &SamplingMask, noise: &NoiseModel) -> Result<KSpaceData> {
    if !(noise.sigma >= 0.0) || !noise.sigma.is_finite() {
        return Err(Error::invalid(format!("noise sigma {} must be finite and >= 0", noise.sigma)));
    }
    if mask.width != y.width() {
        return Err(Error::Extent("noise mask width differs from k-space".into()));
    }
    if noise.sigma == 0.0 {
        return Ok(y.clone());
    }
    let normal = Normal::new(0.0, noise.sigma / std::f64::consts::SQRT_2).expect("finite sigma");
    let coils = y
        .coils
        .iter()
        .enumerate()
        .map(|(i, k)| {
            let mut rng = seed::stream(noise.seed, i as u64);
            let mut out = k.clone();
            for row in out.values.chunks_exact_mut(k.width) {
                for (v, &m) in row.iter_mut().zip(&mask.sampled) {
                    if m {
                        *v += Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
                    }
                }
            }
            out
        })
        .collect();
    Ok(KSpaceData { coils })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Duplicate columns (width doubles); the mask is duplicated alongside.
    Horizontal,
    /// Duplicate rows (height doubles); the column mask is unchanged.
    Vertical,
}

/// Repeats every k-space line once, adjacent to itself (`a, b -> a, a, b, b`).
pub fn interleave_upsample(y: &KSpaceData, mask: &SamplingMask, axis: Axis) -> (KSpaceData, SamplingMask) {
    match axis {
        Axis::Horizontal => {
            let coils = y
                .coils
                .iter()
                .map(|k| {
                    let mut values = Vec::with_capacity(k.len() * 2);
                    for row in k.values.chunks_exact(k.width) {
                        for v in row {
                            values.push(*v);
                            values.push(*v);
                        }
                    }
                    ComplexImage {
                        height: k.height,
                        width: k.width * 2,
                        values,
                    }
                })
                .collect();
            let sampled = mask.sampled.iter().flat_map(|&s| [s, s]).collect();
            let mut m = mask.clone();
            m.width *= 2;
            m.sampled = sampled;
            m.n_acs *= 2;
            m.n_rem *= 2;
            m.offset *= 2;
            (KSpaceData { coils }, m)
        }
        Axis::Vertical => {
            let coils = y
                .coils
                .iter()
                .map(|k| {
                    let mut values = Vec::with_capacity(k.len() * 2);
                    for row in k.values.chunks_exact(k.width) {
                        values.extend_from_slice(row);
                        values.extend_from_slice(row);
                    }
                    ComplexImage {
                        height: k.height * 2,
                        width: k.width,
                        values,
                    }
                })
                .collect();
            (KSpaceData { coils }, mask.clone())
        }
    }
}

/// Synthesizes 2D k-space views from 3D k-space by a centered unitary 1D
/// inverse transform along `axis` followed by slicing along that axis.
///
/// Each input volume is one coil; slice `d` of the output collects plane `d`
/// of every coil. The remaining two axes keep their relative order.
pub fn views_from_3d(coils: &[ComplexVolume], axis: usize) -> Result<Vec<KSpaceData>> {
    let first = coils
        .first()
        .ok_or_else(|| Error::invalid("views_from_3d needs at least one coil volume"))?;
    if axis > 2 {
        return Err(Error::invalid(format!("axis {axis} out of range")));
    }
    if coils.iter().any(|v| v.dims != first.dims) {
        return Err(Error::Extent("coil volumes have differing extents".into()));
    }
    let dims = first.dims;
    let (a, b) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let n = dims[axis];
    let mut per_coil = Vec::with_capacity(coils.len());
    for vol in coils {
        let mut data = vol.values.clone();
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        let mut idx = [0usize; 3];
        for i in 0..dims[a] {
            for j in 0..dims[b] {
                idx[a] = i;
                idx[b] = j;
                for d in 0..n {
                    idx[axis] = d;
                    line[d] = data[vol.index(idx[0], idx[1], idx[2])];
                }
                fft1c_inplace(&mut line, Direction::Inverse);
                for d in 0..n {
                    idx[axis] = d;
                    data[vol.index(idx[0], idx[1], idx[2])] = line[d];
                }
            }
        }
        per_coil.push(data);
    }
    let mut slices = Vec::with_capacity(n);
    for d in 0..n {
        let mut coil_planes = Vec::with_capacity(coils.len());
        for data in &per_coil {
            let mut plane = ComplexImage::zeros(dims[a], dims[b]);
            let mut idx = [0usize; 3];
            idx[axis] = d;
            for i in 0..dims[a] {
                for j in 0..dims[b] {
                    idx[a] = i;
                    idx[b] = j;
                    plane.set(i, j, data[first.index(idx[0], idx[1], idx[2])]);
                }
            }
            coil_planes.push(plane);
        }
        slices.push(KSpaceData { coils: coil_planes });
    }
    Ok(slices)
}

#[cfg(test)]
pub(crate) mod tests;
