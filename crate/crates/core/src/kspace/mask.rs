//! Cartesian column masks: a fully sampled centered ACS block plus
//! equispaced lines with a random offset.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Default fraction of fully sampled central columns.
pub const DEFAULT_CENTER_FRACTION: f64 = 0.08;

/// Column-wise sampling mask; every sampled column is fully acquired along
/// the readout (row) direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingMask {
    pub width: usize,
    pub sampled: Vec<bool>,
    pub acceleration: f64,
    pub center_fraction: f64,
    pub offset: usize,
    /// Number of ACS columns, `round(center_fraction * width)`.
    pub n_acs: usize,
    /// Column budget outside the ACS block, `round(width / R) - n_acs`.
    pub n_rem: usize,
    /// Stride between equispaced columns (in non-ACS column index space).
    pub stride: usize,
}

impl SamplingMask {
    pub fn full(width: usize) -> Self {
        Self {
            width,
            sampled: vec![true; width],
            acceleration: 1.0,
            center_fraction: 1.0,
            offset: 0,
            n_acs: width,
            n_rem: 0,
            stride: 1,
        }
    }

    /// Builds a mask directly from a column pattern (e.g. after
    /// interleaved upsampling).
    pub fn from_columns(sampled: Vec<bool>) -> Self {
        let width = sampled.len();
        let count = sampled.iter().filter(|&&s| s).count().max(1);
        Self {
            width,
            acceleration: width as f64 / count as f64,
            center_fraction: 0.0,
            offset: 0,
            n_acs: 0,
            n_rem: count,
            stride: 1,
            sampled,
        }
    }

    pub fn count(&self) -> usize {
        self.sampled.iter().filter(|&&s| s).count()
    }

    /// First column of the ACS block.
    pub fn acs_start(&self) -> usize {
        acs_start(self.width, self.n_acs)
    }

    #[inline]
    pub fn is_sampled(&self, col: usize) -> bool {
        self.sampled[col]
    }
}

fn acs_start(width: usize, n_acs: usize) -> usize {
    (width / 2).saturating_sub(n_acs / 2)
}

/// Equispaced mask with a centered ACS block.
///
/// `n_acs = round(c * width)` central columns are always sampled. The
/// remaining budget `n_rem = round(width / R) - n_acs` is spent by walking the
/// non-ACS columns in index order with stride `floor((width - n_acs) / n_rem)`
/// (at least 1), starting at a uniform offset in `[0, stride)`, and stopping
/// once `n_rem` columns are taken. The total is therefore exactly
/// `round(width / R)`.
pub fn make_equispaced_mask<R: Rng + ?Sized>(
    width: usize,
    acceleration: f64,
    center_fraction: f64,
    rng: &mut R,
) -> Result<SamplingMask> {
    if width == 0 {
        return Err(Error::invalid("mask width must be positive"));
    }
    if !(acceleration >= 1.0) || !acceleration.is_finite() {
        return Err(Error::invalid(format!("acceleration {acceleration} must be >= 1")));
    }
    if !(center_fraction > 0.0 && center_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "center fraction {center_fraction} must lie in (0, 1)"
        )));
    }
    let n_acs = (center_fraction * width as f64).round() as usize;
    if acceleration == 1.0 {
        return Ok(SamplingMask {
            width,
            sampled: vec![true; width],
            acceleration,
            center_fraction,
            offset: 0,
            n_acs,
            n_rem: width - n_acs.min(width),
            stride: 1,
        });
    }
    let target = (width as f64 / acceleration).round() as i64;
    let n_rem = target - n_acs as i64;
    if n_rem <= 0 {
        return Err(Error::invalid(format!(
            "infeasible mask budget: round({width}/{acceleration}) = {target} does not exceed {n_acs} ACS columns"
        )));
    }
    let n_rem = n_rem as usize;
    let start = acs_start(width, n_acs);
    let outer: Vec<usize> = (0..width)
        .filter(|&c| c < start || c >= start + n_acs)
        .collect();
    let stride = (outer.len() / n_rem).max(1);
    let offset = rng.gen_range(0..stride);

    let mut sampled = vec![false; width];
    for s in sampled.iter_mut().skip(start).take(n_acs) {
        *s = true;
    }
    for &c in outer.iter().skip(offset).step_by(stride).take(n_rem) {
        sampled[c] = true;
    }
    Ok(SamplingMask {
        width,
        sampled,
        acceleration,
        center_fraction,
        offset,
        n_acs,
        n_rem,
        stride,
    })
}

/// How masks are drawn during training and evaluation.
///
/// Training draws a fresh mask per mini-batch; evaluation fixes one mask per
/// volume so every slice of the volume sees the same pattern.
#[derive(Debug, Clone, Copy)]
pub struct MaskPolicy {
    pub seed: u64,
    pub center_fraction: f64,
}

impl MaskPolicy {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            center_fraction: DEFAULT_CENTER_FRACTION,
        }
    }

    pub fn batch_mask(&self, width: usize, acceleration: f64, step: u64) -> Result<SamplingMask> {
        let mut rng = seed::stream(seed::derive(self.seed, &[0x6261_7463, step]), 0);
        make_equispaced_mask(width, acceleration, self.center_fraction, &mut rng)
    }

    pub fn volume_mask(&self, width: usize, acceleration: f64, volume: u64) -> Result<SamplingMask> {
        let mut rng = seed::stream(seed::derive(self.seed, &[0x766f_6c75, volume]), 0);
        make_equispaced_mask(width, acceleration, self.center_fraction, &mut rng)
    }
}
