//! Subspace denoising toy problem: signals uniform on the unit sphere of a
//! `d`-dimensional subspace, observed in white noise whose level depends on
//! the source distribution.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Which {
    P,
    Q,
    /// P or Q with probability one half each.
    Mixture,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceWorld {
    pub n: usize,
    pub d: usize,
    /// `n x d` with orthonormal columns.
    pub basis: DMatrix<f64>,
    pub sigma_p: f64,
    pub sigma_q: f64,
    pub seed: u64,
}

impl SubspaceWorld {
    /// Draws a random orthonormal basis from the QR factor of a Gaussian matrix.
    pub fn new(n: usize, d: usize, sigma_p: f64, sigma_q: f64, seed: u64) -> Result<Self> {
        if d == 0 || d >= n {
            return Err(Error::invalid(format!("need 1 <= d < n, got n={n}, d={d}")));
        }
        for s in [sigma_p, sigma_q] {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::invalid(format!("noise level {s} must be finite and >= 0")));
            }
        }
        let mut rng = seed::stream(seed, 0);
        let g = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let basis = g.qr().q();
        Ok(Self {
            n,
            d,
            basis,
            sigma_p,
            sigma_q,
            seed,
        })
    }

    /// Noise variance per coordinate; the mixture uses the average variance.
    pub fn noise_variance(&self, which: Which) -> f64 {
        match which {
            Which::P => self.sigma_p * self.sigma_p,
            Which::Q => self.sigma_q * self.sigma_q,
            Which::Mixture => 0.5 * (self.sigma_p * self.sigma_p + self.sigma_q * self.sigma_q),
        }
    }

    fn projector(&self) -> DMatrix<f64> {
        &self.basis * self.basis.transpose()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToySample {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    /// `P` or `Q`, never `Mixture`.
    pub source: Which,
}

fn draw<R: Rng + ?Sized>(world: &SubspaceWorld, which: Which, rng: &mut R) -> ToySample {
    let source = match which {
        Which::Mixture => {
            if rng.gen_bool(0.5) {
                Which::P
            } else {
                Which::Q
            }
        }
        w => w,
    };
    let sigma = world.noise_variance(source).sqrt();
    let g = DVector::from_fn(world.d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let x = &world.basis * (&g / g.norm());
    let e = DVector::from_fn(world.n, |_, _| sigma * rng.sample::<f64, _>(StandardNormal));
    ToySample { y: &x + e, x, source }
}

pub fn sample<R: Rng + ?Sized>(world: &SubspaceWorld, which: Which, count: usize, rng: &mut R) -> Result<Vec<ToySample>> {
    if count == 0 {
        return Err(Error::invalid("sample count must be >= 1"));
    }
    Ok((0..count).map(|_| draw(world, which, rng)).collect())
}

/// `W = c U U^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEstimator {
    pub matrix: DMatrix<f64>,
    pub shrinkage: f64,
}

impl LinearEstimator {
    pub fn apply(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.matrix * y
    }

    /// Closed-form expected squared error `(1-c)^2 + c^2 d sigma^2` on `which`.
    pub fn population_mse(&self, world: &SubspaceWorld, which: Which) -> f64 {
        let c = self.shrinkage;
        (1.0 - c).powi(2) + c * c * world.d as f64 * world.noise_variance(which)
    }
}

/// MSE-optimal linear map for the population model of `which`:
/// `U U^T / (1 + d sigma^2)`.
pub fn fit_linear(world: &SubspaceWorld, which: Which) -> LinearEstimator {
    let c = 1.0 / (1.0 + world.d as f64 * world.noise_variance(which));
    LinearEstimator {
        matrix: world.projector() * c,
        shrinkage: c,
    }
}

/// Noise-adaptive shrinkage: the noise level is read off the component of
/// `y` orthogonal to the subspace and fed into the linear shrinkage rule.
pub fn estimate_nonlinear(world: &SubspaceWorld, y: &DVector<f64>) -> DVector<f64> {
    let coeffs = world.basis.transpose() * y;
    let in_plane = &world.basis * &coeffs;
    let sigma2 = (y - &in_plane).norm_squared() / (world.n - world.d) as f64;
    in_plane / (1.0 + world.d as f64 * sigma2)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Estimator<'a> {
    Linear(&'a LinearEstimator),
    Nonlinear,
}

impl Estimator<'_> {
    fn apply(&self, world: &SubspaceWorld, y: &DVector<f64>) -> DVector<f64> {
        match self {
            Estimator::Linear(w) => w.apply(y),
            Estimator::Nonlinear => estimate_nonlinear(world, y),
        }
    }
}

const CHUNK: usize = 4096;

/// Per-sample squared errors `||x̂ - x||^2` for every estimator on the same
/// draws. Samples are generated in fixed-size chunks with their own seeded
/// streams, so results do not depend on the thread count.
pub fn squared_errors(
    world: &SubspaceWorld,
    which: Which,
    estimators: &[Estimator<'_>],
    samples: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if samples == 0 {
        return Err(Error::invalid("sample count must be >= 1"));
    }
    let chunks = samples.div_ceil(CHUNK);
    let parts = par::map_indexed(chunks, |c| {
        let mut rng = seed::stream(seed, c as u64);
        let len = CHUNK.min(samples - c * CHUNK);
        let mut out = vec![Vec::with_capacity(len); estimators.len()];
        for _ in 0..len {
            let s = draw(world, which, &mut rng);
            for (k, est) in estimators.iter().enumerate() {
                out[k].push((est.apply(world, &s.y) - &s.x).norm_squared());
            }
        }
        out
    });
    let mut errs = vec![Vec::with_capacity(samples); estimators.len()];
    for part in parts {
        for (dst, src) in errs.iter_mut().zip(part) {
            dst.extend(src);
        }
    }
    Ok(errs)
}

/// Sample mean and its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
}

impl McEstimate {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        Self {
            mean,
            std_err: (var / n).sqrt(),
        }
    }

    /// Statistics of the paired difference `a - b`.
    pub fn paired(a: &[f64], b: &[f64]) -> Self {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        Self::of(&d)
    }
}

/// MSE of the three estimators on one distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistributionMse {
    /// Linear estimator fit to this distribution alone.
    pub matched_linear: McEstimate,
    /// Linear estimator fit to the P/Q mixture.
    pub pooled_linear: McEstimate,
    pub nonlinear: McEstimate,
    /// `pooled - matched`, paired over the same draws.
    pub pooled_excess: McEstimate,
    /// `nonlinear - matched`, paired over the same draws.
    pub nonlinear_excess: McEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyReport {
    pub n: usize,
    pub d: usize,
    pub sigma_p: f64,
    pub sigma_q: f64,
    pub samples: usize,
    pub seed: u64,
    pub p: DistributionMse,
    pub q: DistributionMse,
}

/// Monte-Carlo comparison of matched, pooled and nonlinear estimators on P and Q.
pub fn compare_estimators(world: &SubspaceWorld, samples: usize, seed: u64) -> Result<ToyReport> {
    let pooled = fit_linear(world, Which::Mixture);
    let eval = |which: Which, stream: u64| -> Result<DistributionMse> {
        let matched = fit_linear(world, which);
        let errs = squared_errors(
            world,
            which,
            &[Estimator::Linear(&matched), Estimator::Linear(&pooled), Estimator::Nonlinear],
            samples,
            seed::derive(seed, &[stream]),
        )?;
        Ok(DistributionMse {
            matched_linear: McEstimate::of(&errs[0]),
            pooled_linear: McEstimate::of(&errs[1]),
            nonlinear: McEstimate::of(&errs[2]),
            pooled_excess: McEstimate::paired(&errs[1], &errs[0]),
            nonlinear_excess: McEstimate::paired(&errs[2], &errs[0]),
        })
    };
    Ok(ToyReport {
        n: world.n,
        d: world.d,
        sigma_p: world.sigma_p,
        sigma_q: world.sigma_q,
        samples,
        seed,
        p: eval(Which::P, 0)?,
        q: eval(Which::Q, 1)?,
    })
}
