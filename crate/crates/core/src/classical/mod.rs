//! ℓ1-wavelet regularized least-squares reconstruction (FISTA) and
//! per-distribution λ tuning.

mod wavelet;

pub use wavelet::{haar_dwt, haar_idwt, soft_threshold};

use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::image::ComplexImage;
use crate::kspace::{apply_adjoint, apply_forward, CoilSensitivities, KSpaceData, NoiseModel, SamplingMask};
use crate::metrics::{ssim, SsimConfig};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FistaConfig {
    pub lambda: f64,
    pub max_iters: usize,
    /// `1/L`; `1.0` is safe because `||A^H A|| <= 1` for normalized coils.
    pub step_size: f64,
    /// Stop once the relative objective change falls to this value.
    pub tolerance: f64,
    pub wavelet_levels: usize,
}

impl Default for FistaConfig {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            max_iters: 200,
            step_size: 1.0,
            tolerance: 1e-6,
            wavelet_levels: 3,
        }
    }
}

impl FistaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda {} must be finite and >= 0", self.lambda)));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be >= 1"));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::invalid(format!("step size {} must be positive", self.step_size)));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::invalid("tolerance must be >= 0"));
        }
        if self.wavelet_levels == 0 {
            return Err(Error::invalid("wavelet levels must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FistaResult {
    pub image: ComplexImage,
    /// Objective after each iteration.
    pub objective_trace: Vec<f64>,
    pub iterations_run: usize,
}

struct Problem<'a> {
    y: &'a KSpaceData,
    s: &'a CoilSensitivities,
    mask: &'a SamplingMask,
    cfg: &'a FistaConfig,
}

impl Problem<'_> {
    fn residual(&self, x: &ComplexImage) -> Result<KSpaceData> {
        let mut r = apply_forward(x, self.s, self.mask, &NoiseModel::none())?;
        for (rc, yc) in r.coils.iter_mut().zip(&self.y.coils) {
            for (a, b) in rc.values.iter_mut().zip(&yc.values) {
                *a -= b;
            }
        }
        Ok(r)
    }

    fn objective(&self, x: &ComplexImage, residual: &KSpaceData) -> Result<f64> {
        let l1: f64 = if self.cfg.lambda > 0.0 {
            haar_dwt(x, self.cfg.wavelet_levels)?.values.iter().map(|c| c.norm()).sum()
        } else {
            0.0
        };
        Ok(0.5 * residual.norm_sqr() + self.cfg.lambda * l1)
    }

    /// `prox(z - t A^H(Az - y))` with the wavelet-domain soft threshold.
    fn step(&self, z: &ComplexImage) -> Result<ComplexImage> {
        let grad = apply_adjoint(&self.residual(z)?, self.s, self.mask)?;
        let t = self.cfg.step_size;
        let mut v = z.clone();
        for (a, g) in v.values.iter_mut().zip(&grad.values) {
            *a -= g * t;
        }
        if self.cfg.lambda == 0.0 {
            return Ok(v);
        }
        let mut c = haar_dwt(&v, self.cfg.wavelet_levels)?;
        let thr = t * self.cfg.lambda;
        c.values.iter_mut().for_each(|x| *x = soft_threshold(*x, thr));
        haar_idwt(&c, self.cfg.wavelet_levels)
    }

    fn evaluate(&self, x: &ComplexImage, iteration: usize) -> Result<f64> {
        let f = self.objective(x, &self.residual(x)?)?;
        if !f.is_finite() {
            return Err(Error::NonFinite(format!("FISTA objective at iteration {iteration} is {f}")));
        }
        Ok(f)
    }
}

/// Minimizes `1/2 sum_i ||M F S_i x - y_i||^2 + lambda ||W x||_1` (Haar `W`)
/// starting from `A^H y`.
///
/// Momentum is reset whenever an accelerated step would increase the
/// objective; the iterate then takes a plain proximal-gradient step from the
/// last accepted point. If even that step does not decrease the objective
/// (only possible through round-off near the optimum) the run ends, so the
/// reported trace is non-increasing.
pub fn fista_l1(y: &KSpaceData, s: &CoilSensitivities, mask: &SamplingMask, cfg: &FistaConfig) -> Result<FistaResult> {
    cfg.validate()?;
    let problem = Problem { y, s, mask, cfg };
    let mut x = apply_adjoint(y, s, mask)?;
    haar_dwt(&x, cfg.wavelet_levels)?;
    let mut f = problem.evaluate(&x, 0)?;
    let mut z = x.clone();
    let mut t = 1.0f64;
    let mut trace = Vec::with_capacity(cfg.max_iters);

    for k in 1..=cfg.max_iters {
        let mut candidate = problem.step(&z)?;
        let mut f_new = problem.evaluate(&candidate, k)?;
        if f_new > f {
            t = 1.0;
            candidate = problem.step(&x)?;
            f_new = problem.evaluate(&candidate, k)?;
            if f_new > f {
                break;
            }
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        z = candidate.clone();
        for ((zv, c), p) in z.values.iter_mut().zip(&candidate.values).zip(&x.values) {
            *zv = c + (c - p) * beta;
        }
        t = t_next;
        let change = (f - f_new).abs();
        x = candidate;
        trace.push(f_new);
        let done = change <= cfg.tolerance * f.abs() || f_new == 0.0;
        f = f_new;
        if done {
            break;
        }
    }
    Ok(FistaResult {
        image: x,
        iterations_run: trace.len(),
        objective_trace: trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneConfig {
    pub fista: FistaConfig,
    pub acceleration: f64,
    pub mask_seed: u64,
    pub ssim: SsimConfig,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            fista: FistaConfig::default(),
            acceleration: 4.0,
            mask_seed: 0,
            ssim: SsimConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaScore {
    pub lambda: f64,
    pub mean_ssim: f64,
    pub n_items: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaTuning {
    pub best_lambda: f64,
    /// One entry per grid value, in grid order.
    pub scores: Vec<LambdaScore>,
}

/// Reconstructs every item at every grid value and picks the λ with the
/// highest mean SSIM of `|x̂|` against the target; ties go to the smaller λ.
pub fn tune_lambda(dataset: &Dataset, grid: &[f64], cfg: &TuneConfig) -> Result<LambdaTuning> {
    if grid.is_empty() {
        return Err(Error::invalid("lambda grid is empty"));
    }
    if dataset.is_empty() {
        return Err(Error::invalid("dataset is empty"));
    }
    for &l in grid {
        FistaConfig { lambda: l, ..cfg.fista }.validate()?;
    }
    let samples = par::try_map_indexed(dataset.len(), |i| dataset.eval_sample(i, cfg.acceleration, cfg.mask_seed))?;
    let n = dataset.len();
    let scores = par::try_map_indexed(n * grid.len(), |p| {
        let (g, i) = (p / n, p % n);
        let s = &samples[i];
        let fcfg = FistaConfig { lambda: grid[g], ..cfg.fista };
        let r = fista_l1(&s.kspace, &dataset.items[i].sensitivities, &s.mask, &fcfg)?;
        ssim(&r.image.abs(), &s.target, &cfg.ssim)
    })?;
    let scores: Vec<LambdaScore> = grid
        .iter()
        .enumerate()
        .map(|(g, &lambda)| LambdaScore {
            lambda,
            mean_ssim: scores[g * n..(g + 1) * n].iter().sum::<f64>() / n as f64,
            n_items: n,
        })
        .collect();
    let best = scores
        .iter()
        .fold(None::<&LambdaScore>, |best, s| match best {
            Some(b) if b.mean_ssim > s.mean_ssim || (b.mean_ssim == s.mean_ssim && b.lambda <= s.lambda) => Some(b),
            _ => Some(s),
        })
        .expect("grid is non-empty");
    Ok(LambdaTuning {
        best_lambda: best.lambda,
        scores,
    })
}

#[cfg(test)]
mod tests;
