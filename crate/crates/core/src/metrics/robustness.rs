use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordinary-least-squares line of out-of-distribution metric against
/// in-distribution metric, plus each candidate's residual above the line
/// (its effective robustness).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessFit {
    pub slope: f64,
    pub intercept: f64,
    pub effective_robustness: Vec<f64>,
}

impl RobustnessFit {
    pub fn predict(&self, id_metric: f64) -> f64 {
        self.slope * id_metric + self.intercept
    }
}

pub fn effective_robustness_fit(baseline: &[(f64, f64)], candidates: &[(f64, f64)]) -> Result<RobustnessFit> {
    if baseline.len() < 2 {
        return Err(Error::invalid("effective robustness fit needs >= 2 baseline points"));
    }
    let n = baseline.len() as f64;
    let mx = baseline.iter().map(|p| p.0).sum::<f64>() / n;
    let my = baseline.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = baseline.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = baseline.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= 0.0 {
        return Err(Error::invalid("baseline points need at least two distinct ID values"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let effective_robustness = candidates.iter().map(|&(id, ood)| ood - (slope * id + intercept)).collect();
    Ok(RobustnessFit {
        slope,
        intercept,
        effective_robustness,
    })
}

/// Sample Pearson correlation coefficient.
pub fn pearson_corr(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::invalid("pearson_corr inputs differ in length"));
    }
    if xs.len() < 2 {
        return Err(Error::invalid("pearson_corr needs at least two points"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::invalid("pearson_corr undefined for zero variance"));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}
