use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverfitThresholds {
    /// Trailing window `w` in epochs.
    pub window: usize,
    /// In-distribution gain over the window below which training is marginal.
    pub epsilon: f64,
    /// Out-of-distribution drop from the peak that counts as overfitting.
    pub drop: f64,
}

impl Default for OverfitThresholds {
    fn default() -> Self {
        Self {
            window: 3,
            epsilon: 1e-3,
            drop: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverfitVerdict {
    /// First epoch attaining the maximum out-of-distribution score.
    pub ood_peak_epoch: usize,
    /// First epoch `e >= w` with `id[e] - id[e - w] < epsilon`, else the last epoch.
    pub stop_epoch: usize,
    /// `id[stop] - id[stop - w]`.
    pub id_improvement: f64,
    /// `ood[peak] - ood[last]`.
    pub ood_drop: f64,
    /// `ood_drop > drop`.
    pub overfitting: bool,
}

/// Evaluates the early-stopping rule on per-epoch traces (index = epoch).
pub fn detect_distributional_overfitting(id: &[f64], ood: &[f64], t: &OverfitThresholds) -> Result<OverfitVerdict> {
    if id.len() != ood.len() {
        return Err(Error::invalid(format!(
            "trace lengths differ: {} in-distribution vs {} out-of-distribution",
            id.len(),
            ood.len()
        )));
    }
    if t.window == 0 || id.len() < t.window + 1 {
        return Err(Error::invalid(format!(
            "need window >= 1 and at least window + 1 epochs, got window {} and {} epochs",
            t.window,
            id.len()
        )));
    }
    if id.iter().chain(ood).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("overfitting traces contain non-finite values".into()));
    }
    let last = id.len() - 1;
    let mut peak = 0;
    for (e, &v) in ood.iter().enumerate() {
        if v > ood[peak] {
            peak = e;
        }
    }
    let stop = (t.window..=last)
        .find(|&e| id[e] - id[e - t.window] < t.epsilon)
        .unwrap_or(last);
    let ood_drop = ood[peak] - ood[last];
    Ok(OverfitVerdict {
        ood_peak_epoch: peak,
        stop_epoch: stop,
        id_improvement: id[stop] - id[stop - t.window],
        ood_drop,
        overfitting: ood_drop > t.drop,
    })
}
