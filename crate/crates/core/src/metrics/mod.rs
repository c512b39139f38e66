//! Evaluation metrics: SSIM (global and regional), output normalization,
//! artifact scoring, dataset similarity and effective-robustness fits.

mod artifacts;
mod features;
mod robustness;
mod ssim;

pub use artifacts::{laplacian_artifact_score, normalize_output, NormalizationFlag, Normalized};
pub use features::{extract_features, nn_similarity, FeatureConfig, FeatureSet, SimilarityReport, HISTOGRAM_BINS};
pub use robustness::{effective_robustness_fit, pearson_corr, RobustnessFit};
pub use ssim::{region_ssim, ssim, ssim_and_grad, ssim_with_range, DataRange, Region, SsimConfig};

use crate::error::Result;
use crate::image::RealImage;
use crate::par;

/// Mean SSIM over `(recon, target)` pairs, evaluated in parallel and reduced
/// in input order.
pub fn mean_ssim(pairs: &[(RealImage, RealImage)], cfg: &SsimConfig) -> Result<f64> {
    let values = par::try_map_indexed(pairs.len(), |i| ssim(&pairs[i].0, &pairs[i].1, cfg))?;
    Ok(values.iter().sum::<f64>() / values.len().max(1) as f64)
}
