//! Patch-based random-projection embeddings and nearest-neighbour dataset
//! similarity.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::RealImage;
use crate::par;
use crate::seed;

pub const HISTOGRAM_BINS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub patch_size: usize,
    pub projection_dim: usize,
    pub patches_per_item: usize,
    /// Patches whose standard deviation falls below this are treated as
    /// background/noise and dropped.
    pub noise_floor: f64,
    pub seed: u64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            patch_size: 16,
            projection_dim: 64,
            patches_per_item: 16,
            noise_floor: 0.02,
            seed: 0,
        }
    }
}

/// One unit-norm embedding per item.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub features: Vec<Vec<f64>>,
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
    n
}

/// Embeds every image.
///
/// Patch positions and the projection matrix depend only on the config seed
/// (and the image extents), so identical images always get identical
/// features. Each kept patch is mean-removed, unit-normalized and projected;
/// the item feature is the normalized mean of its patch projections.
pub fn extract_features(images: &[RealImage], cfg: &FeatureConfig) -> Result<FeatureSet> {
    if cfg.patch_size == 0 || cfg.projection_dim == 0 || cfg.patches_per_item == 0 {
        return Err(Error::invalid("feature config sizes must be positive"));
    }
    let p = cfg.patch_size;
    let dim_in = p * p;
    let mut prng = seed::stream(cfg.seed, 1);
    let projection: Vec<f64> = (0..cfg.projection_dim * dim_in)
        .map(|_| prng.sample::<f64, _>(StandardNormal))
        .collect();

    let features = par::try_map_indexed(images.len(), |item| {
        let img = &images[item];
        if img.height < p || img.width < p {
            return Err(Error::invalid(format!(
                "patch size {p} exceeds item {item} extents {}x{}",
                img.height, img.width
            )));
        }
        let mut rng = seed::stream(cfg.seed, seed::derive(2, &[img.height as u64, img.width as u64]));
        let mut acc = vec![0.0; cfg.projection_dim];
        let mut kept = 0usize;
        let mut patch = vec![0.0; dim_in];
        for _ in 0..cfg.patches_per_item {
            let r0 = rng.gen_range(0..=img.height - p);
            let c0 = rng.gen_range(0..=img.width - p);
            for r in 0..p {
                for c in 0..p {
                    patch[r * p + c] = img.get(r0 + r, c0 + c);
                }
            }
            let mean = patch.iter().sum::<f64>() / dim_in as f64;
            let sd = (patch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / dim_in as f64).sqrt();
            if sd < cfg.noise_floor || sd == 0.0 {
                continue;
            }
            for v in patch.iter_mut() {
                *v -= mean;
            }
            normalize(&mut patch);
            let mut proj: Vec<f64> = projection
                .chunks_exact(dim_in)
                .map(|row| row.iter().zip(&patch).map(|(a, b)| a * b).sum())
                .collect();
            normalize(&mut proj);
            for (a, b) in acc.iter_mut().zip(&proj) {
                *a += b;
            }
            kept += 1;
        }
        if kept == 0 || normalize(&mut acc) == 0.0 {
            return Err(Error::invalid(format!(
                "item {item}: every patch fell below the noise floor {}",
                cfg.noise_floor
            )));
        }
        Ok(acc)
    })?;
    Ok(FeatureSet { features })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub similarities: Vec<f64>,
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub mean: f64,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// For every test item, the largest cosine similarity to any training item,
/// histogrammed over 20 uniform bins on [0, 1]. Negative similarities land
/// in the first bin.
pub fn nn_similarity(test: &FeatureSet, train: &FeatureSet) -> Result<SimilarityReport> {
    if test.features.is_empty() || train.features.is_empty() {
        return Err(Error::invalid("nn_similarity needs nonempty test and train sets"));
    }
    let similarities: Vec<f64> = par::map_slice(&test.features, |t| {
        train
            .features
            .iter()
            .map(|r| cosine(t, r))
            .fold(f64::NEG_INFINITY, f64::max)
    });
    let bin_edges: Vec<f64> = (0..=HISTOGRAM_BINS).map(|i| i as f64 / HISTOGRAM_BINS as f64).collect();
    let mut counts = vec![0usize; HISTOGRAM_BINS];
    for &s in &similarities {
        let bin = ((s.max(0.0) * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
        counts[bin] += 1;
    }
    let mean = similarities.iter().sum::<f64>() / similarities.len() as f64;
    Ok(SimilarityReport {
        similarities,
        bin_edges,
        counts,
        mean,
    })
}
