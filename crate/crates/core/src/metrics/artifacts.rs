use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::RealImage;

/// Raised when the moments of a reconstruction could only be partially
/// matched to the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationFlag {
    /// The reconstruction is constant but the target is not; only the mean
    /// was matched.
    ZeroVarianceRecon,
}

impl NormalizationFlag {
    pub fn as_str(&self) -> &'static str {
        match self {
            NormalizationFlag::ZeroVarianceRecon => "zero_variance_recon",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub image: RealImage,
    pub flag: Option<NormalizationFlag>,
}

/// Affinely maps `recon` so its mean and (population) variance equal the
/// target's.
///
/// A constant target only gets its mean matched (the affine map then
/// collapses the reconstruction to that constant). A constant reconstruction
/// against a varying target is mean-matched and flagged.
pub fn normalize_output(recon: &RealImage, target: &RealImage) -> Result<Normalized> {
    if !recon.same_extents(target) {
        return Err(Error::Extent("normalize_output inputs differ in extents".into()));
    }
    let (mr, mt) = (recon.mean(), target.mean());
    let (sr, st) = (recon.variance().sqrt(), target.variance().sqrt());
    let mut flag = None;
    // rounding leaves a tiny spread on constant images
    let constant = sr <= 1e-12 * mr.abs().max(1.0);
    let values = if !constant {
        let gain = st / sr;
        recon.values.iter().map(|&v| (v - mr) * gain + mt).collect()
    } else {
        if st > 0.0 {
            flag = Some(NormalizationFlag::ZeroVarianceRecon);
        }
        vec![mt; recon.values.len()]
    };
    Ok(Normalized {
        image: RealImage {
            height: recon.height,
            width: recon.width,
            values,
        },
        flag,
    })
}

/// Variance of the 5-point Laplacian of `|target - recon|` over the interior
/// (the one-pixel border is excluded).
pub fn laplacian_artifact_score(recon: &RealImage, target: &RealImage) -> Result<f64> {
    if !recon.same_extents(target) {
        return Err(Error::Extent("artifact score inputs differ in extents".into()));
    }
    let (h, w) = (target.height, target.width);
    if h < 3 || w < 3 {
        return Err(Error::Extent(format!("artifact score needs extents >= 3, got {h}x{w}")));
    }
    let diff: Vec<f64> = target.values.iter().zip(&recon.values).map(|(t, r)| (t - r).abs()).collect();
    let at = |r: usize, c: usize| diff[r * w + c];
    let mut lap = Vec::with_capacity((h - 2) * (w - 2));
    for r in 1..h - 1 {
        for c in 1..w - 1 {
            lap.push(at(r - 1, c) + at(r + 1, c) + at(r, c - 1) + at(r, c + 1) - 4.0 * at(r, c));
        }
    }
    let n = lap.len() as f64;
    let mean = lap.iter().sum::<f64>() / n;
    Ok(lap.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    fn random(h: usize, w: usize, s: u64) -> RealImage {
        let mut rng = seed::stream(s, 0);
        RealImage::from_fn(h, w, |_, _| rng.gen::<f64>())
    }

    #[test]
    fn affine_recon_is_undone() {
        let t = random(12, 12, 1);
        let r = RealImage {
            values: t.values.iter().map(|v| 2.0 * v + 3.0).collect(),
            ..t.clone()
        };
        let n = normalize_output(&r, &t).unwrap();
        assert!(n.flag.is_none());
        for (a, b) in n.image.values.iter().zip(&t.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn moments_match_and_idempotent() {
        let t = random(10, 14, 2);
        let r = random(10, 14, 3);
        let n = normalize_output(&r, &t).unwrap().image;
        assert!((n.mean() - t.mean()).abs() < 1e-12);
        assert!((n.variance() - t.variance()).abs() < 1e-12);
        let again = normalize_output(&n, &t).unwrap().image;
        for (a, b) in again.values.iter().zip(&n.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_recon_is_flagged() {
        let t = random(8, 8, 4);
        let r = RealImage::from_fn(8, 8, |_, _| 0.3);
        let n = normalize_output(&r, &t).unwrap();
        assert_eq!(n.flag, Some(NormalizationFlag::ZeroVarianceRecon));
        assert!((n.image.mean() - t.mean()).abs() < 1e-12);
    }

    #[test]
    fn laplacian_fixtures() {
        let t = random(9, 9, 5);
        assert_eq!(laplacian_artifact_score(&t, &t).unwrap(), 0.0);
        // |t - r| is an affine ramp
        let r = RealImage::from_fn(9, 9, |row, col| t.get(row, col) - (1.0 + 0.5 * row as f64 + 0.25 * col as f64));
        assert!(laplacian_artifact_score(&r, &t).unwrap() < 1e-20);
    }

    #[test]
    fn checkerboard_matches_direct_oracle() {
        let t = RealImage::zeros(8, 8);
        let r = RealImage::from_fn(8, 8, |row, col| if (row + col) % 2 == 0 { 1.0 } else { 0.0 });
        // interior Laplacian of the unit checkerboard is -4 on ones and +4 on
        // zeros, 18 of each among the 6x6 interior pixels: variance 16
        assert!((laplacian_artifact_score(&r, &t).unwrap() - 16.0).abs() < 1e-12);
    }

    #[test]
    fn score_ignores_constant_offsets() {
        let t = random(10, 10, 6);
        let r = random(10, 10, 7);
        // keep diff signs fixed by shifting far away
        let r1 = RealImage { values: r.values.iter().map(|v| v - 5.0).collect(), ..r.clone() };
        let r2 = RealImage { values: r.values.iter().map(|v| v - 7.5).collect(), ..r.clone() };
        let a = laplacian_artifact_score(&r1, &t).unwrap();
        let b = laplacian_artifact_score(&r2, &t).unwrap();
        assert!((a - b).abs() < 1e-10);
    }
}
