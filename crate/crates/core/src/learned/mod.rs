//! Desk-scale trained reconstruction models, their training protocol and
//! checkpoints.

mod checkpoint;
mod model;
mod train;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use model::{construct_model, Model, ModelConfig, ModelInput, ModelKind};
pub use train::{
    clip_global_norm, evaluate, finetune, learning_rate, train, warmup_steps, LossKind, Monitor, MonitorTrace,
    Optimizer, TrainConfig, TrainOutput,
};

use crate::error::{Error, Result};
use crate::image::{ComplexImage, RealImage};
use crate::kspace::{interleave_upsample, Axis, CoilSensitivities, KSpaceData, SamplingMask};

/// Periodic tiling of a centered image onto doubled extents, matching the
/// image-domain effect of interleaved k-space repetition.
fn tile_centered(img: &ComplexImage) -> ComplexImage {
    let (h, w) = (img.height, img.width);
    let mut out = ComplexImage::zeros(2 * h, 2 * w);
    for r in 0..2 * h {
        for c in 0..2 * w {
            out.set(r, c, img.get((r + h - h / 2) % h, (c + w - w / 2) % w));
        }
    }
    out
}

/// Magnitude gain that interleaved repetition imposes on the centered crop:
/// `sqrt(2) |cos(pi n / 2N)|` per axis, `n` the offset from the center.
fn interleave_gain(n: usize, len: usize) -> f64 {
    let offset = n as f64 - (len / 2) as f64;
    std::f64::consts::SQRT_2 * (std::f64::consts::PI * offset / (2 * len) as f64).cos().abs()
}

/// Reconstructs one slice with a trained checkpoint.
///
/// Inputs at the training extents go straight through the model. Inputs at
/// half the training extents are interleave-repeated along both axes (coil
/// maps tiled to match), reconstructed, center-cropped, and divided by the
/// known repetition envelope. Any other extents are rejected.
pub fn infer(checkpoint: &Checkpoint, y: &KSpaceData, s: &CoilSensitivities, mask: &SamplingMask) -> Result<RealImage> {
    let model = checkpoint.model()?;
    let (th, tw) = checkpoint.extents;
    let (h, w) = (y.height(), y.width());
    if (h, w) == (th, tw) {
        return model.reconstruct(&ModelInput {
            kspace: y,
            sensitivities: s,
            mask,
        });
    }
    if (2 * h, 2 * w) != (th, tw) {
        return Err(Error::Extent(format!(
            "checkpoint was trained at {th}x{tw}; cannot reconstruct {h}x{w} input"
        )));
    }
    let (y1, m1) = interleave_upsample(y, mask, Axis::Horizontal);
    let (y2, m2) = interleave_upsample(&y1, &m1, Axis::Vertical);
    let tiled = CoilSensitivities::new(s.maps.iter().map(tile_centered).collect())?;
    let full = model.reconstruct(&ModelInput {
        kspace: &y2,
        sensitivities: &tiled,
        mask: &m2,
    })?;
    let crop = full.center_crop(h, w)?;
    Ok(RealImage::from_fn(h, w, |r, c| {
        crop.get(r, c) / (interleave_gain(r, h) * interleave_gain(c, w))
    }))
}
