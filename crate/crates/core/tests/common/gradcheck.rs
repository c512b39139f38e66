//! Finite-difference checks of every tape op and of both model losses.

use rand::Rng;
use rand_distr::StandardNormal;
use shiftmri_core::datasets::{generate, ContrastTransform, DistributionSpec, ShapeFamily};
use shiftmri_core::image::ComplexImage;
use shiftmri_core::kspace::Direction;
use shiftmri_core::learned::{construct_model, ModelConfig, ModelInput};
use shiftmri_core::metrics::{DataRange, SsimConfig};
use shiftmri_core::seed;
use shiftmri_core::tensor::{grad_check, grad_check_normwise, Tape, Tensor, Var};
use shiftmri_core::Result;

pub const H: f64 = 1e-6;

pub fn randn(shape: &[usize], rng: &mut seed::Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

/// Magnitudes in [0.3, 1.3] with random sign, clear of relu kinks and of
/// the origin.
pub fn away_from_zero(shape: &[usize], rng: &mut seed::Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n)
            .map(|_| {
                let m = 0.3 + rng.gen::<f64>();
                if rng.gen::<bool>() { m } else { -m }
            })
            .collect(),
    )
    .unwrap()
}

/// Reduces `y` to a scalar through fixed random weights so every output
/// element contributes with its own gradient.
fn weighted_sum(t: &mut Tape, y: Var, weights: &Tensor) -> Result<Var> {
    let w = t.constant(weights.clone());
    let p = t.mul(y, w)?;
    Ok(t.mean(p))
}

pub const OP_KINDS: [&str; 18] = [
    "add", "sub", "mul", "scale", "scale_by", "add_scalar", "matmul", "conv2d", "relu", "avgpool2", "upsample2",
    "concat_channels", "complex_mul", "fft2c_forward", "fft2c_inverse", "complex_abs", "mean", "ssim_loss",
];

/// Largest relative gradient error of `kind` on a random instance.
pub fn check_op(kind: &str, instance: u64) -> Result<f64> {
    let mut rng = seed::stream(instance, kind.len() as u64 * 131 + kind.as_bytes()[0] as u64);
    let c = rng.gen_range(1..=3);
    let h = 2 * rng.gen_range(2..=4);
    let w = 2 * rng.gen_range(2..=4);
    let shape = [c, h, w];
    let out_weights = |shape: &[usize], rng: &mut seed::Rng| randn(shape, rng);
    match kind {
        "add" | "sub" | "mul" => {
            let (a, b) = (randn(&shape, &mut rng), randn(&shape, &mut rng));
            let wt = out_weights(&shape, &mut rng);
            let kind = kind.to_owned();
            grad_check(
                move |t, p| {
                    let y = match kind.as_str() {
                        "add" => t.add(p[0], p[1])?,
                        "sub" => t.sub(p[0], p[1])?,
                        _ => t.mul(p[0], p[1])?,
                    };
                    weighted_sum(t, y, &wt)
                },
                &[a, b],
                H,
            )
        }
        "scale" | "add_scalar" => {
            let a = randn(&shape, &mut rng);
            let s: f64 = rng.sample(StandardNormal);
            let wt = out_weights(&shape, &mut rng);
            let scale = kind == "scale";
            grad_check(
                move |t, p| {
                    let y = if scale { t.scale(p[0], s) } else { t.add_scalar(p[0], s) };
                    // square so add_scalar's gradient depends on the input
                    let y2 = t.mul(y, y)?;
                    weighted_sum(t, y2, &wt)
                },
                &[a],
                H,
            )
        }
        "scale_by" => {
            let a = randn(&shape, &mut rng);
            let s = randn(&[1], &mut rng);
            let wt = out_weights(&shape, &mut rng);
            grad_check(move |t, p| { let y = t.scale_by(p[0], p[1])?; weighted_sum(t, y, &wt) }, &[a, s], H)
        }
        "matmul" => {
            let (m, k, n) = (rng.gen_range(1..=5), rng.gen_range(1..=5), rng.gen_range(1..=5));
            let (a, b) = (randn(&[m, k], &mut rng), randn(&[k, n], &mut rng));
            let wt = out_weights(&[m, n], &mut rng);
            grad_check(move |t, p| { let y = t.matmul(p[0], p[1])?; weighted_sum(t, y, &wt) }, &[a, b], H)
        }
        "conv2d" => {
            let co = rng.gen_range(1..=3);
            let k = if rng.gen::<bool>() { 3 } else { 1 };
            let x = randn(&shape, &mut rng);
            let kern = randn(&[co, c, k, k], &mut rng);
            let bias = randn(&[co], &mut rng);
            let wt = out_weights(&[co, h, w], &mut rng);
            grad_check(
                move |t, p| { let y = t.conv2d(p[0], p[1], Some(p[2]))?; weighted_sum(t, y, &wt) },
                &[x, kern, bias],
                H,
            )
        }
        "relu" => {
            let a = away_from_zero(&shape, &mut rng);
            let wt = out_weights(&shape, &mut rng);
            grad_check(move |t, p| { let y = t.relu(p[0]); weighted_sum(t, y, &wt) }, &[a], H)
        }
        "avgpool2" => {
            let a = randn(&shape, &mut rng);
            let wt = out_weights(&[c, h / 2, w / 2], &mut rng);
            grad_check(move |t, p| { let y = t.avgpool2(p[0])?; weighted_sum(t, y, &wt) }, &[a], H)
        }
        "upsample2" => {
            let a = randn(&shape, &mut rng);
            let wt = out_weights(&[c, 2 * h, 2 * w], &mut rng);
            grad_check(move |t, p| { let y = t.upsample2(p[0])?; weighted_sum(t, y, &wt) }, &[a], H)
        }
        "concat_channels" => {
            let c2 = rng.gen_range(1..=3);
            let (a, b) = (randn(&shape, &mut rng), randn(&[c2, h, w], &mut rng));
            let wt = out_weights(&[c + c2, h, w], &mut rng);
            grad_check(move |t, p| { let y = t.concat_channels(p[0], p[1])?; weighted_sum(t, y, &wt) }, &[a, b], H)
        }
        "complex_mul" => {
            let (a, b) = (randn(&[2, h, w], &mut rng), randn(&[2, h, w], &mut rng));
            let wt = out_weights(&[2, h, w], &mut rng);
            grad_check(move |t, p| { let y = t.complex_mul(p[0], p[1])?; weighted_sum(t, y, &wt) }, &[a, b], H)
        }
        "fft2c_forward" | "fft2c_inverse" => {
            let dir = if kind == "fft2c_forward" { Direction::Forward } else { Direction::Inverse };
            let a = randn(&[2, h, w], &mut rng);
            let wt = out_weights(&[2, h, w], &mut rng);
            grad_check(move |t, p| { let y = t.fft2c(p[0], dir)?; weighted_sum(t, y, &wt) }, &[a], H)
        }
        "complex_abs" => {
            let a = away_from_zero(&[2, h, w], &mut rng);
            let wt = out_weights(&[1, h, w], &mut rng);
            grad_check(move |t, p| { let y = t.complex_abs(p[0])?; weighted_sum(t, y, &wt) }, &[a], H)
        }
        "mean" => {
            let a = randn(&shape, &mut rng);
            grad_check(
                |t, p| {
                    let sq = t.mul(p[0], p[0])?;
                    Ok(t.mean(sq))
                },
                &[a],
                H,
            )
        }
        "ssim_loss" => {
            let (sh, sw) = (rng.gen_range(7..=10), rng.gen_range(7..=10));
            let x = randn(&[1, sh, sw], &mut rng);
            let target = randn(&[1, sh, sw], &mut rng).to_real_image()?;
            let cfg = SsimConfig {
                window: if rng.gen::<bool>() { 3 } else { 5 },
                data_range: DataRange::Fixed(2.0),
                ..SsimConfig::default()
            };
            grad_check(move |t, p| t.ssim_loss(p[0], &target, &cfg, 2.0), &[x], H)
        }
        other => panic!("unknown op kind {other}"),
    }
}

/// Largest per-parameter norm-wise gradient error of the 1 − SSIM loss of a
/// full model on an 8×8 seeded slice.
pub fn check_model(config: &ModelConfig) -> Result<f64> {
    let spec = DistributionSpec {
        name: "gc".into(),
        shape_family: ShapeFamily::EllipsePhantom,
        contrast: ContrastTransform::Identity,
        snr_db: 30.0,
        coils: 2,
        height: 16,
        width: 16,
        seed: 4,
        sensitivity_cutoff: 2,
        lesions: None,
    };
    // extents below the dataset minimum: crop a generated slice
    let item = generate(&spec, 1)?.items.remove(0);
    let crop = |img: &ComplexImage| {
        let values = (4..12).flat_map(|r| (4..12).map(move |c| img.values[r * 16 + c])).collect();
        ComplexImage::from_values(8, 8, values)
    };
    let image = crop(&item.image)?;
    let maps = item.sensitivities.maps.iter().map(crop).collect::<Result<Vec<_>>>()?;
    let sens = shiftmri_core::kspace::CoilSensitivities::new(maps)?;
    let mask = shiftmri_core::kspace::MaskPolicy::new(1).volume_mask(8, 2.0, 0)?;
    let y = shiftmri_core::kspace::apply_forward(&image, &sens, &mask, &shiftmri_core::kspace::NoiseModel::none())?;
    let target = image.abs();
    let model = construct_model(config)?;
    let input = ModelInput {
        kspace: &y,
        sensitivities: &sens,
        mask: &mask,
    };
    let cfg = SsimConfig {
        window: 3,
        ..SsimConfig::default()
    };
    let range = cfg.range_for(&target);
    grad_check_normwise(
        |t, p| {
            let out = model.forward(t, p, &input)?;
            t.ssim_loss(out, &target, &cfg, range)
        },
        &model.params,
        H,
    )
}
