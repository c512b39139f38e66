use num_complex::Complex64;
use rand::Rng;

use super::*;
use crate::datasets::{combine, generate, ContrastTransform, DistributionSpec, ShapeFamily};
use crate::kspace::{make_equispaced_mask, zero_filled_rss};
use crate::seed;

fn spec(snr_db: f64, seed: u64) -> DistributionSpec {
    DistributionSpec {
        name: format!("snr{snr_db}"),
        shape_family: ShapeFamily::EllipsePhantom,
        contrast: ContrastTransform::Identity,
        snr_db,
        coils: 4,
        height: 32,
        width: 32,
        seed,
        sensitivity_cutoff: 3,
        lesions: None,
    }
}

fn random_image(h: usize, w: usize, s: u64) -> ComplexImage {
    let mut rng = seed::stream(s, 0);
    let v = (0..h * w).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
    ComplexImage::from_values(h, w, v).unwrap()
}

fn rel_err(a: &ComplexImage, b: &ComplexImage) -> f64 {
    let d: f64 = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).norm_sqr()).sum();
    (d / b.norm_sqr()).sqrt()
}

#[test]
fn zero_lambda_full_mask_recovers_image() {
    let x = random_image(16, 16, 3);
    let s = CoilSensitivities::unit(16, 16);
    let mask = SamplingMask::full(16);
    let y = apply_forward(&x, &s, &mask, &NoiseModel::none()).unwrap();
    let cfg = FistaConfig { lambda: 0.0, ..Default::default() };
    let r = fista_l1(&y, &s, &mask, &cfg).unwrap();
    assert!(rel_err(&r.image, &x) < 1e-8);
    let resid = apply_forward(&r.image, &s, &mask, &NoiseModel::none()).unwrap();
    let d: f64 = resid.coils[0].values.iter().zip(&y.coils[0].values).map(|(a, b)| (a - b).norm_sqr()).sum();
    assert!(d.sqrt() / y.norm_sqr().sqrt() < 1e-8);
    assert_eq!(r.objective_trace.len(), r.iterations_run);
}

#[test]
fn huge_lambda_shrinks_to_zero() {
    let d = generate(&spec(30.0, 1), 1).unwrap();
    let s = d.eval_sample(0, 4.0, 0).unwrap();
    let cfg = FistaConfig { lambda: 1e6, ..Default::default() };
    let r = fista_l1(&s.kspace, &d.items[0].sensitivities, &s.mask, &cfg).unwrap();
    assert!(r.image.norm() < 1e-12);
}

#[test]
fn objective_trace_is_monotone() {
    for k in 0..20u64 {
        let d = generate(&spec(20.0 + k as f64, k), 1).unwrap();
        let accel = [2.0, 4.0, 8.0][(k % 3) as usize];
        let s = d.eval_sample(0, accel, k).unwrap();
        let cfg = FistaConfig {
            lambda: [1e-3, 1e-2, 1e-1][(k % 3) as usize],
            max_iters: 60,
            ..Default::default()
        };
        let r = fista_l1(&s.kspace, &d.items[0].sensitivities, &s.mask, &cfg).unwrap();
        assert!(r.objective_trace.iter().all(|f| f.is_finite()));
        for w in r.objective_trace.windows(2) {
            assert!(w[1] <= w[0], "seed {k}: {} -> {}", w[0], w[1]);
        }
    }
}

#[test]
fn non_finite_measurement_reports_iteration() {
    let s = CoilSensitivities::unit(8, 8);
    let mask = SamplingMask::full(8);
    let mut y = apply_forward(&random_image(8, 8, 1), &s, &mask, &NoiseModel::none()).unwrap();
    y.coils[0].values[5] = Complex64::new(f64::NAN, 0.0);
    let cfg = FistaConfig { wavelet_levels: 1, ..Default::default() };
    match fista_l1(&y, &s, &mask, &cfg) {
        Err(Error::NonFinite(msg)) => assert!(msg.contains("iteration 0"), "{msg}"),
        other => panic!("expected NonFinite, got {other:?}"),
    }
}

#[test]
fn config_validation() {
    let s = CoilSensitivities::unit(8, 8);
    let mask = SamplingMask::full(8);
    let y = apply_forward(&random_image(8, 8, 1), &s, &mask, &NoiseModel::none()).unwrap();
    for cfg in [
        FistaConfig { max_iters: 0, ..Default::default() },
        FistaConfig { step_size: 0.0, ..Default::default() },
        FistaConfig { lambda: -1.0, ..Default::default() },
        FistaConfig { wavelet_levels: 4, ..Default::default() },
    ] {
        assert!(fista_l1(&y, &s, &mask, &cfg).unwrap_err().is_validation());
    }
}

#[test]
fn fista_beats_zero_filled_at_4x() {
    let d = generate(&spec(40.0, 11), 1).unwrap();
    let item = &d.items[0];
    let mut rng = seed::stream(11, 1);
    let mask = make_equispaced_mask(32, 4.0, 0.08, &mut rng).unwrap();
    let y = d.measure(0, &mask, 5).unwrap();
    let cfg = FistaConfig { lambda: 1e-3, ..Default::default() };
    let r = fista_l1(&y, &item.sensitivities, &mask, &cfg).unwrap();
    let ssim_cfg = SsimConfig::default();
    let target = item.target();
    let fista = ssim(&r.image.abs(), &target, &ssim_cfg).unwrap();
    let zf = ssim(&zero_filled_rss(&y), &target, &ssim_cfg).unwrap();
    assert!(fista - zf >= 0.01, "fista {fista} zero-filled {zf}");
}

#[test]
fn tune_lambda_basic_contracts() {
    let d = generate(&spec(20.0, 2), 2).unwrap();
    let cfg = TuneConfig {
        fista: FistaConfig { max_iters: 30, ..Default::default() },
        ..Default::default()
    };
    let one = tune_lambda(&d, &[0.05], &cfg).unwrap();
    assert_eq!(one.best_lambda, 0.05);
    assert_eq!(one.scores.len(), 1);
    assert_eq!(one.scores[0].n_items, 2);

    let grid = [1e-1, 1e-3, 1e-2];
    let a = tune_lambda(&d, &grid, &cfg).unwrap();
    let dup = combine(&[&d, &d]).unwrap();
    let b = tune_lambda(&dup, &grid, &cfg).unwrap();
    assert_eq!(a.best_lambda, b.best_lambda);
    let best = a.scores.iter().map(|s| s.mean_ssim).fold(f64::MIN, f64::max);
    assert_eq!(a.scores.iter().find(|s| s.lambda == a.best_lambda).unwrap().mean_ssim, best);

    assert!(tune_lambda(&d, &[], &cfg).unwrap_err().is_validation());
}

#[test]
fn ties_go_to_smaller_lambda() {
    // With lambda huge every reconstruction is zero, so all scores tie.
    let d = generate(&spec(20.0, 2), 1).unwrap();
    let cfg = TuneConfig {
        fista: FistaConfig { max_iters: 5, ..Default::default() },
        ..Default::default()
    };
    let t = tune_lambda(&d, &[1e7, 1e6, 1e8], &cfg).unwrap();
    assert_eq!(t.best_lambda, 1e6);
}
