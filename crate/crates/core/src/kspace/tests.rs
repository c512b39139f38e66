use super::*;
use crate::seed;
use rand::Rng;
use rand_distr::StandardNormal;

fn random_image(h: usize, w: usize, s: u64) -> ComplexImage {
    let mut rng = seed::stream(s, 11);
    let values = (0..h * w)
        .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    ComplexImage::from_values(h, w, values).unwrap()
}

fn random_kspace(h: usize, w: usize, coils: usize, s: u64) -> KSpaceData {
    KSpaceData::new((0..coils).map(|c| random_image(h, w, s * 100 + c as u64)).collect()).unwrap()
}

fn adjoint_defect(h: usize, w: usize, coils: usize, accel: f64, s: u64) -> f64 {
    let mut rng = seed::stream(s, 0);
    let sens = simulate_sensitivities(h, w, coils, 3, &mut rng).unwrap();
    let mask = make_equispaced_mask(w, accel, 0.08, &mut rng).unwrap();
    let x = random_image(h, w, s + 1);
    let y = random_kspace(h, w, coils, s + 2);
    let ax = apply_forward(&x, &sens, &mask, &NoiseModel::none()).unwrap();
    let ahy = apply_adjoint(&y, &sens, &mask).unwrap();
    let lhs = ax.dot(&y);
    let rhs = x.dot(&ahy);
    (lhs - rhs).norm() / (x.norm() * y.norm_sqr().sqrt())
}

#[test]
fn adjointness_over_extents_and_coils() {
    let mut s = 0;
    for &(h, w) in &[(8, 8), (16, 24), (33, 40), (64, 64)] {
        for coils in [1, 4, 8] {
            s += 1;
            let d = adjoint_defect(h, w, coils, 2.0, s);
            assert!(d < 1e-10, "{h}x{w} C={coils}: {d}");
        }
    }
}

#[test]
fn full_mask_single_unit_coil_is_fft() {
    let x = random_image(12, 10, 4);
    let y = apply_forward(&x, &CoilSensitivities::unit(12, 10), &SamplingMask::full(10), &NoiseModel::none())
        .unwrap();
    let f = fft2c(&x, Direction::Forward);
    for (a, b) in y.coils[0].values.iter().zip(&f.values) {
        assert!((a - b).norm() < 1e-14);
    }
    let back = apply_adjoint(&y, &CoilSensitivities::unit(12, 10), &SamplingMask::full(10)).unwrap();
    for (a, b) in back.values.iter().zip(&x.values) {
        assert!((a - b).norm() < 1e-12);
    }
}

#[test]
fn zero_image_maps_to_zero() {
    let mut rng = seed::stream(8, 0);
    let sens = simulate_sensitivities(16, 16, 4, 2, &mut rng).unwrap();
    let mask = make_equispaced_mask(16, 4.0, 0.08, &mut rng).unwrap();
    let y = apply_forward(&ComplexImage::zeros(16, 16), &sens, &mask, &NoiseModel::none()).unwrap();
    assert_eq!(y.norm_sqr(), 0.0);
}

#[test]
fn normal_operator_is_identity_at_full_sampling() {
    let mut rng = seed::stream(9, 0);
    let sens = simulate_sensitivities(20, 16, 4, 2, &mut rng).unwrap();
    let x = random_image(20, 16, 10);
    let back = normal_op(&x, &sens, &SamplingMask::full(16)).unwrap();
    for (a, b) in back.values.iter().zip(&x.values) {
        assert!((a - b).norm() < 1e-10);
    }
}

#[test]
fn unsampled_columns_stay_zero_under_noise() {
    let mut rng = seed::stream(12, 0);
    let sens = simulate_sensitivities(16, 32, 2, 2, &mut rng).unwrap();
    let mask = make_equispaced_mask(32, 4.0, 0.08, &mut rng).unwrap();
    let x = random_image(16, 32, 13);
    let y = apply_forward(&x, &sens, &mask, &NoiseModel { sigma: 0.3, seed: 1 }).unwrap();
    for k in &y.coils {
        for r in 0..16 {
            for c in 0..32 {
                if !mask.sampled[c] {
                    assert_eq!(k.get(r, c), Complex64::new(0.0, 0.0));
                }
            }
        }
    }
}

#[test]
fn extent_mismatch_is_an_error() {
    let sens = CoilSensitivities::unit(8, 8);
    let x = ComplexImage::zeros(8, 6);
    assert!(apply_forward(&x, &sens, &SamplingMask::full(6), &NoiseModel::none()).is_err());
    let y = random_kspace(8, 8, 2, 1);
    assert!(apply_adjoint(&y, &sens, &SamplingMask::full(8)).is_err());
}

#[test]
fn noise_statistics() {
    let (h, w) = (100, 100);
    let y = KSpaceData::new(vec![ComplexImage::zeros(h, w); 10]).unwrap();
    let sigma = 0.4;
    let noisy = add_noise(&y, &SamplingMask::full(w), &NoiseModel { sigma, seed: 77 }).unwrap();
    let n = (h * w * 10) as f64;
    let var_re: f64 = noisy.coils.iter().flat_map(|k| k.values.iter()).map(|v| v.re * v.re).sum::<f64>() / n;
    let var_im: f64 = noisy.coils.iter().flat_map(|k| k.values.iter()).map(|v| v.im * v.im).sum::<f64>() / n;
    let target = sigma * sigma / 2.0;
    assert!((var_re / target - 1.0).abs() < 0.03, "{var_re}");
    assert!((var_im / target - 1.0).abs() < 0.03, "{var_im}");

    let same = add_noise(&y, &SamplingMask::full(w), &NoiseModel { sigma: 0.0, seed: 77 }).unwrap();
    assert_eq!(same, y);
}

#[test]
fn rss_fixtures() {
    let a = ComplexImage::from_values(1, 2, vec![Complex64::new(3.0, 0.0), Complex64::new(0.0, -2.0)]).unwrap();
    let b = ComplexImage::from_values(1, 2, vec![Complex64::new(0.0, 4.0), Complex64::new(0.0, 0.0)]).unwrap();
    assert_eq!(rss(&[a.clone()]).unwrap().values, vec![3.0, 2.0]);
    let r = rss(&[a, b]).unwrap();
    assert!((r.values[0] - 5.0).abs() < 1e-15);
    assert!((r.values[1] - 2.0).abs() < 1e-15);
    assert!(rss(&[]).is_err());
}

#[test]
fn zero_filled_of_zero_is_zero() {
    let y = KSpaceData::new(vec![ComplexImage::zeros(8, 8); 3]).unwrap();
    assert!(zero_filled_rss(&y).values.iter().all(|&v| v == 0.0));
}

#[test]
fn zero_filled_full_mask_single_coil_is_magnitude() {
    let x = random_image(8, 12, 21);
    let y = apply_forward(&x, &CoilSensitivities::unit(8, 12), &SamplingMask::full(12), &NoiseModel::none()).unwrap();
    let zf = zero_filled_rss(&y);
    for (a, b) in zf.values.iter().zip(x.abs().values) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn interleave_duplicates_lines() {
    let a = Complex64::new(1.0, 2.0);
    let b = Complex64::new(-3.0, 0.5);
    let y = KSpaceData::new(vec![ComplexImage::from_values(1, 2, vec![a, b]).unwrap()]).unwrap();
    let mask = SamplingMask::from_columns(vec![true, false]);
    let (up, m) = interleave_upsample(&y, &mask, Axis::Horizontal);
    assert_eq!(up.coils[0].values, vec![a, a, b, b]);
    assert_eq!(m.sampled, vec![true, true, false, false]);
    let (up2, m2) = interleave_upsample(&up, &m, Axis::Vertical);
    assert_eq!((up2.height(), up2.width()), (2, 4));
    assert_eq!(up2.coils[0].values, vec![a, a, b, b, a, a, b, b]);
    assert_eq!(m2.sampled, m.sampled);
}

#[test]
fn views_single_plane_is_identity() {
    let img = random_image(5, 6, 30);
    let vol = ComplexVolume::new([1, 5, 6], img.values.clone()).unwrap();
    let views = views_from_3d(&[vol], 0).unwrap();
    assert_eq!(views.len(), 1);
    assert_eq!(views[0].coils[0].values, img.values);
}

#[test]
fn views_preserve_energy() {
    let data = random_image(6, 20, 31).values; // 120 = 4*5*6
    let vol = ComplexVolume::new([4, 5, 6], data).unwrap();
    for axis in 0..3 {
        let views = views_from_3d(&[vol.clone()], axis).unwrap();
        assert_eq!(views.len(), vol.dims[axis]);
        let e: f64 = views.iter().map(KSpaceData::norm_sqr).sum();
        assert!((e - vol.norm_sqr()).abs() < 1e-10 * vol.norm_sqr());
    }
}

/// Brute-force centered inverse DFT for even lengths.
pub(crate) fn brute_ifft1c(f: &[Complex64]) -> Vec<Complex64> {
    let n = f.len();
    let h = (n / 2) as f64;
    (0..n)
        .map(|d| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (u, fu) in f.iter().enumerate() {
                let phase = std::f64::consts::TAU * (u as f64 - h) * (d as f64 - h) / n as f64;
                acc += fu * Complex64::from_polar(1.0, phase);
            }
            acc / (n as f64).sqrt()
        })
        .collect()
}

#[test]
fn views_of_separable_volume_match_brute_force() {
    let f: Vec<Complex64> = random_image(1, 4, 40).values;
    let g = random_image(4, 4, 41);
    for axis in 0..3 {
        let mut values = vec![Complex64::new(0.0, 0.0); 64];
        let vol0 = ComplexVolume::new([4, 4, 4], values.clone()).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                for k in 0..4 {
                    let (u, rest) = match axis {
                        0 => (i, (j, k)),
                        1 => (j, (i, k)),
                        _ => (k, (i, j)),
                    };
                    values[vol0.index(i, j, k)] = f[u] * g.get(rest.0, rest.1);
                }
            }
        }
        let vol = ComplexVolume::new([4, 4, 4], values).unwrap();
        let views = views_from_3d(&[vol], axis).unwrap();
        let finv = brute_ifft1c(&f);
        for (d, view) in views.iter().enumerate() {
            for r in 0..4 {
                for c in 0..4 {
                    let expected = finv[d] * g.get(r, c);
                    assert!((view.coils[0].get(r, c) - expected).norm() < 1e-12);
                }
            }
        }
    }
}
