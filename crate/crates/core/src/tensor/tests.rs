use super::*;
use crate::kspace::Direction;
use crate::metrics::SsimConfig;
use crate::seed;
use rand::Rng;
use rand_distr::StandardNormal;

fn randn(shape: &[usize], s: u64) -> Tensor {
    let mut rng = seed::stream(s, 3);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

/// Random values with magnitude in [0.2, 1.2], away from relu kinks.
fn away_from_zero(shape: &[usize], s: u64) -> Tensor {
    let mut rng = seed::stream(s, 4);
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n)
            .map(|_| {
                let m = 0.2 + rng.gen::<f64>();
                if rng.gen::<bool>() { m } else { -m }
            })
            .collect(),
    )
    .unwrap()
}

#[test]
fn relu_values() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::from_vec(vec![-1.0, 0.0, 2.0]));
    let y = t.relu(x);
    assert_eq!(t.value(y).data(), &[0.0, 0.0, 2.0]);
    assert!(!t.requires_grad(y));
}

#[test]
fn identity_kernel_convolution() {
    let mut t = Tape::new();
    let img = randn(&[1, 5, 7], 1);
    let mut k = Tensor::zeros(&[1, 1, 3, 3]);
    k.data_mut()[4] = 1.0;
    let x = t.constant(img.clone());
    let w = t.constant(k);
    let y = t.conv2d(x, w, None).unwrap();
    assert_eq!(t.value(y), &img);
}

#[test]
fn shape_errors_name_the_op() {
    let mut t = Tape::new();
    let a = t.constant(Tensor::zeros(&[2, 3]));
    let b = t.constant(Tensor::zeros(&[3, 3]));
    let err = t.add(a, b).unwrap_err().to_string();
    assert!(err.contains("add") && err.contains("[2, 3]"), "{err}");
    let err = t.matmul(a, a).unwrap_err().to_string();
    assert!(err.contains("matmul"), "{err}");
    let odd = t.constant(Tensor::zeros(&[1, 3, 4]));
    assert!(t.avgpool2(odd).unwrap_err().to_string().contains("avgpool2"));
}

#[test]
fn ssim_loss_of_identical_is_zero() {
    let img = randn(&[1, 9, 9], 2);
    let target = img.to_real_image().unwrap();
    let mut t = Tape::new();
    let x = t.param(img);
    let l = t.ssim_loss(x, &target, &SsimConfig::default(), 1.0).unwrap();
    assert_eq!(t.value(l).item(), 0.0);
}

#[test]
fn mean_of_square_gradient() {
    let mut t = Tape::new();
    let w = t.param(Tensor::from_vec(vec![1.0, 2.0]));
    let sq = t.mul(w, w).unwrap();
    let loss = t.mean(sq);
    let g = t.backward(loss).unwrap();
    assert_eq!(g.wrt(&t, w).data(), &[1.0, 2.0]);
    assert_eq!(g.wrt(&t, loss).data(), &[1.0]);
}

#[test]
fn disconnected_parameter_gets_zero_gradient() {
    let mut t = Tape::new();
    let used = t.param(Tensor::from_vec(vec![1.0, 2.0]));
    let unused = t.param(Tensor::from_vec(vec![3.0, 4.0, 5.0]));
    let loss = t.mean(used);
    let g = t.backward(loss).unwrap();
    assert!(g.get(unused).is_none());
    assert_eq!(g.wrt(&t, unused), Tensor::zeros(&[3]));
}

#[test]
fn non_scalar_loss_rejected() {
    let mut t = Tape::new();
    let w = t.param(Tensor::from_vec(vec![1.0, 2.0]));
    assert!(t.backward(w).is_err());
}

#[test]
fn grad_check_edge_cases() {
    assert_eq!(grad_check(|t, _| Ok(t.constant(Tensor::scalar(1.0))), &[], 1e-5).unwrap(), 0.0);
    assert!(grad_check(|t, _| Ok(t.constant(Tensor::scalar(1.0))), &[], 0.0).is_err());
    let blowup = grad_check(
        |t, p| {
            let s = t.mul(p[0], p[0])?;
            let m = t.mean(s);
            Ok(t.scale(m, f64::INFINITY))
        },
        &[Tensor::from_vec(vec![1.0])],
        1e-5,
    );
    assert!(blowup.is_err());
}

#[test]
fn linear_layer_gradient_and_quadratic_convergence() {
    let w = randn(&[3, 4], 10);
    let x = randn(&[4, 2], 11);
    let r = randn(&[3, 2], 12);
    // cubic in the layer output so the central difference has an O(h^2) bias
    let f = |t: &mut Tape, p: &[Var]| {
        let y = t.matmul(p[0], p[1])?;
        let rc = t.constant(r.clone());
        let yr = t.mul(y, rc)?;
        let y2 = t.mul(yr, y)?;
        let y3 = t.mul(y2, y)?;
        Ok(t.mean(y3))
    };
    let fine = grad_check(f, &[w.clone(), x.clone()], 1e-5).unwrap();
    assert!(fine < 1e-6, "{fine}");
    let coarse = grad_check(f, &[w.clone(), x.clone()], 1e-2).unwrap();
    let half = grad_check(f, &[w, x], 5e-3).unwrap();
    let ratio = coarse / half;
    assert!((3.0..5.0).contains(&ratio), "halving h should quarter the error, ratio {ratio}");
}

#[test]
fn relu_away_from_kink() {
    let x = away_from_zero(&[1, 4, 4], 13);
    let r = randn(&[1, 4, 4], 14);
    let e = grad_check(
        |t, p| {
            let y = t.relu(p[0]);
            let rc = t.constant(r.clone());
            let z = t.mul(y, rc)?;
            Ok(t.mean(z))
        },
        &[x],
        1e-5,
    )
    .unwrap();
    assert!(e < 1e-6, "{e}");
}

#[test]
fn fft_node_round_trip_and_adjoint() {
    let x = randn(&[2, 6, 5], 15);
    let mut t = Tape::new();
    let v = t.param(x.clone());
    let f = t.fft2c(v, Direction::Forward).unwrap();
    let b = t.fft2c(f, Direction::Inverse).unwrap();
    for (a, c) in t.value(b).data().iter().zip(x.data()) {
        assert!((a - c).abs() < 1e-12);
    }
}

#[test]
fn linearity_of_backward() {
    let p = randn(&[1, 6, 6], 16);
    let k = randn(&[2, 1, 3, 3], 17);
    let r1 = randn(&[2, 6, 6], 18);
    let r2 = randn(&[2, 6, 6], 19);
    let (a, b) = (0.7, -1.3);
    let grad_of = |weights: &[(f64, &Tensor)]| {
        let mut t = Tape::new();
        let x = t.param(p.clone());
        let kc = t.constant(k.clone());
        let y = t.conv2d(x, kc, None).unwrap();
        let y = t.relu(y);
        let mut total = None;
        for (c, r) in weights {
            let rc = t.constant((*r).clone());
            let z = t.mul(y, rc).unwrap();
            let m = t.mean(z);
            let m = t.scale(m, *c);
            total = Some(match total {
                None => m,
                Some(s) => t.add(s, m).unwrap(),
            });
        }
        let g = t.backward(total.unwrap()).unwrap();
        g.wrt(&t, x)
    };
    let combined = grad_of(&[(a, &r1), (b, &r2)]);
    let g1 = grad_of(&[(1.0, &r1)]);
    let g2 = grad_of(&[(1.0, &r2)]);
    for i in 0..combined.numel() {
        let expect = a * g1.data()[i] + b * g2.data()[i];
        assert!((combined.data()[i] - expect).abs() < 1e-10);
    }
}

#[test]
fn determinism_bit_identical() {
    let run = || {
        let x = randn(&[2, 8, 8], 20);
        let w = randn(&[3, 2, 3, 3], 21);
        let mut t = Tape::new();
        let xv = t.param(x);
        let wv = t.param(w);
        let y = t.conv2d(xv, wv, None).unwrap();
        let y = t.relu(y);
        let y = t.avgpool2(y).unwrap();
        let l = t.mean(y);
        let g = t.backward(l).unwrap();
        (t.value(l).clone(), g.wrt(&t, xv), g.wrt(&t, wv))
    };
    assert_eq!(run(), run());
}
