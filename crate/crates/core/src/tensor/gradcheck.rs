use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::par;

/// Tape gradients and central finite differences of a scalar loss, one
/// `(analytic, numeric)` pair per parameter.
///
/// `closure` builds the loss from the registered parameters; it is re-run on
/// a fresh tape for every perturbation, so it must be deterministic.
pub fn gradient_pairs<F>(closure: F, params: &[Tensor], h: f64) -> Result<Vec<(Tensor, Tensor)>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var> + Sync,
{
    if !(h > 0.0) {
        return Err(Error::invalid(format!("finite-difference step {h} must be positive")));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = closure(&mut tape, &vars)?;
    if !tape.value(loss).is_finite() {
        return Err(Error::NonFinite("loss at the unperturbed point".into()));
    }
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(&tape, v)).collect();

    let index: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(p, t)| (0..t.numel()).map(move |e| (p, e)))
        .collect();
    let eval = |p: usize, e: usize, delta: f64| -> Result<f64> {
        let mut perturbed = params.to_vec();
        perturbed[p].data_mut()[e] += delta;
        let mut t = Tape::new();
        let vs: Vec<Var> = perturbed.into_iter().map(|x| t.param(x)).collect();
        let l = closure(&mut t, &vs)?;
        let v = t.value(l).item();
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("loss with parameter {p}[{e}] perturbed by {delta}")));
        }
        Ok(v)
    };
    let fd = par::try_map_indexed(index.len(), |i| {
        let (p, e) = index[i];
        Ok::<f64, Error>((eval(p, e, h)? - eval(p, e, -h)?) / (2.0 * h))
    })?;
    let mut fd = fd.into_iter();
    Ok(analytic
        .into_iter()
        .zip(params)
        .map(|(a, p)| {
            let numeric = Tensor {
                shape: p.shape().to_vec(),
                data: fd.by_ref().take(p.numel()).collect(),
            };
            (a, numeric)
        })
        .collect())
}

/// Largest elementwise relative disagreement between the tape gradient and
/// central finite differences: `|analytic - fd| / max(1e-8, |fd|)`.
pub fn grad_check<F>(closure: F, params: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var> + Sync,
{
    let pairs = gradient_pairs(closure, params, h)?;
    Ok(pairs
        .iter()
        .flat_map(|(a, n)| a.data().iter().zip(n.data()).map(|(a, n)| (a - n).abs() / n.abs().max(1e-8)))
        .fold(0.0, f64::max))
}

/// Largest per-parameter relative error `||analytic - fd|| / ||fd||`.
///
/// Preferred for large networks, where some gradient entries sit at the
/// finite-difference noise floor and their elementwise ratio is meaningless.
/// Parameters whose finite-difference gradient vanishes are compared in
/// absolute terms.
pub fn grad_check_normwise<F>(closure: F, params: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var> + Sync,
{
    let pairs = gradient_pairs(closure, params, h)?;
    Ok(pairs
        .iter()
        .map(|(a, n)| {
            let diff: f64 = a.data().iter().zip(n.data()).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
            diff / n.norm_sqr().sqrt().max(1e-8)
        })
        .fold(0.0, f64::max))
}
