//! Central finite-difference verification of reverse-mode gradients.

use super::params::ParamStore;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

fn relative(analytic: f64, central: f64) -> f64 {
    (analytic - central).abs() / central.abs().max(1.0)
}

/// Max over coordinates of `|analytic − central| / max(1, |central|)` for a
/// scalar function of one tensor.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.input(x.clone());
    let y = f(&mut tape, xv)?;
    let grads = tape.backward(y)?;
    let analytic = grads
        .wrt(xv)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; x.len()]);

    let eval = |probe: Tensor| -> Result<f64> {
        let mut t = Tape::inference();
        let v = t.input(probe);
        let y = f(&mut t, v)?;
        t.value(y).item()
    };
    let mut worst: f64 = 0.0;
    for k in 0..x.len() {
        let mut hi = x.clone();
        hi.data_mut()[k] += eps;
        let mut lo = x.clone();
        lo.data_mut()[k] -= eps;
        let central = (eval(hi)? - eval(lo)?) / (2.0 * eps);
        worst = worst.max(relative(analytic[k], central));
    }
    Ok(worst)
}

/// Same comparison over every coordinate of every parameter in `store`.
/// `f` builds the scalar loss from the store's current values.
pub fn grad_check_params<F>(f: F, store: &ParamStore, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut work = store.clone();
    work.zero_grad();
    let mut tape = Tape::new();
    let y = f(&mut tape, &work)?;
    tape.backward_into(y, &mut work)?;
    let analytic: Vec<Vec<f64>> = work.iter().map(|(_, p)| p.grad.clone()).collect();

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let y = f(&mut t, s)?;
        t.value(y).item()
    };
    let mut probe = store.clone();
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    let mut worst: f64 = 0.0;
    for (pi, id) in ids.into_iter().enumerate() {
        for k in 0..store.value(id).len() {
            let orig = store.value(id).data()[k];
            probe.get_mut(id).value.data_mut()[k] = orig + eps;
            let hi = eval(&probe)?;
            probe.get_mut(id).value.data_mut()[k] = orig - eps;
            let lo = eval(&probe)?;
            probe.get_mut(id).value.data_mut()[k] = orig;
            worst = worst.max(relative(analytic[pi][k], (hi - lo) / (2.0 * eps)));
        }
    }
    Ok(worst)
}
