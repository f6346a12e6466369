//! Central-difference gradient oracle.
//!
//! Relative error is measured per compared vector as
//! `max|analytic − numeric| / max(max|analytic|, max|numeric|, 1e-12)`,
//! i.e. relative to the gradient's own scale, which keeps near-zero
//! coordinates from dominating through round-off.

use super::{Tape, Tensor, Var};
use crate::rng::Seed;

pub const DEFAULT_STEP: f64 = 1e-5;

/// `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h` for every coordinate of `x`.
pub fn finite_diff_grad(mut f: impl FnMut(&Tensor) -> f64, x: &Tensor, h: f64) -> Tensor {
    let mut probe = x.clone();
    let mut out = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let fp = f(&probe);
        probe.data_mut()[i] = orig - h;
        let fm = f(&probe);
        probe.data_mut()[i] = orig;
        out[i] = (fp - fm) / (2.0 * h);
    }
    Tensor::from_raw(x.shape().to_vec(), out)
}

/// Central difference restricted to the listed coordinates.
pub fn finite_diff_at(mut f: impl FnMut(&Tensor) -> f64, x: &Tensor, coords: &[usize], h: f64) -> Vec<f64> {
    let mut probe = x.clone();
    coords
        .iter()
        .map(|&i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + h;
            let fp = f(&probe);
            probe.data_mut()[i] = orig - h;
            let fm = f(&probe);
            probe.data_mut()[i] = orig;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = analytic.iter().chain(numeric).map(|v| v.abs()).fold(1e-12, f64::max);
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n).abs()).fold(0.0, f64::max);
    diff / scale
}

/// Fixed random projection used to reduce a tensor output to a scalar loss.
pub fn projection_weights(n: usize, seed: Seed) -> Vec<f64> {
    seed.rng().vec_uniform(n, -1.0, 1.0)
}

/// Check every input gradient of `f` against central differences, using the
/// scalar loss `Σ wᵢ·f(x)ᵢ` with random weights. Returns the worst relative
/// error over all inputs.
pub fn check_op(inputs: &[Tensor], f: impl Fn(&[Var]) -> Var, seed: Seed) -> f64 {
    let eval = |ts: &[Tensor]| -> (Tape, Vec<Var>, Var) {
        let tape = Tape::new();
        let vars: Vec<Var> = ts.iter().map(|t| tape.var(t.clone())).collect();
        let y = f(&vars);
        (tape, vars, y)
    };
    let (_, vars, y) = eval(inputs);
    let w = projection_weights(y.numel(), seed);
    let weighted = |y: &Var| -> f64 { y.value().data().iter().zip(&w).map(|(a, b)| a * b).sum() };
    let wt = y.tape().constant(Tensor::from_raw(y.shape(), w.clone()));
    y.mul(&wt).expect("same shape").sum().backward().expect("scalar loss");

    let mut worst: f64 = 0.0;
    for (k, var) in vars.iter().enumerate() {
        let analytic = var.grad().unwrap_or_else(|| vec![0.0; var.numel()]);
        let numeric = finite_diff_grad(
            |xk| {
                let mut ts = inputs.to_vec();
                ts[k] = xk.clone();
                let (_, _, y) = eval(&ts);
                weighted(&y)
            },
            &inputs[k],
            DEFAULT_STEP,
        );
        worst = worst.max(relative_error(&analytic, numeric.data()));
    }
    worst
}
