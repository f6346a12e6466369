use std::rc::Rc;

use super::kernels::{self, Head, HeadGrad};
use super::{gather_head, scatter_head, SsdMode};
use crate::tensor::{Result, Tensor, TensorError, Var};

fn head_view<'a>(
    len: usize,
    p: usize,
    n: usize,
    xh: &'a [f64],
    dt: &'a [f64],
    a: f64,
    b: &'a [f64],
    c: &'a [f64],
) -> Head<'a> {
    Head { len, head_dim: p, state_dim: n, x: xh, dt, a, b, c }
}

fn head_dt(dt: &[f64], len: usize, heads: usize, head: usize) -> Vec<f64> {
    (0..len).map(|t| dt[t * heads + head]).collect()
}

/// Differentiable multi-head SSD.
///
/// `x: T×(H·P)`, `dt: T×H` (positive step sizes), `a: [H]`, `b, c: T×N`.
pub fn ssd_scan(x: &Var, dt: &Var, a: &Var, b: &Var, c: &Var, mode: SsdMode) -> Result<Var> {
    let (xv, dtv, av, bv, cv) = (x.value(), dt.value(), a.value(), b.value(), c.value());
    let heads = av.len();
    let bad = |msg: String| TensorError::Invalid { op: "ssd_scan", msg };
    if xv.rank() != 2 || heads == 0 || xv.shape()[1] % heads != 0 {
        return Err(bad(format!("x {:?} not divisible into {heads} heads", xv.shape())));
    }
    let (len, width) = (xv.shape()[0], xv.shape()[1]);
    if dtv.shape() != [len, heads] {
        return Err(bad(format!("dt {:?}, expected [{len}, {heads}]", dtv.shape())));
    }
    if bv.rank() != 2 || bv.shape() != cv.shape() || bv.shape()[0] != len {
        return Err(bad(format!("B {:?} / C {:?}, expected [{len}, N]", bv.shape(), cv.shape())));
    }
    if let SsdMode::Chunked(0) = mode {
        return Err(bad("chunk size must be at least 1".into()));
    }
    if dtv.data().iter().any(|d| !(*d > 0.0)) {
        return Err(bad("step sizes must be positive".into()));
    }
    let p = width / heads;
    let n = bv.shape()[1];

    let mut y = vec![0.0; len * width];
    for head in 0..heads {
        let xh = gather_head(xv.data(), len, width, head, p);
        let dth = head_dt(dtv.data(), len, heads, head);
        let h = head_view(len, p, n, &xh, &dth, av.data()[head], bv.data(), cv.data());
        let yh = match mode {
            SsdMode::Recurrence => kernels::recurrence_forward(&h),
            SsdMode::Quadratic => kernels::quadratic_forward(&h),
            SsdMode::Chunked(q) => kernels::chunked_forward(&h, q),
        };
        scatter_head(&mut y, &yh, len, width, head, p);
    }
    let out = Rc::new(Tensor::from_raw(vec![len, width], y));

    x.tape().custom(
        &[x, dt, a, b, c],
        out,
        Box::new(move |g, _needs| {
            let mut gx = vec![0.0; len * width];
            let mut gdt = vec![0.0; len * heads];
            let mut ga = vec![0.0; heads];
            let mut gb = vec![0.0; len * n];
            let mut gc = vec![0.0; len * n];
            for head in 0..heads {
                let xh = gather_head(xv.data(), len, width, head, p);
                let gyh = gather_head(g, len, width, head, p);
                let dth = head_dt(dtv.data(), len, heads, head);
                let h = head_view(len, p, n, &xh, &dth, av.data()[head], bv.data(), cv.data());
                let hg: HeadGrad = match mode {
                    SsdMode::Recurrence => kernels::recurrence_backward(&h, &gyh),
                    SsdMode::Quadratic => kernels::quadratic_backward(&h, &gyh),
                    SsdMode::Chunked(q) => kernels::chunked_backward(&h, q, &gyh),
                };
                scatter_head(&mut gx, &hg.x, len, width, head, p);
                for t in 0..len {
                    gdt[t * heads + head] = hg.dt[t];
                }
                ga[head] = hg.a;
                gb.iter_mut().zip(&hg.b).for_each(|(o, v)| *o += v);
                gc.iter_mut().zip(&hg.c).for_each(|(o, v)| *o += v);
            }
            vec![Some(gx), Some(gdt), Some(ga), Some(gb), Some(gc)]
        }),
    )
}
