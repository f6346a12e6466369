//! Differentiable ops on [`Var`]. Shapes are explicit: the only implicit
//! broadcast is scalar-with-tensor, row/column bias ops are named.

use std::rc::Rc;

use super::kernels::{count_multiplies, gemm};
use super::{numel, Result, Tensor, TensorError, Var};

fn same_shape(op: &'static str, a: &Var, b: &Var) -> Result<Vec<usize>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa != sb {
        return Err(TensorError::ShapeMismatch { op, lhs: sa, rhs: sb });
    }
    Ok(sa)
}

fn rank2(op: &'static str, v: &Var) -> Result<(usize, usize)> {
    let s = v.shape();
    match s.as_slice() {
        [r, c] => Ok((*r, *c)),
        _ => Err(TensorError::Rank { op, expected: 2, shape: s }),
    }
}

/// Split a shape around `axis` into (outer, len, inner) extents.
fn axis_extents(op: &'static str, shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(TensorError::Axis { op, axis, shape: shape.to_vec() });
    }
    Ok((numel(&shape[..axis]), shape[axis], numel(&shape[axis + 1..])))
}

impl Var {
    /// Elementwise map with derivative expressed through input and output.
    fn map(&self, f: impl Fn(f64) -> f64, df: impl Fn(f64, f64) -> f64 + 'static) -> Var {
        let x = self.value();
        let y = Rc::new(Tensor::from_raw(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect()));
        let yc = y.clone();
        self.tape()
            .custom(
                &[self],
                y,
                Box::new(move |g, _| {
                    let d = x.data().iter().zip(yc.data()).zip(g).map(|((&xi, &yi), &gi)| gi * df(xi, yi));
                    vec![Some(d.collect())]
                }),
            )
            .expect("single-tape unary op")
    }

    pub fn add(&self, other: &Var) -> Result<Var> {
        let shape = same_shape("add", self, other)?;
        let (a, b) = (self.value(), other.value());
        let out = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
        self.tape().custom(
            &[self, other],
            Tensor::from_raw(shape, out),
            Box::new(|g, needs| vec![needs[0].then(|| g.to_vec()), needs[1].then(|| g.to_vec())]),
        )
    }

    pub fn sub(&self, other: &Var) -> Result<Var> {
        let shape = same_shape("sub", self, other)?;
        let (a, b) = (self.value(), other.value());
        let out = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
        self.tape().custom(
            &[self, other],
            Tensor::from_raw(shape, out),
            Box::new(|g, needs| vec![needs[0].then(|| g.to_vec()), needs[1].then(|| g.iter().map(|v| -v).collect())]),
        )
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: &Var) -> Result<Var> {
        let shape = same_shape("mul", self, other)?;
        let (a, b) = (self.value(), other.value());
        count_multiplies(a.len() as u64);
        let out = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
        self.tape().custom(
            &[self, other],
            Tensor::from_raw(shape, out),
            Box::new(move |g, needs| {
                vec![
                    needs[0].then(|| g.iter().zip(b.data()).map(|(gi, bi)| gi * bi).collect()),
                    needs[1].then(|| g.iter().zip(a.data()).map(|(gi, ai)| gi * ai).collect()),
                ]
            }),
        )
    }

    pub fn scale(&self, c: f64) -> Var {
        self.map(move |v| c * v, move |_, _| c)
    }

    pub fn add_scalar(&self, c: f64) -> Var {
        self.map(move |v| v + c, |_, _| 1.0)
    }

    pub fn neg(&self) -> Var {
        self.scale(-1.0)
    }

    pub fn exp(&self) -> Var {
        self.map(f64::exp, |_, y| y)
    }

    pub fn square(&self) -> Var {
        self.map(|v| v * v, |x, _| 2.0 * x)
    }

    pub fn abs(&self) -> Var {
        self.map(f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn sigmoid(&self) -> Var {
        self.map(sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn tanh(&self) -> Var {
        self.map(f64::tanh, |_, y| 1.0 - y * y)
    }

    /// `x · σ(x)`
    pub fn silu(&self) -> Var {
        self.map(|x| x * sigmoid(x), |x, _| silu_grad(x))
    }

    /// `ln(1 + eˣ)`, evaluated without overflow.
    pub fn softplus(&self) -> Var {
        self.map(softplus, |x, _| sigmoid(x))
    }

    /// Wrap angles to (−π, π]. Derivative is 1 away from the branch cut.
    pub fn wrap_angle(&self) -> Var {
        self.map(wrap_angle, |_, _| 1.0)
    }

    pub fn sum(&self) -> Var {
        let x = self.value();
        let n = x.len();
        let s = x.data().iter().sum();
        self.tape()
            .custom(&[self], Tensor::scalar(s), Box::new(move |g, _| vec![Some(vec![g[0]; n])]))
            .expect("single-tape op")
    }

    pub fn mean(&self) -> Var {
        let n = self.numel().max(1) as f64;
        self.sum().scale(1.0 / n)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var> {
        let x = self.value();
        let out = x.reshape(shape)?;
        self.tape().custom(&[self], out, Box::new(|g, _| vec![Some(g.to_vec())]))
    }

    /// Rank-2 matrix product.
    pub fn matmul(&self, other: &Var) -> Result<Var> {
        let (m, k) = rank2("matmul", self)?;
        let (k2, n) = rank2("matmul", other)?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch { op: "matmul", lhs: self.shape(), rhs: other.shape() });
        }
        let (a, b) = (self.value(), other.value());
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, a.data(), false, b.data(), false, &mut out, false);
        self.tape().custom(
            &[self, other],
            Tensor::from_raw(vec![m, n], out),
            Box::new(move |g, needs| {
                let ga = needs[0].then(|| {
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, g, false, b.data(), true, &mut ga, false);
                    ga
                });
                let gb = needs[1].then(|| {
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, a.data(), true, g, false, &mut gb, false);
                    gb
                });
                vec![ga, gb]
            }),
        )
    }

    /// Rank-2 transpose.
    pub fn transpose(&self) -> Result<Var> {
        let (r, c) = rank2("transpose", self)?;
        let x = self.value();
        let out = super::kernels::transpose(r, c, x.data());
        self.tape().custom(
            &[self],
            Tensor::from_raw(vec![c, r], out),
            Box::new(move |g, _| vec![Some(super::kernels::transpose(c, r, g))]),
        )
    }

    /// `[R×C] + bias[C]` broadcast over rows.
    pub fn add_row(&self, bias: &Var) -> Result<Var> {
        let (r, c) = rank2("add_row", self)?;
        if bias.shape() != [c] {
            return Err(TensorError::ShapeMismatch { op: "add_row", lhs: self.shape(), rhs: bias.shape() });
        }
        let (x, b) = (self.value(), bias.value());
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(c) {
            row.iter_mut().zip(b.data()).for_each(|(v, bi)| *v += bi);
        }
        self.tape().custom(
            &[self, bias],
            Tensor::from_raw(vec![r, c], out),
            Box::new(move |g, needs| {
                let gb = needs[1].then(|| {
                    let mut gb = vec![0.0; c];
                    for row in g.chunks(c) {
                        gb.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                    }
                    gb
                });
                vec![needs[0].then(|| g.to_vec()), gb]
            }),
        )
    }

    /// `[R×C] ⊙ scale[C]` broadcast over rows.
    pub fn mul_row(&self, scale: &Var) -> Result<Var> {
        let (r, c) = rank2("mul_row", self)?;
        if scale.shape() != [c] {
            return Err(TensorError::ShapeMismatch { op: "mul_row", lhs: self.shape(), rhs: scale.shape() });
        }
        let (x, s) = (self.value(), scale.value());
        count_multiplies((r * c) as u64);
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(c) {
            row.iter_mut().zip(s.data()).for_each(|(v, si)| *v *= si);
        }
        self.tape().custom(
            &[self, scale],
            Tensor::from_raw(vec![r, c], out),
            Box::new(move |g, needs| {
                let gx = needs[0].then(|| {
                    let mut gx = g.to_vec();
                    for row in gx.chunks_mut(c) {
                        row.iter_mut().zip(s.data()).for_each(|(v, si)| *v *= si);
                    }
                    gx
                });
                let gs = needs[1].then(|| {
                    let mut gs = vec![0.0; c];
                    for (grow, xrow) in g.chunks(c).zip(x.data().chunks(c)) {
                        for j in 0..c {
                            gs[j] += grow[j] * xrow[j];
                        }
                    }
                    gs
                });
                vec![gx, gs]
            }),
        )
    }

    /// `[R×C] + bias[R]` broadcast over columns.
    pub fn add_col(&self, bias: &Var) -> Result<Var> {
        let (r, c) = rank2("add_col", self)?;
        if bias.shape() != [r] {
            return Err(TensorError::ShapeMismatch { op: "add_col", lhs: self.shape(), rhs: bias.shape() });
        }
        let (x, b) = (self.value(), bias.value());
        let mut out = x.data().to_vec();
        for (row, bi) in out.chunks_mut(c).zip(b.data()) {
            row.iter_mut().for_each(|v| *v += bi);
        }
        self.tape().custom(
            &[self, bias],
            Tensor::from_raw(vec![r, c], out),
            Box::new(move |g, needs| {
                let gb = needs[1].then(|| g.chunks(c).map(|row| row.iter().sum()).collect());
                vec![needs[0].then(|| g.to_vec()), gb]
            }),
        )
    }

    /// Normalize each row of a rank-2 tensor to zero mean and unit variance
    /// (biased variance, `eps` inside the square root). No affine part.
    pub fn layer_norm_rows(&self, eps: f64) -> Result<Var> {
        let (r, c) = rank2("layer_norm_rows", self)?;
        let x = self.value();
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        for i in 0..r {
            let row = &x.data()[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..c {
                xhat[i * c + j] = (row[j] - mean) * is;
            }
        }
        let xhat = Rc::new(Tensor::from_raw(vec![r, c], xhat));
        let xh = xhat.clone();
        self.tape().custom(
            &[self],
            xhat,
            Box::new(move |g, _| {
                let mut gx = vec![0.0; r * c];
                for i in 0..r {
                    let gr = &g[i * c..(i + 1) * c];
                    let xr = &xh.data()[i * c..(i + 1) * c];
                    let mg = gr.iter().sum::<f64>() / c as f64;
                    let mgx = gr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                    for j in 0..c {
                        gx[i * c + j] = inv_std[i] * (gr[j] - mg - xr[j] * mgx);
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&self) -> Result<Var> {
        let (r, c) = rank2("softmax_rows", self)?;
        let x = self.value();
        let y = Rc::new(Tensor::from_raw(vec![r, c], softmax_rows_raw(r, c, x.data())));
        let yc = y.clone();
        self.tape().custom(
            &[self],
            y,
            Box::new(move |g, _| {
                let mut gx = vec![0.0; r * c];
                for i in 0..r {
                    let yr = &yc.data()[i * c..(i + 1) * c];
                    let gr = &g[i * c..(i + 1) * c];
                    let dotv: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        gx[i * c + j] = yr[j] * (gr[j] - dotv);
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Inclusive cumulative sum along `axis`.
    pub fn cumsum(&self, axis: usize) -> Result<Var> {
        let shape = self.shape();
        let (outer, len, inner) = axis_extents("cumsum", &shape, axis)?;
        let x = self.value();
        let mut out = x.data().to_vec();
        for o in 0..outer {
            for k in 1..len {
                for i in 0..inner {
                    let cur = (o * len + k) * inner + i;
                    out[cur] += out[cur - inner];
                }
            }
        }
        self.tape().custom(
            &[self],
            Tensor::from_raw(shape, out),
            Box::new(move |g, _| {
                // Reverse cumulative sum.
                let mut gx = g.to_vec();
                for o in 0..outer {
                    for k in (0..len.saturating_sub(1)).rev() {
                        for i in 0..inner {
                            let cur = (o * len + k) * inner + i;
                            gx[cur] += gx[cur + inner];
                        }
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Contiguous slice `[start, start+len)` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape();
        let (outer, full, inner) = axis_extents("slice", &shape, axis)?;
        if start + len > full {
            return Err(TensorError::Invalid {
                op: "slice",
                msg: format!("range {start}..{} exceeds axis {axis} of {shape:?}", start + len),
            });
        }
        let x = self.value();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            out.extend_from_slice(&x.data()[base..base + len * inner]);
        }
        let mut oshape = shape.clone();
        oshape[axis] = len;
        self.tape().custom(
            &[self],
            Tensor::from_raw(oshape, out),
            Box::new(move |g, _| {
                let mut gx = vec![0.0; outer * full * inner];
                for o in 0..outer {
                    let base = (o * full + start) * inner;
                    gx[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Split along `axis` into consecutive pieces of the given sizes.
    pub fn split(&self, sizes: &[usize], axis: usize) -> Result<Vec<Var>> {
        let shape = self.shape();
        let (_, full, _) = axis_extents("split", &shape, axis)?;
        if sizes.iter().sum::<usize>() != full {
            return Err(TensorError::Invalid {
                op: "split",
                msg: format!("sizes {sizes:?} do not sum to axis {axis} of {shape:?}"),
            });
        }
        let mut start = 0;
        sizes
            .iter()
            .map(|&n| {
                let v = self.slice(axis, start, n);
                start += n;
                v
            })
            .collect()
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(parts: &[&Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| TensorError::Invalid { op: "concat", msg: "no inputs".into() })?;
        let base = first.shape();
        axis_extents("concat", &base, axis)?;
        let mut lens = Vec::with_capacity(parts.len());
        for p in parts {
            let s = p.shape();
            let compatible =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TensorError::ShapeMismatch { op: "concat", lhs: base, rhs: s });
            }
            lens.push(s[axis]);
        }
        let outer = numel(&base[..axis]);
        let inner = numel(&base[axis + 1..]);
        let total: usize = lens.iter().sum();
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, &l) in values.iter().zip(&lens) {
                out.extend_from_slice(&v.data()[o * l * inner..(o + 1) * l * inner]);
            }
        }
        let mut oshape = base.clone();
        oshape[axis] = total;
        first.tape().custom(
            parts,
            Tensor::from_raw(oshape, out),
            Box::new(move |g, needs| {
                let mut offsets = Vec::with_capacity(lens.len());
                let mut acc = 0;
                for &l in &lens {
                    offsets.push(acc);
                    acc += l;
                }
                lens.iter()
                    .zip(&offsets)
                    .zip(needs)
                    .map(|((&l, &off), &need)| {
                        need.then(|| {
                            let mut gp = Vec::with_capacity(outer * l * inner);
                            for o in 0..outer {
                                let b = (o * total + off) * inner;
                                gp.extend_from_slice(&g[b..b + l * inner]);
                            }
                            gp
                        })
                    })
                    .collect()
            }),
        )
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

pub fn wrap_angle(a: f64) -> f64 {
    let w = a.sin().atan2(a.cos());
    // atan2 returns [−π, π]; map −π onto π.
    if w <= -std::f64::consts::PI {
        std::f64::consts::PI
    } else {
        w
    }
}

pub(crate) fn softmax_rows_raw(r: usize, c: usize, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let row = &x[i * c..(i + 1) * c];
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for j in 0..c {
            let e = (row[j] - m).exp();
            out[i * c + j] = e;
            s += e;
        }
        out[i * c..(i + 1) * c].iter_mut().for_each(|v| *v /= s);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Seed;
    use crate::tensor::gradcheck::{check_op, finite_diff_grad};
    use crate::tensor::Tape;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_values() {
        let tape = Tape::new();
        let i2 = tape.constant(Tensor::eye(2));
        let a = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        assert_eq!(i2.matmul(&a).unwrap().value().data(), &[1.0, 2.0, 3.0, 4.0]);
        let b = tape.constant(t(&[2, 1], &[5.0, 6.0]));
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), vec![2, 1]);
        assert_eq!(c.value().data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_rejects_inner_mismatch_reporting_both_shapes() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        match a.matmul(&b) {
            Err(TensorError::ShapeMismatch { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn softmax_examples() {
        let tape = Tape::new();
        let u = tape.constant(t(&[1, 4], &[0.3; 4])).softmax_rows().unwrap();
        u.value().data().iter().for_each(|v| assert!((v - 0.25).abs() < 1e-15));

        let x = Tensor::randn(&[3, 5], 2.0, Seed(4));
        let shifted = Tensor::from_raw(x.shape().to_vec(), x.data().iter().map(|v| v + 17.5).collect());
        let a = tape.constant(x).softmax_rows().unwrap().value();
        let b = tape.constant(shifted).softmax_rows().unwrap().value();
        assert!(a.max_abs_diff(&b) < 1e-12);
        for row in a.data().chunks(5) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|v| *v >= 0.0));
        }

        // e^10 / (e^10 + 2) evaluated by hand: 0.999909...
        let p = tape.constant(t(&[1, 3], &[10.0, 0.0, 0.0])).softmax_rows().unwrap().value();
        let want = 1.0 / (1.0 + 2.0 * (-10.0f64).exp());
        assert!((p.data()[0] - want).abs() < 1e-15);
        assert!((p.data()[0] - 0.99990).abs() < 1e-4);
    }

    #[test]
    fn concat_split_round_trip_is_bit_exact() {
        let tape = Tape::new();
        for axis in 0..3 {
            let mut sa = vec![2, 3, 4];
            let mut sb = vec![2, 3, 4];
            sa[axis] = 1;
            sb[axis] = 5;
            let a = tape.constant(Tensor::randn(&sa, 1.0, Seed(axis as u64)));
            let b = tape.constant(Tensor::randn(&sb, 1.0, Seed(10 + axis as u64)));
            let c = Var::concat(&[&a, &b], axis).unwrap();
            let parts = c.split(&[1, 5], axis).unwrap();
            assert!(parts[0].value().bit_eq(&a.value()));
            assert!(parts[1].value().bit_eq(&b.value()));
        }
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[3, 3]));
        assert!(Var::concat(&[&a, &b], 1).is_err());
        assert!(a.split(&[1, 1], 0).is_ok());
        assert!(a.split(&[1, 3], 1).is_err());
        assert!(a.slice(2, 0, 1).is_err());
    }

    #[test]
    fn silu_at_zero_and_layer_norm_moments() {
        let tape = Tape::new();
        assert_eq!(tape.constant(Tensor::scalar(0.0)).silu().item(), 0.0);
        let x = tape.constant(Tensor::randn(&[6, 33], 3.0, Seed(5)).reshape(&[6, 33]).unwrap());
        let y = x.layer_norm_rows(0.0).unwrap().value();
        for row in y.data().chunks(33) {
            let m = row.iter().sum::<f64>() / 33.0;
            let v = row.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / 33.0;
            assert!(m.abs() < 1e-10);
            assert!((v - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn backward_hand_examples() {
        let tape = Tape::new();
        let x = tape.var(Tensor::scalar(3.0));
        let y = tape.var(Tensor::scalar(5.0));
        let loss = x.mul(&y).unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![5.0]);
        assert_eq!(y.grad().unwrap(), vec![3.0]);

        // A second pass without reset accumulates.
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![10.0]);
        tape.zero_grad();
        assert!(x.grad().is_none());

        let z = tape.var(Tensor::scalar(0.0));
        z.exp().backward().unwrap();
        assert_eq!(z.grad().unwrap(), vec![1.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let tape = Tape::new();
        let x = tape.var(Tensor::zeros(&[2]));
        assert!(matches!(x.exp().backward(), Err(TensorError::NonScalarLoss(_))));
    }

    #[test]
    fn finite_diff_examples() {
        let g = finite_diff_grad(|x: &Tensor| x.data()[0] * x.data()[0], &Tensor::scalar(3.0), 1e-5);
        assert!((g.data()[0] - 6.0).abs() < 1e-8);
        let g = finite_diff_grad(|_: &Tensor| 4.2, &Tensor::zeros(&[5]), 1e-5);
        assert!(g.data().iter().all(|v| *v == 0.0));

        let x = Tensor::randn(&[7], 1.5, Seed(8));
        let fd = finite_diff_grad(|x: &Tensor| x.data().iter().map(|&v| v * sigmoid(v)).sum(), &x, 1e-5);
        for (&xi, &gi) in x.data().iter().zip(fd.data()) {
            let s = 1.0 / (1.0 + (-xi).exp());
            let analytic = s + xi * s * (1.0 - s);
            assert!((gi - analytic).abs() < 1e-6);
        }
    }

    // Every differentiable op against central differences on small random inputs.
    #[test]
    fn unary_ops_match_finite_differences() {
        type Op = fn(&Var) -> Var;
        let ops: [(&str, Op); 9] = [
            ("exp", |v| v.exp()),
            ("silu", |v| v.silu()),
            ("sigmoid", |v| v.sigmoid()),
            ("softplus", |v| v.softplus()),
            ("tanh", |v| v.tanh()),
            ("square", |v| v.square()),
            ("scale", |v| v.scale(-1.7)),
            ("sum", |v| v.sum()),
            ("cumsum", |v| v.cumsum(1).unwrap()),
        ];
        for (i, (name, op)) in ops.iter().enumerate() {
            let x = Tensor::randn(&[4, 5], 1.0, Seed(100 + i as u64));
            let err = check_op(&[x], |vs| op(&vs[0]), Seed(i as u64));
            assert!(err <= 1e-6, "{name}: rel err {err}");
        }
    }

    #[test]
    fn structural_ops_match_finite_differences() {
        let a = Tensor::randn(&[4, 6], 1.0, Seed(1));
        let b = Tensor::randn(&[6, 3], 1.0, Seed(2));
        let c = Tensor::randn(&[4, 6], 1.0, Seed(3));
        let bias6 = Tensor::randn(&[6], 1.0, Seed(4));
        let bias4 = Tensor::randn(&[4], 1.0, Seed(5));
        let cases: Vec<(&str, Vec<Tensor>, Box<dyn Fn(&[Var]) -> Var>)> = vec![
            ("matmul", vec![a.clone(), b.clone()], Box::new(|v| v[0].matmul(&v[1]).unwrap())),
            ("transpose", vec![a.clone()], Box::new(|v| v[0].transpose().unwrap())),
            ("add", vec![a.clone(), c.clone()], Box::new(|v| v[0].add(&v[1]).unwrap())),
            ("sub", vec![a.clone(), c.clone()], Box::new(|v| v[0].sub(&v[1]).unwrap())),
            ("mul", vec![a.clone(), c.clone()], Box::new(|v| v[0].mul(&v[1]).unwrap())),
            ("add_row", vec![a.clone(), bias6.clone()], Box::new(|v| v[0].add_row(&v[1]).unwrap())),
            ("mul_row", vec![a.clone(), bias6.clone()], Box::new(|v| v[0].mul_row(&v[1]).unwrap())),
            ("add_col", vec![a.clone(), bias4.clone()], Box::new(|v| v[0].add_col(&v[1]).unwrap())),
            ("layer_norm", vec![a.clone()], Box::new(|v| v[0].layer_norm_rows(1e-5).unwrap())),
            ("softmax", vec![a.clone()], Box::new(|v| v[0].softmax_rows().unwrap())),
            ("slice", vec![a.clone()], Box::new(|v| v[0].slice(1, 2, 3).unwrap())),
            ("reshape", vec![a.clone()], Box::new(|v| v[0].reshape(&[2, 12]).unwrap())),
            ("concat", vec![a.clone(), c.clone()], Box::new(|v| Var::concat(&[&v[0], &v[1]], 0).unwrap())),
            ("mean", vec![a.clone()], Box::new(|v| v[0].mean())),
        ];
        for (i, (name, inputs, f)) in cases.into_iter().enumerate() {
            let err = check_op(&inputs, |vs| f(vs), Seed(50 + i as u64));
            assert!(err <= 1e-6, "{name}: rel err {err}");
        }
    }

    #[test]
    fn wrap_angle_range() {
        use std::f64::consts::PI;
        assert!((wrap_angle(PI - 0.01 - (-PI + 0.01)) - (-0.02)).abs() < 1e-12);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
    }
}
