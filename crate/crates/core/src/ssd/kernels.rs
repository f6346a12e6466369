//! Single-head SSD kernels on raw row-major buffers.
//!
//! One head sees `x[T×P]`, step sizes `dt[T]` (already positive), a scalar
//! decay `a`, and shared projections `b[T×N]`, `c[T×N]`. All three modes
//! compute `y_j = Σ_{i≤j} (c_j·b_i) · exp(Σ_{k=i+1..j} dt_k·a) · dt_i · x_i`.
//! Forward passes report their multiplications to the thread-local counter.

use crate::tensor::kernels::count_multiplies;

#[derive(Debug, Clone, Copy)]
pub struct Head<'a> {
    pub len: usize,
    pub head_dim: usize,
    pub state_dim: usize,
    pub x: &'a [f64],
    pub dt: &'a [f64],
    pub a: f64,
    pub b: &'a [f64],
    pub c: &'a [f64],
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrad {
    pub x: Vec<f64>,
    pub dt: Vec<f64>,
    pub a: f64,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl HeadGrad {
    fn zeros(h: &Head) -> Self {
        Self {
            x: vec![0.0; h.len * h.head_dim],
            dt: vec![0.0; h.len],
            a: 0.0,
            b: vec![0.0; h.len * h.state_dim],
            c: vec![0.0; h.len * h.state_dim],
        }
    }
}

impl Head<'_> {
    fn xr(&self, t: usize) -> &[f64] {
        &self.x[t * self.head_dim..(t + 1) * self.head_dim]
    }
    fn br(&self, t: usize) -> &[f64] {
        &self.b[t * self.state_dim..(t + 1) * self.state_dim]
    }
    fn cr(&self, t: usize) -> &[f64] {
        &self.c[t * self.state_dim..(t + 1) * self.state_dim]
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Sequential scan; returns the outputs and every state `h_t` (`T×N×P`).
pub fn recurrence_states(h: &Head) -> (Vec<f64>, Vec<f64>) {
    let (n, p) = (h.state_dim, h.head_dim);
    let mut y = vec![0.0; h.len * p];
    let mut states = vec![0.0; h.len * n * p];
    let mut state = vec![0.0; n * p];
    for t in 0..h.len {
        let abar = (h.dt[t] * h.a).exp();
        let (bt, xt, ct) = (h.br(t), h.xr(t), h.cr(t));
        for r in 0..n {
            let w = h.dt[t] * bt[r];
            let row = &mut state[r * p..(r + 1) * p];
            for (s, xv) in row.iter_mut().zip(xt) {
                *s = abar * *s + w * xv;
            }
        }
        let yt = &mut y[t * p..(t + 1) * p];
        for r in 0..n {
            let cv = ct[r];
            for (yv, s) in yt.iter_mut().zip(&state[r * p..(r + 1) * p]) {
                *yv += cv * s;
            }
        }
        states[t * n * p..(t + 1) * n * p].copy_from_slice(&state);
    }
    count_multiplies((h.len * (n + 3 * n * p)) as u64);
    (y, states)
}

pub fn recurrence_forward(h: &Head) -> Vec<f64> {
    recurrence_states(h).0
}

pub fn recurrence_backward(h: &Head, gy: &[f64]) -> HeadGrad {
    let (n, p) = (h.state_dim, h.head_dim);
    let (_, states) = recurrence_states(h);
    let mut g = HeadGrad::zeros(h);
    let mut carry = vec![0.0; n * p];
    for t in (0..h.len).rev() {
        let abar = (h.dt[t] * h.a).exp();
        let (bt, xt, ct) = (h.br(t), h.xr(t), h.cr(t));
        let gyt = &gy[t * p..(t + 1) * p];
        let ht = &states[t * n * p..(t + 1) * n * p];
        // gradient w.r.t. h_t
        for r in 0..n {
            for q in 0..p {
                carry[r * p + q] += ct[r] * gyt[q];
            }
        }
        for r in 0..n {
            g.c[t * n + r] = dot(&ht[r * p..(r + 1) * p], gyt);
            let proj = dot(&carry[r * p..(r + 1) * p], xt);
            g.b[t * n + r] = h.dt[t] * proj;
            g.dt[t] += bt[r] * proj;
        }
        for q in 0..p {
            let s: f64 = (0..n).map(|r| carry[r * p + q] * bt[r]).sum();
            g.x[t * p + q] = h.dt[t] * s;
        }
        if t > 0 {
            let prev = &states[(t - 1) * n * p..t * n * p];
            let s = dot(&carry, prev);
            g.dt[t] += s * abar * h.a;
            g.a += s * abar * h.dt[t];
        }
        carry.iter_mut().for_each(|v| *v *= abar);
    }
    g
}

/// Inclusive cumulative sum of `dt·a` over `[start, end)`, local to the range.
fn local_cumsum(h: &Head, start: usize, end: usize) -> Vec<f64> {
    let mut acc = 0.0;
    (start..end)
        .map(|t| {
            acc += h.dt[t] * h.a;
            acc
        })
        .collect()
}

/// Masked quadratic form over tokens `[start, end)`, accumulating into `y`.
fn masked_block_forward(h: &Head, start: usize, end: usize, cum: &[f64], y: &mut [f64]) {
    let p = h.head_dim;
    let len = end - start;
    for j in start..end {
        let cj = h.cr(j);
        let yj = &mut y[j * p..(j + 1) * p];
        for i in start..=j {
            let s = dot(cj, h.br(i)) * (cum[j - start] - cum[i - start]).exp() * h.dt[i];
            for (yv, xv) in yj.iter_mut().zip(h.xr(i)) {
                *yv += s * xv;
            }
        }
    }
    let pairs = len * (len + 1) / 2;
    count_multiplies((pairs * (h.state_dim + 2 + p)) as u64);
}

/// Backward of [`masked_block_forward`]; adds into `g` and returns the
/// gradient of the local cumsum.
fn masked_block_backward(h: &Head, start: usize, end: usize, cum: &[f64], gy: &[f64], g: &mut HeadGrad) -> Vec<f64> {
    let (n, p) = (h.state_dim, h.head_dim);
    let mut gcum = vec![0.0; end - start];
    for j in start..end {
        let cj = h.cr(j);
        let gyj = &gy[j * p..(j + 1) * p];
        for i in start..=j {
            let bi = h.br(i);
            let xi = h.xr(i);
            let gram = dot(cj, bi);
            let decay = (cum[j - start] - cum[i - start]).exp();
            let s = gram * decay * h.dt[i];
            let gs = dot(gyj, xi);
            for (gx, gv) in g.x[i * p..(i + 1) * p].iter_mut().zip(gyj) {
                *gx += s * gv;
            }
            let ggram = gs * decay * h.dt[i];
            for r in 0..n {
                g.c[j * n + r] += ggram * bi[r];
                g.b[i * n + r] += ggram * cj[r];
            }
            g.dt[i] += gs * gram * decay;
            let e = gs * gram * h.dt[i] * decay;
            gcum[j - start] += e;
            gcum[i - start] -= e;
        }
    }
    gcum
}

/// Fold the gradient of an inclusive local cumsum of `dt·a` back into `dt`
/// and `a`.
fn fold_cumsum_grad(h: &Head, start: usize, gcum: &[f64], g: &mut HeadGrad) {
    let mut acc = 0.0;
    for k in (0..gcum.len()).rev() {
        acc += gcum[k];
        g.dt[start + k] += acc * h.a;
        g.a += acc * h.dt[start + k];
    }
}

pub fn quadratic_forward(h: &Head) -> Vec<f64> {
    let mut y = vec![0.0; h.len * h.head_dim];
    let cum = local_cumsum(h, 0, h.len);
    masked_block_forward(h, 0, h.len, &cum, &mut y);
    y
}

pub fn quadratic_backward(h: &Head, gy: &[f64]) -> HeadGrad {
    let mut g = HeadGrad::zeros(h);
    let cum = local_cumsum(h, 0, h.len);
    let gcum = masked_block_backward(h, 0, h.len, &cum, gy, &mut g);
    fold_cumsum_grad(h, 0, &gcum, &mut g);
    g
}

fn chunk_bounds(len: usize, chunk: usize) -> Vec<(usize, usize)> {
    (0..len).step_by(chunk.max(1)).map(|s| (s, (s + chunk).min(len))).collect()
}

/// Chunked forward; returns outputs and the state entering each chunk.
/// `drop_carry_at` zeroes the carried state at that chunk index (fault hook).
pub fn chunked_states(h: &Head, chunk: usize, drop_carry_at: Option<usize>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let (n, p) = (h.state_dim, h.head_dim);
    let mut y = vec![0.0; h.len * p];
    let bounds = chunk_bounds(h.len, chunk);
    let mut state = vec![0.0; n * p];
    let mut entering = Vec::with_capacity(bounds.len());
    let mut muls = 0usize;
    for (k, &(s, e)) in bounds.iter().enumerate() {
        if drop_carry_at == Some(k) {
            state.iter_mut().for_each(|v| *v = 0.0);
        }
        let cum = local_cumsum(h, s, e);
        masked_block_forward(h, s, e, &cum, &mut y);
        if k > 0 {
            // contribution of the carried state
            let mut wc = vec![0.0; n];
            for j in s..e {
                let w = cum[j - s].exp();
                wc.iter_mut().zip(h.cr(j)).for_each(|(o, cv)| *o = w * cv);
                let yj = &mut y[j * p..(j + 1) * p];
                for r in 0..n {
                    for (yv, sv) in yj.iter_mut().zip(&state[r * p..(r + 1) * p]) {
                        *yv += wc[r] * sv;
                    }
                }
            }
            muls += (e - s) * (n + n * p);
        }
        entering.push(state.clone());
        if k + 1 < bounds.len() {
            let last = cum[e - s - 1];
            let total = last.exp();
            state.iter_mut().for_each(|v| *v *= total);
            muls += n * p;
            for i in s..e {
                let w = (last - cum[i - s]).exp() * h.dt[i];
                let (bi, xi) = (h.br(i), h.xr(i));
                for r in 0..n {
                    let wb = w * bi[r];
                    for (sv, xv) in state[r * p..(r + 1) * p].iter_mut().zip(xi) {
                        *sv += wb * xv;
                    }
                }
            }
            muls += (e - s) * (1 + n + n * p);
        }
    }
    count_multiplies(muls as u64);
    (y, entering)
}

pub fn chunked_forward(h: &Head, chunk: usize) -> Vec<f64> {
    chunked_states(h, chunk, None).0
}

pub fn chunked_backward(h: &Head, chunk: usize, gy: &[f64]) -> HeadGrad {
    let (n, p) = (h.state_dim, h.head_dim);
    let (_, entering) = chunked_states(h, chunk, None);
    let bounds = chunk_bounds(h.len, chunk);
    let mut g = HeadGrad::zeros(h);
    // gradient w.r.t. the state leaving the current chunk
    let mut g_out = vec![0.0; n * p];
    for (k, &(s, e)) in bounds.iter().enumerate().rev() {
        let cum = local_cumsum(h, s, e);
        let mut gcum = masked_block_backward(h, s, e, &cum, gy, &mut g);
        let h_in = &entering[k];
        let mut g_in = vec![0.0; n * p];
        if k + 1 < bounds.len() {
            let last = cum[e - s - 1];
            let total = last.exp();
            let carried = total * dot(&g_out, h_in);
            gcum[e - s - 1] += carried;
            g_in.iter_mut().zip(&g_out).for_each(|(gi, go)| *gi += total * go);
            for i in s..e {
                let u = (last - cum[i - s]).exp();
                let (bi, xi) = (h.br(i), h.xr(i));
                let mut proj_sum = 0.0;
                for r in 0..n {
                    let proj = dot(&g_out[r * p..(r + 1) * p], xi);
                    g.b[i * n + r] += u * h.dt[i] * proj;
                    proj_sum += bi[r] * proj;
                }
                for q in 0..p {
                    let s2: f64 = (0..n).map(|r| g_out[r * p + q] * bi[r]).sum();
                    g.x[i * p + q] += u * h.dt[i] * s2;
                }
                g.dt[i] += u * proj_sum;
                let e_term = u * h.dt[i] * proj_sum;
                gcum[e - s - 1] += e_term;
                gcum[i - s] -= e_term;
            }
        }
        if k > 0 {
            for j in s..e {
                let w = cum[j - s].exp();
                let cj = h.cr(j);
                let gyj = &gy[j * p..(j + 1) * p];
                let mut inner = 0.0;
                for r in 0..n {
                    let hr = &h_in[r * p..(r + 1) * p];
                    let proj = dot(hr, gyj);
                    g.c[j * n + r] += w * proj;
                    inner += cj[r] * proj;
                    for (gi, gv) in g_in[r * p..(r + 1) * p].iter_mut().zip(gyj) {
                        *gi += w * cj[r] * gv;
                    }
                }
                gcum[j - s] += w * inner;
            }
        }
        fold_cumsum_grad(h, s, &gcum, &mut g);
        g_out = g_in;
    }
    g
}

/// Dense `T×T` transfer matrix of one head, built from explicit products of
/// the per-step decays.
pub fn transfer_matrix(h: &Head) -> Vec<f64> {
    let t = h.len;
    let abar: Vec<f64> = h.dt.iter().map(|d| (d * h.a).exp()).collect();
    let mut m = vec![0.0; t * t];
    for i in 0..t {
        let mut prod = 1.0;
        for j in i..t {
            if j > i {
                prod *= abar[j];
            }
            m[j * t + i] = dot(h.cr(j), h.br(i)) * prod * h.dt[i];
        }
    }
    m
}
