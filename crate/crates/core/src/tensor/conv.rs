//! Direct 2-D convolution (zero "same" padding, optional stride) and a causal
//! depthwise 1-D convolution over token sequences.

use super::kernels::count_multiplies;
use super::{Result, Tensor, TensorError, Var};

pub fn conv2d_out_dim(len: usize, k: usize, stride: usize) -> usize {
    let pad = (k - 1) / 2;
    (len + 2 * pad - k) / stride + 1
}

struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    /// Output columns `ox` whose input column `ox·s + kx − p` lands inside `[0, w)`.
    fn ox_range(&self, kx: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = if kx >= self.pad { 0 } else { (self.pad - kx).div_ceil(s) };
        // ox·s + kx − p ≤ w − 1
        let hi_incl = (self.w + self.pad).checked_sub(kx + 1).map(|v| v / s);
        let hi = hi_incl.map_or(0, |v| (v + 1).min(self.ow));
        (lo, hi.max(lo))
    }

    fn iy(&self, oy: usize, ky: usize) -> Option<usize> {
        (oy * self.stride + ky).checked_sub(self.pad).filter(|&v| v < self.h)
    }
}

fn geometry(x: &[usize], w: &[usize], b: &[usize], stride: usize) -> Result<Geometry> {
    let (&[cin, h, wd], &[cout, cin2, k, k2]) = (x, w) else {
        return Err(TensorError::Invalid {
            op: "conv2d",
            msg: format!("expected x[C×H×W] and kernel[Co×Ci×k×k], got {x:?} and {w:?}"),
        });
    };
    if cin != cin2 {
        return Err(TensorError::ShapeMismatch { op: "conv2d", lhs: x.to_vec(), rhs: w.to_vec() });
    }
    if k != k2 || k % 2 == 0 {
        return Err(TensorError::Invalid {
            op: "conv2d", msg: format!("kernel must be square and odd, got {k}×{k2}")
        });
    }
    if b != [cout] {
        return Err(TensorError::ShapeMismatch { op: "conv2d", lhs: w.to_vec(), rhs: b.to_vec() });
    }
    if stride == 0 {
        return Err(TensorError::Invalid { op: "conv2d", msg: "stride must be positive".into() });
    }
    Ok(Geometry {
        cin,
        h,
        w: wd,
        cout,
        k,
        stride,
        pad: (k - 1) / 2,
        oh: conv2d_out_dim(h, k, stride),
        ow: conv2d_out_dim(wd, k, stride),
    })
}

fn forward(g: &Geometry, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let (k, s) = (g.k, g.stride);
    let mut out = vec![0.0; g.cout * g.oh * g.ow];
    let mut muls = 0u64;
    for co in 0..g.cout {
        let oplane = &mut out[co * g.oh * g.ow..(co + 1) * g.oh * g.ow];
        oplane.iter_mut().for_each(|v| *v = b[co]);
        for ci in 0..g.cin {
            let xplane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = w[((co * g.cin + ci) * k + ky) * k + kx];
                    let (lo, hi) = g.ox_range(kx);
                    if hi <= lo {
                        continue;
                    }
                    for oy in 0..g.oh {
                        let Some(iy) = g.iy(oy, ky) else { continue };
                        let orow = &mut oplane[oy * g.ow + lo..oy * g.ow + hi];
                        let ix0 = lo * s + kx - g.pad;
                        let xrow = &xplane[iy * g.w..(iy + 1) * g.w];
                        muls += (hi - lo) as u64;
                        if s == 1 {
                            orow.iter_mut().zip(&xrow[ix0..ix0 + (hi - lo)]).for_each(|(o, xv)| *o += wv * xv);
                        } else {
                            for (j, o) in orow.iter_mut().enumerate() {
                                *o += wv * xrow[ix0 + j * s];
                            }
                        }
                    }
                }
            }
        }
    }
    count_multiplies(muls);
    out
}

fn backward(g: &Geometry, x: &[f64], w: &[f64], gout: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
    let (k, s) = (g.k, g.stride);
    let mut gx = needs[0].then(|| vec![0.0; x.len()]);
    let mut gw = needs[1].then(|| vec![0.0; w.len()]);
    let gb = needs[2].then(|| gout.chunks(g.oh * g.ow).map(|p| p.iter().sum()).collect::<Vec<f64>>());
    if gx.is_none() && gw.is_none() {
        return vec![None, None, gb];
    }
    for co in 0..g.cout {
        let gplane = &gout[co * g.oh * g.ow..(co + 1) * g.oh * g.ow];
        for ci in 0..g.cin {
            let xoff = ci * g.h * g.w;
            for ky in 0..k {
                for kx in 0..k {
                    let widx = ((co * g.cin + ci) * k + ky) * k + kx;
                    let (lo, hi) = g.ox_range(kx);
                    if hi <= lo {
                        continue;
                    }
                    let n = hi - lo;
                    let wv = w[widx];
                    let mut acc = 0.0;
                    for oy in 0..g.oh {
                        let Some(iy) = g.iy(oy, ky) else { continue };
                        let grow = &gplane[oy * g.ow + lo..oy * g.ow + hi];
                        let ix0 = xoff + iy * g.w + lo * s + kx - g.pad;
                        if s == 1 {
                            if gw.is_some() {
                                acc += grow.iter().zip(&x[ix0..ix0 + n]).map(|(a, b)| a * b).sum::<f64>();
                            }
                            if let Some(gx) = gx.as_mut() {
                                gx[ix0..ix0 + n].iter_mut().zip(grow).for_each(|(d, gv)| *d += wv * gv);
                            }
                        } else {
                            for (j, gv) in grow.iter().enumerate() {
                                let ix = ix0 + j * s;
                                acc += gv * x[ix];
                                if let Some(gx) = gx.as_mut() {
                                    gx[ix] += wv * gv;
                                }
                            }
                        }
                    }
                    if let Some(gw) = gw.as_mut() {
                        gw[widx] += acc;
                    }
                }
            }
        }
    }
    vec![gx, gw, gb]
}

/// Plain forward evaluation, no tape.
pub fn conv2d_forward(x: &Tensor, kernel: &Tensor, bias: &Tensor, stride: usize) -> Result<Tensor> {
    let g = geometry(x.shape(), kernel.shape(), bias.shape(), stride)?;
    let out = forward(&g, x.data(), kernel.data(), bias.data());
    Ok(Tensor::from_raw(vec![g.cout, g.oh, g.ow], out))
}

impl Var {
    /// `x[Ci×H×W] ⊛ kernel[Co×Ci×k×k] + bias[Co]` with zero padding `(k−1)/2`.
    pub fn conv2d(&self, kernel: &Var, bias: &Var, stride: usize) -> Result<Var> {
        let g = geometry(&self.shape(), &kernel.shape(), &bias.shape(), stride)?;
        let (x, w, b) = (self.value(), kernel.value(), bias.value());
        let out = forward(&g, x.data(), w.data(), b.data());
        let shape = vec![g.cout, g.oh, g.ow];
        self.tape().custom(
            &[self, kernel, bias],
            Tensor::from_raw(shape, out),
            Box::new(move |gout, needs| backward(&g, x.data(), w.data(), gout, needs)),
        )
    }

    /// Stride-1 "same" convolution; spatial dims are preserved exactly.
    pub fn conv2d_same(&self, kernel: &Var, bias: &Var) -> Result<Var> {
        self.conv2d(kernel, bias, 1)
    }

    /// Causal depthwise convolution along the token axis:
    /// `y[t,c] = b[c] + Σⱼ w[c,j]·x[t−(K−1)+j, c]`, zero before the first token.
    pub fn causal_depthwise_conv1d(&self, kernel: &Var, bias: &Var) -> Result<Var> {
        let xs = self.shape();
        let ws = kernel.shape();
        let (&[t, c], &[c2, kw]) = (xs.as_slice(), ws.as_slice()) else {
            return Err(TensorError::Invalid {
                op: "causal_depthwise_conv1d",
                msg: format!("expected x[T×C], kernel[C×K], got {xs:?}, {ws:?}"),
            });
        };
        if c != c2 || bias.shape() != [c] {
            return Err(TensorError::ShapeMismatch { op: "causal_depthwise_conv1d", lhs: xs, rhs: ws });
        }
        let (x, w, b) = (self.value(), kernel.value(), bias.value());
        let mut out = vec![0.0; t * c];
        for ti in 0..t {
            for ch in 0..c {
                let mut acc = b.data()[ch];
                for j in 0..kw {
                    if let Some(src) = (ti + j + 1).checked_sub(kw) {
                        acc += w.data()[ch * kw + j] * x.data()[src * c + ch];
                    }
                }
                out[ti * c + ch] = acc;
            }
        }
        count_multiplies((t * c * kw) as u64);
        self.tape().custom(
            &[self, kernel, bias],
            Tensor::from_raw(vec![t, c], out),
            Box::new(move |g, needs| {
                let mut gx = needs[0].then(|| vec![0.0; t * c]);
                let mut gw = needs[1].then(|| vec![0.0; c * kw]);
                let mut gb = needs[2].then(|| vec![0.0; c]);
                for ti in 0..t {
                    for ch in 0..c {
                        let gv = g[ti * c + ch];
                        if let Some(gb) = gb.as_mut() {
                            gb[ch] += gv;
                        }
                        for j in 0..kw {
                            let Some(src) = (ti + j + 1).checked_sub(kw) else { continue };
                            if let Some(gw) = gw.as_mut() {
                                gw[ch * kw + j] += gv * x.data()[src * c + ch];
                            }
                            if let Some(gx) = gx.as_mut() {
                                gx[src * c + ch] += gv * w.data()[ch * kw + j];
                            }
                        }
                    }
                }
                vec![gx, gw, gb]
            }),
        )
    }
}
