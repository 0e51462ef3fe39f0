//! Convolution, normalization, attention and fused loss ops.

use std::rc::Rc;

use super::basic::{sigmoid, softmax_in_place};
use super::{Graph, Var};
use crate::tensor::{gemm, gemm_strided, Tensor};

/// Geometry of a 2-D convolution over a `[C, H, W]` input.
#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn new(cin: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Self {
        assert!(h + 2 * pad >= k && w + 2 * pad >= k, "kernel larger than padded input");
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        Self { cin, h, w, k, stride, pad, ho, wo }
    }

    fn col_rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    /// `[cin*k*k, ho*wo]` patch matrix.
    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let n = self.ho * self.wo;
        let mut col = vec![0.0; self.col_rows() * n];
        for c in 0..self.cin {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (c * self.k + ky) * self.k + kx;
                    let dst = &mut col[row * n..(row + 1) * n];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let src = &x[(c * self.h + iy as usize) * self.w..];
                        for ox in 0..self.wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[oy * self.wo + ox] = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        col
    }

    /// Scatter-add a patch matrix back onto a `[cin, h, w]` buffer.
    fn col2im(&self, col: &[f64], x: &mut [f64]) {
        let n = self.ho * self.wo;
        for c in 0..self.cin {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (c * self.k + ky) * self.k + kx;
                    let src = &col[row * n..(row + 1) * n];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let base = (c * self.h + iy as usize) * self.w;
                        for ox in 0..self.wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                x[base + ix as usize] += src[oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

impl Graph {
    /// Square-kernel convolution. `x: [Cin, H, W]`, `w: [Cout, Cin, k, k]`,
    /// `b: [Cout]`.
    pub fn conv2d(&self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let (xv, wv) = (self.value(x), self.value(w));
        let (cin, h, wd) = xv.dims3();
        let ws = wv.shape().to_vec();
        assert_eq!(ws.len(), 4);
        assert_eq!(ws[1], cin, "conv2d channel mismatch: input {cin}, weight {ws:?}");
        assert_eq!(ws[2], ws[3]);
        let cout = ws[0];
        let geo = ConvGeom::new(cin, h, wd, ws[2], stride, pad);
        let n = geo.ho * geo.wo;
        let kk = geo.col_rows();
        let col = Rc::new(if geo.k == 1 && stride == 1 && pad == 0 { xv.data().to_vec() } else { geo.im2col(xv.data()) });
        let bv = self.value(b);
        let mut out = vec![0.0; cout * n];
        for (o, row) in out.chunks_mut(n).enumerate() {
            row.iter_mut().for_each(|v| *v = bv.data()[o]);
        }
        gemm(cout, kk, n, 1.0, wv.data(), false, &col, false, 1.0, &mut out);
        let out = Tensor::new([cout, geo.ho, geo.wo], out);
        self.push_op(out, &[x, w, b], move |g, sink| {
            sink.with(w, |buf| gemm(cout, n, kk, 1.0, g, false, &col, true, 1.0, buf));
            sink.with(b, |buf| {
                for o in 0..cout {
                    buf[o] += g[o * n..(o + 1) * n].iter().sum::<f64>();
                }
            });
            if sink.wants(x) {
                let mut dcol = vec![0.0; kk * n];
                gemm(kk, cout, n, 1.0, wv.data(), true, g, false, 0.0, &mut dcol);
                sink.with(x, |buf| {
                    if geo.k == 1 && geo.stride == 1 && geo.pad == 0 {
                        buf.iter_mut().zip(&dcol).for_each(|(b, d)| *b += d);
                    } else {
                        geo.col2im(&dcol, buf);
                    }
                });
            }
        })
    }

    /// Transposed convolution. `x: [Cin, H, W]`, `w: [Cin, Cout, k, k]`,
    /// `b: [Cout]`; output side `(H - 1) * stride - 2 * pad + k`.
    pub fn conv_transpose2d(&self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (cin, h, wd) = xv.dims3();
        let ws = wv.shape().to_vec();
        assert_eq!(ws.len(), 4);
        assert_eq!(ws[0], cin, "conv_transpose2d channel mismatch");
        let (cout, k) = (ws[1], ws[2]);
        let ho = (h - 1) * stride + k - 2 * pad;
        let wo = (wd - 1) * stride + k - 2 * pad;
        // The adjoint of a forward conv over the output geometry.
        let geo = ConvGeom::new(cout, ho, wo, k, stride, pad);
        assert_eq!((geo.ho, geo.wo), (h, wd), "transposed conv geometry is not invertible");
        let n = h * wd;
        let kk = geo.col_rows();
        let mut col = vec![0.0; kk * n];
        gemm(kk, cin, n, 1.0, wv.data(), true, xv.data(), false, 0.0, &mut col);
        let mut out = vec![0.0; cout * ho * wo];
        geo.col2im(&col, &mut out);
        for o in 0..cout {
            out[o * ho * wo..(o + 1) * ho * wo].iter_mut().for_each(|v| *v += bv.data()[o]);
        }
        self.push_op(Tensor::new([cout, ho, wo], out), &[x, w, b], move |g, sink| {
            let gcol = geo.im2col(g);
            sink.with(x, |buf| gemm(cin, kk, n, 1.0, wv.data(), false, &gcol, false, 1.0, buf));
            sink.with(w, |buf| gemm(cin, n, kk, 1.0, xv.data(), false, &gcol, true, 1.0, buf));
            sink.with(b, |buf| {
                for o in 0..cout {
                    buf[o] += g[o * ho * wo..(o + 1) * ho * wo].iter().sum::<f64>();
                }
            });
        })
    }

    /// Group normalization of `[C, H, W]` with per-channel affine `[C]`.
    pub fn group_norm(&self, x: Var, gamma: Var, beta: Var, groups: usize, eps: f64) -> Var {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let (c, h, w) = xv.dims3();
        assert_eq!(c % groups, 0, "channels {c} not divisible by {groups} groups");
        let gs = (c / groups) * h * w;
        let hw = h * w;
        let cpg = c / groups;
        let mut xhat = vec![0.0; c * hw];
        let mut inv_std = vec![0.0; groups];
        for gi in 0..groups {
            let seg = &xv.data()[gi * gs..(gi + 1) * gs];
            let mean = seg.iter().sum::<f64>() / gs as f64;
            let var = seg.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / gs as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[gi] = is;
            for (o, v) in xhat[gi * gs..(gi + 1) * gs].iter_mut().zip(seg) {
                *o = (v - mean) * is;
            }
        }
        let mut out = vec![0.0; c * hw];
        for ch in 0..c {
            for i in 0..hw {
                out[ch * hw + i] = xhat[ch * hw + i] * gv.data()[ch] + bv.data()[ch];
            }
        }
        let xhat = Rc::new(xhat);
        self.push_op(Tensor::new([c, h, w], out), &[x, gamma, beta], move |g, sink| {
            sink.with(gamma, |buf| {
                for ch in 0..c {
                    buf[ch] += (0..hw).map(|i| g[ch * hw + i] * xhat[ch * hw + i]).sum::<f64>();
                }
            });
            sink.with(beta, |buf| {
                for ch in 0..c {
                    buf[ch] += g[ch * hw..(ch + 1) * hw].iter().sum::<f64>();
                }
            });
            sink.with(x, |buf| {
                for gi in 0..groups {
                    // dxhat = g * gamma
                    let mut dxh = vec![0.0; gs];
                    for (k, d) in dxh.iter_mut().enumerate() {
                        let ch = gi * cpg + k / hw;
                        *d = g[gi * gs + k] * gv.data()[ch];
                    }
                    let xh = &xhat[gi * gs..(gi + 1) * gs];
                    let m1 = dxh.iter().sum::<f64>() / gs as f64;
                    let m2 = dxh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / gs as f64;
                    for k in 0..gs {
                        buf[gi * gs + k] += inv_std[gi] * (dxh[k] - m1 - xh[k] * m2);
                    }
                }
            });
        })
    }

    /// Layer normalization over the last axis of `[T, D]` with affine `[D]`.
    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let (t, d) = xv.dims2();
        let mut xhat = vec![0.0; t * d];
        let mut inv_std = vec![0.0; t];
        for r in 0..t {
            let row = &xv.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                xhat[r * d + j] = (row[j] - mean) * is;
            }
        }
        let out: Vec<f64> = (0..t * d).map(|i| xhat[i] * gv.data()[i % d] + bv.data()[i % d]).collect();
        let xhat = Rc::new(xhat);
        self.push_op(Tensor::new([t, d], out), &[x, gamma, beta], move |g, sink| {
            sink.with(gamma, |buf| {
                for i in 0..t * d {
                    buf[i % d] += g[i] * xhat[i];
                }
            });
            sink.with(beta, |buf| {
                for i in 0..t * d {
                    buf[i % d] += g[i];
                }
            });
            sink.with(x, |buf| {
                let mut dxh = vec![0.0; d];
                for r in 0..t {
                    for j in 0..d {
                        dxh[j] = g[r * d + j] * gv.data()[j];
                    }
                    let xh = &xhat[r * d..(r + 1) * d];
                    let m1 = dxh.iter().sum::<f64>() / d as f64;
                    let m2 = dxh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for j in 0..d {
                        buf[r * d + j] += inv_std[r] * (dxh[j] - m1 - xh[j] * m2);
                    }
                }
            });
        })
    }

    /// Scaled dot-product attention with `heads` heads over already projected
    /// `q: [Tq, D]`, `k: [Tk, D]`, `v: [Tk, D]`; returns `[Tq, D]`.
    pub fn attention(&self, q: Var, k: Var, v: Var, heads: usize) -> Var {
        self.attention_biased(q, k, v, heads, None)
    }

    /// [`Graph::attention`] with an additive `[Tq, Tk]` logit bias shared by
    /// all heads.
    pub fn attention_biased(&self, q: Var, k: Var, v: Var, heads: usize, bias: Option<Var>) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let bv = bias.map(|b| self.value(b));
        let (tq, d) = qv.dims2();
        let (tk, dk) = kv.dims2();
        assert_eq!(d, dk);
        assert_eq!(vv.dims2(), (tk, d));
        assert_eq!(d % heads, 0, "model width {d} not divisible by {heads} heads");
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut probs = vec![0.0; heads * tq * tk];
        let mut out = vec![0.0; tq * d];
        for h in 0..heads {
            let p = &mut probs[h * tq * tk..(h + 1) * tq * tk];
            gemm_strided(tq, dh, tk, scale, &qv.data()[h * dh..], d, false, &kv.data()[h * dh..], d, true, 0.0, p, tk);
            if let Some(b) = &bv {
                assert_eq!(b.dims2(), (tq, tk), "attention bias shape");
                p.iter_mut().zip(b.data()).for_each(|(x, y)| *x += y);
            }
            for row in p.chunks_mut(tk) {
                softmax_in_place(row);
            }
            gemm_strided(tq, tk, dh, 1.0, p, tk, false, &vv.data()[h * dh..], d, false, 0.0, &mut out[h * dh..], d);
        }
        let probs = Rc::new(probs);
        let parents: Vec<Var> = [q, k, v].into_iter().chain(bias).collect();
        self.push_op(Tensor::new([tq, d], out), &parents, move |g, sink| {
            let mut dbias = vec![0.0; if bias.is_some() { tq * tk } else { 0 }];
            let mut dq = vec![0.0; tq * d];
            let mut dk = vec![0.0; tk * d];
            let mut dv = vec![0.0; tk * d];
            let mut dp = vec![0.0; tq * tk];
            for h in 0..heads {
                let p = &probs[h * tq * tk..(h + 1) * tq * tk];
                // dV_h = P^T dO_h
                gemm_strided(tk, tq, dh, 1.0, p, tk, true, &g[h * dh..], d, false, 0.0, &mut dv[h * dh..], d);
                // dP = dO_h V_h^T
                gemm_strided(tq, dh, tk, 1.0, &g[h * dh..], d, false, &vv.data()[h * dh..], d, true, 0.0, &mut dp, tk);
                for (prow, dprow) in p.chunks(tk).zip(dp.chunks_mut(tk)) {
                    let dot: f64 = prow.iter().zip(dprow.iter()).map(|(a, b)| a * b).sum();
                    for (pv, dv) in prow.iter().zip(dprow.iter_mut()) {
                        *dv = pv * (*dv - dot);
                    }
                }
                if bias.is_some() {
                    dbias.iter_mut().zip(&dp).for_each(|(a, b)| *a += b);
                }
                dp.iter_mut().for_each(|x| *x *= scale);
                gemm_strided(tq, tk, dh, 1.0, &dp, tk, false, &kv.data()[h * dh..], d, false, 0.0, &mut dq[h * dh..], d);
                gemm_strided(tk, tq, dh, 1.0, &dp, tk, true, &qv.data()[h * dh..], d, false, 0.0, &mut dk[h * dh..], d);
            }
            sink.add(q, &dq);
            sink.add(k, &dk);
            sink.add(v, &dv);
            if let Some(b) = bias {
                sink.add(b, &dbias);
            }
        })
    }

    /// Weighted mean cross-entropy of row logits `[N, K]` against class
    /// indices; the mean divides by the sum of weights.
    pub fn cross_entropy(&self, logits: Var, targets: &[usize], weights: &[f64]) -> Var {
        let lv = self.value(logits);
        let (n, k) = lv.dims2();
        assert_eq!(targets.len(), n);
        assert_eq!(weights.len(), n);
        let wsum: f64 = weights.iter().sum();
        let mut probs = lv.data().to_vec();
        for row in probs.chunks_mut(k) {
            softmax_in_place(row);
        }
        let mut exact = 0.0;
        for i in 0..n {
            let row = &lv.data()[i * k..(i + 1) * k];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            exact += weights[i] * (lse - row[targets[i]]);
        }
        let targets = targets.to_vec();
        let weights = weights.to_vec();
        self.push_op(Tensor::scalar(exact / wsum), &[logits], move |g, sink| {
            sink.with(logits, |buf| {
                for i in 0..n {
                    let s = g[0] * weights[i] / wsum;
                    for j in 0..k {
                        let t = if j == targets[i] { 1.0 } else { 0.0 };
                        buf[i * k + j] += s * (probs[i * k + j] - t);
                    }
                }
            });
        })
    }

    /// Mean binary cross-entropy with logits against targets in `[0, 1]`.
    pub fn bce_with_logits(&self, logits: Var, targets: &Tensor) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.numel(), targets.numel());
        let n = lv.numel() as f64;
        let loss: f64 = lv
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&x, &t)| x.max(0.0) - x * t + (-x.abs()).exp().ln_1p())
            .sum::<f64>()
            / n;
        let t = targets.data().to_vec();
        self.push_op(Tensor::scalar(loss), &[logits], move |g, sink| {
            sink.with(logits, |buf| {
                for i in 0..buf.len() {
                    buf[i] += g[0] * (sigmoid(lv.data()[i]) - t[i]) / n;
                }
            });
        })
    }

    /// Soft Dice loss `1 - (2 sum(p t) + 1) / (sum(p) + sum(t) + 1)` with
    /// `p = sigmoid(logits)`.
    pub fn dice_loss(&self, logits: Var, targets: &Tensor) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.numel(), targets.numel());
        let p: Vec<f64> = lv.data().iter().map(|&x| sigmoid(x)).collect();
        let inter: f64 = p.iter().zip(targets.data()).map(|(a, b)| a * b).sum();
        let ps: f64 = p.iter().sum();
        let ts: f64 = targets.data().iter().sum();
        let num = 2.0 * inter + 1.0;
        let den = ps + ts + 1.0;
        let t = targets.data().to_vec();
        self.push_op(Tensor::scalar(1.0 - num / den), &[logits], move |g, sink| {
            sink.with(logits, |buf| {
                for i in 0..buf.len() {
                    let dnum = 2.0 * t[i];
                    let dl_dp = -(dnum * den - num) / (den * den);
                    buf[i] += g[0] * dl_dp * p[i] * (1.0 - p[i]);
                }
            });
        })
    }
}

#[cfg(test)]
mod tests {
    use super::super::check::max_rel_error;
    use super::*;

    fn t(shape: &[usize], seed: f64) -> Tensor {
        Tensor::from_fn(shape.to_vec(), |i| ((i as f64 + 1.0) * seed).sin())
    }

    fn naive_conv(x: &Tensor, w: &Tensor, b: &[f64], stride: usize, pad: usize) -> Tensor {
        let (cin, h, wd) = x.dims3();
        let (cout, k) = (w.shape()[0], w.shape()[2]);
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        Tensor::from_fn([cout, ho, wo], |idx| {
            let o = idx / (ho * wo);
            let oy = (idx / wo) % ho;
            let ox = idx % wo;
            let mut s = b[o];
            for c in 0..cin {
                for ky in 0..k {
                    for kx in 0..k {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                            s += w.data()[((o * cin + c) * k + ky) * k + kx] * x.at3(c, iy as usize, ix as usize);
                        }
                    }
                }
            }
            s
        })
    }

    #[test]
    fn conv2d_matches_direct_sum() {
        let x = t(&[2, 7, 6], 0.31);
        let w = t(&[3, 2, 3, 3], 0.17);
        let b = vec![0.1, -0.2, 0.3];
        for (stride, pad) in [(1, 1), (2, 1), (4, 1), (1, 0)] {
            let g = Graph::new();
            let y = g.conv2d(g.constant(x.clone()), g.constant(w.clone()), g.constant(Tensor::new([3], b.clone())), stride, pad);
            let want = naive_conv(&x, &w, &b, stride, pad);
            assert!(g.value(y).max_abs_diff(&want) < 1e-12, "stride {stride} pad {pad}");
        }
    }

    #[test]
    fn conv_gradients() {
        let err = max_rel_error(&[t(&[2, 5, 5], 0.3), t(&[3, 2, 3, 3], 0.7), t(&[3], 0.2)], 1e-5, |g, v| {
            let y = g.conv2d(v[0], v[1], v[2], 2, 1);
            g.sum(g.square(y))
        });
        assert!(err < 1e-6, "{err}");
        let err = max_rel_error(&[t(&[2, 3, 3], 0.3), t(&[2, 3, 4, 4], 0.7), t(&[3], 0.2)], 1e-5, |g, v| {
            let y = g.conv_transpose2d(v[0], v[1], v[2], 2, 1);
            g.sum(g.square(y))
        });
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn conv_transpose_is_adjoint_of_conv() {
        // <conv(x), y> == <x, convT(y)> with zero bias.
        let x = t(&[2, 6, 6], 0.41);
        let w = t(&[3, 2, 4, 4], 0.13);
        let g = Graph::new();
        let zb3 = g.constant(Tensor::zeros([3]));
        let zb2 = g.constant(Tensor::zeros([2]));
        let wv = g.constant(w.clone());
        let cx = g.value(g.conv2d(g.constant(x.clone()), wv, zb3, 2, 1));
        let y = t(cx.shape(), 0.77);
        // transposed weight layout is [Cin_of_transpose=3, Cout=2, k, k] which is w itself
        let cty = g.value(g.conv_transpose2d(g.constant(y.clone()), wv, zb2, 2, 1));
        let lhs: f64 = cx.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(cty.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn norm_gradients() {
        let err = max_rel_error(&[t(&[4, 3, 3], 0.3), t(&[4], 0.9), t(&[4], 0.5)], 1e-5, |g, v| {
            let y = g.group_norm(v[0], v[1], v[2], 2, 1e-5);
            g.sum(g.mul(y, g.constant(t(&[4, 3, 3], 1.3))))
        });
        assert!(err < 1e-5, "{err}");
        let err = max_rel_error(&[t(&[3, 4], 0.3), t(&[4], 0.9), t(&[4], 0.5)], 1e-5, |g, v| {
            let y = g.layer_norm(v[0], v[1], v[2], 1e-5);
            g.sum(g.mul(y, g.constant(t(&[3, 4], 1.3))))
        });
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn attention_gradients() {
        let err = max_rel_error(&[t(&[3, 4], 0.3), t(&[5, 4], 0.9), t(&[5, 4], 0.5)], 1e-5, |g, v| {
            let y = g.attention(v[0], v[1], v[2], 2);
            g.sum(g.mul(y, g.constant(t(&[3, 4], 1.3))))
        });
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn biased_attention_gradients() {
        let err = max_rel_error(&[t(&[3, 4], 0.3), t(&[5, 4], 0.9), t(&[5, 4], 0.5), t(&[3, 5], 1.7)], 1e-5, |g, v| {
            let y = g.attention_biased(v[0], v[1], v[2], 2, Some(v[3]));
            g.sum(g.mul(y, g.constant(t(&[3, 4], 1.3))))
        });
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn zero_bias_is_plain_attention() {
        let g = Graph::new();
        let (q, k, v) = (g.leaf(t(&[3, 4], 0.3)), g.leaf(t(&[5, 4], 0.9)), g.leaf(t(&[5, 4], 0.5)));
        let a = g.attention(q, k, v, 2);
        let b = g.attention_biased(q, k, v, 2, Some(g.constant(Tensor::zeros([3, 5]))));
        assert_eq!(g.value(a).data(), g.value(b).data());
    }

    #[test]
    fn loss_gradients() {
        let err = max_rel_error(&[t(&[3, 4], 0.3)], 1e-5, |g, v| g.cross_entropy(v[0], &[1, 3, 0], &[1.0, 0.5, 2.0]));
        assert!(err < 1e-6, "{err}");
        let tg = Tensor::new([4], vec![0.0, 1.0, 1.0, 0.0]);
        let err = max_rel_error(&[t(&[4], 0.8)], 1e-5, |g, v| g.bce_with_logits(v[0], &tg));
        assert!(err < 1e-6, "{err}");
        let err = max_rel_error(&[t(&[4], 0.8)], 1e-5, |g, v| g.dice_loss(v[0], &tg));
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn uniform_cross_entropy_is_log_k() {
        let g = Graph::new();
        let l = g.cross_entropy(g.constant(Tensor::zeros([2, 25])), &[3, 24], &[1.0, 1.0]);
        assert!((g.value(l).item() - 25f64.ln()).abs() < 1e-12);
    }
}
