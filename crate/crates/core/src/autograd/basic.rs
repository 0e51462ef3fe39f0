//! Elementwise, reduction and matrix ops.

use std::rc::Rc;

use super::{Graph, Var};
use crate::tensor::{gemm, Tensor};

impl Graph {
    fn unary(
        &self,
        a: Var,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Var {
        let av = self.value(a);
        let out = av.map(&f);
        let ov = Rc::new(out.clone());
        self.push_op(out, &[a], move |g, sink| {
            sink.with(a, |buf| {
                for (i, b) in buf.iter_mut().enumerate() {
                    *b += g[i] * df(av.data()[i], ov.data()[i]);
                }
            });
        })
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "add shape mismatch");
        let out = Tensor::new(av.shape().to_vec(), av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect());
        self.push_op(out, &[a, b], move |g, sink| {
            sink.add(a, g);
            sink.add(b, g);
        })
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "sub shape mismatch");
        let out = Tensor::new(av.shape().to_vec(), av.data().iter().zip(bv.data()).map(|(x, y)| x - y).collect());
        self.push_op(out, &[a, b], move |g, sink| {
            sink.add(a, g);
            sink.with(b, |buf| buf.iter_mut().zip(g).for_each(|(b, x)| *b -= x));
        })
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "mul shape mismatch");
        let out = Tensor::new(av.shape().to_vec(), av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect());
        self.push_op(out, &[a, b], move |g, sink| {
            sink.with(a, |buf| {
                for i in 0..buf.len() {
                    buf[i] += g[i] * bv.data()[i];
                }
            });
            sink.with(b, |buf| {
                for i in 0..buf.len() {
                    buf[i] += g[i] * av.data()[i];
                }
            });
        })
    }

    pub fn div(&self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "div shape mismatch");
        let out = Tensor::new(av.shape().to_vec(), av.data().iter().zip(bv.data()).map(|(x, y)| x / y).collect());
        self.push_op(out, &[a, b], move |g, sink| {
            sink.with(a, |buf| {
                for i in 0..buf.len() {
                    buf[i] += g[i] / bv.data()[i];
                }
            });
            sink.with(b, |buf| {
                for i in 0..buf.len() {
                    let y = bv.data()[i];
                    buf[i] -= g[i] * av.data()[i] / (y * y);
                }
            });
        })
    }

    /// Elementwise max; ties route the gradient to `a`.
    pub fn maximum(&self, a: Var, b: Var) -> Var {
        self.select_elementwise(a, b, |x, y| x >= y)
    }

    /// Elementwise min; ties route the gradient to `a`.
    pub fn minimum(&self, a: Var, b: Var) -> Var {
        self.select_elementwise(a, b, |x, y| x <= y)
    }

    fn select_elementwise(&self, a: Var, b: Var, pick_a: fn(f64, f64) -> bool) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape());
        let mask: Rc<Vec<bool>> = Rc::new(av.data().iter().zip(bv.data()).map(|(&x, &y)| pick_a(x, y)).collect());
        let out = Tensor::new(
            av.shape().to_vec(),
            av.data().iter().zip(bv.data()).zip(mask.iter()).map(|((&x, &y), &m)| if m { x } else { y }).collect(),
        );
        self.push_op(out, &[a, b], move |g, sink| {
            sink.with(a, |buf| {
                for i in 0..buf.len() {
                    if mask[i] {
                        buf[i] += g[i];
                    }
                }
            });
            sink.with(b, |buf| {
                for i in 0..buf.len() {
                    if !mask[i] {
                        buf[i] += g[i];
                    }
                }
            });
        })
    }

    pub fn scale(&self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x * s, move |_, _| s)
    }

    pub fn add_scalar(&self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x + s, |_, _| 1.0)
    }

    pub fn neg(&self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        self.unary(a, sigmoid, |_, y| y * (1.0 - y))
    }

    /// `x * sigmoid(x)`.
    pub fn silu(&self, a: Var) -> Var {
        self.unary(
            a,
            |x| x * sigmoid(x),
            |x, _| {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            },
        )
    }

    pub fn relu(&self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn abs(&self, a: Var) -> Var {
        self.unary(a, f64::abs, |x, _| if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 })
    }

    pub fn sqrt(&self, a: Var) -> Var {
        self.unary(a, f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn square(&self, a: Var) -> Var {
        self.unary(a, |x| x * x, |x, _| 2.0 * x)
    }

    /// Clamp into `[lo, hi]`; gradient is zero outside the interval.
    pub fn clamp(&self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, move |x| x.clamp(lo, hi), move |x, _| if x > lo && x < hi { 1.0 } else { 0.0 })
    }

    pub fn sum(&self, a: Var) -> Var {
        let av = self.value(a);
        let out = Tensor::scalar(av.sum());
        self.push_op(out, &[a], move |g, sink| {
            let g0 = g[0];
            sink.with(a, |buf| buf.iter_mut().for_each(|b| *b += g0));
        })
    }

    pub fn mean(&self, a: Var) -> Var {
        let n = self.value(a).numel() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Weighted sum of scalars.
    pub fn linear_combination(&self, terms: &[(f64, Var)]) -> Var {
        let vals: Vec<f64> = terms.iter().map(|(_, v)| self.value(*v).item()).collect();
        let out = Tensor::scalar(terms.iter().zip(&vals).map(|((w, _), x)| w * x).sum());
        let terms = terms.to_vec();
        let parents: Vec<Var> = terms.iter().map(|(_, v)| *v).collect();
        self.push_op(out, &parents, move |g, sink| {
            for (w, v) in &terms {
                sink.with(*v, |buf| buf[0] += w * g[0]);
            }
        })
    }

    pub fn reshape(&self, a: Var, shape: impl Into<Vec<usize>>) -> Var {
        let av = self.value(a);
        let out = (*av).clone().reshape(shape);
        self.push_op(out, &[a], move |g, sink| sink.add(a, g))
    }

    /// Matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(&self, a: Var, b: Var) -> Var {
        self.matmul_ex(a, false, b, false)
    }

    /// Matrix product with optional transposition of either operand.
    pub fn matmul_ex(&self, a: Var, ta: bool, b: Var, tb: bool) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let (ar, ac) = av.dims2();
        let (br, bc) = bv.dims2();
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        assert_eq!(k, k2, "matmul inner dims {:?} x {:?}", av.shape(), bv.shape());
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, 1.0, av.data(), ta, bv.data(), tb, 0.0, &mut out);
        self.push_op(Tensor::new([m, n], out), &[a, b], move |g, sink| {
            // dC is m x n.
            sink.with(a, |buf| {
                if ta {
                    // A stored k x m: dA = op(B) dC^T  -> (k x n)(n x m)
                    gemm(k, n, m, 1.0, bv.data(), tb, g, true, 1.0, buf);
                } else {
                    // dA = dC op(B)^T -> (m x n)(n x k)
                    gemm(m, n, k, 1.0, g, false, bv.data(), !tb, 1.0, buf);
                }
            });
            sink.with(b, |buf| {
                if tb {
                    // B stored n x k: dB = dC^T op(A) -> (n x m)(m x k)
                    gemm(n, m, k, 1.0, g, true, av.data(), ta, 1.0, buf);
                } else {
                    // dB = op(A)^T dC -> (k x m)(m x n)
                    gemm(k, m, n, 1.0, av.data(), !ta, g, false, 1.0, buf);
                }
            });
        })
    }

    pub fn transpose(&self, a: Var) -> Var {
        let av = self.value(a);
        let (r, c) = av.dims2();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = av.data()[i * c + j];
            }
        }
        self.push_op(Tensor::new([c, r], out), &[a], move |g, sink| {
            sink.with(a, |buf| {
                for i in 0..r {
                    for j in 0..c {
                        buf[i * c + j] += g[j * r + i];
                    }
                }
            });
        })
    }

    /// Add a `[c]` vector to every row of a `[r, c]` matrix.
    pub fn add_row(&self, a: Var, row: Var) -> Var {
        let (av, rv) = (self.value(a), self.value(row));
        let (r, c) = av.dims2();
        assert_eq!(rv.numel(), c, "add_row width mismatch");
        let mut out = av.data().to_vec();
        for i in 0..r {
            for j in 0..c {
                out[i * c + j] += rv.data()[j];
            }
        }
        self.push_op(Tensor::new([r, c], out), &[a, row], move |g, sink| {
            sink.add(a, g);
            sink.with(row, |buf| {
                for i in 0..r {
                    for j in 0..c {
                        buf[j] += g[i * c + j];
                    }
                }
            });
        })
    }

    /// Add a `[r]` vector to every column of a `[r, c]` matrix.
    pub fn add_col(&self, a: Var, col: Var) -> Var {
        let (av, cv) = (self.value(a), self.value(col));
        let (r, c) = av.dims2();
        assert_eq!(cv.numel(), r, "add_col height mismatch");
        let mut out = av.data().to_vec();
        for i in 0..r {
            for j in 0..c {
                out[i * c + j] += cv.data()[i];
            }
        }
        self.push_op(Tensor::new([r, c], out), &[a, col], move |g, sink| {
            sink.add(a, g);
            sink.with(col, |buf| {
                for i in 0..r {
                    buf[i] += g[i * c..(i + 1) * c].iter().sum::<f64>();
                }
            });
        })
    }

    /// Multiply every row of a `[r, c]` matrix elementwise by a `[c]` vector.
    pub fn mul_row(&self, a: Var, row: Var) -> Var {
        let (av, rv) = (self.value(a), self.value(row));
        let (r, c) = av.dims2();
        assert_eq!(rv.numel(), c, "mul_row width mismatch");
        let mut out = av.data().to_vec();
        for i in 0..r {
            for j in 0..c {
                out[i * c + j] *= rv.data()[j];
            }
        }
        self.push_op(Tensor::new([r, c], out), &[a, row], move |g, sink| {
            sink.with(a, |buf| {
                for i in 0..r {
                    for j in 0..c {
                        buf[i * c + j] += g[i * c + j] * rv.data()[j];
                    }
                }
            });
            sink.with(row, |buf| {
                for i in 0..r {
                    for j in 0..c {
                        buf[j] += g[i * c + j] * av.data()[i * c + j];
                    }
                }
            });
        })
    }

    /// Columns `[start, start + len)` of a `[r, c]` matrix.
    pub fn slice_cols(&self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        let (r, c) = av.dims2();
        assert!(start + len <= c);
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&av.data()[i * c + start..i * c + start + len]);
        }
        self.push_op(Tensor::new([r, len], out), &[a], move |g, sink| {
            sink.with(a, |buf| {
                for i in 0..r {
                    for j in 0..len {
                        buf[i * c + start + j] += g[i * len + j];
                    }
                }
            });
        })
    }

    /// Rows selected by `idx` (repeats allowed).
    pub fn select_rows(&self, a: Var, idx: &[usize]) -> Var {
        let av = self.value(a);
        let (_, c) = av.dims2();
        let idx = idx.to_vec();
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in &idx {
            out.extend_from_slice(&av.data()[i * c..(i + 1) * c]);
        }
        self.push_op(Tensor::new([idx.len(), c], out), &[a], move |g, sink| {
            sink.with(a, |buf| {
                for (k, &i) in idx.iter().enumerate() {
                    for j in 0..c {
                        buf[i * c + j] += g[k * c + j];
                    }
                }
            });
        })
    }

    /// Stack along the first axis; trailing dims must agree.
    pub fn concat(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let vals: Vec<Rc<Tensor>> = parts.iter().map(|p| self.value(*p)).collect();
        let tail = vals[0].shape()[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        let mut offsets = Vec::new();
        for v in &vals {
            assert_eq!(&v.shape()[1..], &tail[..], "concat trailing dims differ");
            offsets.push(data.len());
            lead += v.shape()[0];
            data.extend_from_slice(v.data());
        }
        let sizes: Vec<usize> = vals.iter().map(|v| v.numel()).collect();
        let mut shape = vec![lead];
        shape.extend(tail);
        let parts = parts.to_vec();
        self.push_op(Tensor::new(shape, data), &parts.clone(), move |g, sink| {
            for (k, p) in parts.iter().enumerate() {
                sink.add(*p, &g[offsets[k]..offsets[k] + sizes[k]]);
            }
        })
    }

    /// Row-wise softmax of a `[r, c]` matrix.
    pub fn softmax_rows(&self, a: Var) -> Var {
        let av = self.value(a);
        let (r, c) = av.dims2();
        let mut out = av.data().to_vec();
        for row in out.chunks_mut(c) {
            softmax_in_place(row);
        }
        let ov = Rc::new(Tensor::new([r, c], out.clone()));
        self.push_op(Tensor::new([r, c], out), &[a], move |g, sink| {
            sink.with(a, |buf| {
                for i in 0..r {
                    let y = &ov.data()[i * c..(i + 1) * c];
                    let gy = &g[i * c..(i + 1) * c];
                    let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        buf[i * c + j] += y[j] * (gy[j] - dot);
                    }
                }
            });
        })
    }

    /// Scale a vector to unit L2 norm. A zero vector maps to `(1, 0, ...)`
    /// with zero gradient.
    pub fn l2_normalize(&self, a: Var) -> Var {
        let av = self.value(a);
        let norm = av.data().iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            let mut d = vec![0.0; av.numel()];
            d[0] = 1.0;
            return self.push_op(Tensor::new(av.shape().to_vec(), d), &[a], |_, _| {});
        }
        let out = av.map(|x| x / norm);
        let ov = Rc::new(out.clone());
        self.push_op(out, &[a], move |g, sink| {
            let dot: f64 = ov.data().iter().zip(g).map(|(y, gy)| y * gy).sum();
            sink.with(a, |buf| {
                for i in 0..buf.len() {
                    buf[i] += (g[i] - ov.data()[i] * dot) / norm;
                }
            });
        })
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}
