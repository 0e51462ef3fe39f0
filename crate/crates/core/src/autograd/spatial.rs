//! Spatial rearrangement and resampling ops over `[C, H, W]` feature maps.

use super::{Graph, Var};
use crate::tensor::Tensor;

/// Sub-pixel rearrangement `[C*r*r, H, W] -> [C, H*r, W*r]`.
///
/// Input channel `c*r*r + i*r + j` lands on output `(c, y*r + i, x*r + j)`.
pub fn pixel_shuffle_tensor(x: &Tensor, r: usize) -> Tensor {
    let (cin, h, w) = x.dims3();
    assert_eq!(cin % (r * r), 0);
    let c = cin / (r * r);
    let mut out = vec![0.0; cin * h * w];
    for_each_shuffle_index(c, h, w, r, |src, dst| out[dst] = x.data()[src]);
    Tensor::new([c, h * r, w * r], out)
}

/// Exact inverse of [`pixel_shuffle_tensor`].
pub fn pixel_unshuffle_tensor(y: &Tensor, r: usize) -> Tensor {
    let (c, ho, wo) = y.dims3();
    assert!(ho % r == 0 && wo % r == 0);
    let (h, w) = (ho / r, wo / r);
    let mut out = vec![0.0; c * ho * wo];
    for_each_shuffle_index(c, h, w, r, |src, dst| out[src] = y.data()[dst]);
    Tensor::new([c * r * r, h, w], out)
}

fn for_each_shuffle_index(c: usize, h: usize, w: usize, r: usize, mut f: impl FnMut(usize, usize)) {
    let (ho, wo) = (h * r, w * r);
    for ch in 0..c {
        for i in 0..r {
            for j in 0..r {
                let cin = ch * r * r + i * r + j;
                for y in 0..h {
                    for x in 0..w {
                        let src = (cin * h + y) * w + x;
                        let dst = (ch * ho + y * r + i) * wo + x * r + j;
                        f(src, dst);
                    }
                }
            }
        }
    }
}

/// Region in normalized image coordinates, corner convention.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoiBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

/// One bilinear tap: flat spatial index and weight.
type Tap = (usize, f64);

/// Bilinear taps at continuous index coordinates `(y, x)` where pixel `k`
/// sits at coordinate `k`. Samples more than one pixel outside contribute
/// nothing; samples near the border clamp.
fn bilinear_taps(y: f64, x: f64, h: usize, w: usize, taps: &mut Vec<Tap>) {
    if y < -1.0 || y > h as f64 || x < -1.0 || x > w as f64 {
        return;
    }
    let (mut y, mut x) = (y.max(0.0), x.max(0.0));
    let mut y0 = y.floor() as usize;
    let mut x0 = x.floor() as usize;
    let y1;
    let x1;
    if y0 >= h - 1 {
        y0 = h - 1;
        y1 = h - 1;
        y = y0 as f64;
    } else {
        y1 = y0 + 1;
    }
    if x0 >= w - 1 {
        x0 = w - 1;
        x1 = w - 1;
        x = x0 as f64;
    } else {
        x1 = x0 + 1;
    }
    let ly = y - y0 as f64;
    let lx = x - x0 as f64;
    let (hy, hx) = (1.0 - ly, 1.0 - lx);
    taps.push((y0 * w + x0, hy * hx));
    taps.push((y0 * w + x1, hy * lx));
    taps.push((y1 * w + x0, ly * hx));
    taps.push((y1 * w + x1, ly * lx));
}

/// Per output cell, the list of taps (already divided by the sample count).
fn roi_align_taps(h: usize, w: usize, roi: RoiBox, out_h: usize, out_w: usize, sampling: usize) -> Vec<Vec<Tap>> {
    let x0 = roi.x1 * w as f64 - 0.5;
    let y0 = roi.y1 * h as f64 - 0.5;
    let bin_w = (roi.x2 - roi.x1) * w as f64 / out_w as f64;
    let bin_h = (roi.y2 - roi.y1) * h as f64 / out_h as f64;
    let count = (sampling * sampling) as f64;
    let mut cells = Vec::with_capacity(out_h * out_w);
    for i in 0..out_h {
        for j in 0..out_w {
            let mut taps = Vec::with_capacity(4 * sampling * sampling);
            for sy in 0..sampling {
                let y = y0 + (i as f64 + (sy as f64 + 0.5) / sampling as f64) * bin_h;
                for sx in 0..sampling {
                    let x = x0 + (j as f64 + (sx as f64 + 0.5) / sampling as f64) * bin_w;
                    bilinear_taps(y, x, h, w, &mut taps);
                }
            }
            for t in &mut taps {
                t.1 /= count;
            }
            cells.push(taps);
        }
    }
    cells
}

fn resize_taps(h: usize, w: usize, ho: usize, wo: usize) -> Vec<Vec<Tap>> {
    let sy = h as f64 / ho as f64;
    let sx = w as f64 / wo as f64;
    let mut cells = Vec::with_capacity(ho * wo);
    for i in 0..ho {
        let y = ((i as f64 + 0.5) * sy - 0.5).max(0.0);
        for j in 0..wo {
            let x = ((j as f64 + 0.5) * sx - 0.5).max(0.0);
            let mut taps = Vec::with_capacity(4);
            bilinear_taps(y, x, h, w, &mut taps);
            cells.push(taps);
        }
    }
    cells
}

impl Graph {
    /// Apply a fixed linear spatial resampling (same for every channel).
    fn resample(&self, x: Var, cells: Vec<Vec<Tap>>, ho: usize, wo: usize) -> Var {
        let xv = self.value(x);
        let (c, h, w) = xv.dims3();
        let hw = h * w;
        let n = ho * wo;
        let mut out = vec![0.0; c * n];
        for ch in 0..c {
            let src = &xv.data()[ch * hw..(ch + 1) * hw];
            for (k, taps) in cells.iter().enumerate() {
                out[ch * n + k] = taps.iter().map(|&(idx, wt)| src[idx] * wt).sum();
            }
        }
        self.push_op(Tensor::new([c, ho, wo], out), &[x], move |g, sink| {
            sink.with(x, |buf| {
                for ch in 0..c {
                    for (k, taps) in cells.iter().enumerate() {
                        let gk = g[ch * n + k];
                        for &(idx, wt) in taps {
                            buf[ch * hw + idx] += gk * wt;
                        }
                    }
                }
            });
        })
    }

    /// RoIAlign of a normalized box into an `out_h x out_w` grid, averaging
    /// `sampling x sampling` bilinear samples per cell.
    pub fn roi_align(&self, x: Var, roi: RoiBox, out_h: usize, out_w: usize, sampling: usize) -> Var {
        let (_, h, w) = self.value(x).dims3();
        let cells = roi_align_taps(h, w, roi, out_h, out_w, sampling);
        self.resample(x, cells, out_h, out_w)
    }

    /// Bilinear resize with half-pixel centers.
    pub fn resize_bilinear(&self, x: Var, ho: usize, wo: usize) -> Var {
        let (_, h, w) = self.value(x).dims3();
        let cells = resize_taps(h, w, ho, wo);
        self.resample(x, cells, ho, wo)
    }

    /// 2x2 average pooling with stride 2 (even sides).
    pub fn avg_pool2(&self, x: Var) -> Var {
        let (_, h, w) = self.value(x).dims3();
        assert!(h % 2 == 0 && w % 2 == 0);
        let (ho, wo) = (h / 2, w / 2);
        let cells = (0..ho * wo)
            .map(|k| {
                let (i, j) = (k / wo, k % wo);
                vec![
                    ((2 * i) * w + 2 * j, 0.25),
                    ((2 * i) * w + 2 * j + 1, 0.25),
                    ((2 * i + 1) * w + 2 * j, 0.25),
                    ((2 * i + 1) * w + 2 * j + 1, 0.25),
                ]
            })
            .collect();
        self.resample(x, cells, ho, wo)
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample_nearest2(&self, x: Var) -> Var {
        let (_, h, w) = self.value(x).dims3();
        let (ho, wo) = (2 * h, 2 * w);
        let cells = (0..ho * wo).map(|k| vec![((k / wo / 2) * w + (k % wo) / 2, 1.0)]).collect();
        self.resample(x, cells, ho, wo)
    }

    pub fn pixel_shuffle(&self, x: Var, r: usize) -> Var {
        let xv = self.value(x);
        let out = pixel_shuffle_tensor(&xv, r);
        self.push_op(out, &[x], move |g, sink| {
            let gt = Tensor::new([g.len() / (xv.shape()[1] * xv.shape()[2] * r * r), xv.shape()[1] * r, xv.shape()[2] * r], g.to_vec());
            let back = pixel_unshuffle_tensor(&gt, r);
            sink.add(x, back.data());
        })
    }

    /// Global average pool `[C, H, W] -> [C]`.
    pub fn global_avg_pool(&self, x: Var) -> Var {
        let xv = self.value(x);
        let (c, h, w) = xv.dims3();
        let hw = h * w;
        let out: Vec<f64> = (0..c).map(|ch| xv.data()[ch * hw..(ch + 1) * hw].iter().sum::<f64>() / hw as f64).collect();
        self.push_op(Tensor::new([c], out), &[x], move |g, sink| {
            sink.with(x, |buf| {
                for ch in 0..c {
                    let v = g[ch] / hw as f64;
                    buf[ch * hw..(ch + 1) * hw].iter_mut().for_each(|b| *b += v);
                }
            });
        })
    }

    /// Broadcast a `[C]` vector to `[C, H, W]`.
    pub fn broadcast_spatial(&self, v: Var, h: usize, w: usize) -> Var {
        let vv = self.value(v);
        let c = vv.numel();
        let hw = h * w;
        let out: Vec<f64> = (0..c * hw).map(|i| vv.data()[i / hw]).collect();
        self.push_op(Tensor::new([c, h, w], out), &[v], move |g, sink| {
            sink.with(v, |buf| {
                for ch in 0..c {
                    buf[ch] += g[ch * hw..(ch + 1) * hw].iter().sum::<f64>();
                }
            });
        })
    }
}
