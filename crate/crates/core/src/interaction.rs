//! Object-aware gaze regression: fused gaze tokens attend to the detector's
//! mask embeddings, then a small upsampling head produces the heatmap.

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::gaze::GRID;
use crate::layers::{from_tokens, sinusoidal_2d, to_tokens, AttentionBlock, Conv2d, ConvTranspose2d, Ctx, Mlp, ParamStore};
use crate::rng::SplitMix64;
use crate::scene::Bitmap;
use crate::tensor::Tensor;

pub const HEATMAP_SIZE: usize = 64;
pub const HEATMAP_SIGMA: f64 = 3.0;

#[derive(Clone, Debug)]
pub struct Interaction {
    fuse_proj: Conv2d,
    mask_mlp: Mlp,
    pub self_block: AttentionBlock,
    pub cross_block: AttentionBlock,
    upsample: Vec<ConvTranspose2d>,
    out: Conv2d,
    d_model: usize,
}

impl Interaction {
    pub fn new(ps: &mut ParamStore, rng: &mut SplitMix64, c4: usize, d_model: usize, heads: usize) -> Self {
        let chans = [d_model, 32, 16, 8];
        Self {
            fuse_proj: Conv2d::new(ps, rng, "fuse_proj", c4, d_model, 1, 1, 0),
            mask_mlp: Mlp::new(ps, rng, "mask_embedding", &[d_model, d_model, d_model, d_model]),
            self_block: AttentionBlock::new(ps, rng, "gaze_self", d_model, heads),
            cross_block: AttentionBlock::new(ps, rng, "gaze_cross", d_model, heads),
            upsample: chans
                .windows(2)
                .enumerate()
                .map(|(i, c)| ConvTranspose2d::new(ps, rng, &format!("heatmap.up{i}"), c[0], c[1], 4, 2, 1))
                .collect(),
            out: Conv2d::new(ps, rng, "heatmap.out", 8, 1, 1, 1, 0),
            d_model,
        }
    }

    /// `concat(f_scene, f_gaze)` scaled per cell by `m: [7, 7]`, projected
    /// to `d_model` and flattened to 49 position-encoded tokens.
    pub fn fuse_features(&self, cx: &Ctx, f_scene: Var, f_gaze: Var, m: Var) -> Result<Var> {
        let g = cx.g;
        let (ss, sg, sm) = (g.shape(f_scene), g.shape(f_gaze), g.shape(m));
        if ss[1..] != [GRID, GRID] || sg[1..] != [GRID, GRID] || sm != [GRID, GRID] {
            return Err(Error::Shape(format!("fuse_features got {ss:?}, {sg:?}, {sm:?}")));
        }
        let x = g.concat(&[f_scene, f_gaze]);
        let c = ss[0] + sg[0];
        let flat = g.reshape(x, [c, GRID * GRID]);
        let weighted = g.mul_row(flat, g.reshape(m, [GRID * GRID]));
        let y = self.fuse_proj.forward(cx, g.reshape(weighted, [c, GRID, GRID]));
        let pe = g.constant(sinusoidal_2d(GRID, GRID, self.d_model));
        Ok(g.add(to_tokens(g, y), pe))
    }

    /// Three-layer perceptron over the object queries.
    pub fn mask_embed(&self, cx: &Ctx, q_obj: Var) -> Var {
        self.mask_mlp.forward(cx, q_obj)
    }

    pub fn self_encode(&self, cx: &Ctx, f_fuse: Var) -> Var {
        self.self_block.forward_self(cx, f_fuse)
    }

    /// Gaze tokens as queries, mask embeddings as keys and values.
    pub fn cross_interact(&self, cx: &Ctx, f_e: Var, q_mask: Var) -> Var {
        self.cross_block.forward(cx, f_e, q_mask)
    }

    /// Raw `[64, 64]` heatmap from `f_reg: [49, D]`.
    pub fn heatmap_head(&self, cx: &Ctx, f_reg: Var) -> Var {
        let g = cx.g;
        let mut x = from_tokens(g, f_reg, GRID, GRID);
        for up in &self.upsample {
            x = g.silu(up.forward(cx, x));
        }
        let x = g.resize_bilinear(x, HEATMAP_SIZE, HEATMAP_SIZE);
        let y = self.out.forward(cx, x);
        g.reshape(y, [HEATMAP_SIZE, HEATMAP_SIZE])
    }
}

/// Peak-normalized Gaussian around `point` (normalized coordinates).
pub fn gt_heatmap(point: [f64; 2], size: usize, sigma: f64) -> Tensor {
    let (px, py) = (point[0] * size as f64, point[1] * size as f64);
    let mut t = Tensor::from_fn([size, size], |k| {
        let (i, j) = ((k / size) as f64, (k % size) as f64);
        let (dx, dy) = (j - px + 0.5, i - py + 0.5);
        (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
    });
    let m = t.data().iter().cloned().fold(0.0, f64::max);
    t.data_mut().iter_mut().for_each(|v| *v /= m);
    t
}

/// Mean squared error over all cells.
pub fn heatmap_loss(cx: &Ctx, pred: Var, gt: &Tensor) -> Result<Var> {
    let g = cx.g;
    if g.shape(pred) != gt.shape() {
        return Err(Error::Shape(format!("heatmap {:?} vs target {:?}", g.shape(pred), gt.shape())));
    }
    let d = g.sub(pred, g.constant(gt.clone()));
    Ok(g.mean(g.square(d)))
}

/// Gaze-object mask at heatmap resolution by 50% area coverage. An empty
/// result falls back to the cell holding the mask's bounding-box center; the
/// flag reports the fallback.
pub fn heatmap_mask(mask: &Bitmap, size: usize) -> Result<(Bitmap, bool)> {
    let down = mask.downsample_coverage(size, size, 0.5);
    if !down.is_empty() {
        return Ok((down, false));
    }
    let b = mask.bbox().ok_or_else(|| Error::Mask("empty gaze object mask".into()))?;
    let (cx, cy) = b.center();
    let cell = |v: f64, n: usize| ((v / n as f64 * size as f64) as usize).min(size - 1);
    let mut m = Bitmap::new(size, size);
    m.set(cell(cy, mask.height()), cell(cx, mask.width()), true);
    Ok((m, true))
}

/// `1 - mean` of the clamped heatmap over the mask cells.
pub fn energy_loss(cx: &Ctx, heatmap: Var, mask: &Bitmap) -> Result<Var> {
    let g = cx.g;
    let s = g.shape(heatmap);
    if s != [mask.height(), mask.width()] {
        return Err(Error::Shape(format!("heatmap {s:?} vs mask {}x{}", mask.height(), mask.width())));
    }
    let area = mask.area();
    if area == 0 {
        return Err(Error::Mask("empty energy mask".into()));
    }
    let clamped = g.clamp(heatmap, 0.0, 1.0);
    let inside = g.mul(clamped, g.constant(Tensor::new(s, mask.to_f64())));
    Ok(g.add_scalar(g.scale(g.sum(inside), -1.0 / area as f64), 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Graph;

    #[test]
    fn gt_heatmap_examples() {
        let h = gt_heatmap([0.5, 0.5], 64, 3.0);
        let max = h.data().iter().cloned().fold(0.0, f64::max);
        assert_eq!(max, 1.0);
        let p = gt_heatmap([20.5 / 64.0, 10.5 / 64.0], 64, 3.0);
        assert_eq!(p.at2(10, 20), 1.0);
        assert!((p.at2(10, 23) - (-0.5f64).exp()).abs() < 1e-12);
        let c = gt_heatmap([0.0, 0.0], 64, 3.0);
        assert_eq!(c.at2(0, 0), 1.0);
    }

    #[test]
    fn loss_examples() {
        let g = Graph::new();
        let ps = ParamStore::new();
        let cx = ps.bind(&g);
        let gt = gt_heatmap([0.3, 0.6], 64, 3.0);
        let same = g.constant(gt.clone());
        assert_eq!(g.value(heatmap_loss(&cx, same, &gt).unwrap()).item(), 0.0);
        let plus = g.constant(gt.map(|v| v + 1.0));
        assert!((g.value(heatmap_loss(&cx, plus, &gt).unwrap()).item() - 1.0).abs() < 1e-12);
        let zero = g.constant(Tensor::zeros([64, 64]));
        let s: f64 = gt.data().iter().map(|v| v * v).sum();
        assert!((g.value(heatmap_loss(&cx, zero, &gt).unwrap()).item() - s / 4096.0).abs() < 1e-15);
    }

    #[test]
    fn energy_examples() {
        let g = Graph::new();
        let ps = ParamStore::new();
        let cx = ps.bind(&g);
        let mask = Bitmap::from_fn(64, 64, |y, x| y == 5 && x < 10);
        let ones = g.constant(Tensor::full([64, 64], 1.0));
        assert_eq!(g.value(energy_loss(&cx, ones, &mask).unwrap()).item(), 0.0);
        let zeros = g.constant(Tensor::zeros([64, 64]));
        assert_eq!(g.value(energy_loss(&cx, zeros, &mask).unwrap()).item(), 1.0);
        let quarter = g.constant(Tensor::full([64, 64], 0.25));
        assert!((g.value(energy_loss(&cx, quarter, &mask).unwrap()).item() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn tiny_mask_falls_back_to_center_cell() {
        let m = Bitmap::from_fn(224, 224, |y, x| y == 100 && x == 50);
        let (d, flagged) = heatmap_mask(&m, 64).unwrap();
        assert!(flagged);
        assert_eq!(d.area(), 1);
        assert!(d.get(28, 14));
    }
}
