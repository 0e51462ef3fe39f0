//! Spatial gaze perception: head-feature reconstruction, gaze vector, gaze
//! cone, original attention and their fusion.

use crate::autograd::{RoiBox, Var};
use crate::backbone::ResidualBlock;
use crate::error::{Error, Result};
use crate::geometry::BoxXyxy;
use crate::layers::{Conv2d, Ctx, Mlp, ParamStore};
use crate::rng::SplitMix64;
use crate::scene::Bitmap;
use crate::tensor::Tensor;

/// Side of the attention grid (the spatial size of `f_4`).
pub const GRID: usize = 7;

/// Binary map of the pixels whose centers fall inside the normalized
/// `head_box` on a `size x size` grid.
pub fn head_location_map(head_box: &BoxXyxy, size: usize) -> Bitmap {
    let s = size as f64;
    let b = head_box.scale(s, s);
    Bitmap::from_fn(size, size, |y, x| b.contains_point(x as f64 + 0.5, y as f64 + 0.5))
}

/// Eye point: the head box center.
pub fn eye_point(head_box: &BoxXyxy) -> (f64, f64) {
    head_box.center()
}

fn eye_cell(eye: (f64, f64), grid: usize) -> (usize, usize) {
    let cell = |v: f64| ((v * grid as f64).floor().max(0.0) as usize).min(grid - 1);
    (cell(eye.1), cell(eye.0))
}

/// Unit vectors from the eye to every cell center `[grid*grid, 2]`, with a
/// zero row for the cell holding the eye.
fn cone_directions(eye: (f64, f64), grid: usize) -> (Tensor, usize) {
    let (ei, ej) = eye_cell(eye, grid);
    let mut dirs = vec![0.0; grid * grid * 2];
    for i in 0..grid {
        for j in 0..grid {
            if (i, j) == (ei, ej) {
                continue;
            }
            let dx = (j as f64 + 0.5) / grid as f64 - eye.0;
            let dy = (i as f64 + 0.5) / grid as f64 - eye.1;
            let n = (dx * dx + dy * dy).sqrt();
            let k = (i * grid + j) * 2;
            dirs[k] = dx / n;
            dirs[k + 1] = dy / n;
        }
    }
    (Tensor::new([grid * grid, 2], dirs), ei * grid + ej)
}

/// Clipped cosine between `v` and every eye-to-cell-center vector; the cell
/// containing the eye is 1.
pub fn gaze_cone_values(v: [f64; 2], eye: (f64, f64), grid: usize) -> Tensor {
    let (dirs, eye_idx) = cone_directions(eye, grid);
    let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
    let u = if n > 0.0 { [v[0] / n, v[1] / n] } else { [1.0, 0.0] };
    let mut out: Vec<f64> =
        dirs.data().chunks(2).map(|d| (d[0] * u[0] + d[1] * u[1]).max(0.0)).collect();
    out[eye_idx] = 1.0;
    Tensor::new([grid, grid], out)
}

/// Differentiable cone map `[grid, grid]` from a unit `v: [2]`.
pub fn gaze_cone(cx: &Ctx, v: Var, eye: (f64, f64), grid: usize) -> Var {
    let g = cx.g;
    let (dirs, eye_idx) = cone_directions(eye, grid);
    let cos = g.matmul(g.constant(dirs), g.reshape(v, [2, 1]));
    let mut onehot = vec![0.0; grid * grid];
    onehot[eye_idx] = 1.0;
    let m = g.add(g.relu(cos), g.constant(Tensor::new([grid * grid, 1], onehot)));
    g.reshape(m, [grid, grid])
}

/// Elementwise product of the two attention maps.
pub fn dual_fusion(cx: &Ctx, m_ori: Var, m_cone: Var) -> Var {
    cx.g.mul(m_ori, m_cone)
}

/// Batch mean of `1 - v_g . v_t`; inputs are normalized first.
pub fn direction_loss(cx: &Ctx, predicted: &[Var], targets: &[[f64; 2]]) -> Result<Var> {
    let g = cx.g;
    if predicted.len() != targets.len() || predicted.is_empty() {
        return Err(Error::Shape(format!("{} predictions vs {} targets", predicted.len(), targets.len())));
    }
    let terms: Vec<(f64, Var)> = predicted
        .iter()
        .zip(targets)
        .map(|(&v, t)| {
            let n = (t[0] * t[0] + t[1] * t[1]).sqrt();
            if (n - 1.0).abs() > 1e-6 {
                log::warn!("gaze target of norm {n} renormalized");
            }
            let t = g.constant(Tensor::new([2], vec![t[0] / n, t[1] / n]));
            let pv = g.value(v);
            let pn = pv.data().iter().map(|x| x * x).sum::<f64>().sqrt();
            let v = if (pn - 1.0).abs() > 1e-6 {
                log::warn!("predicted gaze vector of norm {pn} renormalized");
                g.reshape(g.l2_normalize(g.reshape(v, [1, 2])), [2])
            } else {
                g.reshape(v, [2])
            };
            (1.0 / predicted.len() as f64, g.add_scalar(g.neg(g.sum(g.mul(v, t))), 1.0))
        })
        .collect();
    Ok(g.linear_combination(&terms))
}

/// Everything the gaze field produces for one image.
#[derive(Clone, Copy, Debug)]
pub struct GazeFieldOutput {
    pub f_scene: Var,
    pub f_head: Var,
    pub f_gaze: Var,
    /// Unit gaze vector `[2]`.
    pub v_g: Var,
    /// Raw vector had zero norm and was replaced by `(1, 0)`.
    pub degenerate_vector: bool,
    pub eye: (f64, f64),
    pub m_cone: Var,
    pub m_ori: Var,
    /// `M = M_ori * M_cone`, `[7, 7]`.
    pub m: Var,
}

#[derive(Clone, Debug)]
pub struct GazeField {
    pub scene_residual: ResidualBlock,
    pub gaze_residual: ResidualBlock,
    vector_head: Mlp,
    ori_mix: Conv2d,
    ori_out: Conv2d,
    input_size: usize,
}

impl GazeField {
    pub fn new(ps: &mut ParamStore, rng: &mut SplitMix64, c4: usize, input_size: usize) -> Self {
        Self {
            scene_residual: ResidualBlock::new(ps, rng, "scene_residual", c4),
            gaze_residual: ResidualBlock::new(ps, rng, "gaze_residual", c4),
            vector_head: Mlp::new(ps, rng, "gaze_vector", &[c4, 64, 2]),
            ori_mix: Conv2d::new(ps, rng, "original_attention.mix", c4 / 2 + c4 + 1, 32, 1, 1, 0),
            ori_out: Conv2d::new(ps, rng, "original_attention.out", 32, 1, 3, 1, 1),
            input_size,
        }
    }

    /// `f_head: [c4, 7, 7]` to a unit `[2]` vector.
    pub fn predict_gaze_vector(&self, cx: &Ctx, f_head: Var) -> (Var, bool) {
        let g = cx.g;
        let pooled = g.global_avg_pool(f_head);
        let c = g.value(pooled).numel();
        let raw = self.vector_head.forward(cx, g.reshape(pooled, [1, c]));
        let degenerate = g.value(raw).data().iter().all(|&v| v == 0.0);
        (g.reshape(g.l2_normalize(raw), [2]), degenerate)
    }

    /// Sigmoid attention `[7, 7]` from scene features, pooled head features
    /// and the head location map downsampled to the grid.
    pub fn original_attention(&self, cx: &Ctx, f_scene: Var, f_head: Var, head_loc: &Bitmap) -> Var {
        let g = cx.g;
        let pooled = g.global_avg_pool(f_head);
        let head = g.broadcast_spatial(pooled, GRID, GRID);
        let loc = g.constant(Tensor::new([1, GRID, GRID], head_loc.coverage(GRID, GRID)));
        let x = g.concat(&[f_scene, head, loc]);
        let h = g.silu(self.ori_mix.forward(cx, x));
        let m = g.sigmoid(self.ori_out.forward(cx, h));
        g.reshape(m, [GRID, GRID])
    }

    /// `f4: [c4, 7, 7]`, `head_box` normalized.
    pub fn forward(&self, cx: &Ctx, f4: Var, head_box: &BoxXyxy) -> Result<GazeFieldOutput> {
        let g = cx.g;
        let s = g.shape(f4);
        if s.len() != 3 || s[1] != GRID || s[2] != GRID {
            return Err(Error::Shape(format!("gaze field expects a {GRID}x{GRID} map, got {s:?}")));
        }
        let hb = head_box.clip(1.0, 1.0);
        hb.validate()?;
        let f_scene = self.scene_residual.forward(cx, f4)?;
        let roi = RoiBox { x1: hb.x1, y1: hb.y1, x2: hb.x2, y2: hb.y2 };
        let f_head = g.roi_align(f4, roi, GRID, GRID, 2);
        let f_gaze = self.gaze_residual.forward(cx, f_head)?;
        let (v_g, degenerate_vector) = self.predict_gaze_vector(cx, f_head);
        let eye = eye_point(&hb);
        let m_cone = gaze_cone(cx, v_g, eye, GRID);
        let head_loc = head_location_map(&hb, self.input_size);
        let m_ori = self.original_attention(cx, f_scene, f_head, &head_loc);
        let m = dual_fusion(cx, m_ori, m_cone);
        Ok(GazeFieldOutput { f_scene, f_head, f_gaze, v_g, degenerate_vector, eye, m_cone, m_ori, m })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Graph;

    const EYE_33: (f64, f64) = (3.5 / 7.0, 3.5 / 7.0);

    #[test]
    fn cone_examples() {
        let c = gaze_cone_values([1.0, 0.0], EYE_33, 7);
        assert!((c.at2(3, 6) - 1.0).abs() < 1e-12);
        assert_eq!(c.at2(3, 0), 0.0);
        assert!((c.at2(0, 6) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert_eq!(c.at2(3, 3), 1.0);
    }

    #[test]
    fn cone_graph_matches_values() {
        let g = Graph::new();
        let ps = ParamStore::new();
        let cx = ps.bind(&g);
        let v = g.constant(Tensor::new([2], vec![0.6, -0.8]));
        let m = gaze_cone(&cx, v, (0.31, 0.77), 7);
        let want = gaze_cone_values([0.6, -0.8], (0.31, 0.77), 7);
        assert!(g.value(m).max_abs_diff(&want) < 1e-15);
    }

    #[test]
    fn head_location_examples() {
        let full = head_location_map(&BoxXyxy::new(0.0, 0.0, 1.0, 1.0), 224);
        assert_eq!(full.area(), 224 * 224);
        let q = head_location_map(&BoxXyxy::new(0.0, 0.0, 0.5, 0.5), 224);
        assert_eq!(q.area(), 112 * 112);
        assert!(q.get(111, 111) && !q.get(112, 111) && !q.get(111, 112));
        let empty = head_location_map(&BoxXyxy::new(2.0, 2.0, 3.0, 3.0).clip(1.0, 1.0), 224);
        assert!(empty.is_empty());
    }

    #[test]
    fn direction_loss_examples() {
        let g = Graph::new();
        let ps = ParamStore::new();
        let cx = ps.bind(&g);
        let v = g.constant(Tensor::new([2], vec![1.0, 0.0]));
        let l = |t: [f64; 2]| g.value(direction_loss(&cx, &[v], &[t]).unwrap()).item();
        assert!(l([1.0, 0.0]).abs() < 1e-12);
        assert!((l([0.0, 1.0]) - 1.0).abs() < 1e-12);
        assert!((l([-1.0, 0.0]) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn fusion_example() {
        let g = Graph::new();
        let ps = ParamStore::new();
        let cx = ps.bind(&g);
        let a = g.constant(Tensor::new([1, 1], vec![0.6]));
        let b = g.constant(Tensor::new([1, 1], vec![0.5]));
        assert!((g.value(dual_fusion(&cx, a, b)).item() - 0.3).abs() < 1e-12);
    }
}
