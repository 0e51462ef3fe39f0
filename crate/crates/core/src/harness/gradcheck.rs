//! Central finite-difference checks of analytic gradients, per component,
//! on sampled coordinates of fresh random inputs and parameters.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, RoiBox, Var};
use crate::backbone::{Backbone, FeatureMap, ModelWidths, ResidualBlock, ShuffleProjection};
use crate::detect::{detection_loss, giou_loss, DetTargets, Detector, DetectorConfig, LossWeights};
use crate::error::{Error, Result};
use crate::gaze::{direction_loss, dual_fusion, gaze_cone, head_location_map, GazeField, GRID};
use crate::geometry::BoxXyxy;
use crate::interaction::{energy_loss, gt_heatmap, heatmap_loss, Interaction};
use crate::layers::{Ctx, ParamStore};
use crate::rng::SplitMix64;
use crate::scene::Bitmap;
use crate::tensor::Tensor;

/// Tolerance for single ops and small modules.
pub const TOL_GENERAL: f64 = 1e-4;
/// Tolerance for the composed detector and heatmap paths.
pub const TOL_COMPOSED: f64 = 1e-3;

const STEP: f64 = 1e-5;
/// Floor on the error denominator so vanishing gradients compare absolutely.
const ERROR_FLOOR: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    RoiAlign,
    ShuffleProjection,
    Backbone,
    ResidualBlock,
    GazeVector,
    GazeCone,
    OriginalAttention,
    DualFusion,
    DirectionLoss,
    FuseFeatures,
    MaskEmbed,
    SelfEncode,
    CrossInteract,
    HeatmapHead,
    HeatmapLoss,
    EnergyLoss,
    BoxLoss,
    Detector,
}

impl Component {
    pub const ALL: [Component; 18] = [
        Component::RoiAlign,
        Component::ShuffleProjection,
        Component::Backbone,
        Component::ResidualBlock,
        Component::GazeVector,
        Component::GazeCone,
        Component::OriginalAttention,
        Component::DualFusion,
        Component::DirectionLoss,
        Component::FuseFeatures,
        Component::MaskEmbed,
        Component::SelfEncode,
        Component::CrossInteract,
        Component::HeatmapHead,
        Component::HeatmapLoss,
        Component::EnergyLoss,
        Component::BoxLoss,
        Component::Detector,
    ];

    pub fn tolerance(self) -> f64 {
        match self {
            Component::Backbone | Component::HeatmapHead | Component::Detector => TOL_COMPOSED,
            _ => TOL_GENERAL,
        }
    }

    pub fn name(self) -> String {
        serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default()
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Component::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown gradcheck component {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckEntry {
    pub name: String,
    pub tolerance: f64,
    pub max_rel_error: f64,
    pub coordinates: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub entries: Vec<GradcheckEntry>,
}

impl GradcheckReport {
    pub fn all_passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }
}

type Probe<'a> = dyn Fn(&Ctx, &[Var]) -> Result<Var> + 'a;

/// Compare the analytic gradient of the scalar `f` against central
/// differences on up to `per_tensor` sampled coordinates of every input and
/// parameter tensor.
pub fn check_gradients(
    name: &str,
    tolerance: f64,
    params: &ParamStore,
    inputs: &[Tensor],
    per_tensor: usize,
    seed: u64,
    f: &Probe<'_>,
) -> Result<GradcheckEntry> {
    let g = Graph::new();
    let cx = params.bind(&g);
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&cx, &vars)?;
    let grads = g.backward(out);
    let analytic = |v: Var, idx: usize| grads.get(v).map_or(0.0, |t| t.data()[idx]);

    let eval = |ps: &ParamStore, ins: &[Tensor]| -> Result<f64> {
        let g = Graph::new();
        let cx = ps.bind_frozen(&g);
        let vars: Vec<Var> = ins.iter().map(|t| g.constant(t.clone())).collect();
        Ok(g.value(f(&cx, &vars)?).item())
    };
    let mut rng = SplitMix64::new(seed);
    let mut sample = |n: usize| -> Vec<usize> {
        if n <= per_tensor {
            (0..n).collect()
        } else {
            (0..per_tensor).map(|_| rng.below(n)).collect()
        }
    };
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(ERROR_FLOOR);
    let mut worst: f64 = 0.0;
    let mut coords = 0;
    for (k, t) in inputs.iter().enumerate() {
        for idx in sample(t.numel()) {
            let mut ins = inputs.to_vec();
            ins[k].data_mut()[idx] += STEP;
            let plus = eval(params, &ins)?;
            ins[k].data_mut()[idx] -= 2.0 * STEP;
            let minus = eval(params, &ins)?;
            worst = worst.max(rel(analytic(vars[k], idx), (plus - minus) / (2.0 * STEP)));
            coords += 1;
        }
    }
    let mut ps = params.clone();
    for id in params.ids() {
        for idx in sample(params.get(id).numel()) {
            let orig = params.get(id).data()[idx];
            ps.get_mut(id).data_mut()[idx] = orig + STEP;
            let plus = eval(&ps, inputs)?;
            ps.get_mut(id).data_mut()[idx] = orig - STEP;
            let minus = eval(&ps, inputs)?;
            ps.get_mut(id).data_mut()[idx] = orig;
            worst = worst.max(rel(analytic(cx.p(id), idx), (plus - minus) / (2.0 * STEP)));
            coords += 1;
        }
    }
    Ok(GradcheckEntry {
        name: name.to_string(),
        tolerance,
        max_rel_error: worst,
        coordinates: coords,
        passed: worst <= tolerance,
    })
}

fn random(shape: &[usize], rng: &mut SplitMix64, lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.uniform(lo, hi))
}

/// Contract a tensor-valued output to a scalar with fixed random weights.
fn project(g: &Graph, x: Var, seed: u64) -> Var {
    let mut rng = SplitMix64::new(seed);
    let w = random(&g.shape(x), &mut rng, -1.0, 1.0);
    g.sum(g.mul(x, g.constant(w)))
}

const C4: usize = 16;
const D: usize = 16;
const HEADS: usize = 2;

fn small_widths() -> ModelWidths {
    ModelWidths { c1: 8, c2: 16, c3: 16, c4: 16, d_model: 16 }
}

fn run_component(c: Component, seed: u64) -> Result<GradcheckEntry> {
    let mut rng = SplitMix64::for_item(seed, c as u64);
    let mut ps = ParamStore::new();
    let name = c.name();
    let tol = c.tolerance();
    let pseed = seed ^ 0x5eed;
    match c {
        Component::RoiAlign => {
            let x = random(&[3, 7, 7], &mut rng, -1.0, 1.0);
            let roi = RoiBox { x1: 0.13, y1: 0.21, x2: 0.71, y2: 0.64 };
            check_gradients(&name, tol, &ps, &[x], 64, pseed, &|cx, v| {
                Ok(project(cx.g, cx.g.roi_align(v[0], roi, 7, 7, 2), 1))
            })
        }
        Component::ShuffleProjection => {
            let proj = ShuffleProjection::new(&mut ps, &mut rng, "shuffle", 16, 8, 2);
            let x = random(&[16, 4, 4], &mut rng, -1.0, 1.0);
            check_gradients(&name, tol, &ps, &[x], 16, pseed, &|cx, v| {
                let f = proj.forward(cx, FeatureMap { var: v[0], stride: 8 })?;
                Ok(project(cx.g, f.var, 2))
            })
        }
        Component::Backbone => {
            let bb = Backbone::new(&mut ps, &mut rng, &small_widths(), 64);
            let x = random(&[3, 64, 64], &mut rng, 0.0, 1.0);
            check_gradients(&name, tol, &ps, &[x], 3, pseed, &|cx, v| {
                let p = bb.extract_pyramid(cx, v[0], false)?;
                let terms: Vec<(f64, Var)> = p.levels.iter().enumerate().map(|(i, l)| (1.0, project(cx.g, l.var, 10 + i as u64))).collect();
                Ok(cx.g.linear_combination(&terms))
            })
        }
        Component::ResidualBlock => {
            let block = ResidualBlock::new(&mut ps, &mut rng, "residual", C4);
            let x = random(&[C4, GRID, GRID], &mut rng, -1.0, 1.0);
            check_gradients(&name, tol, &ps, &[x], 8, pseed, &|cx, v| Ok(project(cx.g, block.forward(cx, v[0])?, 3)))
        }
        Component::GazeVector => {
            let field = GazeField::new(&mut ps, &mut rng, C4, 224);
            let x = random(&[C4, GRID, GRID], &mut rng, -1.0, 1.0);
            check_gradients(&name, tol, &ps, &[x], 8, pseed, &|cx, v| Ok(project(cx.g, field.predict_gaze_vector(cx, v[0]).0, 4)))
        }
        Component::GazeCone => {
            let v = Tensor::new([2], vec![0.6, -0.8]);
            check_gradients(&name, tol, &ps, &[v], 2, pseed, &|cx, v| Ok(project(cx.g, gaze_cone(cx, v[0], (0.31, 0.77), GRID), 5)))
        }
        Component::OriginalAttention => {
            let field = GazeField::new(&mut ps, &mut rng, C4, 224);
            let scene = random(&[C4 / 2, GRID, GRID], &mut rng, -1.0, 1.0);
            let head = random(&[C4, GRID, GRID], &mut rng, -1.0, 1.0);
            let loc = head_location_map(&BoxXyxy::new(0.4, 0.8, 0.55, 0.95), 224);
            check_gradients(&name, tol, &ps, &[scene, head], 8, pseed, &|cx, v| {
                Ok(project(cx.g, field.original_attention(cx, v[0], v[1], &loc), 6))
            })
        }
        Component::DualFusion => {
            let a = random(&[GRID, GRID], &mut rng, 0.0, 1.0);
            let b = random(&[GRID, GRID], &mut rng, 0.0, 1.0);
            check_gradients(&name, tol, &ps, &[a, b], 49, pseed, &|cx, v| Ok(project(cx.g, dual_fusion(cx, v[0], v[1]), 7)))
        }
        Component::DirectionLoss => {
            // Off the unit circle so the renormalizing branch is taken throughout.
            let a = Tensor::new([2], vec![0.9, 0.7]);
            let b = Tensor::new([2], vec![-0.5, 1.1]);
            check_gradients(&name, tol, &ps, &[a, b], 2, pseed, &|cx, v| direction_loss(cx, v, &[[0.6, -0.8], [0.0, 1.0]]))
        }
        Component::FuseFeatures => {
            let it = Interaction::new(&mut ps, &mut rng, C4, D, HEADS);
            let s = random(&[C4 / 2, GRID, GRID], &mut rng, -1.0, 1.0);
            let gz = random(&[C4 / 2, GRID, GRID], &mut rng, -1.0, 1.0);
            let m = random(&[GRID, GRID], &mut rng, 0.0, 1.0);
            check_gradients(&name, tol, &ps, &[s, gz, m], 8, pseed, &|cx, v| {
                Ok(project(cx.g, it.fuse_features(cx, v[0], v[1], v[2])?, 8))
            })
        }
        Component::MaskEmbed => {
            let it = Interaction::new(&mut ps, &mut rng, C4, D, HEADS);
            let q = random(&[5, D], &mut rng, -1.0, 1.0);
            check_gradients(&name, tol, &ps, &[q], 8, pseed, &|cx, v| Ok(project(cx.g, it.mask_embed(cx, v[0]), 9)))
        }
        Component::SelfEncode => {
            let it = Interaction::new(&mut ps, &mut rng, C4, D, HEADS);
            let x = random(&[GRID * GRID, D], &mut rng, -1.0, 1.0);
            check_gradients(&name, tol, &ps, &[x], 8, pseed, &|cx, v| Ok(project(cx.g, it.self_encode(cx, v[0]), 11)))
        }
        Component::CrossInteract => {
            let it = Interaction::new(&mut ps, &mut rng, C4, D, HEADS);
            let fe = random(&[GRID * GRID, D], &mut rng, -1.0, 1.0);
            let qm = random(&[5, D], &mut rng, -1.0, 1.0);
            check_gradients(&name, tol, &ps, &[fe, qm], 8, pseed, &|cx, v| {
                Ok(project(cx.g, it.cross_interact(cx, v[0], v[1]), 12))
            })
        }
        Component::HeatmapHead => {
            let it = Interaction::new(&mut ps, &mut rng, C4, D, HEADS);
            let x = random(&[GRID * GRID, D], &mut rng, -1.0, 1.0);
            check_gradients(&name, tol, &ps, &[x], 6, pseed, &|cx, v| Ok(project(cx.g, it.heatmap_head(cx, v[0]), 13)))
        }
        Component::HeatmapLoss => {
            let gt = gt_heatmap([0.3, 0.6], 64, 3.0);
            let x = random(&[64, 64], &mut rng, -0.2, 1.2);
            check_gradients(&name, tol, &ps, &[x], 64, pseed, &|cx, v| heatmap_loss(cx, v[0], &gt))
        }
        Component::EnergyLoss => {
            let mask = Bitmap::from_fn(64, 64, |y, x| (20..30).contains(&y) && (10..26).contains(&x));
            let x = random(&[64, 64], &mut rng, 0.05, 0.95);
            check_gradients(&name, tol, &ps, &[x], 128, pseed, &|cx, v| energy_loss(cx, v[0], &mask))
        }
        Component::BoxLoss => {
            let t = [BoxXyxy::new(0.2, 0.1, 0.6, 0.7), BoxXyxy::new(0.5, 0.5, 0.9, 0.8)];
            let x = Tensor::new([2, 4], vec![0.37, 0.45, 0.31, 0.52, 0.61, 0.63, 0.35, 0.22]);
            check_gradients(&name, tol, &ps, &[x], 8, pseed, &|cx, v| Ok(giou_loss(cx.g, v[0], &t)))
        }
        Component::Detector => {
            let w = small_widths();
            let cfg = DetectorConfig { num_categories: 4, num_queries: 6, num_head_queries: 3, attention_heads: HEADS, ..Default::default() };
            let bb = Backbone::new(&mut ps, &mut rng, &w, 64);
            let det = Detector::new(&mut ps, &mut rng, &w, &cfg);
            let x = random(&[3, 64, 64], &mut rng, 0.0, 1.0);
            let hw = 16 * 16;
            let targets = DetTargets {
                boxes: vec![BoxXyxy::new(0.1, 0.1, 0.4, 0.5), BoxXyxy::new(0.5, 0.2, 0.9, 0.6)],
                classes: vec![1, 3],
                masks: vec![
                    (0..hw).map(|k| f64::from(k % 16 < 6 && k / 16 < 8)).collect(),
                    (0..hw).map(|k| f64::from(k % 16 >= 8 && k / 16 >= 3 && k / 16 < 10)).collect(),
                ],
                head_box: BoxXyxy::new(0.4, 0.8, 0.6, 0.98),
            };
            let weights = LossWeights::default();
            check_gradients(&name, tol, &ps, &[], 2, pseed, &|cx, _| {
                let img = cx.g.constant(x.clone());
                let p = bb.extract_pyramid(cx, img, false)?;
                let out = det.forward(cx, &p)?;
                Ok(detection_loss(cx.g, &out, &targets, &weights)?.0)
            })
        }
    }
}

/// Check every listed component (in order) at a fresh random init.
pub fn gradcheck(components: &[Component], seed: u64) -> Result<GradcheckReport> {
    let entries = components
        .iter()
        .map(|&c| {
            let e = run_component(c, seed)?;
            log::info!("{}: max rel error {:.3e} over {} coords ({})", e.name, e.max_rel_error, e.coordinates, if e.passed { "pass" } else { "FAIL" });
            Ok(e)
        })
        .collect::<Result<_>>()?;
    Ok(GradcheckReport { entries })
}
