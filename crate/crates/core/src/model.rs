//! The full network: backbone, detector with head decoder, gaze field and
//! object interaction, wired as one forward pass.

use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::backbone::{Backbone, ModelWidths};
use crate::detect::{select_head, Detector, DetectorConfig, DetectorOutput};
use crate::error::{Error, Result};
use crate::gaze::{GazeField, GazeFieldOutput};
use crate::geometry::BoxXyxy;
use crate::interaction::Interaction;
use crate::layers::{Ctx, ParamStore};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_size: usize,
    pub widths: ModelWidths,
    pub detector: DetectorConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { input_size: 224, widths: ModelWidths::default(), detector: DetectorConfig::default() }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.widths.validate(self.detector.eta)?;
        if self.input_size != 224 {
            // The gaze field works on a 7x7 grid, i.e. a 224 input at stride 32.
            return Err(Error::Config(format!("input_size must be 224, got {}", self.input_size)));
        }
        let d = &self.detector;
        if d.num_queries == 0 || d.num_head_queries == 0 || d.num_categories < 2 {
            return Err(Error::Config("detector needs queries, head queries and >= 2 categories".into()));
        }
        if !(d.query_sigma > 0.0 && d.head_query_sigma > 0.0) {
            return Err(Error::Config("query prior widths must be positive".into()));
        }
        if self.widths.d_model % d.attention_heads != 0 {
            return Err(Error::Config("d_model must be divisible by the attention heads".into()));
        }
        Ok(())
    }
}

/// Where the head box feeding the gaze branch comes from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum HeadSource {
    /// Ground-truth head box, normalized (non-real-world setting).
    Given(BoxXyxy),
    /// Highest-confidence head decoder proposal (real-world setting).
    Predicted,
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput {
    pub det: DetectorOutput,
    /// Normalized head box actually used by the gaze branch.
    pub head_box: BoxXyxy,
    pub selected_head: Option<usize>,
    pub gaze: GazeFieldOutput,
    pub q_mask: Var,
    pub f_fuse: Var,
    pub f_e: Var,
    pub f_reg: Var,
    /// Raw `[64, 64]` heatmap.
    pub heatmap: Var,
}

/// Smallest side, in normalized units, of a predicted head box.
const MIN_HEAD_SIDE: f64 = 2.0 / 224.0;

#[derive(Clone, Debug)]
pub struct GosModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub backbone: Backbone,
    pub detector: Detector,
    pub gaze: GazeField,
    pub interaction: Interaction,
}

impl GosModel {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut ps = ParamStore::new();
        let mut rng = SplitMix64::new(seed);
        let w = &config.widths;
        let backbone = Backbone::new(&mut ps, &mut rng, w, config.input_size);
        let detector = Detector::new(&mut ps, &mut rng, w, &config.detector);
        let gaze = GazeField::new(&mut ps, &mut rng, w.c4, config.input_size);
        let interaction = Interaction::new(&mut ps, &mut rng, w.c4, w.d_model, config.detector.attention_heads);
        Ok(Self { config: config.clone(), params: ps, backbone, detector, gaze, interaction })
    }

    pub fn forward(&self, cx: &Ctx, image: &Tensor, head: HeadSource) -> Result<ForwardOutput> {
        let g = cx.g;
        let img = g.constant(image.clone());
        let pyramid = self.backbone.extract_pyramid(cx, img, true)?;
        let det = self.detector.forward(cx, &pyramid)?;
        let (head_box, selected_head) = match head {
            HeadSource::Given(b) => (b, None),
            HeadSource::Predicted => {
                let (i, h) = select_head(&det.head_proposals(cx))?;
                (sanitize_head_box(h.box_xyxy()), Some(i))
            }
        };
        let gaze = self.gaze.forward(cx, pyramid.levels[3].var, &head_box)?;
        let it = &self.interaction;
        let q_mask = it.mask_embed(cx, det.q_obj);
        let f_fuse = it.fuse_features(cx, gaze.f_scene, gaze.f_gaze, gaze.m)?;
        let f_e = it.self_encode(cx, f_fuse);
        let f_reg = it.cross_interact(cx, f_e, q_mask);
        let heatmap = it.heatmap_head(cx, f_reg);
        Ok(ForwardOutput { det, head_box, selected_head, gaze, q_mask, f_fuse, f_e, f_reg, heatmap })
    }
}

/// Clip a predicted head box to the image and widen collapsed sides.
fn sanitize_head_box(b: BoxXyxy) -> BoxXyxy {
    let b = b.clip(1.0, 1.0);
    let (cx, cy) = b.center();
    let w = b.width().max(MIN_HEAD_SIDE);
    let h = b.height().max(MIN_HEAD_SIDE);
    let cx = cx.clamp(w / 2.0, 1.0 - w / 2.0);
    let cy = cy.clamp(h / 2.0, 1.0 - h / 2.0);
    BoxXyxy::from_cxcywh(cx, cy, w, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Graph;

    #[test]
    fn forward_shapes_and_determinism() {
        let model = GosModel::new(&ModelConfig::default(), 3).unwrap();
        let img = Tensor::from_fn([3, 224, 224], |i| ((i * 7919) % 255) as f64 / 255.0);
        let run = || {
            let g = Graph::new();
            let cx = model.params.bind_frozen(&g);
            let out = model.forward(&cx, &img, HeadSource::Predicted).unwrap();
            let dets = out.det.detections(&cx);
            assert_eq!(dets.len(), 25);
            assert!(dets.iter().all(|d| d.mask_logits.len() == 56 * 56 && d.box_cxcywh.iter().all(|v| v.is_finite())));
            assert_eq!(out.det.head_proposals(&cx).len(), 5);
            assert_eq!(g.shape(out.heatmap), vec![64, 64]);
            assert_eq!(g.shape(out.f_reg), vec![49, 64]);
            assert!(out.selected_head.is_some());
            g.value(out.heatmap).data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn sanitize_widens_collapsed_box() {
        let b = sanitize_head_box(BoxXyxy::new(0.999, 0.5, 0.999, 0.5));
        assert!(b.validate().is_ok());
        assert!(b.x2 <= 1.0 && b.width() >= MIN_HEAD_SIDE - 1e-15);
    }
}
