//! Query-based detector / segmenter with a head decoder.
//!
//! A compact stand-in for a unified detection and segmentation transformer:
//! pixel-shuffled pyramid levels form a token memory, learned object queries
//! decode it into boxes, classes and mask embeddings, and a second small
//! decoder proposes head boxes from the same memory.
//!
//! Every query owns a learned anchor box. Its cross-attention logits carry a
//! Gaussian penalty on the distance between the anchor center and each token,
//! and its box is predicted as an offset from the anchor in logit space.

mod hungarian;
mod loss;

pub use hungarian::{hungarian_match, MatchResult};
pub use loss::{detection_loss, giou_loss, DetLossBreakdown, DetTargets, LossWeights};

use serde::{Deserialize, Serialize};

use crate::autograd::{sigmoid, Var};
use crate::backbone::{FeatureMap, FeaturePyramid, ModelWidths, ShuffleProjection};
use crate::error::{Error, Result};
use crate::geometry::BoxXyxy;
use crate::layers::{sinusoidal_2d, to_tokens, AttentionBlock, Conv2d, Ctx, DecoderLayer, Linear, Mlp, ParamId, ParamStore};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub num_categories: usize,
    pub num_queries: usize,
    pub num_head_queries: usize,
    pub attention_heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub head_decoder_layers: usize,
    pub eta: usize,
    /// Width, in normalized units, of the object queries' spatial prior.
    pub query_sigma: f64,
    pub head_query_sigma: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            num_categories: 24,
            num_queries: 25,
            num_head_queries: 5,
            attention_heads: 4,
            encoder_layers: 2,
            decoder_layers: 2,
            head_decoder_layers: 3,
            eta: 2,
            query_sigma: 0.1,
            head_query_sigma: 0.2,
        }
    }
}

/// Object-query predictions for one image.
#[derive(Clone, Copy, Debug)]
pub struct DetectorOutput {
    /// `[N_q, K + 1]`, last column is no-object.
    pub class_logits: Var,
    /// `[N_q, 4]` normalized `(cx, cy, w, h)` after sigmoid.
    pub boxes: Var,
    /// `[N_q, Hm * Wm]` at stride 4.
    pub mask_logits: Var,
    pub mask_size: (usize, usize),
    /// Final decoder states `[N_q, D]`.
    pub q_obj: Var,
    /// `[N_h, 4]` normalized `(cx, cy, w, h)`.
    pub head_boxes: Var,
    /// `[N_h]` confidence logits.
    pub head_logits: Var,
}

/// One predicted object, detached from the graph.
#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub box_cxcywh: [f64; 4],
    pub class_logits: Vec<f64>,
    pub mask_logits: Vec<f64>,
    pub query: Vec<f64>,
}

impl Detection {
    pub fn box_xyxy(&self) -> BoxXyxy {
        let [cx, cy, w, h] = self.box_cxcywh;
        BoxXyxy::from_cxcywh(cx, cy, w, h)
    }

    pub fn class_probs(&self) -> Vec<f64> {
        let mut p = self.class_logits.clone();
        let m = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        p.iter_mut().for_each(|v| *v = (*v - m).exp());
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= s);
        p
    }

    /// Most likely class, which may be the no-object index `K`.
    pub fn argmax_class(&self) -> usize {
        argmax(&self.class_logits)
    }

    /// Highest probability over real categories and that category.
    pub fn best_category(&self) -> (usize, f64) {
        let p = self.class_probs();
        let k = argmax(&p[..p.len() - 1]);
        (k, p[k])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeadDetection {
    pub box_cxcywh: [f64; 4],
    pub confidence: f64,
}

impl HeadDetection {
    pub fn box_xyxy(&self) -> BoxXyxy {
        let [cx, cy, w, h] = self.box_cxcywh;
        BoxXyxy::from_cxcywh(cx, cy, w, h)
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Highest-confidence proposal; ties go to the lowest index.
pub fn select_head(proposals: &[HeadDetection]) -> Result<(usize, HeadDetection)> {
    if proposals.is_empty() {
        return Err(Error::Invalid("no head proposals".into()));
    }
    let conf: Vec<f64> = proposals.iter().map(|p| p.confidence).collect();
    let i = argmax(&conf);
    Ok((i, proposals[i]))
}

/// Indices of proposals whose IoU with the ground-truth head exceeds 0.5;
/// when none does, the single best-overlapping proposal.
pub fn head_positives(ious: &[f64]) -> Vec<usize> {
    let pos: Vec<usize> = (0..ious.len()).filter(|&i| ious[i] > 0.5).collect();
    if pos.is_empty() && !ious.is_empty() {
        vec![argmax(ious)]
    } else {
        pos
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `[n, 4]` anchors in logit space: centers on a near-square grid covering
/// the image, sides equal to the grid pitch.
fn grid_anchors(n: usize) -> Tensor {
    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    let data = (0..n)
        .flat_map(|k| {
            let (r, c) = (k / cols, k % cols);
            let cx = (c as f64 + 0.5) / cols as f64;
            let cy = (r as f64 + 0.5) / rows as f64;
            [logit(cx), logit(cy), logit(1.0 / cols as f64), logit(1.0 / rows as f64)]
        })
        .collect();
    Tensor::new([n, 4], data)
}

/// Cross-attention bias `[n, h * w]`: `-d^2 / (2 sigma^2)` where `d` is the
/// distance from each anchor center to each token's cell center.
fn spatial_prior(cx: &Ctx, anchors: Var, (h, w): (usize, usize), sigma: f64) -> Var {
    let g = cx.g;
    let n = g.shape(anchors)[0];
    let centers = g.sigmoid(g.slice_cols(anchors, 0, 2));
    let token = |f: &dyn Fn(usize, usize) -> f64| {
        Tensor::from_fn([n, h * w], |k| {
            let t = k % (h * w);
            f(t / w, t % w)
        })
    };
    let tx = token(&|_, j| (j as f64 + 0.5) / w as f64);
    let ty = token(&|i, _| (i as f64 + 0.5) / h as f64);
    let dx = g.add_col(g.constant(tx), g.neg(g.slice_cols(centers, 0, 1)));
    let dy = g.add_col(g.constant(ty), g.neg(g.slice_cols(centers, 1, 1)));
    g.scale(g.add(g.square(dx), g.square(dy)), -1.0 / (2.0 * sigma * sigma))
}

#[derive(Clone, Debug)]
pub struct Detector {
    cfg: DetectorConfig,
    d_model: usize,
    shuffle: Vec<ShuffleProjection>,
    encoder: Vec<AttentionBlock>,
    queries: ParamId,
    anchors: ParamId,
    decoder: Vec<DecoderLayer>,
    class_head: Linear,
    box_head: Mlp,
    mask_embed: Mlp,
    pixel_embed: Conv2d,
    head_queries: ParamId,
    head_anchors: ParamId,
    head_decoder: Vec<DecoderLayer>,
    head_box: Mlp,
    head_conf: Linear,
}

impl Detector {
    pub fn new(ps: &mut ParamStore, rng: &mut SplitMix64, widths: &ModelWidths, cfg: &DetectorConfig) -> Self {
        let d = widths.d_model;
        let h = cfg.attention_heads;
        let shuffle = widths
            .stages()
            .iter()
            .enumerate()
            .map(|(i, &c)| ShuffleProjection::new(ps, rng, &format!("obj_feat.{i}"), c, d, cfg.eta))
            .collect();
        let encoder = (0..cfg.encoder_layers).map(|i| AttentionBlock::new(ps, rng, &format!("encoder.{i}"), d, h)).collect();
        let queries = ps.uniform("queries", &[cfg.num_queries, d], 1.0, rng);
        let anchors = ps.add("anchors", grid_anchors(cfg.num_queries));
        let decoder = (0..cfg.decoder_layers).map(|i| DecoderLayer::new(ps, rng, &format!("decoder.{i}"), d, h)).collect();
        let class_head = Linear::new(ps, rng, "class_head", d, cfg.num_categories + 1);
        let box_head = Mlp::new(ps, rng, "box_head", &[d, d, 4]);
        let mask_embed = Mlp::new(ps, rng, "mask_embed", &[d, d, d]);
        let pixel_embed = Conv2d::new(ps, rng, "pixel_embed", d, d, 1, 1, 0);
        let head_queries = ps.uniform("head_queries", &[cfg.num_head_queries, d], 1.0, rng);
        let head_anchors = ps.add("head_anchors", grid_anchors(cfg.num_head_queries));
        let head_decoder =
            (0..cfg.head_decoder_layers).map(|i| DecoderLayer::new(ps, rng, &format!("head_decoder.{i}"), d, h)).collect();
        let head_box = Mlp::new(ps, rng, "head_box", &[d, d, 4]);
        let head_conf = Linear::new(ps, rng, "head_conf", d, 1);
        Self {
            cfg: cfg.clone(),
            d_model: d,
            shuffle,
            encoder,
            queries,
            anchors,
            decoder,
            class_head,
            box_head,
            mask_embed,
            pixel_embed,
            head_queries,
            head_anchors,
            head_decoder,
            head_box,
            head_conf,
        }
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.cfg
    }

    /// Object-specific features `f_i^obj` for all four levels.
    pub fn object_features(&self, cx: &Ctx, pyramid: &FeaturePyramid) -> Result<Vec<FeatureMap>> {
        pyramid.levels.iter().zip(&self.shuffle).map(|(f, s)| s.forward(cx, *f)).collect()
    }

    /// Encoder memory tokens `[T, D]` from the stride-8 object level plus the
    /// upsampled stride-16 level.
    pub fn memory(&self, cx: &Ctx, obj: &[FeatureMap]) -> Result<Var> {
        let g = cx.g;
        let f3 = obj[2].var;
        let f4 = g.upsample_nearest2(obj[3].var);
        let (s3, s4) = (g.shape(f3), g.shape(f4));
        if s3 != s4 {
            return Err(Error::Shape(format!("object levels 3/4 disagree: {s3:?} vs {s4:?}")));
        }
        let tokens = to_tokens(g, g.add(f3, f4));
        let pe = g.constant(sinusoidal_2d(s3[1], s3[2], self.d_model));
        let mut x = g.add(tokens, pe);
        for layer in &self.encoder {
            x = layer.forward_self(cx, x);
        }
        Ok(x)
    }

    /// Stride-4 pixel embeddings `[D, Hm * Wm]`.
    fn pixel_embeddings(&self, cx: &Ctx, obj: &[FeatureMap]) -> Result<(Var, (usize, usize))> {
        let g = cx.g;
        let f2 = obj[1].var;
        let f1 = g.avg_pool2(obj[0].var);
        let (s1, s2) = (g.shape(f1), g.shape(f2));
        if s1 != s2 {
            return Err(Error::Shape(format!("object levels 1/2 disagree: {s1:?} vs {s2:?}")));
        }
        let p = self.pixel_embed.forward(cx, g.add(f1, f2));
        Ok((g.reshape(p, [s2[0], s2[1] * s2[2]]), (s2[1], s2[2])))
    }

    pub fn forward(&self, cx: &Ctx, pyramid: &FeaturePyramid) -> Result<DetectorOutput> {
        let g = cx.g;
        let obj = self.object_features(cx, pyramid)?;
        let memory = self.memory(cx, &obj)?;
        let grid = {
            let s = g.shape(obj[2].var);
            (s[1], s[2])
        };

        let anchors = cx.p(self.anchors);
        let bias = spatial_prior(cx, anchors, grid, self.cfg.query_sigma);
        let mut q = cx.p(self.queries);
        for layer in &self.decoder {
            q = layer.forward(cx, q, memory, Some(bias));
        }
        let class_logits = self.class_head.forward(cx, q);
        let boxes = g.sigmoid(g.add(self.box_head.forward(cx, q), anchors));
        let (pix, mask_size) = self.pixel_embeddings(cx, &obj)?;
        let emb = self.mask_embed.forward(cx, q);
        let mask_logits = g.matmul(emb, pix);

        let head_anchors = cx.p(self.head_anchors);
        let head_bias = spatial_prior(cx, head_anchors, grid, self.cfg.head_query_sigma);
        let mut hq = cx.p(self.head_queries);
        for layer in &self.head_decoder {
            hq = layer.forward(cx, hq, memory, Some(head_bias));
        }
        let head_boxes = g.sigmoid(g.add(self.head_box.forward(cx, hq), head_anchors));
        let hl = self.head_conf.forward(cx, hq);
        let head_logits = g.reshape(hl, [self.cfg.num_head_queries]);

        Ok(DetectorOutput { class_logits, boxes, mask_logits, mask_size, q_obj: q, head_boxes, head_logits })
    }
}

impl DetectorOutput {
    pub fn detections(&self, cx: &Ctx) -> Vec<Detection> {
        let g = cx.g;
        let (cl, bx, ml, q) =
            (g.value(self.class_logits), g.value(self.boxes), g.value(self.mask_logits), g.value(self.q_obj));
        let (n, k) = cl.dims2();
        let hw = ml.dims2().1;
        let d = q.dims2().1;
        (0..n)
            .map(|i| Detection {
                box_cxcywh: bx.data()[i * 4..i * 4 + 4].try_into().expect("4 coords"),
                class_logits: cl.data()[i * k..(i + 1) * k].to_vec(),
                mask_logits: ml.data()[i * hw..(i + 1) * hw].to_vec(),
                query: q.data()[i * d..(i + 1) * d].to_vec(),
            })
            .collect()
    }

    pub fn head_proposals(&self, cx: &Ctx) -> Vec<HeadDetection> {
        let g = cx.g;
        let (bx, hl) = (g.value(self.head_boxes), g.value(self.head_logits));
        (0..hl.numel())
            .map(|i| HeadDetection {
                box_cxcywh: bx.data()[i * 4..i * 4 + 4].try_into().expect("4 coords"),
                confidence: sigmoid(hl.data()[i]),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn select_head_examples() {
        let mk = |c: f64| HeadDetection { box_cxcywh: [0.5; 4], confidence: c };
        assert_eq!(select_head(&[mk(0.2), mk(0.9), mk(0.5)]).unwrap().0, 1);
        assert_eq!(select_head(&[mk(0.5), mk(0.5)]).unwrap().0, 0);
        assert!(select_head(&[]).is_err());
    }

    #[test]
    fn anchors_cover_the_image() {
        let a = grid_anchors(5);
        let c: Vec<f64> = a.data().chunks(4).map(|r| sigmoid(r[0])).collect();
        assert!((c[0] - 1.0 / 6.0).abs() < 1e-12 && (c[2] - 5.0 / 6.0).abs() < 1e-12);
        assert!((sigmoid(a.data()[3 * 4 + 1]) - 0.75).abs() < 1e-12);
        assert!((sigmoid(a.data()[2]) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn prior_peaks_at_anchor_cell() {
        use crate::autograd::Graph;
        let g = Graph::new();
        let ps = ParamStore::new();
        let cx = ps.bind(&g);
        let anchors = g.constant(Tensor::new([1, 4], vec![logit(0.375), logit(0.125), 0.0, 0.0]));
        let b = g.value(spatial_prior(&cx, anchors, (4, 4), 0.5));
        assert!(b.data()[1].abs() < 1e-12);
        let far = -(0.5f64.powi(2) + 0.75f64.powi(2)) / 0.5;
        assert!((b.data()[3 * 4 + 3] - far).abs() < 1e-12);
    }

    #[test]
    fn positive_filter() {
        assert_eq!(head_positives(&[0.7, 0.6, 0.4]), vec![0, 1]);
        assert_eq!(head_positives(&[0.1, 0.3, 0.2]), vec![1]);
    }
}
