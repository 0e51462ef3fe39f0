//! Set-prediction detection losses: matched class / box / mask terms for the
//! object queries and the IoU-filtered head proposal terms.

use serde::{Deserialize, Serialize};

use super::hungarian::{hungarian_match, MatchResult};
use super::{head_positives, DetectorOutput};
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::geometry::BoxXyxy;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub ce: f64,
    pub l1: f64,
    pub giou: f64,
    pub bce: f64,
    pub dice: f64,
    /// Relative class weight of queries matched to nothing.
    pub no_object: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { ce: 1.0, l1: 5.0, giou: 2.0, bce: 1.0, dice: 1.0, no_object: 0.1 }
    }
}

/// Ground truth for one image, geometry normalized to `[0, 1]`.
#[derive(Clone, Debug)]
pub struct DetTargets {
    pub boxes: Vec<BoxXyxy>,
    pub classes: Vec<usize>,
    /// Supervision masks at the detector's mask resolution, row-major 0/1.
    pub masks: Vec<Vec<f64>>,
    pub head_box: BoxXyxy,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DetLossBreakdown {
    pub obj_ce: f64,
    pub obj_l1: f64,
    pub obj_giou: f64,
    pub mask_bce: f64,
    pub mask_dice: f64,
    pub head_ce: f64,
    pub head_l1: f64,
    pub head_giou: f64,
    pub total: f64,
}

fn cxcywh_to_xyxy(b: &[f64]) -> BoxXyxy {
    BoxXyxy::from_cxcywh(b[0], b[1], b[2], b[3])
}

/// GIoU that tolerates collapsed predicted boxes (used only for costs and
/// positive filtering, never differentiated).
fn giou_value(a: &BoxXyxy, b: &BoxXyxy) -> f64 {
    let union = a.union_area(b);
    let encl = a.enclosing(b).area();
    if union <= 0.0 || encl <= 0.0 {
        return -1.0;
    }
    a.intersection(b) / union - (encl - union) / encl
}

/// Mean `1 - GIoU` between predicted `[N, 4]` `(cx, cy, w, h)` rows and
/// target corner boxes, differentiable in the predictions.
pub fn giou_loss(g: &Graph, pred: Var, targets: &[BoxXyxy]) -> Var {
    let n = targets.len();
    assert_eq!(g.shape(pred), vec![n, 4]);
    let col = |k: usize| g.slice_cols(pred, k, 1);
    let (cx, cy, w, h) = (col(0), col(1), col(2), col(3));
    let (half_w, half_h) = (g.scale(w, 0.5), g.scale(h, 0.5));
    let (x1, x2) = (g.sub(cx, half_w), g.add(cx, half_w));
    let (y1, y2) = (g.sub(cy, half_h), g.add(cy, half_h));
    let tcol = |f: fn(&BoxXyxy) -> f64| g.constant(Tensor::new([n, 1], targets.iter().map(f).collect()));
    let (tx1, ty1, tx2, ty2) = (tcol(|b| b.x1), tcol(|b| b.y1), tcol(|b| b.x2), tcol(|b| b.y2));
    let iw = g.relu(g.sub(g.minimum(x2, tx2), g.maximum(x1, tx1)));
    let ih = g.relu(g.sub(g.minimum(y2, ty2), g.maximum(y1, ty1)));
    let inter = g.mul(iw, ih);
    let area_p = g.mul(w, h);
    let area_t = tcol(|b| b.area());
    let union = g.sub(g.add(area_p, area_t), inter);
    let ew = g.sub(g.maximum(x2, tx2), g.minimum(x1, tx1));
    let eh = g.sub(g.maximum(y2, ty2), g.minimum(y1, ty1));
    let encl = g.mul(ew, eh);
    let iou = g.div(inter, union);
    let slack = g.div(g.sub(encl, union), encl);
    let giou = g.sub(iou, slack);
    g.add_scalar(g.neg(g.mean(giou)), 1.0)
}

/// Mean over rows of the summed absolute coordinate error.
fn l1_loss(g: &Graph, pred: Var, targets: &[BoxXyxy]) -> Var {
    let n = targets.len();
    let t = Tensor::new([n, 4], targets.iter().flat_map(|b| b.to_cxcywh()).collect());
    let diff = g.abs(g.sub(pred, g.constant(t)));
    g.scale(g.sum(diff), 1.0 / n as f64)
}

/// Matching cost `[N_q][N_gt]`: `-p(class) * ce + l1 * |box| - giou * GIoU`.
pub fn matching_cost(class_logits: &Tensor, boxes: &Tensor, t: &DetTargets, w: &LossWeights) -> Vec<Vec<f64>> {
    let (nq, k) = class_logits.dims2();
    (0..nq)
        .map(|q| {
            let mut probs = class_logits.data()[q * k..(q + 1) * k].to_vec();
            crate::autograd::softmax_in_place(&mut probs);
            let pb = &boxes.data()[q * 4..q * 4 + 4];
            let pxy = cxcywh_to_xyxy(pb);
            t.boxes
                .iter()
                .zip(&t.classes)
                .map(|(tb, &c)| {
                    let l1: f64 = pb.iter().zip(tb.to_cxcywh()).map(|(a, b)| (a - b).abs()).sum();
                    -w.ce * probs[c] + w.l1 * l1 - w.giou * giou_value(&pxy, tb)
                })
                .collect()
        })
        .collect()
}

/// Detection loss for one image. Returns the differentiable total, its
/// breakdown and the object matching used.
pub fn detection_loss(
    g: &Graph,
    out: &DetectorOutput,
    t: &DetTargets,
    w: &LossWeights,
) -> Result<(Var, DetLossBreakdown, MatchResult)> {
    let n_gt = t.boxes.len();
    if n_gt == 0 {
        return Err(Error::Invalid("no ground-truth objects".into()));
    }
    if t.classes.len() != n_gt || t.masks.len() != n_gt {
        return Err(Error::Shape("targets have mismatched lengths".into()));
    }
    let (cl, bx) = (g.value(out.class_logits), g.value(out.boxes));
    let (nq, k) = cl.dims2();
    let no_object = k - 1;
    let matching = hungarian_match(&matching_cost(&cl, &bx, t, w))?;

    let mut targets = vec![no_object; nq];
    let mut weights = vec![w.no_object; nq];
    for &(p, gt) in &matching.pairs {
        targets[p] = t.classes[gt];
        weights[p] = 1.0;
    }
    let obj_ce = g.cross_entropy(out.class_logits, &targets, &weights);

    let pred_idx: Vec<usize> = matching.pairs.iter().map(|&(p, _)| p).collect();
    let gt_boxes: Vec<BoxXyxy> = matching.pairs.iter().map(|&(_, gt)| t.boxes[gt]).collect();
    let matched_boxes = g.select_rows(out.boxes, &pred_idx);
    let obj_l1 = l1_loss(g, matched_boxes, &gt_boxes);
    let obj_giou = giou_loss(g, matched_boxes, &gt_boxes);

    let matched_masks = g.select_rows(out.mask_logits, &pred_idx);
    let hw = out.mask_size.0 * out.mask_size.1;
    let mut mask_target = Vec::with_capacity(n_gt * hw);
    for &(_, gt) in &matching.pairs {
        if t.masks[gt].len() != hw {
            return Err(Error::Shape(format!("mask target has {} cells, expected {hw}", t.masks[gt].len())));
        }
        mask_target.extend_from_slice(&t.masks[gt]);
    }
    let mask_target = Tensor::new([n_gt, hw], mask_target);
    let mask_bce = g.bce_with_logits(matched_masks, &mask_target);
    let dice_terms: Vec<(f64, Var)> = (0..n_gt)
        .map(|i| {
            let row = g.select_rows(matched_masks, &[i]);
            let tgt = Tensor::new([1, hw], mask_target.data()[i * hw..(i + 1) * hw].to_vec());
            (1.0 / n_gt as f64, g.dice_loss(row, &tgt))
        })
        .collect();
    let mask_dice = g.linear_combination(&dice_terms);

    let hb = g.value(out.head_boxes);
    let nh = hb.dims2().0;
    let ious: Vec<f64> = (0..nh).map(|i| cxcywh_to_xyxy(&hb.data()[i * 4..i * 4 + 4]).iou(&t.head_box)).collect();
    let positives = head_positives(&ious);
    let mut head_target = vec![0.0; nh];
    positives.iter().for_each(|&i| head_target[i] = 1.0);
    let head_ce = g.bce_with_logits(out.head_logits, &Tensor::new([nh], head_target));
    let head_rows = g.select_rows(out.head_boxes, &positives);
    let head_gt = vec![t.head_box; positives.len()];
    let head_l1 = l1_loss(g, head_rows, &head_gt);
    let head_giou = giou_loss(g, head_rows, &head_gt);

    let total = g.linear_combination(&[
        (w.ce, obj_ce),
        (w.l1, obj_l1),
        (w.giou, obj_giou),
        (w.bce, mask_bce),
        (w.dice, mask_dice),
        (w.ce, head_ce),
        (w.l1, head_l1),
        (w.giou, head_giou),
    ]);
    let v = |x: Var| g.value(x).item();
    let breakdown = DetLossBreakdown {
        obj_ce: v(obj_ce),
        obj_l1: v(obj_l1),
        obj_giou: v(obj_giou),
        mask_bce: v(mask_bce),
        mask_dice: v(mask_dice),
        head_ce: v(head_ce),
        head_l1: v(head_l1),
        head_giou: v(head_giou),
        total: v(total),
    };
    Ok((total, breakdown, matching))
}
