//! Evaluation metrics: mSoC (box and mask), heatmap AUC, L2 distance,
//! angular error, COCO-style AP and the gated mAP protocol.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoxXyxy;
use crate::scene::Bitmap;
use crate::tensor::Tensor;

/// `.50, .55, ..., .95`.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|k| (50 + 5 * k) as f64 / 100.0).collect()
}

/// `min(|p|/a, |g|/a) * |p u g| / a`, `a` the area of the smallest
/// rectangle enclosing both masks.
pub fn msoc_mask(p: &Bitmap, g: &Bitmap) -> Result<f64> {
    if !p.same_dims(g) {
        return Err(Error::Shape("msoc masks differ in size".into()));
    }
    let (pb, gb) = match (p.bbox(), g.bbox()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::Mask("msoc needs nonempty masks".into())),
    };
    let a = pb.enclosing(&gb).area();
    let (ap, ag) = (p.area() as f64, g.area() as f64);
    Ok((ap / a).min(ag / a) * p.union_area(g) as f64 / a)
}

/// Box form of [`msoc_mask`] with exact rectangle areas.
pub fn msoc_box(p: &BoxXyxy, g: &BoxXyxy) -> Result<f64> {
    p.validate()?;
    g.validate()?;
    let a = p.enclosing(g).area();
    Ok((p.area() / a).min(g.area() / a) * p.union_area(g) / a)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MsocSummary {
    /// Mean of the ten threshold columns.
    pub mean: f64,
    pub at50: f64,
    pub at75: f64,
    pub at95: f64,
    /// Percent of images at or above each threshold in [`coco_thresholds`].
    pub per_threshold: Vec<f64>,
}

/// Percent of images whose score reaches each threshold.
pub fn msoc_summary(values: &[f64]) -> Result<MsocSummary> {
    if values.is_empty() {
        return Err(Error::Invalid("no instances to score".into()));
    }
    let per_threshold: Vec<f64> = coco_thresholds()
        .iter()
        .map(|&t| 100.0 * values.iter().filter(|&&v| v >= t).count() as f64 / values.len() as f64)
        .collect();
    Ok(MsocSummary {
        mean: per_threshold.iter().sum::<f64>() / per_threshold.len() as f64,
        at50: per_threshold[0],
        at75: per_threshold[5],
        at95: per_threshold[9],
        per_threshold,
    })
}

fn is_positive(i: usize, j: usize, gi: usize, gj: usize) -> bool {
    i.abs_diff(gi).pow(2) + j.abs_diff(gj).pow(2) <= AUC_RADIUS_SQ
}

const AUC_RADIUS_SQ: usize = 9;

fn point_cell(p: [f64; 2], size: usize) -> (usize, usize) {
    let c = |v: f64| ((v * size as f64).floor().max(0.0) as usize).min(size - 1);
    (c(p[1]), c(p[0]))
}

/// ROC-AUC of heatmap scores for separating the cells whose centers lie
/// within distance 3 (in cells) of the ground-truth cell from all others;
/// ties count half.
pub fn auc(heatmap: &Tensor, gt_point: [f64; 2]) -> f64 {
    let (h, w) = heatmap.dims2();
    let (gi, gj) = point_cell(gt_point, h.min(w));
    let mut scored: Vec<(f64, bool)> = (0..h * w)
        .map(|k| {
            let (i, j) = (k / w, k % w);
            let pos = is_positive(i, j, gi, gj);
            (heatmap.data()[k], pos)
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n_pos = scored.iter().filter(|s| s.1).count() as f64;
    let n_neg = scored.len() as f64 - n_pos;
    // Sum over positives of (negatives strictly below + half the tied ones).
    let mut acc = 0.0;
    let mut neg_below = 0.0;
    let mut i = 0;
    while i < scored.len() {
        let mut j = i;
        while j < scored.len() && scored[j].0 == scored[i].0 {
            j += 1;
        }
        let pos = scored[i..j].iter().filter(|s| s.1).count() as f64;
        let neg = (j - i) as f64 - pos;
        acc += pos * (neg_below + 0.5 * neg);
        neg_below += neg;
        i = j;
    }
    acc / (n_pos * n_neg)
}

/// Center of the highest heatmap cell (first in raster order on ties), in
/// normalized coordinates.
pub fn heatmap_argmax(heatmap: &Tensor) -> [f64; 2] {
    let (h, w) = heatmap.dims2();
    let k = crate::detect::argmax(heatmap.data());
    [((k % w) as f64 + 0.5) / w as f64, ((k / w) as f64 + 0.5) / h as f64]
}

/// Argmax cell `(row, col)`.
pub fn heatmap_argmax_cell(heatmap: &Tensor) -> (usize, usize) {
    let w = heatmap.dims2().1;
    let k = crate::detect::argmax(heatmap.data());
    (k / w, k % w)
}

pub fn l2_distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Angle in degrees between `pred - eye` and `gt - eye`. `None` when exactly
/// one of the two vectors vanishes (the angle is undefined); `Some(0)` when
/// both do.
pub fn angular_error(eye: [f64; 2], pred: [f64; 2], gt: [f64; 2]) -> Option<f64> {
    let u = [pred[0] - eye[0], pred[1] - eye[1]];
    let v = [gt[0] - eye[0], gt[1] - eye[1]];
    let (nu, nv) = (u[0].hypot(u[1]), v[0].hypot(v[1]));
    match (nu == 0.0, nv == 0.0) {
        (true, true) => Some(0.0),
        (true, false) | (false, true) => None,
        _ => {
            let c = ((u[0] * v[0] + u[1] * v[1]) / (nu * nv)).clamp(-1.0, 1.0);
            Some(c.acos().to_degrees())
        }
    }
}

/// 101-point interpolated AP from a ranked list of hit flags.
fn interpolated_ap(hits: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut tp = 0.0;
    let mut precision = Vec::with_capacity(hits.len());
    let mut recall = Vec::with_capacity(hits.len());
    for (k, &h) in hits.iter().enumerate() {
        if h {
            tp += 1.0;
        }
        precision.push(tp / (k + 1) as f64);
        recall.push(tp / num_gt as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    (0..=100)
        .map(|r| {
            let r = r as f64 / 100.0;
            let idx = recall.partition_point(|&x| x < r);
            precision.get(idx).copied().unwrap_or(0.0)
        })
        .sum::<f64>()
        / 101.0
}

/// One scored prediction for AP.
#[derive(Clone, Debug, PartialEq)]
pub struct ApPrediction {
    pub category: usize,
    pub score: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ApResult {
    /// Mean over thresholds, percent.
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub per_threshold: Vec<f64>,
}

/// COCO-style AP in percent. `preds[i]` and `gt_categories[i]` belong to
/// image `i`; `iou(i, p, g)` is the overlap of prediction `p` with ground
/// truth `g` in that image. Predictions are matched greedily in score order
/// to the best unmatched ground truth of the same category; AP is averaged
/// over categories that have ground truth, then over `thresholds`.
pub fn average_precision(
    preds: &[Vec<ApPrediction>],
    gt_categories: &[Vec<usize>],
    iou: impl Fn(usize, usize, usize) -> f64,
    thresholds: &[f64],
) -> ApResult {
    assert_eq!(preds.len(), gt_categories.len());
    let mut cats: Vec<usize> = gt_categories.iter().flatten().copied().collect();
    cats.sort_unstable();
    cats.dedup();
    let per_threshold: Vec<f64> = thresholds
        .iter()
        .map(|&t| {
            if cats.is_empty() {
                return 0.0;
            }
            let total: f64 = cats
                .iter()
                .map(|&c| {
                    let mut ranked: Vec<(usize, usize, f64)> = preds
                        .iter()
                        .enumerate()
                        .flat_map(|(i, ps)| {
                            ps.iter().enumerate().filter(|(_, p)| p.category == c).map(move |(k, p)| (i, k, p.score))
                        })
                        .collect();
                    ranked.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
                    let mut used: Vec<Vec<bool>> = gt_categories.iter().map(|g| vec![false; g.len()]).collect();
                    let num_gt = gt_categories.iter().flatten().filter(|&&g| g == c).count();
                    let hits: Vec<bool> = ranked
                        .iter()
                        .map(|&(i, k, _)| {
                            let mut best: Option<(usize, f64)> = None;
                            for (gi, &gc) in gt_categories[i].iter().enumerate() {
                                if gc != c || used[i][gi] {
                                    continue;
                                }
                                let v = iou(i, k, gi);
                                if v >= t && best.map_or(true, |(_, bv)| v > bv) {
                                    best = Some((gi, v));
                                }
                            }
                            if let Some((gi, _)) = best {
                                used[i][gi] = true;
                                true
                            } else {
                                false
                            }
                        })
                        .collect();
                    interpolated_ap(&hits, num_gt)
                })
                .sum();
            100.0 * total / cats.len() as f64
        })
        .collect();
    let at = |x: f64| thresholds.iter().position(|&t| (t - x).abs() < 1e-9).map_or(f64::NAN, |k| per_threshold[k]);
    ApResult {
        ap: per_threshold.iter().sum::<f64>() / per_threshold.len().max(1) as f64,
        ap50: at(0.5),
        ap75: at(0.75),
        per_threshold,
    }
}

/// Per-image inputs to the gaze metrics, all geometry normalized.
#[derive(Clone, Debug)]
pub struct EvalInstance {
    pub pred_gaze_point: [f64; 2],
    pub gt_gaze_point: [f64; 2],
    pub pred_heatmap: Tensor,
    pub pred_head_box: BoxXyxy,
    pub gt_head_box: BoxXyxy,
    pub pred_object_box: BoxXyxy,
    pub pred_object_mask: Bitmap,
    pub pred_object_confidence: f64,
    pub gt_object_box: BoxXyxy,
    pub gt_object_mask: Bitmap,
    pub eye: [f64; 2],
}

impl EvalInstance {
    /// Gate of the gated protocol: head IoU > 0.5, L2 < 0.15, confidence
    /// > 0.75.
    pub fn is_gated_true_positive(&self) -> bool {
        self.pred_head_box.iou(&self.gt_head_box) > 0.5
            && l2_distance(self.pred_gaze_point, self.gt_gaze_point) < 0.15
            && self.pred_object_confidence > 0.75
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GatedMetrics {
    /// In `[0, 1]`.
    pub map: f64,
    pub true_positives: usize,
    pub auc: Option<f64>,
    pub dist: Option<f64>,
    pub ang: Option<f64>,
}

/// AP over the gate rule (one prediction per image, scored by its object
/// confidence) plus AUC / Dist / Ang over the true positives only.
pub fn gated_map(instances: &[EvalInstance]) -> GatedMetrics {
    let mut order: Vec<usize> = (0..instances.len()).collect();
    order.sort_by(|&a, &b| instances[b].pred_object_confidence.total_cmp(&instances[a].pred_object_confidence).then(a.cmp(&b)));
    let hits: Vec<bool> = order.iter().map(|&i| instances[i].is_gated_true_positive()).collect();
    let tps: Vec<&EvalInstance> = instances.iter().filter(|e| e.is_gated_true_positive()).collect();
    let mean = |v: Vec<f64>| if v.is_empty() { None } else { Some(v.iter().sum::<f64>() / v.len() as f64) };
    GatedMetrics {
        map: interpolated_ap(&hits, instances.len()),
        true_positives: tps.len(),
        auc: mean(tps.iter().map(|e| auc(&e.pred_heatmap, e.gt_gaze_point)).collect()),
        dist: mean(tps.iter().map(|e| l2_distance(e.pred_gaze_point, e.gt_gaze_point)).collect()),
        ang: mean(tps.iter().filter_map(|e| angular_error(e.eye, e.pred_gaze_point, e.gt_gaze_point)).collect()),
    }
}

/// Candidate whose mask best collects heatmap mass: maximizes
/// `sum(heatmap * mask) / sqrt(area)` with masks area-averaged onto the
/// heatmap grid and the heatmap clamped to `[0, 1]`.
pub fn select_gaze_object(heatmap: &Tensor, masks: &[&Bitmap]) -> Option<usize> {
    let (h, w) = heatmap.dims2();
    let mut best: Option<(usize, f64)> = None;
    for (k, m) in masks.iter().enumerate() {
        let cov = m.coverage(h, w);
        let area: f64 = cov.iter().sum();
        if area <= 0.0 {
            continue;
        }
        let mass: f64 = cov.iter().zip(heatmap.data()).map(|(c, v)| c * v.clamp(0.0, 1.0)).sum();
        let score = mass / area.sqrt();
        if best.map_or(true, |(_, b)| score > b) {
            best = Some((k, score));
        }
    }
    best.map(|(k, _)| k)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub num_images: usize,
    pub msoc_mask: MsocSummary,
    pub msoc_box: MsocSummary,
    pub ap_box: ApResult,
    pub ap_mask: ApResult,
    pub auc: f64,
    pub dist: f64,
    /// Degrees, over images where the angle is defined.
    pub ang: f64,
    pub ang_excluded: usize,
    pub gated: GatedMetrics,
}

impl MetricsReport {
    pub fn all_finite(&self) -> bool {
        let mut v = vec![self.auc, self.dist, self.ang, self.gated.map];
        for s in [&self.msoc_mask, &self.msoc_box] {
            v.extend([s.mean, s.at50, s.at75, s.at95]);
        }
        for a in [&self.ap_box, &self.ap_mask] {
            v.extend([a.ap, a.ap50, a.ap75]);
        }
        v.extend([self.gated.auc, self.gated.dist, self.gated.ang].into_iter().flatten());
        v.iter().all(|x| x.is_finite())
    }
}

/// Detections and ground truth of one image for the AP family.
#[derive(Clone, Debug, Default)]
pub struct ImageDetections {
    pub preds: Vec<(ApPrediction, BoxXyxy, Bitmap)>,
    pub gts: Vec<(usize, BoxXyxy, Bitmap)>,
}

pub fn compute_report(instances: &[EvalInstance], detections: &[ImageDetections]) -> Result<MetricsReport> {
    if instances.is_empty() {
        return Err(Error::Invalid("no instances to evaluate".into()));
    }
    let mask_scores =
        instances.iter().map(|e| msoc_mask(&e.pred_object_mask, &e.gt_object_mask).or_else(empty_as_zero)).collect::<Result<Vec<_>>>()?;
    let box_scores =
        instances.iter().map(|e| msoc_box(&e.pred_object_box, &e.gt_object_box).or_else(empty_as_zero)).collect::<Result<Vec<_>>>()?;
    let preds: Vec<Vec<ApPrediction>> = detections.iter().map(|d| d.preds.iter().map(|p| p.0.clone()).collect()).collect();
    let gt_cats: Vec<Vec<usize>> = detections.iter().map(|d| d.gts.iter().map(|g| g.0).collect()).collect();
    let th = coco_thresholds();
    let ap_box = average_precision(&preds, &gt_cats, |i, p, g| detections[i].preds[p].1.iou(&detections[i].gts[g].1), &th);
    let ap_mask = average_precision(&preds, &gt_cats, |i, p, g| detections[i].preds[p].2.iou(&detections[i].gts[g].2), &th);
    let n = instances.len() as f64;
    let angles: Vec<f64> =
        instances.iter().filter_map(|e| angular_error(e.eye, e.pred_gaze_point, e.gt_gaze_point)).collect();
    Ok(MetricsReport {
        num_images: instances.len(),
        msoc_mask: msoc_summary(&mask_scores)?,
        msoc_box: msoc_summary(&box_scores)?,
        ap_box,
        ap_mask,
        auc: instances.iter().map(|e| auc(&e.pred_heatmap, e.gt_gaze_point)).sum::<f64>() / n,
        dist: instances.iter().map(|e| l2_distance(e.pred_gaze_point, e.gt_gaze_point)).sum::<f64>() / n,
        ang: if angles.is_empty() { 0.0 } else { angles.iter().sum::<f64>() / angles.len() as f64 },
        ang_excluded: instances.len() - angles.len(),
        gated: gated_map(instances),
    })
}

/// An empty or degenerate prediction scores 0 rather than aborting the run.
fn empty_as_zero(e: Error) -> Result<f64> {
    match e {
        Error::Mask(_) | Error::DegenerateBox(_) => Ok(0.0),
        other => Err(other),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interaction::gt_heatmap;

    fn square(y0: usize, x0: usize, side: usize, size: usize) -> Bitmap {
        Bitmap::from_fn(size, size, |y, x| (y0..y0 + side).contains(&y) && (x0..x0 + side).contains(&x))
    }

    #[test]
    fn msoc_mask_examples() {
        let g = square(0, 0, 10, 16);
        assert_eq!(msoc_mask(&g, &g).unwrap(), 1.0);
        let p = square(0, 0, 1, 16);
        assert!((msoc_mask(&p, &g).unwrap() - 0.01).abs() < 1e-12);
        let disc = Bitmap::from_fn(32, 32, |y, x| (y as f64 - 15.5).powi(2) + (x as f64 - 15.5).powi(2) <= 100.0);
        let a = disc.bbox().unwrap().area();
        let want = (disc.area() as f64 / a).powi(2);
        assert!((msoc_mask(&disc, &disc).unwrap() - want).abs() < 1e-12);
        assert!(want < 1.0);
        assert!(msoc_mask(&Bitmap::new(16, 16), &g).is_err());
    }

    #[test]
    fn msoc_box_examples() {
        let b = BoxXyxy::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(msoc_box(&b, &b).unwrap(), 1.0);
        assert!((msoc_box(&BoxXyxy::new(0.0, 0.0, 1.0, 1.0), &b).unwrap() - 0.01).abs() < 1e-12);
        assert!((msoc_box(&b, &BoxXyxy::new(10.0, 0.0, 20.0, 10.0)).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn msoc_summary_examples() {
        let s = msoc_summary(&[0.6, 0.8]).unwrap();
        assert_eq!((s.at50, s.at75, s.at95), (100.0, 50.0, 0.0));
        assert!((msoc_summary(&[0.93]).unwrap().mean - 90.0).abs() < 1e-12);
        assert!(msoc_summary(&[]).is_err());
    }

    #[test]
    fn auc_examples() {
        let gt = [0.5, 0.5];
        let (gi, gj) = point_cell(gt, 64);
        let disc = Tensor::from_fn([64, 64], |k| {
            let (i, j) = (k / 64, k % 64);
            if is_positive(i, j, gi, gj) {
                1.0
            } else {
                0.0
            }
        });
        assert_eq!(auc(&disc, gt), 1.0);
        assert_eq!(auc(&Tensor::full([64, 64], 0.3), gt), 0.5);
        let c = [20.5 / 64.0, 40.5 / 64.0];
        assert_eq!(auc(&gt_heatmap(c, 64, 3.0), c), 1.0);
    }

    #[test]
    fn auc_matches_pairwise_count() {
        let p = [20.5 / 64.0, 40.5 / 64.0];
        let h = gt_heatmap([0.35, 0.6], 64, 3.0).map(|v| (v * 20.0).round() / 20.0);
        let (gi, gj) = point_cell(p, 64);
        let (mut pos, mut neg) = (vec![], vec![]);
        for i in 0..64 {
            for j in 0..64 {
                let v = h.at2(i, j);
                if (i as f64 - gi as f64).hypot(j as f64 - gj as f64) <= 3.0 { pos.push(v) } else { neg.push(v) }
            }
        }
        let mut wins = 0.0;
        for a in &pos {
            for b in &neg {
                wins += if a > b { 1.0 } else if a == b { 0.5 } else { 0.0 };
            }
        }
        let want = wins / (pos.len() * neg.len()) as f64;
        assert!((auc(&h, p) - want).abs() < 1e-12);
    }

    #[test]
    fn distance_and_angle() {
        assert_eq!(l2_distance([0.2, 0.3], [0.2, 0.3]), 0.0);
        assert!((l2_distance([0.0, 0.0], [1.0, 1.0]) - 2f64.sqrt()).abs() < 1e-15);
        assert!((angular_error([0.0, 0.0], [1.0, 0.0], [1.0, 1.0]).unwrap() - 45.0).abs() < 1e-9);
        assert_eq!(angular_error([0.1, 0.1], [0.1, 0.1], [0.1, 0.1]), Some(0.0));
        assert_eq!(angular_error([0.1, 0.1], [0.1, 0.1], [0.5, 0.1]), None);
    }

    #[test]
    fn ap_examples() {
        let th = coco_thresholds();
        let one = vec![vec![ApPrediction { category: 0, score: 0.9 }]];
        let r = average_precision(&one, &[vec![0]], |_, _, _| 1.0, &th);
        assert_eq!(r.ap, 100.0);
        let r = average_precision(&[vec![]], &[vec![0]], |_, _, _| 1.0, &th);
        assert_eq!(r.ap, 0.0);
        let two = vec![vec![ApPrediction { category: 0, score: 0.9 }, ApPrediction { category: 0, score: 0.8 }]];
        let ious = [0.6, 0.4];
        let r = average_precision(&two, &[vec![0]], |_, p, _| ious[p], &th);
        assert_eq!(r.ap50, 100.0);
        assert_eq!(r.ap75, 0.0);
    }

    fn instance(conf: f64, l2: f64) -> EvalInstance {
        let m = square(2, 2, 5, 16);
        let gt = [0.5, 0.5];
        EvalInstance {
            pred_gaze_point: [0.5 + l2, 0.5],
            gt_gaze_point: gt,
            pred_heatmap: gt_heatmap(gt, 64, 3.0),
            pred_head_box: BoxXyxy::new(0.1, 0.8, 0.2, 0.9),
            gt_head_box: BoxXyxy::new(0.1, 0.8, 0.2, 0.905),
            pred_object_box: BoxXyxy::new(0.1, 0.1, 0.3, 0.3),
            pred_object_mask: m.clone(),
            pred_object_confidence: conf,
            gt_object_box: BoxXyxy::new(0.1, 0.1, 0.3, 0.3),
            gt_object_mask: m,
            eye: [0.15, 0.85],
        }
    }

    #[test]
    fn gate_examples() {
        assert!(instance(0.9, 0.05).is_gated_true_positive());
        assert_eq!(gated_map(&[instance(0.9, 0.05)]).map, 1.0);
        assert!(!instance(0.7, 0.05).is_gated_true_positive());
        assert!(!instance(0.9, 0.2).is_gated_true_positive());
        assert_eq!(gated_map(&[instance(0.7, 0.05)]).map, 0.0);
        assert_eq!(gated_map(&[instance(0.7, 0.05)]).auc, None);
    }

    #[test]
    fn selection_prefers_concentrated_mass() {
        let h = gt_heatmap([0.25, 0.25], 64, 3.0);
        let near = square(50, 50, 20, 224);
        let big = Bitmap::from_fn(224, 224, |_, _| true);
        let far = square(170, 170, 20, 224);
        assert_eq!(select_gaze_object(&h, &[&far, &big, &near]), Some(2));
    }
}
