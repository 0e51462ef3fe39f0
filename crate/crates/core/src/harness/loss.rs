use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::autograd::{Graph, Var};
use crate::detect::{detection_loss, DetLossBreakdown, DetTargets};
use crate::error::{Error, Result};
use crate::gaze::direction_loss;
use crate::geometry::BoxXyxy;
use crate::interaction::{energy_loss, gt_heatmap, heatmap_loss, heatmap_mask, HEATMAP_SIGMA, HEATMAP_SIZE};
use crate::layers::Ctx;
use crate::mask_oracle::SupervisionRecord;
use crate::model::{GosModel, HeadSource};
use crate::scene::{decode_rle, Bitmap, SceneSample};
use crate::tensor::Tensor;

/// Loss components of one sample or the mean over a batch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub det: f64,
    pub dir: f64,
    pub gaze: f64,
    pub eng: f64,
    pub total: f64,
    pub det_breakdown: DetLossBreakdown,
}

impl LossParts {
    pub fn mean(parts: &[LossParts]) -> LossParts {
        let n = parts.len().max(1) as f64;
        let avg = |f: fn(&LossParts) -> f64| parts.iter().map(f).sum::<f64>() / n;
        LossParts {
            det: avg(|p| p.det),
            dir: avg(|p| p.dir),
            gaze: avg(|p| p.gaze),
            eng: avg(|p| p.eng),
            total: avg(|p| p.total),
            det_breakdown: DetLossBreakdown {
                obj_ce: avg(|p| p.det_breakdown.obj_ce),
                obj_l1: avg(|p| p.det_breakdown.obj_l1),
                obj_giou: avg(|p| p.det_breakdown.obj_giou),
                mask_bce: avg(|p| p.det_breakdown.mask_bce),
                mask_dice: avg(|p| p.det_breakdown.mask_dice),
                head_ce: avg(|p| p.det_breakdown.head_ce),
                head_l1: avg(|p| p.det_breakdown.head_l1),
                head_giou: avg(|p| p.det_breakdown.head_giou),
                total: avg(|p| p.det_breakdown.total),
            },
        }
    }
}

fn check_components(det: f64, dir: f64, gaze: f64, eng: f64) -> Result<()> {
    for (name, v) in [("L_det", det), ("L_dir", dir), ("L_gaze", gaze), ("L_eng", eng)] {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{name} = {v} (L_det {det}, L_dir {dir}, L_gaze {gaze}, L_eng {eng})")));
        }
    }
    Ok(())
}

/// `L_det + alpha L_dir + beta L_gaze + gamma L_eng`.
pub fn total_loss(det: f64, dir: f64, gaze: f64, eng: f64, cfg: &TrainConfig) -> Result<f64> {
    check_components(det, dir, gaze, eng)?;
    Ok(det + cfg.alpha * dir + cfg.beta * gaze + cfg.gamma * eng)
}

fn total_loss_var(g: &Graph, det: Var, dir: Var, gaze: Var, eng: Var, cfg: &TrainConfig) -> Result<Var> {
    let v = |x: Var| g.value(x).item();
    check_components(v(det), v(dir), v(gaze), v(eng))?;
    Ok(g.linear_combination(&[(1.0, det), (cfg.alpha, dir), (cfg.beta, gaze), (cfg.gamma, eng)]))
}

/// A scene with its supervision turned into model-space targets.
#[derive(Clone, Debug)]
pub struct TrainItem {
    pub index: usize,
    pub image: Tensor,
    pub targets: DetTargets,
    /// Normalized.
    pub head_box: BoxXyxy,
    pub gaze_vector: [f64; 2],
    pub gaze_point: [f64; 2],
    pub gt_heatmap: Tensor,
    /// Gaze-object mask on the heatmap grid.
    pub energy_mask: Bitmap,
    /// The gaze object was too small for the grid and fell back to one cell.
    pub energy_fallback: bool,
}

/// Pair every scene with its supervision record (by scene index). Masks are
/// reduced to the detector's mask grid by 50% area coverage.
pub fn prepare_items(samples: &[SceneSample], supervision: &[SupervisionRecord], mask_size: usize) -> Result<Vec<TrainItem>> {
    let by_index: HashMap<usize, &SupervisionRecord> = supervision.iter().map(|r| (r.index, r)).collect();
    samples
        .iter()
        .map(|s| {
            let rec = by_index
                .get(&s.index)
                .ok_or_else(|| Error::Invalid(format!("no mask supervision for scene {}", s.index)))?;
            if rec.masks.len() != s.objects.len() {
                return Err(Error::Invalid(format!(
                    "scene {} has {} objects but {} supervision masks",
                    s.index,
                    s.objects.len(),
                    rec.masks.len()
                )));
            }
            let masks: Vec<Bitmap> = rec.masks.iter().map(decode_rle).collect::<Result<_>>()?;
            let inv = 1.0 / s.size() as f64;
            let (energy_mask, energy_fallback) = heatmap_mask(&masks[s.gaze_object_id], HEATMAP_SIZE)?;
            if energy_fallback {
                log::warn!("scene {}: gaze object below heatmap resolution, using its center cell", s.index);
            }
            Ok(TrainItem {
                index: s.index,
                image: s.image_tensor(),
                targets: DetTargets {
                    boxes: s.objects.iter().map(|o| o.bbox.scale(inv, inv)).collect(),
                    classes: s.objects.iter().map(|o| o.category).collect(),
                    masks: masks.iter().map(|m| m.downsample_coverage(mask_size, mask_size, 0.5).to_f64()).collect(),
                    head_box: s.head_box_normalized(),
                },
                head_box: s.head_box_normalized(),
                gaze_vector: s.gaze_vector,
                gaze_point: s.gaze_point,
                gt_heatmap: gt_heatmap(s.gaze_point, HEATMAP_SIZE, HEATMAP_SIGMA),
                energy_mask,
                energy_fallback,
            })
        })
        .collect()
}

/// Full training objective for one item with the ground-truth head box fed
/// to the gaze branch.
pub fn sample_loss(model: &GosModel, cx: &Ctx, item: &TrainItem, cfg: &TrainConfig) -> Result<(Var, LossParts)> {
    let g = cx.g;
    let out = model.forward(cx, &item.image, HeadSource::Given(item.head_box))?;
    let (det, det_breakdown, _) = detection_loss(g, &out.det, &item.targets, &cfg.loss_weights)?;
    let dir = direction_loss(cx, &[out.gaze.v_g], &[item.gaze_vector])?;
    let gaze = heatmap_loss(cx, out.heatmap, &item.gt_heatmap)?;
    let eng = energy_loss(cx, out.heatmap, &item.energy_mask)?;
    let total = total_loss_var(g, det, dir, gaze, eng, cfg)?;
    let v = |x: Var| g.value(x).item();
    let parts = LossParts { det: v(det), dir: v(dir), gaze: v(gaze), eng: v(eng), total: v(total), det_breakdown };
    Ok((total, parts))
}
