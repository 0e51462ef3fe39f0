use std::cell::Cell;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::error::{Error, Result};
use crate::geometry::BoxXyxy;
use crate::interaction::HEATMAP_SIZE;
use crate::metrics::{
    compute_report, heatmap_argmax, select_gaze_object, ApPrediction, EvalInstance, ImageDetections, MetricsReport,
};
use crate::model::{GosModel, HeadSource};
use crate::scene::{decode_rle, Bitmap, SceneSample};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Scene image only; the head comes from the head decoder.
    Real,
    /// Ground-truth head box supplied to the gaze branch.
    NonReal,
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "real" => Ok(Self::Real),
            "non_real" | "non-real" => Ok(Self::NonReal),
            other => Err(Error::Config(format!("unknown eval mode {other:?} (real | non_real)"))),
        }
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Real => "real",
            Self::NonReal => "non_real",
        })
    }
}

/// Ground-truth head box behind an access guard: every read made on behalf
/// of the model is counted, reads for scoring are not.
#[derive(Debug)]
pub struct GuardedHead {
    value: BoxXyxy,
    model_reads: Cell<usize>,
}

impl GuardedHead {
    pub fn new(value: BoxXyxy) -> Self {
        Self { value, model_reads: Cell::new(0) }
    }

    pub fn as_model_input(&self) -> BoxXyxy {
        self.model_reads.set(self.model_reads.get() + 1);
        self.value
    }

    pub fn for_scoring(&self) -> BoxXyxy {
        self.value
    }

    pub fn model_reads(&self) -> usize {
        self.model_reads.get()
    }
}

/// One detected object with its mask at input resolution.
#[derive(Clone, Debug)]
pub struct PredictedObject {
    pub category: usize,
    pub score: f64,
    /// Normalized, clipped to the image.
    pub box_xyxy: BoxXyxy,
    pub mask: Bitmap,
    pub is_object: bool,
}

#[derive(Clone, Debug)]
pub struct Prediction {
    pub heatmap: Tensor,
    pub gaze_point: [f64; 2],
    pub head_box: BoxXyxy,
    pub objects: Vec<PredictedObject>,
    /// Index into `objects` of the predicted gaze object.
    pub gaze_object: usize,
}

impl Prediction {
    pub fn gaze_object(&self) -> &PredictedObject {
        &self.objects[self.gaze_object]
    }
}

/// Per-query mask logits `[N, h*w]` upsampled bilinearly and thresholded at 0.
fn masks_at(logits: &[Vec<f64>], (h, w): (usize, usize), size: usize) -> Vec<Bitmap> {
    let g = Graph::new();
    let x = g.constant(Tensor::new([logits.len(), h, w], logits.concat()));
    let up = g.value(g.resize_bilinear(x, size, size));
    up.data().chunks(size * size).map(|c| Bitmap::from_vec(size, size, c.iter().map(|&v| v > 0.0).collect())).collect()
}

/// Keep only mask pixels whose centers fall inside the normalized box.
fn crop_to_box(mask: &Bitmap, b: &BoxXyxy) -> Bitmap {
    let px = b.scale(mask.width() as f64, mask.height() as f64);
    Bitmap::from_fn(mask.height(), mask.width(), |y, x| mask.get(y, x) && px.contains_point(x as f64 + 0.5, y as f64 + 0.5))
}

/// Inference on one image tensor.
pub fn predict(model: &GosModel, image: &Tensor, head: HeadSource) -> Result<Prediction> {
    let g = Graph::new();
    let cx = model.params.bind_frozen(&g);
    let out = model.forward(&cx, image, head)?;
    let dets = out.det.detections(&cx);
    let masks = masks_at(&dets.iter().map(|d| d.mask_logits.clone()).collect::<Vec<_>>(), out.det.mask_size, model.config.input_size);
    let no_object = model.config.detector.num_categories;
    let objects: Vec<PredictedObject> = dets
        .iter()
        .zip(masks)
        .map(|(d, mask)| {
            let (category, score) = d.best_category();
            let box_xyxy = d.box_xyxy().clip(1.0, 1.0);
            let mask = crop_to_box(&mask, &box_xyxy);
            PredictedObject { category, score, box_xyxy, mask, is_object: d.argmax_class() != no_object }
        })
        .collect();
    let heatmap = (*g.value(out.heatmap)).clone();
    let mut candidates: Vec<usize> = (0..objects.len()).filter(|&i| objects[i].is_object).collect();
    if candidates.is_empty() {
        candidates = (0..objects.len()).collect();
    }
    let cand_masks: Vec<&Bitmap> = candidates.iter().map(|&i| &objects[i].mask).collect();
    let gaze_object = match select_gaze_object(&heatmap, &cand_masks) {
        Some(k) => candidates[k],
        // Every candidate mask is empty: fall back to the most confident one.
        None => *candidates.iter().max_by(|&&a, &&b| objects[a].score.total_cmp(&objects[b].score).then(b.cmp(&a))).unwrap(),
    };
    Ok(Prediction { gaze_point: heatmap_argmax(&heatmap), heatmap, head_box: out.head_box, objects, gaze_object })
}

/// Per-image summary kept alongside the metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub index: usize,
    pub gaze_point: [f64; 2],
    pub gt_gaze_point: [f64; 2],
    /// Distance from the heatmap argmax cell center to the GT point, in
    /// heatmap cells.
    pub argmax_error_cells: f64,
    pub head_box: BoxXyxy,
    pub gaze_object_box: BoxXyxy,
    pub gaze_object_category: usize,
    pub gaze_object_confidence: f64,
    pub msoc_mask: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalOutput {
    pub mode: EvalMode,
    pub report: MetricsReport,
    /// Real mode only: set when any ground-truth head box was read as model
    /// input. Always false in a correct run.
    pub gt_head_tainted: bool,
    pub samples: Vec<SampleSummary>,
}

/// Run inference on every sample (in order) and score it.
pub fn evaluate(model: &GosModel, samples: &[SceneSample], mode: EvalMode) -> Result<(EvalOutput, Vec<Prediction>)> {
    if samples.is_empty() {
        return Err(Error::Invalid("no samples to evaluate".into()));
    }
    let mut instances = Vec::with_capacity(samples.len());
    let mut detections = Vec::with_capacity(samples.len());
    let mut predictions = Vec::with_capacity(samples.len());
    let mut summaries = Vec::with_capacity(samples.len());
    let mut tainted = false;
    for s in samples {
        if s.size() != model.config.input_size {
            return Err(Error::Shape(format!("scene {} is {} px, model expects {}", s.index, s.size(), model.config.input_size)));
        }
        let head = GuardedHead::new(s.head_box_normalized());
        let source = match mode {
            EvalMode::NonReal => HeadSource::Given(head.as_model_input()),
            EvalMode::Real => HeadSource::Predicted,
        };
        let pred = predict(model, &s.image_tensor(), source)?;
        if mode == EvalMode::Real && head.model_reads() > 0 {
            tainted = true;
        }
        let inv = 1.0 / s.size() as f64;
        let gt_masks: Vec<Bitmap> = s.object_masks.iter().map(decode_rle).collect::<Result<_>>()?;
        let gt_obj = s.gaze_object();
        let chosen = pred.gaze_object();
        let eye = pred.head_box.center();
        let inst = EvalInstance {
            pred_gaze_point: pred.gaze_point,
            gt_gaze_point: s.gaze_point,
            pred_heatmap: pred.heatmap.clone(),
            pred_head_box: pred.head_box,
            gt_head_box: head.for_scoring(),
            pred_object_box: chosen.box_xyxy,
            pred_object_mask: chosen.mask.clone(),
            pred_object_confidence: chosen.score,
            gt_object_box: gt_obj.bbox.scale(inv, inv),
            gt_object_mask: gt_masks[s.gaze_object_id].clone(),
            eye: [eye.0, eye.1],
        };
        let n = HEATMAP_SIZE as f64;
        summaries.push(SampleSummary {
            index: s.index,
            gaze_point: pred.gaze_point,
            gt_gaze_point: s.gaze_point,
            argmax_error_cells: crate::metrics::l2_distance(pred.gaze_point, s.gaze_point) * n,
            head_box: pred.head_box,
            gaze_object_box: chosen.box_xyxy,
            gaze_object_category: chosen.category,
            gaze_object_confidence: chosen.score,
            msoc_mask: crate::metrics::msoc_mask(&chosen.mask, &inst.gt_object_mask).unwrap_or(0.0),
        });
        detections.push(ImageDetections {
            preds: pred
                .objects
                .iter()
                .map(|o| (ApPrediction { category: o.category, score: o.score }, o.box_xyxy, o.mask.clone()))
                .collect(),
            gts: s.objects.iter().zip(gt_masks).map(|(o, m)| (o.category, o.bbox.scale(inv, inv), m)).collect(),
        });
        instances.push(inst);
        predictions.push(pred);
    }
    let report = compute_report(&instances, &detections)?;
    Ok((EvalOutput { mode, report, gt_head_tainted: tainted, samples: summaries }, predictions))
}
