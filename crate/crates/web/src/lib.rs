//! Browser bindings for a few interactive views of the toolkit: the gaze
//! cone map, the ground-truth heatmap and the scene + mask supervision
//! pipeline.

use goskit::geometry::BoxXyxy;
use goskit::interaction::{gt_heatmap as gaussian_heatmap, HEATMAP_SIGMA, HEATMAP_SIZE};
use goskit::mask_oracle::{generate_supervision, MockSegmenter};
use goskit::scene::{decode_rle, generate_scene, SceneConfig, PALETTE};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// 7x7 cone map, row-major, for gaze vector `(vx, vy)` from eye
/// `(eye_x, eye_y)` in normalized image coordinates.
#[wasm_bindgen]
pub fn cone_map(vx: f64, vy: f64, eye_x: f64, eye_y: f64) -> Vec<f64> {
    goskit::gaze::gaze_cone_values([vx, vy], (eye_x, eye_y), goskit::gaze::GRID).into_data()
}

/// 64x64 ground-truth heatmap, row-major, peaked at `(x, y)`.
#[wasm_bindgen]
pub fn gt_heatmap(x: f64, y: f64) -> Vec<f64> {
    gaussian_heatmap([x, y], HEATMAP_SIZE, HEATMAP_SIGMA).into_data()
}

#[derive(Serialize)]
struct ObjectView {
    id: usize,
    category: usize,
    bbox: BoxXyxy,
    mask_iou: f64,
    confidence: f64,
}

#[derive(Serialize)]
struct SceneView {
    size: usize,
    head_box: BoxXyxy,
    gaze_point: [f64; 2],
    gaze_object_id: usize,
    objects: Vec<ObjectView>,
}

/// A generated scene with its mock-segmenter supervision.
#[wasm_bindgen]
pub struct ScenePipeline {
    rgba: Vec<u8>,
    summary: String,
}

#[wasm_bindgen]
impl ScenePipeline {
    /// Generate scene `index` of the dataset seeded with `seed`, segment
    /// every object box and blend the masks onto the image (gaze object
    /// highlighted) when `show_masks` is set.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, index: u32, show_masks: bool) -> Result<ScenePipeline, JsError> {
        run_pipeline(seed as u64, index as usize, show_masks).map_err(|e| JsError::new(&e.to_string()))
    }

    /// RGBA pixels, `size * size * 4` bytes.
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }

    /// JSON summary: head box, gaze point, objects with mask IoU against the
    /// analytic mask.
    pub fn summary(&self) -> String {
        self.summary.clone()
    }
}

fn run_pipeline(seed: u64, index: usize, show_masks: bool) -> goskit::Result<ScenePipeline> {
    let cfg = SceneConfig { seed, ..SceneConfig::default() };
    let s = generate_scene(&cfg, index)?;
    let boxes: Vec<BoxXyxy> = s.objects.iter().map(|o| o.bbox).collect();
    let results = generate_supervision(&MockSegmenter, &s.image, &boxes)?;
    let size = s.size();
    let mut rgba = Vec::with_capacity(size * size * 4);
    for p in s.image.pixels() {
        rgba.extend_from_slice(&[p.0[0], p.0[1], p.0[2], 255]);
    }
    let mut objects = Vec::with_capacity(s.objects.len());
    for ((o, r), gt) in s.objects.iter().zip(&results).zip(&s.object_masks) {
        let analytic = decode_rle(gt)?;
        if show_masks {
            let color = if o.id == s.gaze_object_id { [255, 0, 0] } else { PALETTE[(o.id * 5) % PALETTE.len()] };
            for (k, &on) in r.mask.data().iter().enumerate() {
                if on {
                    for c in 0..3 {
                        let v = &mut rgba[k * 4 + c];
                        *v = ((*v as u16 + color[c] as u16) / 2) as u8;
                    }
                }
            }
        }
        objects.push(ObjectView { id: o.id, category: o.category, bbox: o.bbox, mask_iou: r.mask.iou(&analytic), confidence: r.confidence });
    }
    let view = SceneView { size, head_box: s.head_box, gaze_point: s.gaze_point, gaze_object_id: s.gaze_object_id, objects };
    Ok(ScenePipeline { rgba, summary: serde_json::to_string(&view)? })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cone_points_along_the_vector() {
        let m = cone_map(1.0, 0.0, 0.5, 0.5);
        assert_eq!(m.len(), 49);
        assert!((m[3 * 7 + 6] - 1.0).abs() < 1e-12);
        assert_eq!(m[3 * 7], 0.0);
    }

    #[test]
    fn heatmap_peak() {
        let h = gt_heatmap(20.5 / 64.0, 10.5 / 64.0);
        assert_eq!(h.len(), 4096);
        assert_eq!(h[10 * 64 + 20], 1.0);
    }

    #[test]
    fn pipeline_masks_match_analytic_ones() {
        let p = run_pipeline(3, 0, true).unwrap();
        assert_eq!(p.rgba.len(), 224 * 224 * 4);
        let v: serde_json::Value = serde_json::from_str(&p.summary).unwrap();
        let objs = v["objects"].as_array().unwrap();
        assert_eq!(objs.len(), 9);
        assert!(objs.iter().all(|o| o["mask_iou"].as_f64() == Some(1.0)));
    }
}
