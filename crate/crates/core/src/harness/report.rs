use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::eval::{EvalOutput, Prediction};
use crate::error::Result;
use crate::geometry::BoxXyxy;
use crate::scene::{decode_rle, Bitmap, SceneSample};

/// What `eval` writes to disk: the metrics plus the configuration of the
/// checkpoint that produced them.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub checkpoint: String,
    pub config_hash: String,
    pub config: TrainConfig,
    pub eval: EvalOutput,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.3}"))
}

/// Markdown table, one row per report.
pub fn markdown_table(reports: &[EvalReport]) -> String {
    let mut s = String::new();
    s.push_str("| Setting | mSoC (mask) | @50 | @75 | @95 | mSoC (box) | @50 | @75 | @95 | AP box | AP50 | AP75 | AP mask | AP50 | AP75 | AUC | Dist | Ang | gated mAP | gated AUC | gated Dist | gated Ang |\n");
    s.push_str(&format!("|{}\n", "---|".repeat(22)));
    for r in reports {
        let m = &r.eval.report;
        let _ = writeln!(
            s,
            "| {} | {:.2} | {:.2} | {:.2} | {:.2} | {:.2} | {:.2} | {:.2} | {:.2} | {:.2} | {:.2} | {:.2} | {:.2} | {:.2} | {:.2} | {:.3} | {:.3} | {:.2} | {:.3} | {} | {} | {} |",
            r.eval.mode,
            m.msoc_mask.mean,
            m.msoc_mask.at50,
            m.msoc_mask.at75,
            m.msoc_mask.at95,
            m.msoc_box.mean,
            m.msoc_box.at50,
            m.msoc_box.at75,
            m.msoc_box.at95,
            m.ap_box.ap,
            m.ap_box.ap50,
            m.ap_box.ap75,
            m.ap_mask.ap,
            m.ap_mask.ap50,
            m.ap_mask.ap75,
            m.auc,
            m.dist,
            m.ang,
            m.gated.map,
            fmt_opt(m.gated.auc),
            fmt_opt(m.gated.dist),
            fmt_opt(m.gated.ang),
        );
    }
    s
}

pub fn markdown_document(reports: &[EvalReport]) -> String {
    let mut s = String::from("# Evaluation\n\n");
    s.push_str(&markdown_table(reports));
    for r in reports {
        let _ = write!(
            s,
            "\n- `{}`: {} images, checkpoint `{}`, config `{}`, angle undefined on {} images, gated true positives {}, GT head read as model input: {}\n",
            r.eval.mode,
            r.eval.report.num_images,
            r.checkpoint,
            &r.config_hash[..12.min(r.config_hash.len())],
            r.eval.report.ang_excluded,
            r.eval.report.gated.true_positives,
            r.eval.gt_head_tainted,
        );
    }
    s
}

fn blend(px: &mut Rgb<u8>, color: [u8; 3], alpha: f64) {
    for c in 0..3 {
        px.0[c] = (px.0[c] as f64 * (1.0 - alpha) + color[c] as f64 * alpha).round() as u8;
    }
}

fn tint(img: &mut RgbImage, mask: &Bitmap, color: [u8; 3]) {
    for (x, y, px) in img.enumerate_pixels_mut() {
        if mask.get(y as usize, x as usize) {
            blend(px, color, 0.5);
        }
    }
}

fn outline(img: &mut RgbImage, b: &BoxXyxy, color: [u8; 3]) {
    let (w, h) = (img.width() as f64, img.height() as f64);
    let b = b.scale(w, h).clip(w, h);
    let (x1, y1) = (b.x1.floor() as u32, b.y1.floor() as u32);
    let x2 = (b.x2.ceil() as u32).clamp(x1 + 1, img.width()) - 1;
    let y2 = (b.y2.ceil() as u32).clamp(y1 + 1, img.height()) - 1;
    for x in x1..=x2 {
        img.put_pixel(x, y1, Rgb(color));
        img.put_pixel(x, y2, Rgb(color));
    }
    for y in y1..=y2 {
        img.put_pixel(x1, y, Rgb(color));
        img.put_pixel(x2, y, Rgb(color));
    }
}

fn cross(img: &mut RgbImage, p: [f64; 2], color: [u8; 3]) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let (cx, cy) = ((p[0] * w as f64) as i64, (p[1] * h as f64) as i64);
    for d in -4..=4 {
        for (x, y) in [(cx + d, cy), (cx, cy + d)] {
            if (0..w).contains(&x) && (0..h).contains(&y) {
                img.put_pixel(x as u32, y as u32, Rgb(color));
            }
        }
    }
}

/// Three panels side by side: heatmap with head box and gaze points,
/// predicted gaze-object mask, ground-truth gaze-object mask.
pub fn render_overlay(sample: &SceneSample, pred: &Prediction) -> Result<RgbImage> {
    let (w, h) = (sample.image.width(), sample.image.height());
    let mut heat = sample.image.clone();
    let (hh, hw) = pred.heatmap.dims2();
    for (x, y, px) in heat.enumerate_pixels_mut() {
        let i = (y as usize * hh / h as usize).min(hh - 1);
        let j = (x as usize * hw / w as usize).min(hw - 1);
        blend(px, [230, 30, 30], 0.7 * pred.heatmap.at2(i, j).clamp(0.0, 1.0));
    }
    outline(&mut heat, &pred.head_box, [240, 200, 0]);
    cross(&mut heat, sample.gaze_point, [20, 20, 220]);
    cross(&mut heat, pred.gaze_point, [255, 255, 255]);

    let mut predicted = sample.image.clone();
    tint(&mut predicted, &pred.gaze_object().mask, [20, 180, 40]);
    outline(&mut predicted, &pred.gaze_object().box_xyxy, [20, 120, 20]);

    let mut truth = sample.image.clone();
    tint(&mut truth, &decode_rle(&sample.object_masks[sample.gaze_object_id])?, [30, 60, 220]);

    let mut out = RgbImage::new(3 * w, h);
    for (k, panel) in [heat, predicted, truth].iter().enumerate() {
        for (x, y, px) in panel.enumerate_pixels() {
            out.put_pixel(k as u32 * w + x, y, *px);
        }
    }
    Ok(out)
}

/// Write `eval_<mode>.json`, `eval_<mode>.md` and up to `max_overlays`
/// overlay PNGs under `dir`. Returns the JSON path.
pub fn write_eval_artifacts(
    dir: &Path,
    report: &EvalReport,
    samples: &[SceneSample],
    predictions: &[Prediction],
    max_overlays: usize,
) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mode = report.eval.mode;
    let json = dir.join(format!("eval_{mode}.json"));
    fs::write(&json, serde_json::to_vec_pretty(report)?)?;
    fs::write(dir.join(format!("eval_{mode}.md")), markdown_document(std::slice::from_ref(report)))?;
    if max_overlays > 0 {
        let overlays = dir.join("overlays");
        fs::create_dir_all(&overlays)?;
        for (s, p) in samples.iter().zip(predictions).take(max_overlays) {
            render_overlay(s, p)?.save(overlays.join(format!("{mode}_{:04}.png", s.index)))?;
        }
    }
    Ok(json)
}

pub fn read_eval_report(path: &Path) -> Result<EvalReport> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}
