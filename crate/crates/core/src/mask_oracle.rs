//! Two-pass prompt-driven mask supervision.
//!
//! A box prompt yields a first mask; that mask is then fed back as a dense
//! prompt to obtain the final supervision mask. The segmenter sits behind the
//! [`Segmenter`] trait so a real vision foundation model can replace the
//! deterministic [`MockSegmenter`] shipped here.

use std::collections::{HashMap, VecDeque};
use std::fs;
use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoxXyxy;
use crate::scene::{encode_rle, BinaryMask, Bitmap};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Capabilities {
    pub accepts_box_prompt: bool,
    pub accepts_mask_prompt: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmenterResult {
    pub mask: Bitmap,
    pub confidence: f64,
}

pub trait Segmenter: Sync {
    fn capabilities(&self) -> Capabilities;

    /// First pass: box prompt in pixel corner coordinates.
    fn segment_with_box(&self, image: &RgbImage, prompt: &BoxXyxy) -> Result<SegmenterResult>;

    /// Second pass: a dense mask prompt with the image's dimensions.
    fn refine_with_mask(&self, image: &RgbImage, prompt: &Bitmap) -> Result<SegmenterResult>;
}

/// Color-based stand-in for a promptable segmenter. Exact on flat-colored
/// scenes.
#[derive(Clone, Copy, Debug, Default)]
pub struct MockSegmenter;

type ColorKey = [u8; 3];

fn quantize(p: &image::Rgb<u8>) -> ColorKey {
    [p.0[0] >> 4, p.0[1] >> 4, p.0[2] >> 4]
}

/// Pixel ranges `[x0, x1) x [y0, y1)` whose centers fall inside `b`.
fn pixel_span(b: &BoxXyxy, width: usize, height: usize) -> (usize, usize, usize, usize) {
    let edge = |v: f64, n: usize| ((v - 0.5).ceil().max(0.0) as usize).min(n);
    (edge(b.x1, width), edge(b.y1, height), edge(b.x2, width), edge(b.y2, height))
}

/// Most frequent quantized color over `pixels`; ties go to the smallest key.
fn dominant_color(image: &RgbImage, pixels: impl Iterator<Item = (usize, usize)>) -> Option<ColorKey> {
    let mut counts: HashMap<ColorKey, usize> = HashMap::new();
    for (y, x) in pixels {
        *counts.entry(quantize(image.get_pixel(x as u32, y as u32))).or_default() += 1;
    }
    counts.into_iter().max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0))).map(|(k, _)| k)
}

/// 4-connected flood fill of `color` from `seed`, restricted to `allowed`.
fn flood_fill(
    image: &RgbImage,
    seed: (usize, usize),
    color: ColorKey,
    allowed: impl Fn(usize, usize) -> bool,
) -> Bitmap {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let mut out = Bitmap::new(h, w);
    let matches = |y: usize, x: usize| allowed(y, x) && quantize(image.get_pixel(x as u32, y as u32)) == color;
    if !matches(seed.0, seed.1) {
        return out;
    }
    let mut queue = VecDeque::from([seed]);
    out.set(seed.0, seed.1, true);
    while let Some((y, x)) = queue.pop_front() {
        let mut visit = |ny: usize, nx: usize| {
            if !out.get(ny, nx) && matches(ny, nx) {
                out.set(ny, nx, true);
                queue.push_back((ny, nx));
            }
        };
        if y > 0 {
            visit(y - 1, x);
        }
        if y + 1 < h {
            visit(y + 1, x);
        }
        if x > 0 {
            visit(y, x - 1);
        }
        if x + 1 < w {
            visit(y, x + 1);
        }
    }
    out
}

/// `preferred` if it qualifies, else the qualifying pixel nearest to it
/// (first in raster order on ties).
fn choose_seed(
    preferred: (f64, f64),
    candidates: impl Iterator<Item = (usize, usize)>,
    qualifies: impl Fn(usize, usize) -> bool,
) -> Option<(usize, usize)> {
    let (py, px) = preferred;
    let mut best: Option<((usize, usize), f64)> = None;
    for (y, x) in candidates {
        if !qualifies(y, x) {
            continue;
        }
        let d = (y as f64 + 0.5 - py).powi(2) + (x as f64 + 0.5 - px).powi(2);
        if best.map_or(true, |(_, bd)| d < bd) {
            best = Some(((y, x), d));
        }
    }
    best.map(|(p, _)| p)
}

/// 3x3 dilation followed by 3x3 erosion. Pixels outside the image count as
/// set during the erosion so objects touching the border are not eaten.
pub fn close3x3(m: &Bitmap) -> Bitmap {
    let (h, w) = (m.height(), m.width());
    let window = |y: usize, x: usize| {
        let ys = y.saturating_sub(1)..(y + 2).min(h);
        let xs = x.saturating_sub(1)..(x + 2).min(w);
        (ys, xs)
    };
    let dilated = Bitmap::from_fn(h, w, |y, x| {
        let (ys, xs) = window(y, x);
        ys.clone().any(|yy| xs.clone().any(|xx| m.get(yy, xx)))
    });
    Bitmap::from_fn(h, w, |y, x| {
        let (ys, xs) = window(y, x);
        ys.clone().all(|yy| xs.clone().all(|xx| dilated.get(yy, xx)))
    })
}

impl Segmenter for MockSegmenter {
    fn capabilities(&self) -> Capabilities {
        Capabilities { accepts_box_prompt: true, accepts_mask_prompt: true }
    }

    fn segment_with_box(&self, image: &RgbImage, prompt: &BoxXyxy) -> Result<SegmenterResult> {
        prompt.validate()?;
        let (w, h) = (image.width() as usize, image.height() as usize);
        let (x0, y0, x1, y1) = pixel_span(prompt, w, h);
        if x0 >= x1 || y0 >= y1 {
            return Err(Error::DegenerateBox(prompt.to_array()));
        }
        let inside = |y: usize, x: usize| (y0..y1).contains(&y) && (x0..x1).contains(&x);
        let pixels = || (y0..y1).flat_map(move |y| (x0..x1).map(move |x| (y, x)));
        let color = dominant_color(image, pixels()).expect("nonempty span");
        let (cx, cy) = prompt.center();
        let seed = choose_seed((cy, cx), pixels(), |y, x| quantize(image.get_pixel(x as u32, y as u32)) == color)
            .expect("dominant color occurs in the box");
        let mask = flood_fill(image, seed, color, inside);
        let confidence = mask.area() as f64 / ((x1 - x0) * (y1 - y0)) as f64;
        Ok(SegmenterResult { mask, confidence })
    }

    fn refine_with_mask(&self, image: &RgbImage, prompt: &Bitmap) -> Result<SegmenterResult> {
        let (w, h) = (image.width() as usize, image.height() as usize);
        if prompt.height() != h || prompt.width() != w {
            return Err(Error::Shape(format!(
                "mask prompt is {}x{}, image is {h}x{w}",
                prompt.height(),
                prompt.width()
            )));
        }
        let bbox = prompt.bbox().ok_or_else(|| Error::Mask("empty mask prompt".into()))?;
        let on = || (0..h).flat_map(move |y| (0..w).map(move |x| (y, x))).filter(|&(y, x)| prompt.get(y, x));
        let color = dominant_color(image, on()).expect("nonempty mask");
        let n = prompt.area() as f64;
        let (sy, sx) = on().fold((0.0, 0.0), |(a, b), (y, x)| (a + y as f64 + 0.5, b + x as f64 + 0.5));
        let seed = choose_seed((sy / n, sx / n), on(), |y, x| quantize(image.get_pixel(x as u32, y as u32)) == color)
            .expect("dominant color occurs in the mask");
        let region = bbox.dilate(2.0);
        let filled = flood_fill(image, seed, color, |y, x| region.contains_point(x as f64 + 0.5, y as f64 + 0.5));
        let mask = close3x3(&filled);
        let confidence = mask.iou(prompt);
        Ok(SegmenterResult { mask, confidence })
    }
}

/// Box prompt, then mask prompt, for every box in order. The confidence of
/// each result is the one reported by the second pass.
pub fn generate_supervision(
    segmenter: &dyn Segmenter,
    image: &RgbImage,
    boxes: &[BoxXyxy],
) -> Result<Vec<SegmenterResult>> {
    let caps = segmenter.capabilities();
    if !caps.accepts_box_prompt || !caps.accepts_mask_prompt {
        return Err(Error::Config("segmenter must accept both box and mask prompts".into()));
    }
    boxes
        .iter()
        .enumerate()
        .map(|(index, b)| {
            let wrap = |e: Error| Error::Segmenter { index, source: Box::new(e) };
            let first = segmenter.segment_with_box(image, b).map_err(wrap)?;
            segmenter.refine_with_mask(image, &first.mask).map_err(wrap)
        })
        .collect()
}

pub const SUPERVISION_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupervisionRecord {
    pub index: usize,
    pub masks: Vec<BinaryMask>,
    pub confidences: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SupervisionDocument {
    schema_version: u32,
    backend: String,
    samples: Vec<SupervisionRecord>,
}

impl SupervisionRecord {
    pub fn from_results(index: usize, results: &[SegmenterResult]) -> Self {
        Self {
            index,
            masks: results.iter().map(|r| encode_rle(&r.mask)).collect(),
            confidences: results.iter().map(|r| r.confidence).collect(),
        }
    }
}

pub fn write_supervision(path: &Path, backend: &str, records: &[SupervisionRecord]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let doc = SupervisionDocument {
        schema_version: SUPERVISION_SCHEMA_VERSION,
        backend: backend.to_string(),
        samples: records.to_vec(),
    };
    fs::write(path, serde_json::to_vec(&doc)?)?;
    Ok(())
}

pub fn read_supervision(path: &Path) -> Result<Vec<SupervisionRecord>> {
    let bytes = fs::read(path).map_err(|e| Error::Dataset { path: path.to_path_buf(), msg: e.to_string() })?;
    let doc: SupervisionDocument = serde_json::from_slice(&bytes)
        .map_err(|e| Error::Dataset { path: path.to_path_buf(), msg: e.to_string() })?;
    if doc.schema_version != SUPERVISION_SCHEMA_VERSION {
        return Err(Error::SchemaVersion { found: doc.schema_version, expected: SUPERVISION_SCHEMA_VERSION });
    }
    Ok(doc.samples)
}
