//! Procedural dense-object scenes with one gazing head.
//!
//! Objects are flat-colored rectangles or ellipses laid out on a grid with
//! small jittered gaps, so neighbours sit close together without touching.
//! The head is a disc in the bottom strip with a notch on the side it faces.

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::mask::{encode_rle, BinaryMask, Bitmap};
use crate::error::{Error, Result};
use crate::geometry::BoxXyxy;
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

pub const BACKGROUND: [u8; 3] = [236, 234, 226];
pub const HEAD_COLOR: [u8; 3] = [72, 48, 36];
pub const NOTCH_COLOR: [u8; 3] = [252, 252, 252];

/// One flat color per color family; a category is a (shape, family) pair.
pub const PALETTE: [[u8; 3]; 12] = [
    [220, 40, 40],
    [40, 176, 64],
    [40, 80, 220],
    [232, 208, 40],
    [200, 56, 200],
    [40, 200, 212],
    [240, 136, 24],
    [120, 64, 184],
    [140, 90, 40],
    [250, 152, 192],
    [24, 120, 120],
    [24, 32, 104],
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Rectangle,
    Ellipse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub image_size: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub num_categories: usize,
    /// Minimum and maximum object side in pixels.
    pub object_size_range: (usize, usize),
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self { image_size: 224, grid_rows: 3, grid_cols: 3, num_categories: 24, object_size_range: (12, 96), seed: 0 }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 64 {
            return Err(Error::Config(format!("image_size {} < 64", self.image_size)));
        }
        if self.grid_rows * self.grid_cols < 2 {
            return Err(Error::Config("grid must hold at least two objects".into()));
        }
        if self.num_categories < 2 {
            return Err(Error::Config("num_categories must be >= 2".into()));
        }
        if self.num_categories > 2 * PALETTE.len() {
            return Err(Error::Config(format!("at most {} categories are renderable", 2 * PALETTE.len())));
        }
        let (lo, hi) = self.object_size_range;
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!("bad object_size_range {:?}", self.object_size_range)));
        }
        Ok(())
    }

    /// Height of the strip reserved for the head at the bottom.
    pub fn head_strip(&self) -> usize {
        self.image_size / 5
    }

    const MARGIN: usize = 4;
    const MAX_GAP: i64 = 3;

    fn cell_size(&self) -> (usize, usize) {
        let w = (self.image_size - 2 * Self::MARGIN) / self.grid_cols;
        let h = (self.image_size - self.head_strip() - Self::MARGIN) / self.grid_rows;
        (w, h)
    }
}

pub fn category_shape(category: usize) -> Shape {
    if category % 2 == 0 {
        Shape::Rectangle
    } else {
        Shape::Ellipse
    }
}

pub fn category_color(category: usize) -> [u8; 3] {
    PALETTE[category / 2]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub id: usize,
    pub category: usize,
    #[serde(rename = "box")]
    pub bbox: BoxXyxy,
    pub shape: Shape,
    pub color: [u8; 3],
}

impl ObjectInstance {
    /// Pixels covered by this object (pixel-center inclusion for ellipses).
    pub fn rasterize(&self, height: usize, width: usize) -> Bitmap {
        let b = self.bbox;
        let (cx, cy) = b.center();
        let (rx, ry) = (b.width() / 2.0, b.height() / 2.0);
        Bitmap::from_fn(height, width, |y, x| {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            if !b.contains_point(px, py) {
                return false;
            }
            match self.shape {
                Shape::Rectangle => true,
                Shape::Ellipse => {
                    let dx = (px - cx) / rx;
                    let dy = (py - cy) / ry;
                    dx * dx + dy * dy <= 1.0
                }
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSample {
    pub index: usize,
    pub image: RgbImage,
    pub objects: Vec<ObjectInstance>,
    pub head_box: BoxXyxy,
    pub gaze_vector: [f64; 2],
    pub gaze_point: [f64; 2],
    pub gaze_object_id: usize,
    pub object_masks: Vec<BinaryMask>,
}

impl SceneSample {
    pub fn size(&self) -> usize {
        self.image.width() as usize
    }

    pub fn gaze_object(&self) -> &ObjectInstance {
        &self.objects[self.gaze_object_id]
    }

    /// `[3, H, W]` image scaled to `[0, 1]`.
    pub fn image_tensor(&self) -> Tensor {
        image_to_tensor(&self.image)
    }

    /// Head box scaled to `[0, 1]`.
    pub fn head_box_normalized(&self) -> BoxXyxy {
        let s = 1.0 / self.size() as f64;
        self.head_box.scale(s, s)
    }
}

pub fn image_to_tensor(img: &RgbImage) -> Tensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0; 3 * h * w];
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = p.0[c] as f64 / 255.0;
        }
    }
    Tensor::new([3, h, w], data)
}

/// Unit vector from `from` toward `to`.
pub fn gaze_direction(from: (f64, f64), to: (f64, f64)) -> [f64; 2] {
    let (dx, dy) = (to.0 - from.0, to.1 - from.1);
    let n = (dx * dx + dy * dy).sqrt();
    if n == 0.0 {
        [1.0, 0.0]
    } else {
        [dx / n, dy / n]
    }
}

pub fn generate_scene(config: &SceneConfig, index: usize) -> Result<SceneSample> {
    config.validate()?;
    let mut rng = SplitMix64::for_item(config.seed, index as u64);
    let size = config.image_size;
    let (cell_w, cell_h) = config.cell_size();
    let (min_side, max_side) = config.object_size_range;
    let max_gap = SceneConfig::MAX_GAP as usize;
    if cell_w < min_side + 2 * max_gap || cell_h < min_side + 2 * max_gap {
        return Err(Error::Infeasible(format!(
            "{}x{} grid cells of {cell_w}x{cell_h} px cannot hold objects of at least {min_side} px",
            config.grid_rows, config.grid_cols
        )));
    }

    let mut objects = Vec::with_capacity(config.grid_rows * config.grid_cols);
    for r in 0..config.grid_rows {
        for c in 0..config.grid_cols {
            let cx0 = SceneConfig::MARGIN + c * cell_w;
            let cy0 = SceneConfig::MARGIN + r * cell_h;
            let mut gaps = [0i64; 4];
            for g in &mut gaps {
                *g = rng.range_inclusive(1, SceneConfig::MAX_GAP);
            }
            let avail_w = cell_w as i64 - gaps[0] - gaps[2];
            let avail_h = cell_h as i64 - gaps[1] - gaps[3];
            let w = avail_w.min(max_side as i64);
            let h = avail_h.min(max_side as i64);
            let x1 = cx0 as i64 + gaps[0] + (avail_w - w) / 2;
            let y1 = cy0 as i64 + gaps[1] + (avail_h - h) / 2;
            let category = rng.below(config.num_categories);
            objects.push(ObjectInstance {
                id: objects.len(),
                category,
                bbox: BoxXyxy::new(x1 as f64, y1 as f64, (x1 + w) as f64, (y1 + h) as f64),
                shape: category_shape(category),
                color: category_color(category),
            });
        }
    }

    let strip = config.head_strip();
    let radius = (strip as f64 * 0.3).round().max(3.0);
    let hx = rng.range_inclusive(
        (SceneConfig::MARGIN as f64 + radius) as i64,
        (size as f64 - SceneConfig::MARGIN as f64 - radius) as i64,
    ) as f64;
    let hy = (size - strip / 2) as f64;
    let head_box = BoxXyxy::new(hx - radius, hy - radius, hx + radius, hy + radius);

    let gaze_object_id = rng.below(objects.len());
    let target = objects[gaze_object_id].bbox.center();
    let gaze_vector = gaze_direction((hx, hy), target);
    let gaze_point = [target.0 / size as f64, target.1 / size as f64];

    let mut image = RgbImage::from_pixel(size as u32, size as u32, Rgb(BACKGROUND));
    let mut object_masks = Vec::with_capacity(objects.len());
    for obj in &objects {
        let m = obj.rasterize(size, size);
        paint(&mut image, &m, obj.color);
        object_masks.push(encode_rle(&m));
    }
    let head = disc(size, hx, hy, radius);
    paint(&mut image, &head, HEAD_COLOR);
    let notch_r = (radius / 3.0).max(2.0);
    let notch = disc(size, hx + 0.55 * radius * gaze_vector[0], hy + 0.55 * radius * gaze_vector[1], notch_r);
    let notch = Bitmap::from_fn(size, size, |y, x| notch.get(y, x) && head.get(y, x));
    paint(&mut image, &notch, NOTCH_COLOR);

    Ok(SceneSample { index, image, objects, head_box, gaze_vector, gaze_point, gaze_object_id, object_masks })
}

fn disc(size: usize, cx: f64, cy: f64, r: f64) -> Bitmap {
    Bitmap::from_fn(size, size, |y, x| {
        let dx = x as f64 + 0.5 - cx;
        let dy = y as f64 + 0.5 - cy;
        dx * dx + dy * dy <= r * r
    })
}

fn paint(img: &mut RgbImage, m: &Bitmap, color: [u8; 3]) {
    for y in 0..m.height() {
        for x in 0..m.width() {
            if m.get(y, x) {
                img.put_pixel(x as u32, y as u32, Rgb(color));
            }
        }
    }
}
