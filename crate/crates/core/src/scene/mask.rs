//! Binary masks: a dense row-major [`Bitmap`] and its run-length encoded
//! storage form [`BinaryMask`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoxXyxy;

/// Dense binary mask, row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct Bitmap {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl std::fmt::Debug for Bitmap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Bitmap({}x{}, area {})", self.height, self.width, self.area())
    }
}

impl Bitmap {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![false; height * width] }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<bool>) -> Self {
        assert_eq!(data.len(), height * width);
        Self { height, width, data }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::new(height, width);
        for y in 0..height {
            for x in 0..width {
                m.data[y * width + x] = f(y, x);
            }
        }
        m
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    pub fn same_dims(&self, other: &Bitmap) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn intersection_area(&self, other: &Bitmap) -> usize {
        assert!(self.same_dims(other));
        self.data.iter().zip(&other.data).filter(|(a, b)| **a && **b).count()
    }

    pub fn union_area(&self, other: &Bitmap) -> usize {
        assert!(self.same_dims(other));
        self.data.iter().zip(&other.data).filter(|(a, b)| **a || **b).count()
    }

    pub fn iou(&self, other: &Bitmap) -> f64 {
        let u = self.union_area(other);
        if u == 0 {
            0.0
        } else {
            self.intersection_area(other) as f64 / u as f64
        }
    }

    /// Tight bounding box in pixel-edge coordinates (`x2`, `y2` exclusive),
    /// or `None` for an empty mask.
    pub fn bbox(&self) -> Option<BoxXyxy> {
        let (mut x1, mut y1, mut x2, mut y2) = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(y, x) {
                    x1 = x1.min(x);
                    y1 = y1.min(y);
                    x2 = x2.max(x + 1);
                    y2 = y2.max(y + 1);
                }
            }
        }
        (x1 != usize::MAX).then(|| BoxXyxy::new(x1 as f64, y1 as f64, x2 as f64, y2 as f64))
    }

    /// Nearest-neighbour rescale to `height x width`.
    pub fn resize_nearest(&self, height: usize, width: usize) -> Bitmap {
        Bitmap::from_fn(height, width, |y, x| {
            let sy = ((y as f64 + 0.5) * self.height as f64 / height as f64) as usize;
            let sx = ((x as f64 + 0.5) * self.width as f64 / width as f64) as usize;
            self.get(sy.min(self.height - 1), sx.min(self.width - 1))
        })
    }

    /// Area-averaged downsampling followed by a coverage threshold: an output
    /// cell is set when at least `threshold` of the source area under it is
    /// set.
    pub fn downsample_coverage(&self, height: usize, width: usize, threshold: f64) -> Bitmap {
        let cov = self.coverage(height, width);
        Bitmap::from_vec(height, width, cov.iter().map(|&c| c >= threshold).collect())
    }

    /// Fraction of each output cell covered by the mask, row-major.
    pub fn coverage(&self, height: usize, width: usize) -> Vec<f64> {
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        let mut out = vec![0.0; height * width];
        for i in 0..height {
            let (ya, yb) = (i as f64 * sy, (i + 1) as f64 * sy);
            for j in 0..width {
                let (xa, xb) = (j as f64 * sx, (j + 1) as f64 * sx);
                let mut acc = 0.0;
                for y in (ya.floor() as usize)..(yb.ceil() as usize).min(self.height) {
                    let wy = (yb.min(y as f64 + 1.0) - ya.max(y as f64)).max(0.0);
                    if wy == 0.0 {
                        continue;
                    }
                    for x in (xa.floor() as usize)..(xb.ceil() as usize).min(self.width) {
                        if self.get(y, x) {
                            acc += wy * (xb.min(x as f64 + 1.0) - xa.max(x as f64)).max(0.0);
                        }
                    }
                }
                out[i * width + j] = acc / (sy * sx);
            }
        }
        out
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect()
    }
}

/// Run-length encoded mask: column-major runs alternating 0 and 1, starting
/// with a (possibly empty) 0-run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryMask {
    pub height: usize,
    pub width: usize,
    pub counts: Vec<u32>,
}

impl BinaryMask {
    pub fn area(&self) -> usize {
        self.counts.iter().skip(1).step_by(2).map(|&c| c as usize).sum()
    }
}

pub fn encode_rle(mask: &Bitmap) -> BinaryMask {
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for x in 0..mask.width {
        for y in 0..mask.height {
            let v = mask.get(y, x);
            if v != current {
                counts.push(run);
                run = 0;
                current = v;
            }
            run += 1;
        }
    }
    counts.push(run);
    BinaryMask { height: mask.height, width: mask.width, counts }
}

pub fn decode_rle(rle: &BinaryMask) -> Result<Bitmap> {
    let total: u64 = rle.counts.iter().map(|&c| c as u64).sum();
    let expected = (rle.height * rle.width) as u64;
    if total != expected {
        return Err(Error::Mask(format!(
            "run lengths sum to {total}, expected {}x{} = {expected}",
            rle.height, rle.width
        )));
    }
    let mut m = Bitmap::new(rle.height, rle.width);
    let mut idx = 0usize;
    let mut v = false;
    for &c in &rle.counts {
        for k in idx..idx + c as usize {
            let (x, y) = (k / rle.height, k % rle.height);
            m.set(y, x, v);
        }
        idx += c as usize;
        v = !v;
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    #[test]
    fn all_zero_and_all_one() {
        assert_eq!(encode_rle(&Bitmap::new(4, 4)).counts, vec![16]);
        let ones = Bitmap::from_fn(4, 4, |_, _| true);
        assert_eq!(encode_rle(&ones).counts, vec![0, 16]);
    }

    #[test]
    fn random_round_trip() {
        let mut rng = SplitMix64::new(11);
        for _ in 0..500 {
            let h = 1 + rng.below(12);
            let w = 1 + rng.below(12);
            let p = rng.next_f64();
            let m = Bitmap::from_fn(h, w, |_, _| rng.next_f64() < p);
            let back = decode_rle(&encode_rle(&m)).unwrap();
            assert_eq!(back.data(), m.data());
            assert_eq!(encode_rle(&m).area(), m.area());
        }
    }

    #[test]
    fn column_major_order() {
        // Only pixel (y=0, x=1) set in a 2x2 mask: column 0 is two zeros.
        let mut m = Bitmap::new(2, 2);
        m.set(0, 1, true);
        assert_eq!(encode_rle(&m).counts, vec![2, 1, 1]);
    }

    #[test]
    fn decode_rejects_bad_sum() {
        let bad = BinaryMask { height: 2, width: 2, counts: vec![1, 2] };
        assert!(decode_rle(&bad).is_err());
    }

    #[test]
    fn coverage_downsample() {
        let m = Bitmap::from_fn(4, 4, |y, x| y < 2 && x < 3);
        let d = m.downsample_coverage(2, 2, 0.5);
        assert!(d.get(0, 0) && d.get(0, 1) && !d.get(1, 0) && !d.get(1, 1));
        let cov = m.coverage(2, 2);
        assert_eq!(cov, vec![1.0, 0.5, 0.0, 0.0]);
    }
}
