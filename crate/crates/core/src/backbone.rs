//! Multi-scale convolutional backbone, pixel-shuffle object features and the
//! scene / gaze residual blocks.

use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::layers::{Conv2d, Ctx, GroupNorm, ParamStore};
use crate::rng::SplitMix64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelWidths {
    pub c1: usize,
    pub c2: usize,
    pub c3: usize,
    pub c4: usize,
    pub d_model: usize,
}

impl Default for ModelWidths {
    fn default() -> Self {
        Self { c1: 32, c2: 64, c3: 128, c4: 256, d_model: 64 }
    }
}

impl ModelWidths {
    pub fn validate(&self, eta: usize) -> Result<()> {
        let all = [self.c1, self.c2, self.c3, self.c4, self.d_model];
        if all.contains(&0) {
            return Err(Error::Config("model widths must be positive".into()));
        }
        for c in [self.c1, self.c2, self.c3, self.c4] {
            if c % (eta * eta) != 0 {
                return Err(Error::Config(format!("width {c} not divisible by eta^2 = {}", eta * eta)));
            }
            if c % 8 != 0 {
                return Err(Error::Config(format!("width {c} not divisible by 8 norm groups")));
            }
        }
        if self.c4 % 2 != 0 {
            return Err(Error::Config("c4 must be even".into()));
        }
        if self.d_model % 4 != 0 {
            return Err(Error::Config("d_model must be divisible by 4".into()));
        }
        Ok(())
    }

    pub fn stages(&self) -> [usize; 4] {
        [self.c1, self.c2, self.c3, self.c4]
    }
}

/// One pyramid level: a `[C, H, W]` variable and its stride in input pixels.
#[derive(Clone, Copy, Debug)]
pub struct FeatureMap {
    pub var: Var,
    pub stride: usize,
}

/// `f_1 .. f_4` at strides 4, 8, 16, 32.
#[derive(Clone, Copy, Debug)]
pub struct FeaturePyramid {
    pub levels: [FeatureMap; 4],
}

#[derive(Clone, Debug)]
struct Stage {
    conv: Conv2d,
    norm: GroupNorm,
}

#[derive(Clone, Debug)]
pub struct Backbone {
    stages: Vec<Stage>,
    input_size: usize,
}

pub const NORM_GROUPS: usize = 8;

impl Backbone {
    pub fn new(ps: &mut ParamStore, rng: &mut SplitMix64, widths: &ModelWidths, input_size: usize) -> Self {
        let mut cin = 3;
        let stages = widths
            .stages()
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let stride = if i == 0 { 4 } else { 2 };
                let s = Stage {
                    conv: Conv2d::new(ps, rng, &format!("backbone.{i}.conv"), cin, c, 3, stride, 1),
                    norm: GroupNorm::new(ps, &format!("backbone.{i}.norm"), c, NORM_GROUPS),
                };
                cin = c;
                s
            })
            .collect();
        Self { stages, input_size }
    }

    /// `image: [3, H, W]` in `[0, 1]`. With `check_size`, the spatial size
    /// must equal the configured input size.
    pub fn extract_pyramid(&self, cx: &Ctx, image: Var, check_size: bool) -> Result<FeaturePyramid> {
        let v = cx.g.value(image);
        let s = v.shape();
        if s.len() != 3 || s[0] != 3 {
            return Err(Error::Shape(format!("expected a [3, H, W] image, got {s:?}")));
        }
        if check_size && (s[1] != self.input_size || s[2] != self.input_size) {
            return Err(Error::Shape(format!(
                "expected {0}x{0} input, got {1}x{2}",
                self.input_size, s[1], s[2]
            )));
        }
        if !v.all_finite() {
            return Err(Error::NonFinite("input image".into()));
        }
        let mut x = image;
        let mut stride = 1;
        let mut levels = Vec::with_capacity(4);
        for (i, st) in self.stages.iter().enumerate() {
            stride *= if i == 0 { 4 } else { 2 };
            x = cx.g.silu(st.norm.forward(cx, st.conv.forward(cx, x)));
            levels.push(FeatureMap { var: x, stride });
        }
        Ok(FeaturePyramid { levels: levels.try_into().expect("four stages") })
    }
}

/// Pixel shuffle by `eta` followed by a 1x1 projection to `out` channels.
#[derive(Clone, Debug)]
pub struct ShuffleProjection {
    proj: Conv2d,
    eta: usize,
}

impl ShuffleProjection {
    pub fn new(ps: &mut ParamStore, rng: &mut SplitMix64, name: &str, cin: usize, out: usize, eta: usize) -> Self {
        Self { proj: Conv2d::new(ps, rng, name, cin / (eta * eta), out, 1, 1, 0), eta }
    }

    pub fn forward(&self, cx: &Ctx, f: FeatureMap) -> Result<FeatureMap> {
        let c = cx.g.shape(f.var)[0];
        let r2 = self.eta * self.eta;
        if c % r2 != 0 {
            return Err(Error::Shape(format!("{c} channels not divisible by eta^2 = {r2}")));
        }
        let shuffled = cx.g.pixel_shuffle(f.var, self.eta);
        Ok(FeatureMap { var: self.proj.forward(cx, shuffled), stride: f.stride / self.eta })
    }
}

/// Two 3x3 convolutions with a 1x1 projected skip, `c -> c/2` channels.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    conv1: Conv2d,
    conv2: Conv2d,
    skip: Conv2d,
}

impl ResidualBlock {
    pub fn new(ps: &mut ParamStore, rng: &mut SplitMix64, name: &str, cin: usize) -> Self {
        let cout = cin / 2;
        Self {
            conv1: Conv2d::new(ps, rng, &format!("{name}.conv1"), cin, cout, 3, 1, 1),
            conv2: Conv2d::new(ps, rng, &format!("{name}.conv2"), cout, cout, 3, 1, 1),
            skip: Conv2d::new(ps, rng, &format!("{name}.skip"), cin, cout, 1, 1, 0),
        }
    }

    pub fn params(&self) -> Vec<crate::layers::ParamId> {
        [&self.conv1, &self.conv2, &self.skip].iter().flat_map(|c| c.params()).collect()
    }

    /// Requires a 7x7 input.
    pub fn forward(&self, cx: &Ctx, x: Var) -> Result<Var> {
        let s = cx.g.shape(x);
        if s.len() != 3 || s[1] != 7 || s[2] != 7 {
            return Err(Error::Shape(format!("residual block expects 7x7 input, got {s:?}")));
        }
        let h = cx.g.silu(self.conv1.forward(cx, x));
        let h = self.conv2.forward(cx, h);
        let skip = self.skip.forward(cx, x);
        Ok(cx.g.silu(cx.g.add(h, skip)))
    }
}
