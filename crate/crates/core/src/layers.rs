//! Parameter storage and the small set of layers the model is built from.

use std::rc::Rc;

use crate::autograd::{Graph, Var};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter tensors in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Rc<Tensor>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(Rc::new(value));
        ParamId(self.values.len() - 1)
    }

    /// Uniform init in `[-bound, bound]`.
    pub fn uniform(&mut self, name: impl Into<String>, shape: &[usize], bound: f64, rng: &mut SplitMix64) -> ParamId {
        let t = Tensor::from_fn(shape.to_vec(), |_| rng.uniform(-bound, bound));
        self.add(name, t)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|t| t.numel()).sum()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        Rc::make_mut(&mut self.values[id.0])
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    /// Register every parameter as a leaf of `g`.
    pub fn bind<'g>(&self, g: &'g Graph) -> Ctx<'g> {
        let vars = self.values.iter().map(|t| g.leaf_rc(Rc::clone(t))).collect();
        Ctx { g, vars }
    }

    /// Register every parameter as a constant (no gradients are tracked).
    pub fn bind_frozen<'g>(&self, g: &'g Graph) -> Ctx<'g> {
        let vars = self.values.iter().map(|t| g.constant((**t).clone())).collect();
        Ctx { g, vars }
    }
}

/// A graph plus the variables bound to every parameter.
pub struct Ctx<'g> {
    pub g: &'g Graph,
    vars: Vec<Var>,
}

impl Ctx<'_> {
    pub fn p(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn param_vars(&self) -> &[Var] {
        &self.vars
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    pub fn new(ps: &mut ParamStore, rng: &mut SplitMix64, name: &str, fan_in: usize, fan_out: usize) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Self {
            w: ps.uniform(format!("{name}.weight"), &[fan_in, fan_out], bound, rng),
            b: ps.uniform(format!("{name}.bias"), &[fan_out], bound, rng),
        }
    }

    pub fn bias(&self) -> ParamId {
        self.b
    }

    pub fn weight(&self) -> ParamId {
        self.w
    }

    /// `x: [T, in] -> [T, out]`.
    pub fn forward(&self, cx: &Ctx, x: Var) -> Var {
        cx.g.add_row(cx.g.matmul(x, cx.p(self.w)), cx.p(self.b))
    }

    /// `[in] -> [out]`.
    pub fn forward_vec(&self, cx: &Ctx, x: Var) -> Var {
        let n = cx.g.value(x).numel();
        let y = self.forward(cx, cx.g.reshape(x, [1, n]));
        let m = cx.g.value(y).numel();
        cx.g.reshape(y, [m])
    }
}

/// Linear layers with SiLU between them.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(ps: &mut ParamStore, rng: &mut SplitMix64, name: &str, dims: &[usize]) -> Self {
        let layers =
            dims.windows(2).enumerate().map(|(i, d)| Linear::new(ps, rng, &format!("{name}.{i}"), d[0], d[1])).collect();
        Self { layers }
    }

    pub fn last(&self) -> &Linear {
        self.layers.last().expect("mlp has layers")
    }

    pub fn forward(&self, cx: &Ctx, mut x: Var) -> Var {
        for (i, l) in self.layers.iter().enumerate() {
            if i > 0 {
                x = cx.g.silu(x);
            }
            x = l.forward(cx, x);
        }
        x
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    w: ParamId,
    b: ParamId,
    stride: usize,
    pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamStore,
        rng: &mut SplitMix64,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let bound = 1.0 / ((cin * k * k) as f64).sqrt();
        Self {
            w: ps.uniform(format!("{name}.weight"), &[cout, cin, k, k], bound, rng),
            b: ps.uniform(format!("{name}.bias"), &[cout], bound, rng),
            stride,
            pad,
        }
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.w, self.b]
    }

    pub fn forward(&self, cx: &Ctx, x: Var) -> Var {
        cx.g.conv2d(x, cx.p(self.w), cx.p(self.b), self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    w: ParamId,
    b: ParamId,
    stride: usize,
    pad: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamStore,
        rng: &mut SplitMix64,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let bound = 1.0 / ((cout * k * k) as f64).sqrt();
        Self {
            w: ps.uniform(format!("{name}.weight"), &[cin, cout, k, k], bound, rng),
            b: ps.uniform(format!("{name}.bias"), &[cout], bound, rng),
            stride,
            pad,
        }
    }

    pub fn forward(&self, cx: &Ctx, x: Var) -> Var {
        cx.g.conv_transpose2d(x, cx.p(self.w), cx.p(self.b), self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub struct GroupNorm {
    gamma: ParamId,
    beta: ParamId,
    groups: usize,
}

impl GroupNorm {
    pub fn new(ps: &mut ParamStore, name: &str, channels: usize, groups: usize) -> Self {
        Self {
            gamma: ps.add(format!("{name}.gamma"), Tensor::full([channels], 1.0)),
            beta: ps.add(format!("{name}.beta"), Tensor::zeros([channels])),
            groups,
        }
    }

    pub fn forward(&self, cx: &Ctx, x: Var) -> Var {
        cx.g.group_norm(x, cx.p(self.gamma), cx.p(self.beta), self.groups, 1e-5)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    gamma: ParamId,
    beta: ParamId,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gamma: ps.add(format!("{name}.gamma"), Tensor::full([dim], 1.0)),
            beta: ps.add(format!("{name}.beta"), Tensor::zeros([dim])),
        }
    }

    pub fn forward(&self, cx: &Ctx, x: Var) -> Var {
        cx.g.layer_norm(x, cx.p(self.gamma), cx.p(self.beta), 1e-5)
    }
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
}

impl MultiHeadAttention {
    pub fn new(ps: &mut ParamStore, rng: &mut SplitMix64, name: &str, dim: usize, heads: usize) -> Self {
        Self {
            q: Linear::new(ps, rng, &format!("{name}.q"), dim, dim),
            k: Linear::new(ps, rng, &format!("{name}.k"), dim, dim),
            v: Linear::new(ps, rng, &format!("{name}.v"), dim, dim),
            o: Linear::new(ps, rng, &format!("{name}.o"), dim, dim),
            heads,
        }
    }

    pub fn value_proj(&self) -> &Linear {
        &self.v
    }

    pub fn out_proj(&self) -> &Linear {
        &self.o
    }

    /// Queries from `xq: [Tq, D]`, keys and values from `xkv: [Tk, D]`.
    pub fn forward(&self, cx: &Ctx, xq: Var, xkv: Var) -> Var {
        self.forward_biased(cx, xq, xkv, None)
    }

    /// With an additive `[Tq, Tk]` logit bias.
    pub fn forward_biased(&self, cx: &Ctx, xq: Var, xkv: Var, bias: Option<Var>) -> Var {
        let q = self.q.forward(cx, xq);
        let k = self.k.forward(cx, xkv);
        let v = self.v.forward(cx, xkv);
        self.o.forward(cx, cx.g.attention_biased(q, k, v, self.heads, bias))
    }
}

/// Post-norm feed-forward sub-block: `LN(x + W2 SiLU(W1 x))`.
#[derive(Clone, Debug)]
pub struct FeedForward {
    mlp: Mlp,
    norm: LayerNorm,
}

impl FeedForward {
    pub fn new(ps: &mut ParamStore, rng: &mut SplitMix64, name: &str, dim: usize, expansion: usize) -> Self {
        Self {
            mlp: Mlp::new(ps, rng, &format!("{name}.ffn"), &[dim, dim * expansion, dim]),
            norm: LayerNorm::new(ps, &format!("{name}.ffn_norm"), dim),
        }
    }

    pub fn forward(&self, cx: &Ctx, x: Var) -> Var {
        let y = self.mlp.forward(cx, x);
        self.norm.forward(cx, cx.g.add(x, y))
    }
}

/// Post-norm attention block: `LN(xq + MHA(xq, xkv))` then feed-forward.
#[derive(Clone, Debug)]
pub struct AttentionBlock {
    pub attn: MultiHeadAttention,
    norm: LayerNorm,
    ffn: FeedForward,
}

impl AttentionBlock {
    pub fn new(ps: &mut ParamStore, rng: &mut SplitMix64, name: &str, dim: usize, heads: usize) -> Self {
        Self {
            attn: MultiHeadAttention::new(ps, rng, &format!("{name}.attn"), dim, heads),
            norm: LayerNorm::new(ps, &format!("{name}.attn_norm"), dim),
            ffn: FeedForward::new(ps, rng, name, dim, 4),
        }
    }

    pub fn forward(&self, cx: &Ctx, xq: Var, xkv: Var) -> Var {
        self.forward_biased(cx, xq, xkv, None)
    }

    pub fn forward_biased(&self, cx: &Ctx, xq: Var, xkv: Var, bias: Option<Var>) -> Var {
        let a = self.attn.forward_biased(cx, xq, xkv, bias);
        let x = self.norm.forward(cx, cx.g.add(xq, a));
        self.ffn.forward(cx, x)
    }

    /// Self-attention form.
    pub fn forward_self(&self, cx: &Ctx, x: Var) -> Var {
        self.forward(cx, x, x)
    }
}

/// Query decoder layer: self-attention over queries, cross-attention into
/// the memory, feed-forward; all post-norm.
#[derive(Clone, Debug)]
pub struct DecoderLayer {
    self_attn: MultiHeadAttention,
    self_norm: LayerNorm,
    cross: AttentionBlock,
}

impl DecoderLayer {
    pub fn new(ps: &mut ParamStore, rng: &mut SplitMix64, name: &str, dim: usize, heads: usize) -> Self {
        Self {
            self_attn: MultiHeadAttention::new(ps, rng, &format!("{name}.self_attn"), dim, heads),
            self_norm: LayerNorm::new(ps, &format!("{name}.self_norm"), dim),
            cross: AttentionBlock::new(ps, rng, &format!("{name}.cross"), dim, heads),
        }
    }

    /// `bias` is added to the cross-attention logits.
    pub fn forward(&self, cx: &Ctx, queries: Var, memory: Var, bias: Option<Var>) -> Var {
        let a = self.self_attn.forward(cx, queries, queries);
        let q = self.self_norm.forward(cx, cx.g.add(queries, a));
        self.cross.forward_biased(cx, q, memory, bias)
    }
}

/// Fixed 2-D sinusoidal position encoding for an `h x w` grid flattened in
/// row-major order: the first half of the channels encode the row, the second
/// half the column.
pub fn sinusoidal_2d(h: usize, w: usize, dim: usize) -> Tensor {
    assert!(dim % 4 == 0, "position encoding width must be divisible by 4");
    let half = dim / 2;
    let mut data = vec![0.0; h * w * dim];
    for i in 0..h {
        for j in 0..w {
            let row = &mut data[(i * w + j) * dim..(i * w + j + 1) * dim];
            for (offset, pos) in [(0, i), (half, j)] {
                for k in 0..half / 2 {
                    let freq = 1.0 / 10000f64.powf(2.0 * k as f64 / half as f64);
                    let a = pos as f64 * freq;
                    row[offset + 2 * k] = a.sin();
                    row[offset + 2 * k + 1] = a.cos();
                }
            }
        }
    }
    Tensor::new([h * w, dim], data)
}

/// `[C, H, W]` feature map to `[H*W, C]` tokens.
pub fn to_tokens(g: &Graph, x: Var) -> Var {
    let s = g.shape(x);
    let flat = g.reshape(x, [s[0], s[1] * s[2]]);
    g.transpose(flat)
}

/// `[H*W, C]` tokens back to a `[C, H, W]` map.
pub fn from_tokens(g: &Graph, x: Var, h: usize, w: usize) -> Var {
    let s = g.shape(x);
    let t = g.transpose(x);
    g.reshape(t, [s[1], h, w])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_round_trip() {
        let g = Graph::new();
        let x = g.constant(Tensor::from_fn([3, 2, 4], |i| i as f64));
        let t = to_tokens(&g, x);
        assert_eq!(g.shape(t), vec![8, 3]);
        assert_eq!(g.value(t).at2(5, 2), g.value(x).at3(2, 1, 1));
        let back = from_tokens(&g, t, 2, 4);
        assert_eq!(g.value(back).data(), g.value(x).data());
    }

    #[test]
    fn pe_is_bounded_and_distinct() {
        let pe = sinusoidal_2d(7, 7, 64);
        assert!(pe.data().iter().all(|v| v.abs() <= 1.0));
        let row = |r: usize| pe.data()[r * 64..(r + 1) * 64].to_vec();
        for a in 0..49 {
            for b in a + 1..49 {
                assert_ne!(row(a), row(b));
            }
        }
    }

    #[test]
    fn store_updates_do_not_leak_into_bound_graphs() {
        let mut ps = ParamStore::new();
        let id = ps.add("x", Tensor::scalar(1.0));
        let g = Graph::new();
        let cx = ps.bind(&g);
        ps.get_mut(id).data_mut()[0] = 5.0;
        assert_eq!(g.value(cx.p(id)).item(), 1.0);
        assert_eq!(ps.get(id).item(), 5.0);
    }
}
