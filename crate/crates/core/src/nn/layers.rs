//! Layers built on [`Graph`]. Each layer owns only [`ParamId`]s; values live
//! in a [`ParamStore`], so one store can back many concurrent graphs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{conv_out_len, Graph, Var};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::dsp::dft_magnitudes;
use crate::error::{shape, Result};

/// Adds a trailing-axis bias to `x` of any rank.
fn add_bias(g: &mut Graph<'_>, x: Var, b: ParamId) -> Result<Var> {
    let rank = g.shape(x).len();
    let bv = g.param(b);
    let n = g.shape(bv)[0];
    let mut s = vec![1; rank];
    s[rank - 1] = n;
    let bv = g.reshape(bv, &s)?;
    g.add(x, bv)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Gelu,
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, g: &mut Graph<'_>, x: Var) -> Var {
        match self {
            Activation::Gelu => g.gelu(x),
            Activation::Relu => g.relu(x),
            Activation::Identity => x,
        }
    }
}

/// `y = x·W + b` with `W` stored `[in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        let bound = (d_in as f64).powf(-0.5);
        Linear {
            w: store.uniform(format!("{name}.w"), &[d_in, d_out], bound, rng),
            b: store.uniform(format!("{name}.b"), &[d_out], bound, rng),
            d_in,
            d_out,
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        let y = g.matmul(x, w)?;
        add_bias(g, y, self.b)
    }

    pub fn zero(&self, store: &mut ParamStore) {
        store.get_mut(self.w).data_mut().fill(0.0);
        store.get_mut(self.b).data_mut().fill(0.0);
    }
}

/// Layer norm over the last axis with learned scale (init 1) and shift (init 0).
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        LayerNorm {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[d], 1.0)),
            beta: store.zeros(format!("{name}.beta"), &[d]),
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let y = g.layer_norm(x);
        let rank = g.shape(y).len();
        let d = *g.shape(y).last().unwrap();
        let mut s = vec![1; rank];
        s[rank - 1] = d;
        let gm = g.param(self.gamma);
        let gm = g.reshape(gm, &s)?;
        let y = g.mul(y, gm)?;
        add_bias(g, y, self.beta)
    }
}

/// Two dense layers with an activation in between.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub l1: Linear,
    pub l2: Linear,
    pub act: Activation,
}

impl FeedForward {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        hidden: usize,
        d_out: usize,
        act: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        FeedForward {
            l1: Linear::new(store, &format!("{name}.l1"), d_in, hidden, rng),
            l2: Linear::new(store, &format!("{name}.l2"), hidden, d_out, rng),
            act,
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let h = self.l1.forward(g, x)?;
        let h = self.act.apply(g, h);
        self.l2.forward(g, h)
    }
}

/// Multi-head scaled dot-product self-attention over `[B, n, d]`. There is
/// no positional information, so the map is token-permutation equivariant.
#[derive(Debug, Clone)]
pub struct SelfAttention {
    pub qkv: Linear,
    pub out: Linear,
    pub heads: usize,
    pub d: usize,
}

impl SelfAttention {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, heads: usize, rng: &mut impl Rng) -> Self {
        assert!(
            heads > 0 && d.is_multiple_of(heads),
            "model width {d} not divisible by {heads} heads"
        );
        SelfAttention {
            qkv: Linear::new(store, &format!("{name}.qkv"), d, 3 * d, rng),
            out: Linear::new(store, &format!("{name}.out"), d, d, rng),
            heads,
            d,
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        if s.len() != 3 || s[2] != self.d {
            return Err(shape(format!("attention expects [B, n, {}], got {s:?}", self.d)));
        }
        let (b, n, d, h) = (s[0], s[1], self.d, self.heads);
        let dh = d / h;
        let qkv = self.qkv.forward(g, x)?;
        let mut split = Vec::with_capacity(3);
        for i in 0..3 {
            let part = g.slice_last(qkv, i * d, d)?;
            let part = g.reshape(part, &[b, n, h, dh])?;
            let part = g.permute(part, &[0, 2, 1, 3])?;
            split.push(g.reshape(part, &[b * h, n, dh])?);
        }
        let scores = g.bmm(split[0], split[1], true)?;
        let scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
        let att = g.softmax(scores);
        let o = g.bmm(att, split[2], false)?;
        let o = g.reshape(o, &[b, h, n, dh])?;
        let o = g.permute(o, &[0, 2, 1, 3])?;
        let o = g.reshape(o, &[b, n, d])?;
        self.out.forward(g, o)
    }
}

/// Splits a `[B, parts·d]` modulation tensor into `parts` chunks shaped to
/// broadcast against `[B, (n,) d]` activations of the given rank.
fn split_modulation(g: &mut Graph<'_>, m: Var, parts: usize, d: usize, rank: usize) -> Result<Vec<Var>> {
    let b = g.shape(m)[0];
    let mut s = vec![1; rank];
    s[0] = b;
    s[rank - 1] = d;
    (0..parts)
        .map(|i| {
            let c = g.slice_last(m, i * d, d)?;
            g.reshape(c, &s)
        })
        .collect()
}

/// `x·(1 + scale) + shift`.
fn modulate(g: &mut Graph<'_>, x: Var, shift: Var, scale: Var) -> Result<Var> {
    let one_plus = g.add_scalar(scale, 1.0);
    let y = g.mul(x, one_plus)?;
    g.add(y, shift)
}

/// Shared conditioning network: `Linear → GELU → Linear → GELU`.
#[derive(Debug, Clone)]
pub struct CondNet {
    pub l1: Linear,
    pub l2: Linear,
}

impl CondNet {
    pub fn new(store: &mut ParamStore, name: &str, d_cond: usize, d: usize, rng: &mut impl Rng) -> Self {
        CondNet {
            l1: Linear::new(store, &format!("{name}.l1"), d_cond, d, rng),
            l2: Linear::new(store, &format!("{name}.l2"), d, d, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, c: Var) -> Result<Var> {
        let h = self.l1.forward(g, c)?;
        let h = g.gelu(h);
        let h = self.l2.forward(g, h)?;
        Ok(g.gelu(h))
    }
}

/// Transformer block with adaptive layer norm: the conditioning features
/// produce a shift, scale and gate for each of the two residual branches.
#[derive(Debug, Clone)]
pub struct DitBlock {
    pub attn: SelfAttention,
    pub ffn: FeedForward,
    pub modulation: FeedForward,
    pub d: usize,
}

impl DitBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        heads: usize,
        ffn_hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        DitBlock {
            attn: SelfAttention::new(store, &format!("{name}.attn"), d, heads, rng),
            ffn: FeedForward::new(store, &format!("{name}.ffn"), d, ffn_hidden, d, Activation::Gelu, rng),
            modulation: FeedForward::new(store, &format!("{name}.mod"), d, d, 6 * d, Activation::Gelu, rng),
            d,
        }
    }

    /// `x: [B, n, d]`, `cond: [B, d]` (output of the shared [`CondNet`]).
    pub fn forward(&self, g: &mut Graph<'_>, x: Var, cond: Var) -> Result<Var> {
        let m = self.modulation.forward(g, cond)?;
        let m = split_modulation(g, m, 6, self.d, 3)?;
        let h = g.layer_norm(x);
        let h = modulate(g, h, m[0], m[1])?;
        let h = self.attn.forward(g, h)?;
        let h = g.mul(h, m[2])?;
        let x = g.add(x, h)?;
        let h = g.layer_norm(x);
        let h = modulate(g, h, m[3], m[4])?;
        let h = self.ffn.forward(g, h)?;
        let h = g.mul(h, m[5])?;
        g.add(x, h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DitConfig {
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub d_cond: usize,
}

impl DitConfig {
    pub fn standard(d_cond: usize) -> Self {
        DitConfig {
            d: 128,
            layers: 5,
            heads: 4,
            ffn_hidden: 256,
            d_cond,
        }
    }
}

/// Stack of [`DitBlock`]s followed by an affine layer norm. Token
/// permutation equivariant.
#[derive(Debug, Clone)]
pub struct Dit {
    pub cfg: DitConfig,
    pub cond: CondNet,
    pub blocks: Vec<DitBlock>,
    pub norm: LayerNorm,
}

impl Dit {
    pub fn new(store: &mut ParamStore, name: &str, cfg: DitConfig, rng: &mut impl Rng) -> Self {
        Dit {
            cond: CondNet::new(store, &format!("{name}.cond"), cfg.d_cond, cfg.d, rng),
            blocks: (0..cfg.layers)
                .map(|i| {
                    DitBlock::new(
                        store,
                        &format!("{name}.block{i}"),
                        cfg.d,
                        cfg.heads,
                        cfg.ffn_hidden,
                        rng,
                    )
                })
                .collect(),
            norm: LayerNorm::new(store, &format!("{name}.norm"), cfg.d),
            cfg,
        }
    }

    /// `tokens: [B, n, d]`, `cond: [B, d_cond]` → `[B, n, d]`.
    pub fn forward(&self, g: &mut Graph<'_>, tokens: Var, cond: Var) -> Result<Var> {
        let ts = g.shape(tokens);
        if ts.len() != 3 || ts[2] != self.cfg.d {
            return Err(shape(format!("tokens {ts:?} do not match width {}", self.cfg.d)));
        }
        let cs = g.shape(cond);
        if cs.len() != 2 || cs[1] != self.cfg.d_cond || cs[0] != ts[0] {
            return Err(shape(format!("conditioning {cs:?} does not match config")));
        }
        let c = self.cond.forward(g, cond)?;
        let mut x = tokens;
        for b in &self.blocks {
            x = b.forward(g, x, c)?;
        }
        self.norm.forward(g, x)
    }
}

/// Pre-norm residual block `x + W₂·GELU(W₁·LN(x))`, optionally modulated
/// (shift, scale, gate) by conditioning features.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub ffn: FeedForward,
    pub modulation: Option<FeedForward>,
    pub d: usize,
}

impl ResidualBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        hidden: usize,
        d_cond: Option<usize>,
        rng: &mut impl Rng,
    ) -> Self {
        ResidualBlock {
            ffn: FeedForward::new(store, &format!("{name}.ffn"), d, hidden, d, Activation::Gelu, rng),
            modulation: d_cond
                .map(|c| FeedForward::new(store, &format!("{name}.mod"), c, c, 3 * d, Activation::Gelu, rng)),
            d,
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var, cond: Option<Var>) -> Result<Var> {
        let h = g.layer_norm(x);
        let h = match (&self.modulation, cond) {
            (Some(m), Some(c)) => {
                let mv = m.forward(g, c)?;
                let parts = split_modulation(g, mv, 3, self.d, 2)?;
                let h = modulate(g, h, parts[0], parts[1])?;
                let h = self.ffn.forward(g, h)?;
                g.mul(h, parts[2])?
            }
            (None, _) => self.ffn.forward(g, h)?,
            (Some(_), None) => return Err(shape("conditioned block called without conditioning")),
        };
        g.add(x, h)
    }
}

/// `Linear(in → d)`, residual blocks, `Linear(d → out)`.
#[derive(Debug, Clone)]
pub struct ResidualMlp {
    pub input: Linear,
    pub cond: Option<CondNet>,
    pub blocks: Vec<ResidualBlock>,
    pub output: Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualMlpConfig {
    pub d_in: usize,
    pub d: usize,
    pub hidden: usize,
    pub blocks: usize,
    pub d_out: usize,
    /// Width of the conditioning vector, if conditioned.
    pub d_cond: Option<usize>,
}

impl ResidualMlp {
    pub fn new(store: &mut ParamStore, name: &str, cfg: ResidualMlpConfig, rng: &mut impl Rng) -> Self {
        let cond = cfg
            .d_cond
            .map(|c| CondNet::new(store, &format!("{name}.cond"), c, cfg.d, rng));
        let d_feat = cfg.d_cond.map(|_| cfg.d);
        ResidualMlp {
            input: Linear::new(store, &format!("{name}.in"), cfg.d_in, cfg.d, rng),
            blocks: (0..cfg.blocks)
                .map(|i| ResidualBlock::new(store, &format!("{name}.block{i}"), cfg.d, cfg.hidden, d_feat, rng))
                .collect(),
            output: Linear::new(store, &format!("{name}.out"), cfg.d, cfg.d_out, rng),
            cond,
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var, cond: Option<Var>) -> Result<Var> {
        let c = match (&self.cond, cond) {
            (Some(net), Some(c)) => Some(net.forward(g, c)?),
            (None, _) => None,
            (Some(_), None) => return Err(shape("conditioned MLP called without conditioning")),
        };
        let mut h = self.input.forward(g, x)?;
        for b in &self.blocks {
            h = b.forward(g, h, c)?;
        }
        self.output.forward(g, h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CnnConfig {
    pub n_samples: usize,
    /// Width of the first block; doubled by every downsampling conv.
    pub channels: usize,
    pub blocks: usize,
    pub kernel: usize,
    pub down_stride: usize,
    pub out_dim: usize,
}

impl CnnConfig {
    pub fn standard(n_samples: usize) -> Self {
        CnnConfig {
            n_samples,
            channels: 24,
            blocks: 4,
            kernel: 5,
            down_stride: 3,
            out_dim: 128,
        }
    }

    pub fn n_bins(&self) -> usize {
        self.n_samples / 2 + 1
    }

    /// `(channels, length)` after the last block.
    pub fn final_shape(&self) -> (usize, usize) {
        let mut c = self.channels;
        let mut l = self.n_bins();
        for _ in 1..self.blocks {
            l = conv_out_len(l, self.kernel, self.down_stride, self.kernel / 2);
            c *= 2;
        }
        (c, l)
    }
}

#[derive(Debug, Clone)]
struct Conv {
    w: ParamId,
    b: ParamId,
    stride: usize,
    pad: usize,
}

impl Conv {
    fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = ((cin * kernel) as f64).powf(-0.5);
        Conv {
            w: store.uniform(format!("{name}.w"), &[cout, cin, kernel], bound, rng),
            b: store.uniform(format!("{name}.b"), &[cout], bound, rng),
            stride,
            pad: kernel / 2,
        }
    }

    fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let (w, b) = (g.param(self.w), g.param(self.b));
        g.conv1d(x, w, Some(b), self.stride, self.pad)
    }
}

/// Encoder from audio to a fixed-width vector: one-sided DFT magnitude,
/// a stem conv, residual conv blocks separated by strided channel-doubling
/// convs, then a dense projection and one residual MLP block.
#[derive(Debug, Clone)]
pub struct CnnEncoder {
    pub cfg: CnnConfig,
    stem: Conv,
    blocks: Vec<(Conv, Conv)>,
    downs: Vec<Conv>,
    proj: Linear,
    head: ResidualBlock,
}

impl CnnEncoder {
    pub fn new(store: &mut ParamStore, name: &str, cfg: CnnConfig, rng: &mut impl Rng) -> Self {
        let k = cfg.kernel;
        let stem = Conv::new(store, &format!("{name}.stem"), 1, cfg.channels, k, 1, rng);
        let mut blocks = Vec::with_capacity(cfg.blocks);
        let mut downs = Vec::new();
        let mut c = cfg.channels;
        for i in 0..cfg.blocks {
            blocks.push((
                Conv::new(store, &format!("{name}.block{i}.c1"), c, c, k, 1, rng),
                Conv::new(store, &format!("{name}.block{i}.c2"), c, c, k, 1, rng),
            ));
            if i + 1 < cfg.blocks {
                downs.push(Conv::new(
                    store,
                    &format!("{name}.down{i}"),
                    c,
                    2 * c,
                    k,
                    cfg.down_stride,
                    rng,
                ));
                c *= 2;
            }
        }
        let (fc, fl) = cfg.final_shape();
        CnnEncoder {
            stem,
            blocks,
            downs,
            proj: Linear::new(store, &format!("{name}.proj"), fc * fl, cfg.out_dim, rng),
            head: ResidualBlock::new(store, &format!("{name}.head"), cfg.out_dim, cfg.out_dim, None, rng),
            cfg,
        }
    }

    /// Scaled one-sided magnitude spectra `[B, 1, n_bins]` for a batch of
    /// signals; the 2/N factor maps a unit sinusoid to a unit peak.
    pub fn spectra(&self, audio: &[&[f64]]) -> Result<Tensor> {
        let n = self.cfg.n_samples;
        let mut data = Vec::with_capacity(audio.len() * self.cfg.n_bins());
        for y in audio {
            if y.len() != n {
                return Err(shape(format!("encoder expects {n} samples, got {}", y.len())));
            }
            data.extend(dft_magnitudes(y)?.into_iter().map(|m| m * 2.0 / n as f64));
        }
        Tensor::new(vec![audio.len(), 1, self.cfg.n_bins()], data)
    }

    /// `spec: [B, 1, n_bins]` → `[B, out_dim]`.
    pub fn forward(&self, g: &mut Graph<'_>, spec: Var) -> Result<Var> {
        let s = g.shape(spec).to_vec();
        if s.len() != 3 || s[1] != 1 || s[2] != self.cfg.n_bins() {
            return Err(shape(format!(
                "encoder input {s:?}, expected [B, 1, {}]",
                self.cfg.n_bins()
            )));
        }
        let mut x = self.stem.forward(g, spec)?;
        for (i, (c1, c2)) in self.blocks.iter().enumerate() {
            let h = c1.forward(g, x)?;
            let h = g.gelu(h);
            let h = c2.forward(g, h)?;
            x = g.add(x, h)?;
            if let Some(d) = self.downs.get(i) {
                x = d.forward(g, x)?;
            }
        }
        let flat: usize = g.shape(x)[1..].iter().product();
        let x = g.reshape(x, &[s[0], flat])?;
        let x = self.proj.forward(g, x)?;
        self.head.forward(g, x, None)
    }

    pub fn encode(&self, g: &mut Graph<'_>, audio: &[&[f64]]) -> Result<Var> {
        let spec = self.spectra(audio)?;
        let spec = g.constant(spec);
        self.forward(g, spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, GradCheckOptions};
    use rand::seq::SliceRandom;

    fn rand_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn permute_tokens(t: &Tensor, perm: &[usize]) -> Tensor {
        let (b, n, d) = (t.shape()[0], t.shape()[1], t.shape()[2]);
        let mut out = vec![0.0; t.numel()];
        for bi in 0..b {
            for (i, &p) in perm.iter().enumerate() {
                let src = (bi * n + p) * d;
                out[(bi * n + i) * d..(bi * n + i + 1) * d].copy_from_slice(&t.data()[src..src + d]);
            }
        }
        Tensor::new(vec![b, n, d], out).unwrap()
    }

    fn small_dit(store: &mut ParamStore, rng: &mut impl Rng) -> Dit {
        Dit::new(
            store,
            "dit",
            DitConfig {
                d: 8,
                layers: 2,
                heads: 2,
                ffn_hidden: 16,
                d_cond: 5,
            },
            rng,
        )
    }

    #[test]
    fn dit_is_token_equivariant() {
        let mut rng = crate::seed::rng(21);
        let mut store = ParamStore::new();
        let dit = small_dit(&mut store, &mut rng);
        for _ in 0..20 {
            let x = rand_tensor(&[2, 5, 8], &mut rng);
            let c = rand_tensor(&[2, 5], &mut rng);
            let mut perm: Vec<usize> = (0..5).collect();
            perm.shuffle(&mut rng);
            let run = |x: Tensor| {
                let mut g = Graph::with_params(&store);
                let (xv, cv) = (g.constant(x), g.constant(c.clone()));
                let y = dit.forward(&mut g, xv, cv).unwrap();
                g.value(y).clone()
            };
            let a = permute_tokens(&run(x.clone()), &perm);
            let b = run(permute_tokens(&x, &perm));
            assert!(a.max_abs_diff(&b) <= 1e-12);
        }
    }

    #[test]
    fn dit_gradients_match_differences() {
        let mut rng = crate::seed::rng(22);
        let mut store = ParamStore::new();
        let dit = small_dit(&mut store, &mut rng);
        let x = rand_tensor(&[2, 3, 8], &mut rng);
        let c = rand_tensor(&[2, 5], &mut rng);
        let r = grad_check(
            &mut store,
            |g| {
                let (xv, cv) = (g.constant(x.clone()), g.constant(c.clone()));
                let y = dit.forward(g, xv, cv)?;
                let y2 = g.square(y);
                Ok(g.mean(y2))
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(r.max_rel_error() < 1e-4, "{:?}", r.worst());
    }

    #[test]
    fn residual_mlp_with_zeroed_branches_is_projection() {
        let mut rng = crate::seed::rng(23);
        let mut store = ParamStore::new();
        let cfg = ResidualMlpConfig {
            d_in: 3,
            d: 6,
            hidden: 12,
            blocks: 3,
            d_out: 4,
            d_cond: Some(2),
        };
        let mlp = ResidualMlp::new(&mut store, "mlp", cfg, &mut rng);
        for b in &mlp.blocks {
            b.ffn.l2.zero(&mut store);
        }
        let x = rand_tensor(&[2, 3], &mut rng);
        let c = rand_tensor(&[2, 2], &mut rng);
        let mut g = Graph::with_params(&store);
        let (xv, cv) = (g.constant(x), g.constant(c));
        let y = mlp.forward(&mut g, xv, Some(cv)).unwrap();
        assert_eq!(g.shape(y), &[2, 4]);
        let h = mlp.input.forward(&mut g, xv).unwrap();
        let direct = mlp.output.forward(&mut g, h).unwrap();
        assert!(g.value(y).max_abs_diff(g.value(direct)) < 1e-14);
    }

    #[test]
    fn residual_mlp_gradients_match_differences() {
        let mut rng = crate::seed::rng(24);
        let mut store = ParamStore::new();
        let cfg = ResidualMlpConfig {
            d_in: 4,
            d: 8,
            hidden: 8,
            blocks: 2,
            d_out: 4,
            d_cond: Some(3),
        };
        let mlp = ResidualMlp::new(&mut store, "mlp", cfg, &mut rng);
        let x = rand_tensor(&[3, 4], &mut rng);
        let c = rand_tensor(&[3, 3], &mut rng);
        let r = grad_check(
            &mut store,
            |g| {
                let (xv, cv) = (g.constant(x.clone()), g.constant(c.clone()));
                let y = mlp.forward(g, xv, Some(cv))?;
                let y2 = g.square(y);
                Ok(g.mean(y2))
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(r.max_rel_error() < 1e-4, "{:?}", r.worst());
    }

    fn tiny_cnn() -> CnnConfig {
        CnnConfig {
            n_samples: 64,
            channels: 2,
            blocks: 2,
            kernel: 5,
            down_stride: 3,
            out_dim: 8,
        }
    }

    #[test]
    fn standard_encoder_geometry() {
        let cfg = CnnConfig::standard(2048);
        assert_eq!(cfg.n_bins(), 1025);
        assert_eq!(cfg.final_shape(), (192, 38));
    }

    #[test]
    fn encoder_output_width_and_grads() {
        let mut rng = crate::seed::rng(25);
        let mut store = ParamStore::new();
        let enc = CnnEncoder::new(&mut store, "enc", tiny_cnn(), &mut rng);
        let audio: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let refs: Vec<&[f64]> = audio.iter().map(|a| a.as_slice()).collect();
        let spec = enc.spectra(&refs).unwrap();
        {
            let mut g = Graph::with_params(&store);
            let y = enc.encode(&mut g, &refs).unwrap();
            assert_eq!(g.shape(y), &[2, 8]);
        }
        let r = grad_check(
            &mut store,
            |g| {
                let s = g.constant(spec.clone());
                let y = enc.forward(g, s)?;
                let y2 = g.square(y);
                Ok(g.mean(y2))
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(r.max_rel_error() < 1e-4, "{:?}", r.worst());
        assert!(enc.spectra(&[&audio[0][..10]]).is_err());
    }
}
