//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation as a node. Parameters are leaves that
//! borrow their values from a [`ParamStore`], so building a graph never
//! copies model weights. [`Graph::backward`] walks the tape once in reverse.

use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use super::tensor::{gemm, numel, Tensor};
use crate::error::{invalid, shape, Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    BatchMatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Gelu(Var),
    Relu(Var),
    Square(Var),
    Abs(Var),
    LayerNorm {
        x: Var,
        rstd: Vec<f64>,
    },
    Softmax(Var),
    Permute {
        x: Var,
        axes: Vec<usize>,
    },
    Reshape(Var),
    SliceLast {
        x: Var,
        start: usize,
    },
    ConcatLast(Vec<Var>),
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    Sum(Var),
    SumLast(Var),
    MinLast {
        x: Var,
        argmin: Vec<usize>,
    },
    SelectRows {
        a: Var,
        b: Var,
        mask: Vec<bool>,
    },
}

struct Node {
    value: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

pub struct Graph<'p> {
    store: Option<&'p ParamStore>,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

/// Gradients of one backward pass.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// One gradient per store entry, zero for parameters the graph never used.
    pub fn param_grads(&self, store: &ParamStore) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = store.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        for &(id, v) in &self.params {
            if let Some(g) = &self.grads[v.0] {
                out[id.index()] = g.clone();
            }
        }
        out
    }
}

impl Default for Graph<'static> {
    fn default() -> Self {
        Graph::new()
    }
}

impl Graph<'static> {
    /// A graph without parameters (constants and variables only).
    pub fn new() -> Self {
        Graph {
            store: None,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }
}

impl<'p> Graph<'p> {
    pub fn with_params(store: &'p ParamStore) -> Self {
        Graph {
            store: Some(store),
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.store.expect("parameter node without a store").get(*id),
            _ => unreachable!("node without a value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf that receives a gradient (used to differentiate w.r.t. inputs).
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        assert!(self.store.is_some(), "graph has no parameter store");
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    // ---- linear algebra -------------------------------------------------

    /// `[..., k] @ [k, n] -> [..., n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sb.len() != 2 || sa.is_empty() || *sa.last().unwrap() != sb[0] {
            return Err(shape(format!("matmul {sa:?} @ {sb:?}")));
        }
        let (k, n) = (sb[0], sb[1]);
        let m = numel(&sa) / k.max(1);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            (k, 1),
            self.value(b).data(),
            (n, 1),
            0.0,
            &mut out,
            (n, 1),
        );
        let mut os = sa.clone();
        *os.last_mut().unwrap() = n;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts(os, out), Op::MatMul(a, b), rg))
    }

    /// Batched `[B, m, k] @ [B, k, n]`, or `[B, m, k] @ [B, n, k]ᵀ` when
    /// `trans_b` is set.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let ok =
            sa.len() == 3 && sb.len() == 3 && sa[0] == sb[0] && if trans_b { sa[2] == sb[2] } else { sa[2] == sb[1] };
        if !ok {
            return Err(shape(format!("bmm {sa:?} @ {sb:?} (trans_b={trans_b})")));
        }
        let (bs, m, k) = (sa[0], sa[1], sa[2]);
        let n = if trans_b { sb[1] } else { sb[2] };
        let mut out = vec![0.0; bs * m * n];
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        for i in 0..bs {
            let bstr = if trans_b { (1, k) } else { (n, 1) };
            gemm(
                m,
                k,
                n,
                &av[i * m * k..(i + 1) * m * k],
                (k, 1),
                &bv[i * k * n..(i + 1) * k * n],
                bstr,
                0.0,
                &mut out[i * m * n..(i + 1) * m * n],
                (n, 1),
            );
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor::from_parts(vec![bs, m, n], out),
            Op::BatchMatMul { a, b, trans_b },
            rg,
        ))
    }

    // ---- elementwise ----------------------------------------------------

    fn binary(&mut self, a: Var, b: Var, kind: u8) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let os = broadcast_shape(&sa, &sb)?;
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let f = |x: f64, y: f64| match kind {
            0 => x + y,
            1 => x - y,
            _ => x * y,
        };
        let out: Vec<f64> = if sa == sb {
            av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let mut out = vec![0.0; numel(&os)];
            for_each_broadcast(&os, &sa, &sb, |o, ia, ib| out[o] = f(av[ia], bv[ib]));
            out
        };
        let op = match kind {
            0 => Op::Add(a, b),
            1 => Op::Sub(a, b),
            _ => Op::Mul(a, b),
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts(os, out), op, rg))
    }

    /// Broadcasting add (operands of equal rank, each dim equal or 1).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, 0)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, 1)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, 2)
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let t = self.value(x);
        let out = Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect());
        let rg = self.rg(x);
        self.push(out, op, rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::Scale(x, c), |v| v * c)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::AddScalar(x), |v| v + c)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Gelu(x), gelu)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, Op::Abs(x), f64::abs)
    }

    // ---- normalisation ---------------------------------------------------

    /// Layer norm over the last axis without affine parameters.
    pub fn layer_norm(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let d = *t.shape().last().unwrap();
        let mut out = vec![0.0; t.numel()];
        let mut rstd = Vec::with_capacity(t.numel() / d.max(1));
        for (src, dst) in t.data().chunks_exact(d).zip(out.chunks_exact_mut(d)) {
            let mean = src.iter().sum::<f64>() / d as f64;
            let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let r = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (o, v) in dst.iter_mut().zip(src) {
                *o = (v - mean) * r;
            }
            rstd.push(r);
        }
        let out = Tensor::from_parts(t.shape().to_vec(), out);
        let rg = self.rg(x);
        self.push(out, Op::LayerNorm { x, rstd }, rg)
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let d = *t.shape().last().unwrap();
        let mut out = vec![0.0; t.numel()];
        for (src, dst) in t.data().chunks_exact(d).zip(out.chunks_exact_mut(d)) {
            let m = src.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (o, v) in dst.iter_mut().zip(src) {
                *o = (v - m).exp();
                z += *o;
            }
            dst.iter_mut().for_each(|o| *o /= z);
        }
        let out = Tensor::from_parts(t.shape().to_vec(), out);
        let rg = self.rg(x);
        self.push(out, Op::Softmax(x), rg)
    }

    // ---- layout ------------------------------------------------------------

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let mut seen = vec![false; s.len()];
        if axes.len() != s.len()
            || axes
                .iter()
                .any(|&a| a >= s.len() || std::mem::replace(&mut seen[a], true))
        {
            return Err(shape(format!("invalid permutation {axes:?} for shape {s:?}")));
        }
        let (os, map) = permute_map(&s, axes);
        let src = self.value(x).data();
        let out: Vec<f64> = map.iter().map(|&i| src[i]).collect();
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_parts(os, out), Op::Permute { x, axes: axes.to_vec() }, rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.permute(x, &[1, 0])
    }

    pub fn reshape(&mut self, x: Var, new_shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshaped(new_shape)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    /// `x[..., start..start+len]`.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let d = *t.shape().last().unwrap();
        if start + len > d {
            return Err(shape(format!("slice {start}..{} of last axis {d}", start + len)));
        }
        let out: Vec<f64> = t
            .data()
            .chunks_exact(d)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let mut os = t.shape().to_vec();
        *os.last_mut().unwrap() = len;
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_parts(os, out), Op::SliceLast { x, start }, rg))
    }

    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.shape(parts[0]).to_vec();
        let lead = &first[..first.len() - 1];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len() || &s[..s.len() - 1] != lead {
                return Err(shape(format!("concat {first:?} with {s:?}")));
            }
            widths.push(*s.last().unwrap());
        }
        let rows = numel(lead);
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut os = lead.to_vec();
        os.push(total);
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::from_parts(os, out), Op::ConcatLast(parts.to_vec()), rg))
    }

    /// Rows of `a` (`[B, D]`) where `mask` is false, `b` (`[1, D]`) where true.
    pub fn select_rows(&mut self, a: Var, b: Var, mask: &[bool]) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb != [1, sa[1]] || mask.len() != sa[0] {
            return Err(shape(format!("select_rows {sa:?} / {sb:?} / mask {}", mask.len())));
        }
        let d = sa[1];
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = av.to_vec();
        for (i, &m) in mask.iter().enumerate() {
            if m {
                out[i * d..(i + 1) * d].copy_from_slice(bv);
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor::from_parts(sa, out),
            Op::SelectRows {
                a,
                b,
                mask: mask.to_vec(),
            },
            rg,
        ))
    }

    // ---- convolution ----------------------------------------------------

    /// 1-D convolution of `[B, Cin, L]` with `[Cout, Cin, K]` (+ bias `[Cout]`).
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 3 || sw.len() != 3 || sx[1] != sw[1] || stride == 0 {
            return Err(shape(format!("conv1d input {sx:?} weight {sw:?}")));
        }
        if let Some(b) = b {
            if self.shape(b) != [sw[0]] {
                return Err(shape(format!("conv1d bias {:?}", self.shape(b))));
            }
        }
        let geom = ConvGeom::new(sx[0], sx[1], sx[2], sw[0], sw[2], stride, pad)?;
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut out = vec![0.0; geom.batch * geom.cout * geom.lout];
        let mut cols = vec![0.0; geom.ck() * geom.lout];
        for bi in 0..geom.batch {
            geom.im2col(&xv[bi * geom.cin * geom.len..(bi + 1) * geom.cin * geom.len], &mut cols);
            gemm(
                geom.cout,
                geom.ck(),
                geom.lout,
                wv,
                (geom.ck(), 1),
                &cols,
                (geom.lout, 1),
                0.0,
                &mut out[bi * geom.cout * geom.lout..(bi + 1) * geom.cout * geom.lout],
                (geom.lout, 1),
            );
        }
        if let Some(b) = b {
            let bv = self.value(b).data();
            for (i, row) in out.chunks_exact_mut(geom.lout).enumerate() {
                let bias = bv[i % geom.cout];
                row.iter_mut().for_each(|v| *v += bias);
            }
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(
            Tensor::from_parts(vec![geom.batch, geom.cout, geom.lout], out),
            Op::Conv1d { x, w, b, stride, pad },
            rg,
        ))
    }

    // ---- reductions -------------------------------------------------------

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Sum over the last axis; a 1-D input reduces to shape `[1]`.
    pub fn sum_last(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let d = *t.shape().last().unwrap();
        let out: Vec<f64> = t.data().chunks_exact(d.max(1)).map(|r| r.iter().sum()).collect();
        let os = reduced_shape(t.shape());
        let rg = self.rg(x);
        self.push(Tensor::from_parts(os, out), Op::SumLast(x), rg)
    }

    /// Minimum over the last axis; the gradient flows to the first argmin.
    pub fn min_last(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let d = *t.shape().last().unwrap();
        let mut out = Vec::with_capacity(t.numel() / d.max(1));
        let mut argmin = Vec::with_capacity(out.capacity());
        for row in t.data().chunks_exact(d) {
            let (i, v) = row
                .iter()
                .enumerate()
                .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
            out.push(v);
            argmin.push(i);
        }
        let os = reduced_shape(t.shape());
        let rg = self.rg(x);
        self.push(Tensor::from_parts(os, out), Op::MinLast { x, argmin }, rg)
    }

    // ---- backward -------------------------------------------------------------

    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(invalid("backward needs a scalar loss"));
        }
        if !self.value(loss).is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(gout) = grads[i].take() else { continue };
            self.backprop_node(i, &gout, &mut grads);
            grads[i] = Some(gout);
        }
        let mut params: Vec<(ParamId, Var)> = self.param_vars.iter().map(|(&p, &v)| (p, v)).collect();
        params.sort_by_key(|(p, _)| p.index());
        Ok(Gradients { grads, params })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn backprop_node(&self, i: usize, gout: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = self.value(Var(i));
        let go = gout.data();
        match &self.nodes[i].op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (k, n) = (tb.shape()[0], tb.shape()[1]);
                let m = ta.numel() / k.max(1);
                if self.rg(*a) {
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, go, (n, 1), tb.data(), (1, n), 0.0, &mut ga, (k, 1));
                    self.accumulate(grads, *a, Tensor::from_parts(ta.shape().to_vec(), ga));
                }
                if self.rg(*b) {
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, ta.data(), (1, k), go, (n, 1), 0.0, &mut gb, (n, 1));
                    self.accumulate(grads, *b, Tensor::from_parts(vec![k, n], gb));
                }
            }
            Op::BatchMatMul { a, b, trans_b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (bs, m, k) = (ta.shape()[0], ta.shape()[1], ta.shape()[2]);
                let n = out.shape()[2];
                let (av, bv) = (ta.data(), tb.data());
                if self.rg(*a) {
                    let mut ga = vec![0.0; bs * m * k];
                    for s in 0..bs {
                        // dA = dC·Bᵀ (or dC·B when B was transposed).
                        let bstr = if *trans_b { (k, 1) } else { (1, n) };
                        gemm(
                            m,
                            n,
                            k,
                            &go[s * m * n..(s + 1) * m * n],
                            (n, 1),
                            &bv[s * k * n..(s + 1) * k * n],
                            bstr,
                            0.0,
                            &mut ga[s * m * k..(s + 1) * m * k],
                            (k, 1),
                        );
                    }
                    self.accumulate(grads, *a, Tensor::from_parts(ta.shape().to_vec(), ga));
                }
                if self.rg(*b) {
                    let mut gb = vec![0.0; bs * k * n];
                    for s in 0..bs {
                        let gos = &go[s * m * n..(s + 1) * m * n];
                        let a_s = &av[s * m * k..(s + 1) * m * k];
                        let gbs = &mut gb[s * k * n..(s + 1) * k * n];
                        if *trans_b {
                            // B is [n, k]: dB = dCᵀ·A.
                            gemm(n, m, k, gos, (1, n), a_s, (k, 1), 0.0, gbs, (k, 1));
                        } else {
                            gemm(k, m, n, a_s, (1, k), gos, (n, 1), 0.0, gbs, (n, 1));
                        }
                    }
                    self.accumulate(grads, *b, Tensor::from_parts(tb.shape().to_vec(), gb));
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let kind = match &self.nodes[i].op {
                    Op::Add(..) => 0,
                    Op::Sub(..) => 1,
                    _ => 2,
                };
                let mut ga = vec![0.0; ta.numel()];
                let mut gb = vec![0.0; tb.numel()];
                let (av, bv) = (ta.data(), tb.data());
                let mut step = |o: usize, ia: usize, ib: usize| {
                    let g = go[o];
                    match kind {
                        0 => {
                            ga[ia] += g;
                            gb[ib] += g;
                        }
                        1 => {
                            ga[ia] += g;
                            gb[ib] -= g;
                        }
                        _ => {
                            ga[ia] += g * bv[ib];
                            gb[ib] += g * av[ia];
                        }
                    }
                };
                if ta.shape() == tb.shape() {
                    for o in 0..go.len() {
                        step(o, o, o);
                    }
                } else {
                    for_each_broadcast(out.shape(), ta.shape(), tb.shape(), step);
                }
                self.accumulate(grads, *a, Tensor::from_parts(ta.shape().to_vec(), ga));
                self.accumulate(grads, *b, Tensor::from_parts(tb.shape().to_vec(), gb));
            }
            Op::Scale(x, c) => {
                let g = go.iter().map(|v| v * c).collect();
                self.accumulate(grads, *x, Tensor::from_parts(gout.shape().to_vec(), g));
            }
            Op::AddScalar(x) | Op::Reshape(x) => {
                let xs = self.shape(*x).to_vec();
                self.accumulate(grads, *x, Tensor::from_parts(xs, go.to_vec()));
            }
            Op::Gelu(x) | Op::Relu(x) | Op::Square(x) | Op::Abs(x) => {
                let xv = self.value(*x).data();
                let d: fn(f64) -> f64 = match &self.nodes[i].op {
                    Op::Gelu(_) => gelu_grad,
                    Op::Relu(_) => |v| if v > 0.0 { 1.0 } else { 0.0 },
                    Op::Square(_) => |v| 2.0 * v,
                    _ => |v: f64| {
                        if v > 0.0 {
                            1.0
                        } else if v < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    },
                };
                let g = go.iter().zip(xv).map(|(g, &v)| g * d(v)).collect();
                self.accumulate(grads, *x, Tensor::from_parts(gout.shape().to_vec(), g));
            }
            Op::LayerNorm { x, rstd } => {
                let d = *out.shape().last().unwrap();
                let y = out.data();
                let mut gx = vec![0.0; y.len()];
                for (r, ((gy, yr), dst)) in go
                    .chunks_exact(d)
                    .zip(y.chunks_exact(d))
                    .zip(gx.chunks_exact_mut(d))
                    .enumerate()
                {
                    let mg = gy.iter().sum::<f64>() / d as f64;
                    let mgy = gy.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for j in 0..d {
                        dst[j] = rstd[r] * (gy[j] - mg - yr[j] * mgy);
                    }
                }
                self.accumulate(grads, *x, Tensor::from_parts(out.shape().to_vec(), gx));
            }
            Op::Softmax(x) => {
                let d = *out.shape().last().unwrap();
                let y = out.data();
                let mut gx = vec![0.0; y.len()];
                for ((gy, yr), dst) in go.chunks_exact(d).zip(y.chunks_exact(d)).zip(gx.chunks_exact_mut(d)) {
                    let dot: f64 = gy.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for j in 0..d {
                        dst[j] = yr[j] * (gy[j] - dot);
                    }
                }
                self.accumulate(grads, *x, Tensor::from_parts(out.shape().to_vec(), gx));
            }
            Op::Permute { x, axes } => {
                let xs = self.shape(*x).to_vec();
                let (_, map) = permute_map(&xs, axes);
                let mut gx = vec![0.0; go.len()];
                for (o, &src) in map.iter().enumerate() {
                    gx[src] += go[o];
                }
                self.accumulate(grads, *x, Tensor::from_parts(xs, gx));
            }
            Op::SliceLast { x, start } => {
                let xs = self.shape(*x).to_vec();
                let d = *xs.last().unwrap();
                let len = *out.shape().last().unwrap();
                let mut gx = vec![0.0; numel(&xs)];
                for (row, g) in gx.chunks_exact_mut(d).zip(go.chunks_exact(len.max(1))) {
                    row[*start..start + len].copy_from_slice(g);
                }
                self.accumulate(grads, *x, Tensor::from_parts(xs, gx));
            }
            Op::ConcatLast(parts) => {
                let total = *out.shape().last().unwrap();
                let rows = go.len() / total.max(1);
                let mut offset = 0;
                for &p in parts {
                    let ps = self.shape(p).to_vec();
                    let w = *ps.last().unwrap();
                    let mut gp = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        gp.extend_from_slice(&go[r * total + offset..r * total + offset + w]);
                    }
                    self.accumulate(grads, p, Tensor::from_parts(ps, gp));
                    offset += w;
                }
            }
            Op::Conv1d { x, w, b, stride, pad } => {
                let (sx, sw) = (self.shape(*x).to_vec(), self.shape(*w).to_vec());
                let geom = ConvGeom::new(sx[0], sx[1], sx[2], sw[0], sw[2], *stride, *pad)
                    .expect("geometry validated in forward");
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                let per_out = geom.cout * geom.lout;
                let mut cols = vec![0.0; geom.ck() * geom.lout];
                let mut dcols = vec![0.0; geom.ck() * geom.lout];
                let mut gw = vec![0.0; wv.len()];
                let mut gx = if self.rg(*x) { vec![0.0; xv.len()] } else { Vec::new() };
                for bi in 0..geom.batch {
                    let gob = &go[bi * per_out..(bi + 1) * per_out];
                    let xb = &xv[bi * geom.cin * geom.len..(bi + 1) * geom.cin * geom.len];
                    if self.rg(*w) {
                        geom.im2col(xb, &mut cols);
                        gemm(
                            geom.cout,
                            geom.lout,
                            geom.ck(),
                            gob,
                            (geom.lout, 1),
                            &cols,
                            (1, geom.lout),
                            1.0,
                            &mut gw,
                            (geom.ck(), 1),
                        );
                    }
                    if self.rg(*x) {
                        gemm(
                            geom.ck(),
                            geom.cout,
                            geom.lout,
                            wv,
                            (1, geom.ck()),
                            gob,
                            (geom.lout, 1),
                            0.0,
                            &mut dcols,
                            (geom.lout, 1),
                        );
                        geom.col2im(
                            &dcols,
                            &mut gx[bi * geom.cin * geom.len..(bi + 1) * geom.cin * geom.len],
                        );
                    }
                }
                if self.rg(*x) {
                    self.accumulate(grads, *x, Tensor::from_parts(sx, gx));
                }
                self.accumulate(grads, *w, Tensor::from_parts(sw, gw));
                if let Some(b) = b {
                    let mut gb = vec![0.0; geom.cout];
                    for (r, row) in go.chunks_exact(geom.lout).enumerate() {
                        gb[r % geom.cout] += row.iter().sum::<f64>();
                    }
                    self.accumulate(grads, *b, Tensor::from_parts(vec![geom.cout], gb));
                }
            }
            Op::Sum(x) => {
                let xs = self.shape(*x).to_vec();
                let g = vec![go[0]; numel(&xs)];
                self.accumulate(grads, *x, Tensor::from_parts(xs, g));
            }
            Op::SumLast(x) => {
                let xs = self.shape(*x).to_vec();
                let d = *xs.last().unwrap();
                let g = go.iter().flat_map(|&v| std::iter::repeat_n(v, d)).collect();
                self.accumulate(grads, *x, Tensor::from_parts(xs, g));
            }
            Op::MinLast { x, argmin } => {
                let xs = self.shape(*x).to_vec();
                let d = *xs.last().unwrap();
                let mut g = vec![0.0; numel(&xs)];
                for (r, (&j, &v)) in argmin.iter().zip(go).enumerate() {
                    g[r * d + j] = v;
                }
                self.accumulate(grads, *x, Tensor::from_parts(xs, g));
            }
            Op::SelectRows { a, b, mask } => {
                let d = out.shape()[1];
                let mut ga = go.to_vec();
                let mut gb = vec![0.0; d];
                for (r, &m) in mask.iter().enumerate() {
                    if m {
                        for j in 0..d {
                            gb[j] += ga[r * d + j];
                            ga[r * d + j] = 0.0;
                        }
                    }
                }
                self.accumulate(grads, *a, Tensor::from_parts(out.shape().to_vec(), ga));
                self.accumulate(grads, *b, Tensor::from_parts(vec![1, d], gb));
            }
        }
    }
}

fn reduced_shape(s: &[usize]) -> Vec<usize> {
    if s.len() <= 1 {
        vec![1]
    } else {
        s[..s.len() - 1].to_vec()
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(shape(format!("cannot broadcast {a:?} with {b:?}")));
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, _) => Ok(y),
            (_, 1) => Ok(x),
            _ => Err(shape(format!("cannot broadcast {a:?} with {b:?}"))),
        })
        .collect()
}

fn strides(s: &[usize]) -> Vec<usize> {
    let mut st = vec![1; s.len()];
    for i in (0..s.len().saturating_sub(1)).rev() {
        st[i] = st[i + 1] * s[i + 1];
    }
    st
}

/// Calls `f(out_index, a_index, b_index)` for every element of `out`.
fn for_each_broadcast(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let rank = out.len();
    let (fa, fb) = (strides(sa), strides(sb));
    let ba: Vec<usize> = (0..rank).map(|i| if sa[i] == 1 { 0 } else { fa[i] }).collect();
    let bb: Vec<usize> = (0..rank).map(|i| if sb[i] == 1 { 0 } else { fb[i] }).collect();
    let total = numel(out);
    if total == 0 {
        return;
    }
    let mut idx = vec![0usize; rank];
    let (mut ia, mut ib) = (0usize, 0usize);
    for o in 0..total {
        f(o, ia, ib);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            ia += ba[ax];
            ib += bb[ax];
            if idx[ax] < out[ax] {
                break;
            }
            ia -= ba[ax] * idx[ax];
            ib -= bb[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
}

/// Output shape and, for each output element, the source offset.
fn permute_map(s: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let st = strides(s);
    let os: Vec<usize> = axes.iter().map(|&a| s[a]).collect();
    let ost: Vec<usize> = axes.iter().map(|&a| st[a]).collect();
    let total = numel(s);
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; os.len()];
    let mut off = 0usize;
    for _ in 0..total {
        map.push(off);
        for ax in (0..os.len()).rev() {
            idx[ax] += 1;
            off += ost[ax];
            if idx[ax] < os[ax] {
                break;
            }
            off -= ost[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    (os, map)
}

struct ConvGeom {
    batch: usize,
    cin: usize,
    len: usize,
    cout: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    lout: usize,
}

impl ConvGeom {
    fn new(
        batch: usize,
        cin: usize,
        len: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        if len + 2 * pad < kernel {
            return Err(shape(format!(
                "conv1d kernel {kernel} longer than padded input {}",
                len + 2 * pad
            )));
        }
        Ok(ConvGeom {
            batch,
            cin,
            len,
            cout,
            kernel,
            stride,
            pad,
            lout: (len + 2 * pad - kernel) / stride + 1,
        })
    }

    fn ck(&self) -> usize {
        self.cin * self.kernel
    }

    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        for c in 0..self.cin {
            for kk in 0..self.kernel {
                let row = &mut cols[(c * self.kernel + kk) * self.lout..(c * self.kernel + kk + 1) * self.lout];
                for (l, slot) in row.iter_mut().enumerate() {
                    let pos = (l * self.stride + kk) as isize - self.pad as isize;
                    *slot = if pos >= 0 && (pos as usize) < self.len {
                        x[c * self.len + pos as usize]
                    } else {
                        0.0
                    };
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], x: &mut [f64]) {
        for c in 0..self.cin {
            for kk in 0..self.kernel {
                let row = &cols[(c * self.kernel + kk) * self.lout..(c * self.kernel + kk + 1) * self.lout];
                for (l, v) in row.iter().enumerate() {
                    let pos = (l * self.stride + kk) as isize - self.pad as isize;
                    if pos >= 0 && (pos as usize) < self.len {
                        x[c * self.len + pos as usize] += v;
                    }
                }
            }
        }
    }
}

/// Output length of a 1-D convolution.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (len + 2 * pad - kernel) / stride + 1
}

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact (erf-based) GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / SQRT_2))
}

pub fn gelu_grad(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / SQRT_2)) + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}
