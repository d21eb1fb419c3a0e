//! Learned projection between a flat parameter vector and a set of tokens.
//!
//! Forward: `X₀ = A · h(diag(x) · Z)` with `h` a row-wise feed-forward net.
//! Inverse (weight-tied through `A`): `x̃ = (Z′ ⊙ (Aᵀ X)) · 1`.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{shape, Error, Result};
use crate::nn::layers::{Activation, FeedForward};
use crate::nn::{Graph, ParamId, ParamStore, Tensor, Var};

/// Weight of the L1 penalty on the assignment matrix.
pub const L1_WEIGHT: f64 = 0.01;
/// Variance of assignment entries around their mean at init.
pub const ASSIGN_INIT_VAR: f64 = 1e-4;
/// Variance of embedding rows around their shared mean at init.
pub const EMBED_INIT_VAR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Param2TokConfig {
    /// Number of scalar parameters `P`.
    pub n_params: usize,
    /// Number of tokens `n`.
    pub n_tokens: usize,
    pub d: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone)]
pub struct Param2Tok {
    pub cfg: Param2TokConfig,
    /// `[P, d]` input embeddings.
    pub z: ParamId,
    /// `[P, d]` output embeddings.
    pub z_out: ParamId,
    /// `[n, P]` assignment.
    pub a: ParamId,
    pub h: FeedForward,
}

impl Param2Tok {
    /// Near-permutation-invariant init: every `a_ij ~ N((nP)^-½, σ²_A)`; a
    /// shared mean `m ~ N(0, d^-½ I)` and rows `z_i ~ N(m, σ²_Z I)`; `Z′ = Z`.
    pub fn new(store: &mut ParamStore, name: &str, cfg: Param2TokConfig, rng: &mut impl Rng) -> Self {
        let (p, n, d) = (cfg.n_params, cfg.n_tokens, cfg.d);
        assert!(p > 0 && n > 0 && d > 0, "Param2Tok dimensions must be positive");
        let a_dist = Normal::new(((n * p) as f64).powf(-0.5), ASSIGN_INIT_VAR.sqrt()).unwrap();
        let a: Vec<f64> = (0..n * p).map(|_| a_dist.sample(rng)).collect();
        let m_dist = Normal::new(0.0, (d as f64).powf(-0.25)).unwrap();
        let m: Vec<f64> = (0..d).map(|_| m_dist.sample(rng)).collect();
        let noise = Normal::new(0.0, EMBED_INIT_VAR.sqrt()).unwrap();
        let z: Vec<f64> = (0..p * d).map(|i| m[i % d] + noise.sample(rng)).collect();
        let z = Tensor::new(vec![p, d], z).unwrap();
        Param2Tok {
            z: store.add(format!("{name}.z"), z.clone()),
            z_out: store.add(format!("{name}.z_out"), z),
            a: store.add(format!("{name}.a"), Tensor::new(vec![n, p], a).unwrap()),
            h: FeedForward::new(store, &format!("{name}.h"), d, d, d, cfg.activation, rng),
            cfg,
        }
    }

    /// `x: [B, P]` → tokens `[B, n, d]`.
    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let (p, d) = (self.cfg.n_params, self.cfg.d);
        let s = g.shape(x).to_vec();
        if s.len() != 2 || s[1] != p {
            return Err(shape(format!("Param2Tok expects [B, {p}], got {s:?}")));
        }
        let b = s[0];
        let xs = g.reshape(x, &[b, p, 1])?;
        let z = g.param(self.z);
        let z = g.reshape(z, &[1, p, d])?;
        let scaled = g.mul(xs, z)?;
        let h = self.h.forward(g, scaled)?;
        // A · h for each batch item, via [B, d, P] @ Aᵀ.
        let ht = g.permute(h, &[0, 2, 1])?;
        let a = g.param(self.a);
        let at = g.transpose(a)?;
        let t = g.matmul(ht, at)?;
        g.permute(t, &[0, 2, 1])
    }

    /// Tokens `[B, n, d]` → `[B, P]`.
    pub fn inverse(&self, g: &mut Graph<'_>, tokens: Var) -> Result<Var> {
        let (n, p, d) = (self.cfg.n_tokens, self.cfg.n_params, self.cfg.d);
        let s = g.shape(tokens).to_vec();
        if s.len() != 3 || s[1] != n || s[2] != d {
            return Err(shape(format!("Param2Tok inverse expects [B, {n}, {d}], got {s:?}")));
        }
        let xt = g.permute(tokens, &[0, 2, 1])?;
        let a = g.param(self.a);
        let atx = g.matmul(xt, a)?;
        let atx = g.permute(atx, &[0, 2, 1])?;
        let zo = g.param(self.z_out);
        let zo = g.reshape(zo, &[1, p, d])?;
        let prod = g.mul(atx, zo)?;
        Ok(g.sum_last(prod))
    }

    /// `L1_WEIGHT · Σ|a_ij|`.
    pub fn l1_penalty(&self, g: &mut Graph<'_>) -> Var {
        let a = g.param(self.a);
        let abs = g.abs(a);
        let s = g.sum(abs);
        g.scale(s, L1_WEIGHT)
    }
}

/// Outcome of evaluating the conditional-equivariance construction.
#[derive(Debug, Clone, PartialEq)]
pub struct FixtureReport {
    /// `max |FFN∘P2T∘π(x) − ρ∘FFN∘P2T(x)|` with the gate entry `c = 1`.
    pub gate_on_diff: f64,
    /// Same quantity with `c = 0`.
    pub gate_off_diff: f64,
    /// With `a = b` the swap fixes `x`, so `FFN∘P2T∘π(x)` must equal
    /// `FFN∘P2T(x)`; max gap over `c ∈ {0, 1}`.
    pub stabilizer_diff: f64,
}

impl FixtureReport {
    pub fn passes(&self) -> bool {
        self.gate_on_diff == 0.0 && self.gate_off_diff > 0.0 && self.stabilizer_diff == 0.0
    }
}

/// Hand-built parameters for which the projection followed by a ReLU
/// feed-forward layer is equivariant to swapping the first two parameters
/// exactly when the third parameter is 1.
///
/// `Z = [[u, v1, 0], [u, v2, 0], [0, 0, 1]]`, `A = [[1, 0, 1], [0, 1, 1]]`,
/// `h` = identity weights with ReLU, and the downstream layer is
/// `ReLU(y · W_in) · W_out` with `W_in = [[1,0,0],[0,1,0],[0,-1,0]]`,
/// `W_out = I`.
pub struct ConditionalFixture {
    store: ParamStore,
    p2t: Param2Tok,
    w_in: ParamId,
    w_out: ParamId,
}

impl ConditionalFixture {
    pub fn new(u: f64, v1: f64, v2: f64) -> Self {
        let mut store = ParamStore::new();
        let mut rng = crate::seed::rng(0);
        let cfg = Param2TokConfig {
            n_params: 3,
            n_tokens: 2,
            d: 3,
            activation: Activation::Relu,
        };
        let p2t = Param2Tok::new(&mut store, "p2t", cfg, &mut rng);
        let eye = Tensor::new(vec![3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let z = Tensor::new(vec![3, 3], vec![u, v1, 0., u, v2, 0., 0., 0., 1.]).unwrap();
        *store.get_mut(p2t.z) = z.clone();
        *store.get_mut(p2t.z_out) = z;
        *store.get_mut(p2t.a) = Tensor::new(vec![2, 3], vec![1., 0., 1., 0., 1., 1.]).unwrap();
        for lin in [&p2t.h.l1, &p2t.h.l2] {
            *store.get_mut(lin.w) = eye.clone();
            *store.get_mut(lin.b) = Tensor::zeros(&[3]);
        }
        let w_in = store.add(
            "ffn.w_in",
            Tensor::new(vec![3, 3], vec![1., 0., 0., 0., 1., 0., 0., -1., 0.]).unwrap(),
        );
        let w_out = store.add("ffn.w_out", eye);
        ConditionalFixture {
            store,
            p2t,
            w_in,
            w_out,
        }
    }

    /// `FFN(P2T(x))` as a `2 × 3` row-major matrix.
    pub fn evaluate(&self, x: [f64; 3]) -> Result<Vec<f64>> {
        let mut g = Graph::with_params(&self.store);
        let xv = g.constant(Tensor::new(vec![1, 3], x.to_vec())?);
        let t = self.p2t.forward(&mut g, xv)?;
        let w_in = g.param(self.w_in);
        let h = g.matmul(t, w_in)?;
        let h = g.relu(h);
        let w_out = g.param(self.w_out);
        let y = g.matmul(h, w_out)?;
        Ok(g.value(y).data().to_vec())
    }

    /// Max-abs gap between `FFN∘P2T(b, a, c)` and the row-swapped `FFN∘P2T(a, b, c)`.
    pub fn equivariance_gap(&self, a: f64, b: f64, c: f64) -> Result<f64> {
        let lhs = self.evaluate([b, a, c])?;
        let y = self.evaluate([a, b, c])?;
        let rhs: Vec<f64> = y[3..].iter().chain(&y[..3]).copied().collect();
        Ok(lhs.iter().zip(&rhs).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max))
    }

    /// Max-abs gap between `FFN∘P2T(b, a, c)` and `FFN∘P2T(a, b, c)`.
    pub fn input_swap_gap(&self, a: f64, b: f64, c: f64) -> Result<f64> {
        let lhs = self.evaluate([b, a, c])?;
        let rhs = self.evaluate([a, b, c])?;
        Ok(lhs.iter().zip(&rhs).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max))
    }
}

/// Runs both branches of the construction and the `a = b` stabilizer case.
pub fn conditional_symmetry_fixture(a: f64, b: f64, u: f64, v1: f64, v2: f64) -> Result<FixtureReport> {
    let f = ConditionalFixture::new(u, v1, v2);
    Ok(FixtureReport {
        gate_on_diff: f.equivariance_gap(a, b, 1.0)?,
        gate_off_diff: f.equivariance_gap(a, b, 0.0)?,
        stabilizer_diff: f.input_swap_gap(a, a, 0.0)?.max(f.input_swap_gap(a, a, 1.0)?),
    })
}

/// Row order for `A`: each row's key is its column indices ordered by
/// descending value; rows are sorted lexicographically by that key.
pub fn assignment_row_order(a: &[f64], n: usize, p: usize) -> Vec<usize> {
    let keys: Vec<Vec<usize>> = (0..n)
        .map(|r| {
            let row = &a[r * p..(r + 1) * p];
            let mut idx: Vec<usize> = (0..p).collect();
            idx.sort_by(|&i, &j| row[j].total_cmp(&row[i]).then(i.cmp(&j)));
            idx
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| keys[i].cmp(&keys[j]).then(i.cmp(&j)));
    order
}

/// Pairwise cosine similarity between the rows of a `[rows, cols]` matrix.
/// A zero row has similarity 0 with everything, itself included.
pub fn cosine_self_similarity(m: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let norms: Vec<f64> = (0..rows)
        .map(|i| m[i * cols..(i + 1) * cols].iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let mut out = vec![0.0; rows * rows];
    for i in 0..rows {
        for j in 0..rows {
            if norms[i] > 0.0 && norms[j] > 0.0 {
                let dot: f64 = (0..cols).map(|c| m[i * cols + c] * m[j * cols + c]).sum();
                out[i * rows + j] = dot / (norms[i] * norms[j]);
            }
        }
    }
    out
}

pub fn matrix_to_csv(m: &[f64], cols: usize) -> String {
    let mut s = String::new();
    for row in m.chunks(cols.max(1)) {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

/// Parses a headerless numeric CSV into `(values, rows, cols)`.
pub fn matrix_from_csv(text: &str) -> Result<(Vec<f64>, usize, usize)> {
    let mut values = Vec::new();
    let mut rows = 0;
    let mut cols = None;
    for line in text.lines().filter(|l| !l.is_empty()) {
        let row = line
            .split(',')
            .map(|c| {
                c.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Format(format!("bad number {c}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if *cols.get_or_insert(row.len()) != row.len() {
            return Err(Error::Format("ragged CSV matrix".into()));
        }
        values.extend(row);
        rows += 1;
    }
    Ok((values, rows, cols.unwrap_or(0)))
}

pub const ASSIGNMENT_CSV: &str = "assignment_sorted.csv";
pub const ASSIGNMENT_ORDER_CSV: &str = "assignment_row_order.csv";
pub const Z_SIMILARITY_CSV: &str = "z_similarity.csv";
pub const Z_OUT_SIMILARITY_CSV: &str = "z_out_similarity.csv";

/// Writes the row-sorted assignment matrix, its row order, and cosine
/// self-similarity matrices of `Z` and `Z′`.
pub fn export_csv(p2t: &Param2Tok, store: &ParamStore, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    let (n, p, d) = (p2t.cfg.n_tokens, p2t.cfg.n_params, p2t.cfg.d);
    let a = store.get(p2t.a).data();
    let order = assignment_row_order(a, n, p);
    let sorted: Vec<f64> = order
        .iter()
        .flat_map(|&r| a[r * p..(r + 1) * p].iter().copied())
        .collect();
    fs::write(out_dir.join(ASSIGNMENT_CSV), matrix_to_csv(&sorted, p))?;
    let order_f: Vec<f64> = order.iter().map(|&r| r as f64).collect();
    fs::write(out_dir.join(ASSIGNMENT_ORDER_CSV), matrix_to_csv(&order_f, 1))?;
    for (id, file) in [(p2t.z, Z_SIMILARITY_CSV), (p2t.z_out, Z_OUT_SIMILARITY_CSV)] {
        let sim = cosine_self_similarity(store.get(id).data(), p, d);
        fs::write(out_dir.join(file), matrix_to_csv(&sim, p))?;
    }
    Ok(())
}
