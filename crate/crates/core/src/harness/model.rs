//! Model roster: spectral encoder plus a regression head or a conditional
//! vector field, and the parameter-free random baseline.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ModelKind};
use crate::error::{invalid, shape, Error, Result};
use crate::flow::{self, Coupling, Guided, COND_DROPOUT};
use crate::kosc::{sample_params, TaskVariant};
use crate::nn::layers::{CnnConfig, CnnEncoder, Dit, DitConfig, Linear, ResidualMlp, ResidualMlpConfig};
use crate::nn::{Adam, Checkpoint, Graph, ParamId, ParamStore, RngState, Tensor, Var};
use crate::param2tok::{Param2Tok, Param2TokConfig};
use crate::seed;

/// Seed stream used for weight initialization.
const INIT_STREAM: u64 = 0;

/// Returns `x` with its oscillator triples stably sorted by raw frequency.
/// A trailing gate entry, if present, is left in place.
pub fn sort_canonicalize(x: &[f64], k: usize) -> Result<Vec<f64>> {
    if k == 0 || (x.len() != 3 * k && x.len() != 3 * k + 1) {
        return Err(shape(format!(
            "cannot split {} values into {k} oscillator triples",
            x.len()
        )));
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut out = x.to_vec();
    for (dst, &src) in order.iter().enumerate() {
        for block in 0..3 {
            out[block * k + dst] = x[block * k + src];
        }
    }
    Ok(out)
}

/// Vector field over the parameter space.
#[derive(Debug, Clone)]
pub enum Field {
    /// One token per oscillator, linear up/down projections around a DiT.
    Tokens { up: Linear, dit: Dit, down: Linear },
    /// Learned assignment of parameters to tokens around a DiT.
    Param2Tok { p2t: Param2Tok, dit: Dit },
    /// Conditioned residual MLP on the flat vector.
    Mlp(ResidualMlp),
}

#[derive(Debug, Clone)]
enum Net {
    Regression {
        encoder: CnnEncoder,
        head: ResidualMlp,
    },
    Flow {
        encoder: CnnEncoder,
        null_cond: ParamId,
        field: Field,
    },
    Random,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ExperimentConfig,
    pub store: ParamStore,
    net: Net,
}

/// Training state stored next to the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ExperimentConfig,
    pub step: u64,
    pub adam_step: u64,
    pub rng: Option<RngState>,
}

const PARAM_PREFIX: &str = "param.";
const ADAM_M_PREFIX: &str = "adam.m.";
const ADAM_V_PREFIX: &str = "adam.v.";

fn encoder_config(cfg: &ExperimentConfig) -> CnnConfig {
    let a = &cfg.arch;
    CnnConfig {
        n_samples: a.n_samples,
        channels: a.encoder_channels,
        blocks: a.encoder_blocks,
        kernel: a.encoder_kernel,
        down_stride: a.encoder_stride,
        out_dim: a.embed_dim,
    }
}

/// Values per oscillator token: ω, α, γ and, on the gated task, the gate.
fn token_width(task: TaskVariant) -> usize {
    if task == TaskVariant::Gated {
        4
    } else {
        3
    }
}

impl Model {
    pub fn build(cfg: &ExperimentConfig) -> Result<Model> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = seed::rng(seed::derive(cfg.seed, INIT_STREAM));
        let a = &cfg.arch;
        let p = cfg.param_dim();
        let d_cond = a.embed_dim + 1;
        let dit_cfg = DitConfig {
            d: a.token_dim,
            layers: a.layers,
            heads: a.heads,
            ffn_hidden: a.ffn_hidden,
            d_cond,
        };
        let net = match cfg.model {
            ModelKind::Random => Net::Random,
            ModelKind::FfnMse | ModelKind::FfnSort | ModelKind::FfnChamfer => {
                let encoder = CnnEncoder::new(&mut store, "encoder", encoder_config(cfg), &mut rng);
                let head = ResidualMlp::new(
                    &mut store,
                    "head",
                    ResidualMlpConfig {
                        d_in: a.embed_dim,
                        d: a.head_width,
                        hidden: a.head_width,
                        blocks: a.head_blocks,
                        d_out: p,
                        d_cond: None,
                    },
                    &mut rng,
                );
                Net::Regression { encoder, head }
            }
            ModelKind::CnfEquivariant | ModelKind::CnfParam2Tok | ModelKind::CnfMlp => {
                let encoder = CnnEncoder::new(&mut store, "encoder", encoder_config(cfg), &mut rng);
                let bound = 1.0 / (a.embed_dim as f64).sqrt();
                let null_cond = store.uniform("null_cond", &[1, a.embed_dim], bound, &mut rng);
                let field = match cfg.model {
                    ModelKind::CnfEquivariant => {
                        let w = token_width(cfg.task);
                        Field::Tokens {
                            up: Linear::new(&mut store, "field.up", w, a.token_dim, &mut rng),
                            dit: Dit::new(&mut store, "field.dit", dit_cfg, &mut rng),
                            down: Linear::new(&mut store, "field.down", a.token_dim, w, &mut rng),
                        }
                    }
                    ModelKind::CnfParam2Tok => Field::Param2Tok {
                        p2t: Param2Tok::new(
                            &mut store,
                            "field.p2t",
                            Param2TokConfig {
                                n_params: p,
                                n_tokens: cfg.k,
                                d: a.token_dim,
                                activation: a.p2t_activation,
                            },
                            &mut rng,
                        ),
                        dit: Dit::new(&mut store, "field.dit", dit_cfg, &mut rng),
                    },
                    _ => Field::Mlp(ResidualMlp::new(
                        &mut store,
                        "field.mlp",
                        ResidualMlpConfig {
                            d_in: p,
                            d: a.mlp_dim,
                            hidden: a.mlp_hidden,
                            blocks: a.mlp_blocks,
                            d_out: p,
                            d_cond: Some(d_cond),
                        },
                        &mut rng,
                    )),
                };
                Net::Flow {
                    encoder,
                    null_cond,
                    field,
                }
            }
        };
        Ok(Model {
            cfg: cfg.clone(),
            store,
            net,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.cfg.model
    }

    pub fn param_dim(&self) -> usize {
        self.cfg.param_dim()
    }

    pub fn num_parameters(&self) -> usize {
        self.store.numel()
    }

    pub fn field(&self) -> Option<&Field> {
        match &self.net {
            Net::Flow { field, .. } => Some(field),
            _ => None,
        }
    }

    fn encoder(&self) -> Option<&CnnEncoder> {
        match &self.net {
            Net::Regression { encoder, .. } | Net::Flow { encoder, .. } => Some(encoder),
            Net::Random => None,
        }
    }

    fn spectra(&self, audio: &[&[f64]]) -> Result<Tensor> {
        self.encoder()
            .ok_or_else(|| invalid("model has no encoder"))?
            .spectra(audio)
    }

    /// `[B, P]` parameter rows → `[B, k, w]` oscillator tokens.
    fn tokenize(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let k = self.cfg.k;
        let b = g.shape(x)[0];
        let gated = self.cfg.task == TaskVariant::Gated;
        let tri = if gated { g.slice_last(x, 0, 3 * k)? } else { x };
        let tri = g.reshape(tri, &[b, 3, k])?;
        let tri = g.permute(tri, &[0, 2, 1])?;
        if !gated {
            return Ok(tri);
        }
        let c = g.slice_last(x, 3 * k, 1)?;
        let c = g.reshape(c, &[b, 1, 1])?;
        let ones = g.constant(Tensor::full(&[1, k, 1], 1.0));
        let c = g.mul(c, ones)?;
        g.concat_last(&[tri, c])
    }

    /// Inverse of [`Self::tokenize`]; the gate is the token average.
    fn untokenize(&self, g: &mut Graph<'_>, t: Var) -> Result<Var> {
        let k = self.cfg.k;
        let b = g.shape(t)[0];
        let gated = self.cfg.task == TaskVariant::Gated;
        let tri = if gated { g.slice_last(t, 0, 3)? } else { t };
        let tri = g.permute(tri, &[0, 2, 1])?;
        let tri = g.reshape(tri, &[b, 3 * k])?;
        if !gated {
            return Ok(tri);
        }
        let c = g.slice_last(t, 3, 1)?;
        let c = g.reshape(c, &[b, k])?;
        let c = g.sum_last(c);
        let c = g.scale(c, 1.0 / k as f64);
        let c = g.reshape(c, &[b, 1])?;
        g.concat_last(&[tri, c])
    }

    /// Velocity `[B, P]` at `xt: [B, P]` for conditioning `cond: [B, E + 1]`.
    pub fn field_forward(&self, g: &mut Graph<'_>, xt: Var, cond: Var) -> Result<Var> {
        let field = self.field().ok_or_else(|| invalid("model has no vector field"))?;
        match field {
            Field::Tokens { up, dit, down } => {
                let t = self.tokenize(g, xt)?;
                let h = up.forward(g, t)?;
                let h = dit.forward(g, h, cond)?;
                let t = down.forward(g, h)?;
                self.untokenize(g, t)
            }
            Field::Param2Tok { p2t, dit } => {
                let h = p2t.forward(g, xt)?;
                let h = dit.forward(g, h, cond)?;
                p2t.inverse(g, h)
            }
            Field::Mlp(mlp) => mlp.forward(g, xt, Some(cond)),
        }
    }

    /// Regression output `[B, P]` for spectra `[B, 1, bins]`.
    fn regress(&self, g: &mut Graph<'_>, spec: Var) -> Result<Var> {
        match &self.net {
            Net::Regression { encoder, head } => {
                let e = encoder.forward(g, spec)?;
                head.forward(g, e, None)
            }
            _ => Err(invalid("model is not a regression model")),
        }
    }

    /// Scalar training loss on one batch. `x1` holds `B` parameter rows;
    /// `rng` supplies the flow-matching noise, times and dropout.
    pub fn loss(&self, g: &mut Graph<'_>, x1: &[f64], audio: &[&[f64]], rng: &mut impl Rng) -> Result<Var> {
        let p = self.param_dim();
        let b = audio.len();
        if b == 0 || x1.len() != b * p {
            return Err(shape(format!(
                "{} parameter values for {b} signals of dimension {p}",
                x1.len()
            )));
        }
        let spec = g.constant(self.spectra(audio)?);
        match &self.net {
            Net::Random => Err(invalid("the random baseline has no training loss")),
            Net::Regression { .. } => {
                let pred = self.regress(g, spec)?;
                match self.kind() {
                    ModelKind::FfnChamfer => chamfer_loss(g, pred, x1, self.cfg.k, self.cfg.task),
                    ModelKind::FfnSort => {
                        let mut target = Vec::with_capacity(x1.len());
                        for row in x1.chunks_exact(p) {
                            target.extend(sort_canonicalize(row, self.cfg.k)?);
                        }
                        mse_loss(g, pred, &target)
                    }
                    _ => mse_loss(g, pred, x1),
                }
            }
            Net::Flow {
                encoder,
                null_cond,
                field,
            } => {
                let batch = flow::prepare_cfm_batch(x1, p, rng, Coupling::OptimalTransport, COND_DROPOUT)?;
                let e = encoder.forward(g, spec)?;
                let null = g.param(*null_cond);
                let e = g.select_rows(e, null, &batch.dropped)?;
                let t = g.constant(Tensor::new(vec![b, 1], batch.t.clone())?);
                let cond = g.concat_last(&[e, t])?;
                let xt = g.constant(Tensor::new(vec![b, p], batch.xt.clone())?);
                let v = self.field_forward(g, xt, cond)?;
                let loss = flow::cfm_loss(g, v, &batch)?;
                match field {
                    Field::Param2Tok { p2t, .. } => {
                        let l1 = p2t.l1_penalty(g);
                        g.add(loss, l1)
                    }
                    _ => Ok(loss),
                }
            }
        }
    }

    /// Integrates the guided field from the given noise rows (`[B, P]`,
    /// row-major) for the given signals.
    pub fn sample_from_noise(&self, audio: &[&[f64]], x0: &[f64]) -> Result<Vec<f64>> {
        let Net::Flow { encoder, null_cond, .. } = &self.net else {
            return Err(invalid("model is not a flow model"));
        };
        let p = self.param_dim();
        let b = audio.len();
        if x0.len() != b * p {
            return Err(shape(format!(
                "{} noise values for {b} signals of dimension {p}",
                x0.len()
            )));
        }
        let embed = {
            let mut g = Graph::with_params(&self.store);
            let spec = g.constant(encoder.spectra(audio)?);
            let e = encoder.forward(&mut g, spec)?;
            g.value(e).clone()
        };
        let null = self.store.get(*null_cond).data().repeat(b);
        let e_dim = self.cfg.arch.embed_dim;
        let field = |x: &[f64], t: f64, conditioned: bool| -> Result<Vec<f64>> {
            let mut g = Graph::with_params(&self.store);
            let e = if conditioned {
                g.constant(embed.clone())
            } else {
                g.constant(Tensor::new(vec![b, e_dim], null.clone())?)
            };
            let tv = g.constant(Tensor::full(&[b, 1], t));
            let cond = g.concat_last(&[e, tv])?;
            let xt = g.constant(Tensor::new(vec![b, p], x.to_vec())?);
            let v = self.field_forward(&mut g, xt, cond)?;
            Ok(g.value(v).data().to_vec())
        };
        let guided = Guided {
            field,
            scale: self.cfg.guidance,
        };
        flow::integrate_rk4(&guided, x0, self.cfg.sampler_steps)
    }

    /// One parameter estimate per signal. `seeds[i]` drives the noise (flow
    /// models) or the draw (random baseline) for item `i`, so each estimate
    /// is independent of how items are batched.
    pub fn infer(&self, audio: &[&[f64]], seeds: &[u64]) -> Result<Vec<Vec<f64>>> {
        if audio.len() != seeds.len() {
            return Err(shape("one seed per signal is required"));
        }
        let p = self.param_dim();
        match &self.net {
            Net::Random => Ok(seeds
                .iter()
                .map(|&s| sample_params(self.cfg.k, self.cfg.task, s).data)
                .collect()),
            Net::Regression { .. } => {
                let mut g = Graph::with_params(&self.store);
                let spec = g.constant(self.spectra(audio)?);
                let y = self.regress(&mut g, spec)?;
                Ok(g.value(y).data().chunks_exact(p).map(<[f64]>::to_vec).collect())
            }
            Net::Flow { .. } => {
                let mut x0 = Vec::with_capacity(seeds.len() * p);
                for &s in seeds {
                    x0.extend(flow::standard_normal(p, &mut seed::rng(s)));
                }
                let x = self.sample_from_noise(audio, &x0)?;
                Ok(x.chunks_exact(p).map(<[f64]>::to_vec).collect())
            }
        }
    }

    pub fn to_checkpoint(&self, step: u64, adam: Option<&Adam>, rng: Option<&RngState>) -> Result<Checkpoint> {
        let meta = CheckpointMeta {
            config: self.cfg.clone(),
            step,
            adam_step: adam.map_or(0, |a| a.step),
            rng: rng.cloned(),
        };
        let mut tensors = Vec::new();
        for id in self.store.ids() {
            tensors.push((
                format!("{PARAM_PREFIX}{}", self.store.name(id)),
                self.store.get(id).clone(),
            ));
        }
        if let Some(a) = adam {
            for (prefix, moments) in [(ADAM_M_PREFIX, &a.m), (ADAM_V_PREFIX, &a.v)] {
                for (id, t) in self.store.ids().zip(moments) {
                    tensors.push((format!("{prefix}{}", self.store.name(id)), t.clone()));
                }
            }
        }
        Ok(Checkpoint {
            meta: serde_json::to_string(&meta)?,
            tensors,
        })
    }

    /// Rebuilds the model described by a checkpoint and loads its weights.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(Model, CheckpointMeta)> {
        let meta: CheckpointMeta = serde_json::from_str(&ckpt.meta)?;
        let mut model = Model::build(&meta.config)?;
        model.store.load(ckpt.with_prefix(PARAM_PREFIX))?;
        Ok((model, meta))
    }

    /// Optimizer state saved alongside the weights, if any.
    pub fn adam_from_checkpoint(&self, ckpt: &Checkpoint, meta: &CheckpointMeta) -> Result<Option<Adam>> {
        let m = ckpt.with_prefix(ADAM_M_PREFIX);
        if m.is_empty() {
            return Ok(None);
        }
        let v = ckpt.with_prefix(ADAM_V_PREFIX);
        let mut adam = Adam::new(&self.store, meta.config.lr);
        let mut mm = self.store.clone();
        mm.load(m)?;
        let mut vv = self.store.clone();
        vv.load(v)?;
        adam.m = mm.tensors().to_vec();
        adam.v = vv.tensors().to_vec();
        adam.step = meta.adam_step;
        Ok(Some(adam))
    }
}

fn mse_loss(g: &mut Graph<'_>, pred: Var, target: &[f64]) -> Result<Var> {
    let t = g.constant(Tensor::new(g.shape(pred).to_vec(), target.to_vec())?);
    let d = g.sub(pred, t)?;
    let sq = g.square(d);
    Ok(g.mean(sq))
}

/// `[B, 3k(+1)]` → oscillator triples `[B, k, 3]`.
fn triples(g: &mut Graph<'_>, x: Var, k: usize) -> Result<Var> {
    let b = g.shape(x)[0];
    let x = g.slice_last(x, 0, 3 * k)?;
    let x = g.reshape(x, &[b, 3, k])?;
    g.permute(x, &[0, 2, 1])
}

/// Batch mean of the bidirectional nearest-neighbour triple distance; on
/// the gated task the squared gate error is added.
fn chamfer_loss(g: &mut Graph<'_>, pred: Var, target: &[f64], k: usize, task: TaskVariant) -> Result<Var> {
    let shape_p = g.shape(pred).to_vec();
    let b = shape_p[0];
    let t = g.constant(Tensor::new(shape_p, target.to_vec())?);
    let pt = triples(g, pred, k)?;
    let tt = triples(g, t, k)?;
    let pt = g.reshape(pt, &[b, k, 1, 3])?;
    let tt = g.reshape(tt, &[b, 1, k, 3])?;
    let d = g.sub(pt, tt)?;
    let d = g.square(d);
    let d = g.sum_last(d);
    let d = g.scale(d, 1.0 / 3.0);
    let rows = g.min_last(d);
    let dt = g.permute(d, &[0, 2, 1])?;
    let cols = g.min_last(dt);
    let r = g.sum(rows);
    let c = g.sum(cols);
    let total = g.add(r, c)?;
    let mut loss = g.scale(total, 1.0 / b as f64);
    if task == TaskVariant::Gated {
        let gp = g.slice_last(pred, 3 * k, 1)?;
        let gt = g.slice_last(t, 3 * k, 1)?;
        let gd = g.sub(gp, gt)?;
        let gd = g.square(gd);
        let gm = g.mean(gd);
        loss = g.add(loss, gm)?;
    }
    if !g.value(loss).is_finite() {
        return Err(Error::NonFinite("chamfer loss".into()));
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::ArchConfig;
    use crate::metrics;

    fn toy(model: ModelKind, task: TaskVariant, k: usize) -> ExperimentConfig {
        ExperimentConfig {
            model,
            task,
            k,
            arch: ArchConfig::toy(),
            sampler_steps: 4,
            ..Default::default()
        }
    }

    fn toy_audio(cfg: &ExperimentConfig, n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..n {
            let x = sample_params(cfg.k, cfg.task, 100 + i as u64);
            ys.push(
                crate::kosc::render(&x, cfg.k, cfg.task, cfg.arch.n_samples)
                    .unwrap()
                    .samples,
            );
            xs.extend(x.data);
        }
        (xs, ys)
    }

    #[test]
    fn sort_examples() {
        let x = [0.1, 0.5, 0.9, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(sort_canonicalize(&x, 3).unwrap(), x);
        let r = [0.9, 0.5, 0.1, 3.0, 2.0, 1.0, 6.0, 5.0, 4.0];
        assert_eq!(sort_canonicalize(&r, 3).unwrap(), x);
        let s = sort_canonicalize(&[0.3, -0.2, 0.3, 1., 2., 3., 4., 5., 6.], 3).unwrap();
        assert_eq!(s, [-0.2, 0.3, 0.3, 2., 1., 3., 5., 4., 6.]);
        assert_eq!(sort_canonicalize(&s, 3).unwrap(), s);
        assert!(sort_canonicalize(&x[..8], 3).is_err());
    }

    #[test]
    fn token_counts() {
        for (model, want) in [(ModelKind::CnfEquivariant, 4), (ModelKind::CnfParam2Tok, 4)] {
            let m = Model::build(&toy(model, TaskVariant::Symmetric, 4)).unwrap();
            let mut g = Graph::with_params(&m.store);
            let x = g.constant(Tensor::zeros(&[2, 12]));
            let t = match m.field().unwrap() {
                Field::Tokens { .. } => m.tokenize(&mut g, x).unwrap(),
                Field::Param2Tok { p2t, .. } => p2t.forward(&mut g, x).unwrap(),
                Field::Mlp(_) => unreachable!(),
            };
            assert_eq!(g.shape(t)[1], want);
        }
        assert_eq!(
            Model::build(&toy(ModelKind::Random, TaskVariant::Symmetric, 4))
                .unwrap()
                .num_parameters(),
            0
        );
    }

    #[test]
    fn token_layout_round_trips() {
        for task in [TaskVariant::Symmetric, TaskVariant::Gated] {
            let m = Model::build(&toy(ModelKind::CnfEquivariant, task, 3)).unwrap();
            let p = task.param_dim(3);
            let data: Vec<f64> = (0..2 * p).map(|i| i as f64).collect();
            let mut g = Graph::with_params(&m.store);
            let x = g.constant(Tensor::new(vec![2, p], data.clone()).unwrap());
            let t = m.tokenize(&mut g, x).unwrap();
            // Token 1 of item 0 is (ω₂, α₂, γ₂[, c]).
            assert_eq!(
                &g.value(t).data()[token_width(task)..token_width(task) + 3],
                &[1.0, 4.0, 7.0]
            );
            let back = m.untokenize(&mut g, t).unwrap();
            assert_eq!(g.value(back).data(), &data[..]);
        }
    }

    #[test]
    fn chamfer_loss_matches_metric() {
        let k = 3;
        let mut rng = seed::rng(1);
        let a: Vec<f64> = (0..6 * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..6 * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut g = Graph::new();
        let pv = g.constant(Tensor::new(vec![2, 3 * k], a.clone()).unwrap());
        let l = chamfer_loss(&mut g, pv, &b, k, TaskVariant::Symmetric).unwrap();
        let want =
            (metrics::chamfer(&b[..9], &a[..9], k).unwrap() + metrics::chamfer(&b[9..], &a[9..], k).unwrap()) / 2.0;
        assert!((g.value(l).item() - want).abs() < 1e-12);
    }

    #[test]
    fn every_variant_produces_finite_loss_and_estimates() {
        for task in [TaskVariant::Symmetric, TaskVariant::Asymmetric, TaskVariant::Gated] {
            for kind in ModelKind::ALL {
                let cfg = toy(kind, task, 2);
                if cfg.validate().is_err() {
                    continue;
                }
                let m = Model::build(&cfg).unwrap();
                let (xs, ys) = toy_audio(&cfg, 3);
                let refs: Vec<&[f64]> = ys.iter().map(Vec::as_slice).collect();
                if kind != ModelKind::Random {
                    let mut g = Graph::with_params(&m.store);
                    let l = m.loss(&mut g, &xs, &refs, &mut seed::rng(2)).unwrap();
                    assert!(g.value(l).item().is_finite(), "{kind} {task}");
                }
                let est = m.infer(&refs, &[1, 2, 3]).unwrap();
                assert_eq!(est.len(), 3);
                assert!(est
                    .iter()
                    .all(|e| e.len() == cfg.param_dim() && e.iter().all(|v| v.is_finite())));
            }
        }
    }

    #[test]
    fn inference_is_independent_of_batching() {
        let cfg = toy(ModelKind::CnfEquivariant, TaskVariant::Symmetric, 2);
        let m = Model::build(&cfg).unwrap();
        let (_, ys) = toy_audio(&cfg, 3);
        let refs: Vec<&[f64]> = ys.iter().map(Vec::as_slice).collect();
        let all = m.infer(&refs, &[7, 8, 9]).unwrap();
        let one = m.infer(&refs[1..2], &[8]).unwrap();
        for (a, b) in all[1].iter().zip(&one[0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoint_round_trip_restores_model() {
        let cfg = toy(ModelKind::CnfParam2Tok, TaskVariant::Symmetric, 2);
        let m = Model::build(&cfg).unwrap();
        let adam = Adam::new(&m.store, cfg.lr);
        let ck = m.to_checkpoint(0, Some(&adam), None).unwrap();
        let (m2, meta) = Model::from_checkpoint(&ck).unwrap();
        assert_eq!(m2.store, m.store);
        assert_eq!(meta.config, cfg);
        let a2 = m2.adam_from_checkpoint(&ck, &meta).unwrap().unwrap();
        assert_eq!(a2, adam);
        assert_eq!(m2.to_checkpoint(0, Some(&a2), None).unwrap().to_bytes(), ck.to_bytes());
    }
}
