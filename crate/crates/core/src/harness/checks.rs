//! Self-checks runnable from the CLI and the acceptance tests. Each check
//! reports a measured quantity, its bound, and the elapsed time.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;

use super::config::{ArchConfig, ExperimentConfig, ModelKind};
use super::eval::{evaluate, EvalOptions};
use super::model::Model;
use super::train::train;
use crate::assign::{brute_force_assignment, hungarian, CostMatrix};
use crate::dsp::{FeatureKind, FrameSeries};
use crate::error::{invalid, Error, Result};
use crate::kosc::dataset::{generate_dataset, Dataset, DatasetConfig};
use crate::kosc::{render, sample_params, ParamVector, TaskVariant};
use crate::metrics;
use crate::nn::layers::{Activation, CnnConfig, CnnEncoder, Dit, DitConfig, LayerNorm, Linear, SelfAttention};
use crate::nn::{grad_check, GradCheckOptions, Graph, ParamStore, Tensor, Var};
use crate::oracles;
use crate::param2tok::{conditional_symmetry_fixture, Param2Tok, Param2TokConfig};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: {} ({:.2} s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail,
            self.elapsed.as_secs_f64()
        )
    }
}

/// Runs `f`, which returns `(passed, detail)`, and fails the check if it
/// takes longer than `budget`.
fn timed(name: &str, budget: Duration, f: impl FnOnce() -> Result<(bool, String)>) -> CheckOutcome {
    let start = Instant::now();
    let (passed, detail) = match f() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    let elapsed = start.elapsed();
    let in_time = elapsed <= budget;
    CheckOutcome {
        name: name.into(),
        passed: passed && in_time,
        detail: if in_time {
            detail
        } else {
            format!("{detail}; over the {:.0} s budget", budget.as_secs_f64())
        },
        elapsed,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Oracles,
    Grad,
    Equivariance,
    Fixture,
    Metrics,
    Determinism,
}

impl Suite {
    pub const ALL: [Suite; 6] = [
        Suite::Oracles,
        Suite::Grad,
        Suite::Equivariance,
        Suite::Fixture,
        Suite::Metrics,
        Suite::Determinism,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Oracles => "oracles",
            Suite::Grad => "grad",
            Suite::Equivariance => "equivariance",
            Suite::Fixture => "fixture",
            Suite::Metrics => "metrics",
            Suite::Determinism => "determinism",
        }
    }

    pub fn run(self) -> Vec<CheckOutcome> {
        match self {
            Suite::Oracles => vec![assignment_oracle(1000), dtw_oracle(200), sot_oracle(200)],
            Suite::Grad => grad_suite(),
            Suite::Equivariance => vec![dit_equivariance(100), sampler_equivariance(10), render_invariance(100)],
            Suite::Fixture => vec![fixture()],
            Suite::Metrics => vec![metric_identities(50)],
            Suite::Determinism => vec![determinism()],
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| invalid(format!("unknown check suite `{s}`")))
    }
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

// ---- oracle equivalence ---------------------------------------------------

/// Hungarian cost equals brute force exactly on random matrices, n ≤ 7.
/// Half of the matrices have small integer entries to exercise ties.
pub fn assignment_oracle(count: usize) -> CheckOutcome {
    timed("assignment vs brute force", secs(10), || {
        let mut rng = seed::rng(0xA551);
        let mut mismatches = 0;
        for trial in 0..count {
            let n = rng.gen_range(1..=7);
            let c: Vec<f64> = (0..n * n)
                .map(|_| {
                    if trial % 2 == 0 {
                        rng.gen_range(-10.0..10.0)
                    } else {
                        rng.gen_range(0..6) as f64
                    }
                })
                .collect();
            let m = CostMatrix::new(&c, n)?;
            if hungarian(m).cost != brute_force_assignment(m)?.cost {
                mismatches += 1;
            }
        }
        Ok((mismatches == 0, format!("{mismatches} of {count} costs differ")))
    })
}

/// DTW equals exhaustive path enumeration exactly, lengths ≤ 6.
pub fn dtw_oracle(count: usize) -> CheckOutcome {
    timed("dtw vs path enumeration", secs(10), || {
        let mut rng = seed::rng(0xD7A);
        let mut mismatches = 0;
        for _ in 0..count {
            let d = rng.gen_range(1..=4);
            let mut series = || -> Result<FrameSeries> {
                let n = rng.gen_range(1..=6);
                FrameSeries::new(
                    (0..n * d).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                    n,
                    d,
                    1,
                    FeatureKind::Mfcc,
                )
            };
            let (a, b) = (series()?, series()?);
            if metrics::dtw_l1(&a, &b)? != oracles::dtw_exhaustive(&a, &b)? {
                mismatches += 1;
            }
        }
        Ok((mismatches == 0, format!("{mismatches} of {count} distances differ")))
    })
}

/// Closed-form spectral W1 matches the transport LP within 1e-9.
pub fn sot_oracle(count: usize) -> CheckOutcome {
    timed("spectral W1 vs transport LP", secs(30), || {
        let mut rng = seed::rng(0x507);
        let mut worst: f64 = 0.0;
        for trial in 0..count {
            let n = rng.gen_range(2..=16);
            let frame = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
                (0..n)
                    .map(|_| {
                        if trial % 3 == 0 && rng.gen_bool(0.5) {
                            0.0
                        } else {
                            rng.gen_range(0.0..3.0)
                        }
                    })
                    .collect()
            };
            let (p, q) = (frame(&mut rng), frame(&mut rng));
            let pos: Vec<f64> = (0..n).map(|b| b as f64 / (n - 1) as f64).collect();
            let lp = oracles::transport_lp(&metrics::normalize_frame(&p), &metrics::normalize_frame(&q), &pos)?;
            worst = worst.max((metrics::spectral_w1(&p, &q)? - lp).abs());
        }
        Ok((worst <= 1e-9, format!("max |W1 − LP| = {worst:.2e} (bound 1e-9)")))
    })
}

// ---- gradients ------------------------------------------------------------

const GRAD_TOL: f64 = 1e-4;

fn rand_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// `Σ out ⊙ w` for a fixed random `w`, so no gradient vanishes by symmetry.
fn project(g: &mut Graph<'_>, out: Var, salt: u64) -> Result<Var> {
    let w = rand_tensor(g.shape(out), &mut seed::rng(salt));
    let w = g.constant(w);
    let p = g.mul(out, w)?;
    Ok(g.sum(p))
}

fn grad_outcome(store: &mut ParamStore, f: impl Fn(&mut Graph<'_>) -> Result<Var>) -> Result<(bool, String)> {
    let report = grad_check(store, f, &GradCheckOptions::default())?;
    let err = report.max_rel_error();
    let worst = report.worst().map(|(n, _)| n.to_string()).unwrap_or_default();
    Ok((
        err <= GRAD_TOL,
        format!("max relative error {err:.2e} at {worst} (bound 1e-4)"),
    ))
}

type OpCase = (&'static str, Vec<Vec<usize>>, fn(&mut Graph<'_>, &[Var]) -> Result<Var>);

fn op_cases() -> Vec<OpCase> {
    vec![
        ("matmul", vec![vec![2, 3, 4], vec![4, 5]], |g, v| g.matmul(v[0], v[1])),
        ("bmm", vec![vec![2, 3, 4], vec![2, 4, 5]], |g, v| {
            g.bmm(v[0], v[1], false)
        }),
        ("bmm_transposed", vec![vec![2, 3, 4], vec![2, 5, 4]], |g, v| {
            g.bmm(v[0], v[1], true)
        }),
        ("add_broadcast", vec![vec![3, 4], vec![1, 4]], |g, v| g.add(v[0], v[1])),
        ("sub_broadcast", vec![vec![3, 1], vec![3, 4]], |g, v| g.sub(v[0], v[1])),
        ("mul_broadcast", vec![vec![2, 3, 4], vec![2, 1, 4]], |g, v| {
            g.mul(v[0], v[1])
        }),
        ("scale", vec![vec![5]], |g, v| Ok(g.scale(v[0], -1.7))),
        ("add_scalar", vec![vec![5]], |g, v| Ok(g.add_scalar(v[0], 0.3))),
        ("gelu", vec![vec![3, 4]], |g, v| Ok(g.gelu(v[0]))),
        ("relu", vec![vec![3, 4]], |g, v| Ok(g.relu(v[0]))),
        ("square", vec![vec![3, 4]], |g, v| Ok(g.square(v[0]))),
        ("abs", vec![vec![3, 4]], |g, v| Ok(g.abs(v[0]))),
        ("layer_norm", vec![vec![3, 6]], |g, v| Ok(g.layer_norm(v[0]))),
        ("softmax", vec![vec![3, 5]], |g, v| Ok(g.softmax(v[0]))),
        ("permute", vec![vec![2, 3, 4]], |g, v| g.permute(v[0], &[2, 0, 1])),
        ("transpose", vec![vec![3, 4]], |g, v| g.transpose(v[0])),
        ("reshape", vec![vec![3, 4]], |g, v| g.reshape(v[0], &[2, 6])),
        ("slice_last", vec![vec![3, 6]], |g, v| g.slice_last(v[0], 2, 3)),
        ("concat_last", vec![vec![3, 2], vec![3, 4]], |g, v| {
            g.concat_last(&[v[0], v[1]])
        }),
        ("select_rows", vec![vec![4, 3], vec![1, 3]], |g, v| {
            g.select_rows(v[0], v[1], &[false, true, false, true])
        }),
        ("conv1d", vec![vec![2, 3, 11], vec![4, 3, 5], vec![4]], |g, v| {
            g.conv1d(v[0], v[1], Some(v[2]), 1, 2)
        }),
        ("conv1d_strided", vec![vec![2, 3, 11], vec![4, 3, 5]], |g, v| {
            g.conv1d(v[0], v[1], None, 3, 2)
        }),
        ("sum", vec![vec![3, 4]], |g, v| Ok(g.sum(v[0]))),
        ("mean", vec![vec![3, 4]], |g, v| Ok(g.mean(v[0]))),
        ("sum_last", vec![vec![3, 4]], |g, v| Ok(g.sum_last(v[0]))),
        ("min_last", vec![vec![3, 4]], |g, v| Ok(g.min_last(v[0]))),
    ]
}

/// One check per primitive op.
pub fn op_gradients() -> Vec<CheckOutcome> {
    op_cases()
        .into_iter()
        .enumerate()
        .map(|(i, (name, shapes, op))| {
            timed(&format!("gradient {name}"), secs(30), || {
                let mut rng = seed::rng(0x6AD + i as u64);
                let mut store = ParamStore::new();
                let ids: Vec<_> = shapes
                    .iter()
                    .enumerate()
                    .map(|(j, s)| store.add(format!("in{j}"), rand_tensor(s, &mut rng)))
                    .collect();
                grad_outcome(&mut store, |g| {
                    let vars: Vec<Var> = ids.iter().map(|&id| g.param(id)).collect();
                    let out = op(g, &vars)?;
                    project(g, out, 0xF00 + i as u64)
                })
            })
        })
        .collect()
}

/// Registers a layer's parameters and returns a scalar loss over them.
type LossBuilder = dyn Fn(&mut ParamStore, &mut rand_chacha::ChaCha8Rng) -> Box<dyn Fn(&mut Graph<'_>) -> Result<Var>>;

/// Layer-level checks on width-8, two-layer configurations.
pub fn layer_gradients() -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    let mut check = |name: &str, build: &LossBuilder| {
        out.push(timed(&format!("gradient {name}"), secs(60), || {
            let mut rng = seed::rng(0x1A7);
            let mut store = ParamStore::new();
            let f = build(&mut store, &mut rng);
            grad_outcome(&mut store, |g| f(g))
        }));
    };
    check("linear", &|s, r| {
        let l = Linear::new(s, "l", 4, 3, r);
        let x = rand_tensor(&[2, 4], r);
        Box::new(move |g| {
            let xv = g.constant(x.clone());
            let y = l.forward(g, xv)?;
            project(g, y, 1)
        })
    });
    check("affine layer norm", &|s, r| {
        let l = LayerNorm::new(s, "ln", 8);
        let x = rand_tensor(&[3, 8], r);
        Box::new(move |g| {
            let xv = g.constant(x.clone());
            let y = l.forward(g, xv)?;
            project(g, y, 2)
        })
    });
    check("attention", &|s, r| {
        let l = SelfAttention::new(s, "att", 8, 2, r);
        let x = rand_tensor(&[2, 3, 8], r);
        Box::new(move |g| {
            let xv = g.constant(x.clone());
            let y = l.forward(g, xv)?;
            project(g, y, 3)
        })
    });
    check("dit", &|s, r| {
        let cfg = DitConfig {
            d: 8,
            layers: 2,
            heads: 2,
            ffn_hidden: 16,
            d_cond: 5,
        };
        let l = Dit::new(s, "dit", cfg, r);
        let x = rand_tensor(&[2, 3, 8], r);
        let c = rand_tensor(&[2, 5], r);
        Box::new(move |g| {
            let xv = g.constant(x.clone());
            let cv = g.constant(c.clone());
            let y = l.forward(g, xv, cv)?;
            project(g, y, 4)
        })
    });
    check("cnn encoder", &|s, r| {
        let cfg = CnnConfig {
            n_samples: 32,
            channels: 2,
            blocks: 2,
            kernel: 5,
            down_stride: 3,
            out_dim: 8,
        };
        let l = CnnEncoder::new(s, "enc", cfg, r);
        let audio: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..32).map(|_| r.gen_range(-1.0..1.0)).collect())
            .collect();
        let refs: Vec<&[f64]> = audio.iter().map(Vec::as_slice).collect();
        let spec = l.spectra(&refs).unwrap();
        Box::new(move |g| {
            let sv = g.constant(spec.clone());
            let y = l.forward(g, sv)?;
            project(g, y, 5)
        })
    });
    check("param2tok", &|s, r| {
        let cfg = Param2TokConfig {
            n_params: 6,
            n_tokens: 2,
            d: 8,
            activation: Activation::Gelu,
        };
        let l = Param2Tok::new(s, "p2t", cfg, r);
        let x = rand_tensor(&[3, 6], r);
        Box::new(move |g| {
            let xv = g.constant(x.clone());
            let t = l.forward(g, xv)?;
            let t = g.gelu(t);
            let y = l.inverse(g, t)?;
            let a = project(g, y, 6)?;
            let b = l.l1_penalty(g);
            g.add(a, b)
        })
    });
    out
}

/// Toy configuration for the full-loss checks: k = 2, width 8, 2 layers.
pub fn toy_config(model: ModelKind, task: TaskVariant) -> ExperimentConfig {
    ExperimentConfig {
        model,
        k: 2,
        task,
        batch_size: 3,
        sampler_steps: 8,
        arch: ArchConfig::toy(),
        ..Default::default()
    }
}

/// Every training loss, differentiated end to end through the model.
pub fn loss_gradients() -> Vec<CheckOutcome> {
    let losses = [
        (ModelKind::FfnMse, "loss MSE"),
        (ModelKind::FfnSort, "loss Sort-MSE"),
        (ModelKind::FfnChamfer, "loss Chamfer"),
        (ModelKind::CnfEquivariant, "loss CFM+OT (tokens)"),
        (ModelKind::CnfParam2Tok, "loss CFM+OT+L1 (Param2Tok)"),
        (ModelKind::CnfMlp, "loss CFM+OT (MLP)"),
    ];
    losses
        .into_iter()
        .map(|(kind, name)| {
            timed(&format!("gradient {name}"), secs(120), || {
                let cfg = toy_config(kind, TaskVariant::Symmetric);
                let mut model = Model::build(&cfg)?;
                let mut xs = Vec::new();
                let mut ys = Vec::new();
                for i in 0..cfg.batch_size {
                    let x = sample_params(cfg.k, cfg.task, 50 + i as u64);
                    ys.push(render(&x, cfg.k, cfg.task, cfg.arch.n_samples)?.samples);
                    xs.extend(x.data);
                }
                let refs: Vec<&[f64]> = ys.iter().map(Vec::as_slice).collect();
                // The graph reads weights from the store passed to the checker.
                let mut store = std::mem::take(&mut model.store);
                grad_outcome(&mut store, |g| model.loss(g, &xs, &refs, &mut seed::rng(7)))
            })
        })
        .collect()
}

pub fn grad_suite() -> Vec<CheckOutcome> {
    let mut out = op_gradients();
    out.extend(layer_gradients());
    out.extend(loss_gradients());
    out
}

// ---- equivariance ---------------------------------------------------------

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

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// DiT output commutes with token permutations.
pub fn dit_equivariance(trials: usize) -> CheckOutcome {
    timed("dit permutation equivariance", secs(60), || {
        let mut rng = seed::rng(0xE0);
        let mut worst: f64 = 0.0;
        for trial in 0..trials {
            let heads = [1, 2, 4][trial % 3];
            let d = heads * rng.gen_range(2..=8);
            let cfg = DitConfig {
                d,
                layers: rng.gen_range(1..=3),
                heads,
                ffn_hidden: 2 * d,
                d_cond: rng.gen_range(1..=6),
            };
            let mut store = ParamStore::new();
            let dit = Dit::new(&mut store, "dit", cfg, &mut rng);
            let n = rng.gen_range(2..=7);
            let b = rng.gen_range(1..=3);
            let x = rand_tensor(&[b, n, d], &mut rng);
            let c = rand_tensor(&[b, cfg.d_cond], &mut rng);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let run = |x: Tensor| -> Result<Tensor> {
                let mut g = Graph::with_params(&store);
                let xv = g.constant(x);
                let cv = g.constant(c.clone());
                let y = dit.forward(&mut g, xv, cv)?;
                Ok(g.value(y).clone())
            };
            let lhs = run(permute_tokens(&x, &perm))?;
            let rhs = permute_tokens(&run(x)?, &perm);
            worst = worst.max(lhs.max_abs_diff(&rhs));
        }
        Ok((
            worst <= 1e-6,
            format!("max deviation {worst:.2e} over {trials} configs (bound 1e-6)"),
        ))
    })
}

/// RK4 sampling from oscillator-permuted noise yields the permuted sample.
pub fn sampler_equivariance(trials: usize) -> CheckOutcome {
    timed("sampler permutation equivariance", secs(60), || {
        let cfg = ExperimentConfig {
            k: 3,
            sampler_steps: 20,
            ..toy_config(ModelKind::CnfEquivariant, TaskVariant::Symmetric)
        };
        let model = Model::build(&cfg)?;
        let mut rng = seed::rng(0xE1);
        let mut worst: f64 = 0.0;
        for trial in 0..trials {
            let x = sample_params(cfg.k, cfg.task, trial as u64);
            let y = render(&x, cfg.k, cfg.task, cfg.arch.n_samples)?.samples;
            let x0 = ParamVector {
                data: crate::flow::standard_normal(cfg.param_dim(), &mut rng),
            };
            let mut perm: Vec<usize> = (0..cfg.k).collect();
            perm.shuffle(&mut rng);
            let a = model.sample_from_noise(&[&y], &x0.data)?;
            let b = model.sample_from_noise(&[&y], &x0.permute_oscillators(cfg.k, &perm).data)?;
            let pa = ParamVector { data: a }.permute_oscillators(cfg.k, &perm);
            worst = worst.max(max_abs(&pa.data, &b));
        }
        Ok((
            worst <= 1e-5,
            format!("max deviation {worst:.2e} over {trials} samples (bound 1e-5)"),
        ))
    })
}

/// Rendering ignores oscillator order on the symmetric task and on the
/// gated task with the gate at +1.
pub fn render_invariance(trials: usize) -> CheckOutcome {
    timed("render permutation invariance", secs(60), || {
        let mut rng = seed::rng(0xE2);
        let mut worst: f64 = 0.0;
        for trial in 0..trials {
            let k = rng.gen_range(2..=6);
            let (task, x) = if trial % 2 == 0 {
                (
                    TaskVariant::Symmetric,
                    sample_params(k, TaskVariant::Symmetric, trial as u64),
                )
            } else {
                let mut x = sample_params(k, TaskVariant::Gated, trial as u64);
                x.data[3 * k] = 1.0;
                (TaskVariant::Gated, x)
            };
            let mut perm: Vec<usize> = (0..k).collect();
            perm.shuffle(&mut rng);
            let a = render(&x, k, task, 2048)?.samples;
            let b = render(&x.permute_oscillators(k, &perm), k, task, 2048)?.samples;
            worst = worst.max(max_abs(&a, &b));
        }
        Ok((
            worst <= 1e-9,
            format!("max deviation {worst:.2e} over {trials} signals (bound 1e-9)"),
        ))
    })
}

// ---- fixture --------------------------------------------------------------

pub fn fixture() -> CheckOutcome {
    timed("conditional equivariance fixture", secs(1), || {
        let r = conditional_symmetry_fixture(0.3, 0.7, 0.5, 0.2, 0.9)?;
        Ok((
            r.passes(),
            format!(
                "gate on gap {:e}, gate off gap {:.3}, a = b gap {:e}",
                r.gate_on_diff, r.gate_off_diff, r.stabilizer_diff
            ),
        ))
    })
}

// ---- metric identities ----------------------------------------------------

pub fn metric_identities(trials: usize) -> CheckOutcome {
    timed("metric identities", secs(60), || {
        let mut rng = seed::rng(0x3E7);
        let mut failures = Vec::new();
        let sr = crate::kosc::DEFAULT_SAMPLE_RATE;
        for trial in 0..trials {
            let k = rng.gen_range(1..=6);
            let x = sample_params(k, TaskVariant::Symmetric, rng.gen());
            let xh = sample_params(k, TaskVariant::Symmetric, rng.gen());
            let mut perm: Vec<usize> = (0..k).collect();
            perm.shuffle(&mut rng);
            if metrics::lac(&x.permute_oscillators(k, &perm).data, &xh.data, k)? != metrics::lac(&x.data, &xh.data, k)?
            {
                failures.push(format!("lac target permutation (trial {trial})"));
            }
            let (a, b) = (
                sample_params(1, TaskVariant::Symmetric, rng.gen()),
                sample_params(1, TaskVariant::Symmetric, rng.gen()),
            );
            if metrics::lac(&a.data, &b.data, 1)? != metrics::mse(&a.data, &b.data)? {
                failures.push(format!("lac = mse at k = 1 (trial {trial})"));
            }
            if trial % 5 != 0 {
                continue;
            }
            let y = render(&x, k, TaskVariant::Symmetric, 2048)?.samples;
            let yh = render(&xh, k, TaskVariant::Symmetric, 2048)?.samples;
            type Dist = fn(&[f64], &[f64], f64) -> Result<f64>;
            let dists: [(&str, Dist); 4] = [
                ("lsd", |a, b, _| metrics::lsd(a, b)),
                ("mss", metrics::mss),
                ("wmfcc", metrics::wmfcc),
                ("sot", |a, b, sr| {
                    metrics::sot(a, b, sr, metrics::SOT_WIN_MS, metrics::SOT_HOP_MS)
                }),
            ];
            for (name, f) in dists {
                if f(&y, &y, sr)? != 0.0 {
                    failures.push(format!("{name} not zero on identical signals"));
                }
                let (ab, ba) = (f(&y, &yh, sr)?, f(&yh, &y, sr)?);
                if (ab - ba).abs() > 1e-12 * ab.abs().max(1.0) {
                    failures.push(format!("{name} asymmetric: {ab} vs {ba}"));
                }
            }
            let c = rng.gen_range(0.1..10.0);
            let scaled: Vec<f64> = yh.iter().map(|v| c * v).collect();
            let (r1, r2) = (metrics::rms_cosine(&y, &yh)?, metrics::rms_cosine(&y, &scaled)?);
            if (r1 - r2).abs() > 1e-12 {
                failures.push(format!("rms_cosine scale dependence {r1} vs {r2}"));
            }
        }
        Ok((
            failures.is_empty(),
            if failures.is_empty() {
                format!("{trials} trials, all identities hold")
            } else {
                failures.join("; ")
            },
        ))
    })
}

// ---- determinism ----------------------------------------------------------

/// Datasets, checkpoints and CSV reports reproduce byte for byte.
pub fn determinism() -> CheckOutcome {
    timed("determinism", secs(120), || {
        let root = std::env::temp_dir().join(format!("symflow-determinism-{}", std::process::id()));
        let result = determinism_in(&root);
        let _ = std::fs::remove_dir_all(&root);
        result
    })
}

fn determinism_in(root: &std::path::Path) -> Result<(bool, String)> {
    let dcfg = DatasetConfig {
        k: 2,
        variant: TaskVariant::Symmetric,
        count: 24,
        seed: 11,
        n_samples: 64,
    };
    let mut files = Vec::new();
    for run in 0..2 {
        let dir = root.join(format!("data{run}"));
        generate_dataset(&dcfg, &dir)?;
        let mut bytes = Vec::new();
        for f in [
            crate::kosc::dataset::META_FILE,
            crate::kosc::dataset::PARAMS_FILE,
            crate::kosc::dataset::AUDIO_FILE,
        ] {
            bytes.push(std::fs::read(dir.join(f))?);
        }
        files.push(bytes);
    }
    let data_same = files[0] == files[1];
    let data = Dataset::open(&root.join("data0"))?;
    let mut ckpts = Vec::new();
    let mut csvs = Vec::new();
    for kind in [ModelKind::FfnMse, ModelKind::CnfEquivariant] {
        let cfg = ExperimentConfig {
            steps: 3,
            ..toy_config(kind, TaskVariant::Symmetric)
        };
        for _ in 0..2 {
            let out = train(&cfg, &data, None)?;
            ckpts.push(out.checkpoint.to_bytes());
            let opts = EvalOptions {
                limit: Some(8),
                ..Default::default()
            };
            csvs.push(evaluate(&out.model, &data, &opts)?.to_csv());
        }
    }
    let ckpt_same = ckpts[0] == ckpts[1] && ckpts[2] == ckpts[3];
    let csv_same = csvs[0] == csvs[1] && csvs[2] == csvs[3];
    Ok((
        data_same && ckpt_same && csv_same,
        format!("datasets identical: {data_same}, checkpoints identical: {ckpt_same}, CSVs identical: {csv_same}"),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_suites_pass() {
        for c in [
            assignment_oracle(50),
            dtw_oracle(20),
            sot_oracle(10),
            fixture(),
            metric_identities(5),
        ] {
            assert!(c.passed, "{c}");
        }
    }

    #[test]
    fn op_gradient_checks_pass() {
        for c in op_gradients() {
            assert!(c.passed, "{c}");
        }
    }

    #[test]
    fn suite_names_parse() {
        for s in Suite::ALL {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert!("speed".parse::<Suite>().is_err());
    }

    #[test]
    fn outcome_line_format() {
        let c = timed("x", secs(5), || Ok((true, "fine".into())));
        assert!(c.to_string().starts_with("PASS x: fine ("));
        let c = timed("y", secs(5), || Err(invalid("boom")));
        assert!(!c.passed && c.to_string().contains("boom"));
    }
}
