//! Model-ordering experiment: trains the roster on both tasks, scores the
//! test sets, and compares models with one-sided paired signed-rank tests.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use super::checks::CheckOutcome;
use super::config::{ArchConfig, ExperimentConfig, ModelKind, DEFAULT_TEST_COUNT, DEFAULT_TRAIN_COUNT};
use super::eval::{evaluate, EvalOptions};
use super::train::train;
use crate::error::Result;
use crate::kosc::dataset::{Dataset, DatasetConfig};
use crate::kosc::TaskVariant;
use crate::metrics::MetricReport;
use crate::stats::{median, wilcoxon_signed_rank};

#[derive(Debug, Clone)]
pub struct OrderingConfig {
    pub k: usize,
    pub train_count: usize,
    pub test_count: usize,
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub arch: ArchConfig,
    /// Significance level of every one-sided comparison.
    pub alpha: f64,
    /// Allowed ratio of Param2Tok's median to the best model's median.
    pub on_par_ratio: f64,
}

impl OrderingConfig {
    /// The standard budget: k = 4, 100k training examples, 20k steps of
    /// batch 128, full-size networks.
    pub fn standard() -> Self {
        OrderingConfig {
            k: 4,
            train_count: DEFAULT_TRAIN_COUNT,
            test_count: DEFAULT_TEST_COUNT,
            steps: 20_000,
            batch_size: 128,
            lr: 1e-4,
            seed: 0,
            arch: ArchConfig::default(),
            alpha: 0.01,
            on_par_ratio: 1.5,
        }
    }
}

/// Per-item test scores of every model on one task.
pub type Scores = BTreeMap<ModelKind, MetricReport>;

fn dataset(cfg: &OrderingConfig, task: TaskVariant, count: usize, stream: u64) -> Result<Dataset> {
    Dataset::generate(&DatasetConfig {
        k: cfg.k,
        variant: task,
        count,
        seed: crate::seed::derive(cfg.seed, stream),
        n_samples: cfg.arch.n_samples,
    })
}

/// Trains and scores every model valid for `task`.
pub fn score_task(cfg: &OrderingConfig, task: TaskVariant) -> Result<Scores> {
    let stream = if task == TaskVariant::Symmetric { 10 } else { 20 };
    let train_set = dataset(cfg, task, cfg.train_count, stream)?;
    let test_set = dataset(cfg, task, cfg.test_count, stream + 1)?;
    let mut out = Scores::new();
    for model in ModelKind::ALL {
        let ecfg = ExperimentConfig {
            model,
            k: cfg.k,
            task,
            steps: cfg.steps,
            batch_size: cfg.batch_size,
            lr: cfg.lr,
            seed: cfg.seed,
            arch: cfg.arch.clone(),
            ..Default::default()
        };
        if ecfg.validate().is_err() {
            continue;
        }
        let trained = train(&ecfg, &train_set, None)?;
        let opts = EvalOptions {
            seed: crate::seed::derive(cfg.seed, 99),
            ..Default::default()
        };
        out.insert(model, evaluate(&trained.model, &test_set, &opts)?);
    }
    Ok(out)
}

/// One-sided test that `a`'s metric tends to be below `b`'s.
fn less(name: &str, scores: &Scores, a: ModelKind, b: ModelKind, metric: &str, alpha: f64) -> CheckOutcome {
    let start = Instant::now();
    let (passed, detail) = match (
        scores.get(&a).and_then(|r| r.column(metric)),
        scores.get(&b).and_then(|r| r.column(metric)),
    ) {
        (Some(x), Some(y)) => match wilcoxon_signed_rank(&x, &y) {
            Ok(t) => {
                let (mx, my) = (median(&x), median(&y));
                (
                    mx < my && t.p_less < alpha,
                    format!(
                        "median {metric} {a} {mx:.4} vs {b} {my:.4}, p = {:.2e}, n = {}",
                        t.p_less,
                        x.len()
                    ),
                )
            }
            Err(e) => (false, format!("error: {e}")),
        },
        _ => (false, format!("missing scores for {a} or {b}")),
    };
    CheckOutcome {
        name: name.into(),
        passed,
        detail,
        elapsed: start.elapsed(),
    }
}

fn on_par(name: &str, scores: &Scores, a: ModelKind, b: ModelKind, metric: &str, ratio: f64) -> CheckOutcome {
    let (passed, detail) = match (
        scores.get(&a).and_then(|r| r.column(metric)),
        scores.get(&b).and_then(|r| r.column(metric)),
    ) {
        (Some(x), Some(y)) => {
            let (mx, my) = (median(&x), median(&y));
            (
                mx <= ratio * my,
                format!("median {metric} {a} {mx:.4} vs {ratio} x {b} {:.4}", ratio * my),
            )
        }
        _ => (false, format!("missing scores for {a} or {b}")),
    };
    CheckOutcome {
        name: name.into(),
        passed,
        detail,
        elapsed: Duration::ZERO,
    }
}

/// The ordering assertions over precomputed scores.
pub fn judge(cfg: &OrderingConfig, sym: &Scores, asym: &Scores) -> Vec<CheckOutcome> {
    use ModelKind::*;
    let a = cfg.alpha;
    let mut out = vec![
        less(
            "symmetric: CNF-Equivariant LAC below FFN-MSE",
            sym,
            CnfEquivariant,
            FfnMse,
            "lac",
            a,
        ),
        less(
            "symmetric: CNF-Equivariant LSD below FFN-MSE",
            sym,
            CnfEquivariant,
            FfnMse,
            "lsd",
            a,
        ),
        less(
            "asymmetric: FFN-MSE MSE below CNF-Equivariant",
            asym,
            FfnMse,
            CnfEquivariant,
            "mse",
            a,
        ),
        on_par(
            "symmetric: CNF-Param2Tok LAC on par with CNF-Equivariant",
            sym,
            CnfParam2Tok,
            CnfEquivariant,
            "lac",
            cfg.on_par_ratio,
        ),
        on_par(
            "asymmetric: CNF-Param2Tok MSE on par with FFN-MSE",
            asym,
            CnfParam2Tok,
            FfnMse,
            "mse",
            cfg.on_par_ratio,
        ),
    ];
    for (task, scores, metric) in [("symmetric", sym, "lac"), ("asymmetric", asym, "mse")] {
        for model in scores.keys().copied().filter(|m| *m != Random) {
            out.push(less(
                &format!("{task}: {model} beats Random on {metric}"),
                scores,
                model,
                Random,
                metric,
                a,
            ));
        }
    }
    out
}

pub fn run(cfg: &OrderingConfig) -> Result<Vec<CheckOutcome>> {
    let sym = score_task(cfg, TaskVariant::Symmetric)?;
    let asym = score_task(cfg, TaskVariant::Asymmetric)?;
    Ok(judge(cfg, &sym, &asym))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(metric: &str, values: &[f64]) -> MetricReport {
        let mut r = MetricReport::new(vec![metric.into()]);
        for (i, v) in values.iter().enumerate() {
            r.push(i.to_string(), vec![*v]).unwrap();
        }
        r
    }

    #[test]
    fn judge_reads_orderings() {
        use ModelKind::*;
        let good: Vec<f64> = (0..100).map(|i| 0.01 * (i % 7) as f64).collect();
        let bad: Vec<f64> = good.iter().map(|v| v + 0.5).collect();
        let mut sym = Scores::new();
        let mut both = |m: ModelKind, lac: &[f64], lsd: &[f64]| {
            let mut r = MetricReport::new(vec!["lsd".into(), "lac".into()]);
            for i in 0..lac.len() {
                r.push(i.to_string(), vec![lsd[i], lac[i]]).unwrap();
            }
            sym.insert(m, r);
        };
        both(CnfEquivariant, &good, &good);
        both(CnfParam2Tok, &good, &good);
        both(FfnMse, &bad, &bad);
        both(Random, &bad.iter().map(|v| v + 1.0).collect::<Vec<_>>(), &bad);
        let mut asym = Scores::new();
        asym.insert(FfnMse, report("mse", &good));
        asym.insert(CnfParam2Tok, report("mse", &good));
        asym.insert(CnfEquivariant, report("mse", &bad));
        asym.insert(Random, report("mse", &bad.iter().map(|v| v + 1.0).collect::<Vec<_>>()));
        let out = judge(&OrderingConfig::standard(), &sym, &asym);
        assert!(out.iter().all(|c| c.passed), "{:#?}", out);
        // Swapping the roles flips the first comparison.
        let out = judge(&OrderingConfig::standard(), &asym, &sym);
        assert!(!out[0].passed);
    }

    #[test]
    fn tiny_pipeline_runs() {
        let cfg = OrderingConfig {
            k: 2,
            train_count: 8,
            test_count: 6,
            steps: 2,
            batch_size: 4,
            arch: ArchConfig {
                n_samples: 64,
                ..ArchConfig::toy()
            },
            ..OrderingConfig::standard()
        };
        let sym = score_task(&cfg, TaskVariant::Symmetric).unwrap();
        assert_eq!(sym.len(), 7);
        assert!(sym.values().all(|r| r.items.len() == 6));
    }
}
