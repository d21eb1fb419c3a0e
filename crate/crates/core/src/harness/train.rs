//! Training loop: uniform minibatches, Adam, global-norm clipping.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::eval::{evaluate, EvalOptions};
use super::model::Model;
use crate::error::{invalid, Error, Result};
use crate::kosc::dataset::Dataset;
use crate::nn::{clip_grad_norm, Adam, Checkpoint, Graph, RngState};
use crate::seed;

/// Seed stream for batch indices and flow-matching draws.
const DATA_STREAM: u64 = 1;
/// Seed stream for validation sampling.
const VAL_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: u64,
    /// `train` or `val`.
    pub split: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub entries: Vec<LogEntry>,
}

impl TrainLog {
    fn push(&mut self, step: u64, split: &str, metric: &str, value: f64) {
        self.entries.push(LogEntry {
            step,
            split: split.into(),
            metric: metric.into(),
            value,
        });
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,split,metric,value\n");
        for e in &self.entries {
            writeln!(s, "{},{},{},{:?}", e.step, e.split, e.metric, e.value).unwrap();
        }
        s
    }

    /// Latest value logged for `metric` on `split`.
    pub fn last(&self, split: &str, metric: &str) -> Option<f64> {
        self.entries
            .iter()
            .rev()
            .find(|e| e.split == split && e.metric == metric)
            .map(|e| e.value)
    }
}

pub struct TrainOutcome {
    pub model: Model,
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
}

/// Trains `model.cfg` on `train_data`; `val_data` feeds the periodic
/// validation passes. Bit-identical results for identical inputs.
pub fn train(cfg: &super::ExperimentConfig, train_data: &Dataset, val_data: Option<&Dataset>) -> Result<TrainOutcome> {
    let mut model = Model::build(cfg)?;
    let mut log = TrainLog::default();
    if cfg.model == super::ModelKind::Random {
        let checkpoint = model.to_checkpoint(0, None, None)?;
        return Ok(TrainOutcome { model, checkpoint, log });
    }
    let m = &train_data.meta;
    if m.k != cfg.k || m.variant != cfg.task || m.n_samples != cfg.arch.n_samples {
        return Err(invalid(format!(
            "training data (k={}, {}, {} samples) does not match the config (k={}, {}, {} samples)",
            m.k, m.variant, m.n_samples, cfg.k, cfg.task, cfg.arch.n_samples
        )));
    }
    if train_data.is_empty() {
        return Err(invalid("training set is empty"));
    }
    let mut adam = Adam::new(&model.store, cfg.lr);
    let mut rng = seed::rng(seed::derive(cfg.seed, DATA_STREAM));
    let p = cfg.param_dim();
    let mut window = (0.0, 0u64);
    for step in 0..cfg.steps {
        let idx: Vec<usize> = (0..cfg.batch_size)
            .map(|_| rng.gen_range(0..train_data.len()))
            .collect();
        let mut x1 = Vec::with_capacity(idx.len() * p);
        let mut audio = Vec::with_capacity(idx.len());
        for &i in &idx {
            x1.extend(train_data.params(i));
            audio.push(train_data.audio(i));
        }
        let refs: Vec<&[f64]> = audio.iter().map(Vec::as_slice).collect();
        let grads = {
            let mut g = Graph::with_params(&model.store);
            let loss = match model.loss(&mut g, &x1, &refs, &mut rng) {
                Ok(l) => l,
                Err(Error::NonFinite(_)) => return Err(Error::Divergence { step, loss: f64::NAN }),
                Err(e) => return Err(e),
            };
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Divergence { step, loss: value });
            }
            window.0 += value;
            window.1 += 1;
            g.backward(loss)?.param_grads(&model.store)
        };
        let mut grads = grads;
        clip_grad_norm(&mut grads, cfg.grad_clip);
        match adam.step(&mut model.store, &grads) {
            Err(Error::NonFinite(_)) => return Err(Error::Divergence { step, loss: f64::NAN }),
            other => other?,
        }
        let done = step + 1;
        if done % cfg.log_every == 0 || done == cfg.steps {
            log.push(done, "train", "loss", window.0 / window.1 as f64);
            window = (0.0, 0);
        }
        if let Some(val) = val_data {
            if cfg.val_every > 0 && (done % cfg.val_every == 0 || done == cfg.steps) {
                let opts = EvalOptions {
                    seed: seed::derive(cfg.seed, VAL_STREAM),
                    limit: Some(cfg.val_items),
                    ..Default::default()
                };
                let report = evaluate(&model, val, &opts)?;
                for (name, v) in report.metrics.iter().zip(report.means()) {
                    log.push(done, "val", name, v);
                }
            }
        }
    }
    let checkpoint = model.to_checkpoint(cfg.steps, Some(&adam), Some(&RngState::capture(&rng)))?;
    Ok(TrainOutcome { model, checkpoint, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{ArchConfig, ExperimentConfig, ModelKind};
    use crate::kosc::dataset::DatasetConfig;
    use crate::kosc::TaskVariant;

    fn data(count: usize, task: TaskVariant, seed: u64) -> Dataset {
        Dataset::generate(&DatasetConfig {
            k: 2,
            variant: task,
            count,
            seed,
            n_samples: 64,
        })
        .unwrap()
    }

    fn cfg(model: ModelKind, steps: u64) -> ExperimentConfig {
        ExperimentConfig {
            model,
            k: 2,
            steps,
            batch_size: 4,
            lr: 1e-3,
            sampler_steps: 4,
            log_every: 1,
            arch: ArchConfig::toy(),
            ..Default::default()
        }
    }

    #[test]
    fn zero_steps_returns_initialization() {
        let d = data(8, TaskVariant::Symmetric, 1);
        let c = cfg(ModelKind::CnfEquivariant, 0);
        let out = train(&c, &d, None).unwrap();
        assert_eq!(out.model.store, Model::build(&c).unwrap().store);
        assert!(out.log.entries.is_empty());
    }

    #[test]
    fn training_is_bit_identical() {
        let d = data(16, TaskVariant::Symmetric, 2);
        for kind in [ModelKind::FfnChamfer, ModelKind::CnfParam2Tok] {
            let c = cfg(kind, 3);
            let a = train(&c, &d, Some(&d)).unwrap();
            let b = train(&c, &d, Some(&d)).unwrap();
            assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
            assert_eq!(a.log, b.log);
        }
    }

    #[test]
    fn validation_entries_are_logged() {
        let d = data(8, TaskVariant::Asymmetric, 3);
        let c = ExperimentConfig {
            task: TaskVariant::Asymmetric,
            val_every: 2,
            val_items: 4,
            ..cfg(ModelKind::FfnMse, 2)
        };
        let out = train(&c, &d, Some(&d)).unwrap();
        assert!(out.log.last("val", "mse").is_some());
        assert!(out.log.last("val", "lsd").is_some());
        assert!(out.log.to_csv().starts_with("step,split,metric,value\n1,train,loss,"));
    }

    #[test]
    fn huge_learning_rate_reports_divergence_step() {
        let d = data(8, TaskVariant::Symmetric, 4);
        let c = ExperimentConfig {
            lr: 1e200,
            ..cfg(ModelKind::FfnMse, 50)
        };
        match train(&c, &d, None) {
            Err(Error::Divergence { step, .. }) => assert!(step > 0 && step < 50),
            Err(e) => panic!("unexpected error {e}"),
            Ok(_) => panic!("expected divergence"),
        }
    }

    #[test]
    fn mismatched_data_rejected() {
        let d = data(4, TaskVariant::Asymmetric, 5);
        assert!(train(&cfg(ModelKind::FfnMse, 1), &d, None).is_err());
    }
}
