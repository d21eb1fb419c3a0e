//! Test-set scoring: infer, clip, re-render, and compare.

use rayon::prelude::*;

use super::model::Model;
use crate::error::{invalid, shape, Result};
use crate::kosc::dataset::Dataset;
use crate::kosc::{render, ParamVector, TaskVariant, DEFAULT_SAMPLE_RATE};
use crate::metrics::{self, MetricReport};
use crate::seed;

#[derive(Debug, Clone)]
pub struct EvalOptions {
    /// Root of the per-item sampling seeds.
    pub seed: u64,
    /// Score only the first `limit` items.
    pub limit: Option<usize>,
    /// Also compute MSS, wMFCC, SOT and RMS-cosine.
    pub extended: bool,
    /// Items per inference batch. Fixed so results do not depend on the
    /// number of worker threads.
    pub chunk: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            seed: 0,
            limit: None,
            extended: false,
            chunk: 16,
        }
    }
}

/// Column names for a task.
pub fn metric_names(task: TaskVariant, extended: bool) -> Vec<String> {
    let mut names = vec!["lsd"];
    match task {
        TaskVariant::Symmetric => names.push("lac"),
        TaskVariant::Asymmetric => names.push("mse"),
        TaskVariant::Gated => names.extend(["lac", "mse"]),
    }
    if extended {
        names.extend(["mss", "wmfcc", "sot", "rms_cosine"]);
    }
    names.into_iter().map(String::from).collect()
}

/// Scores one estimate `xh` against target parameters `x`. Both signals are
/// rendered in 64-bit precision; `xh` is clipped to `[-1, 1]` first.
pub fn score_item(
    k: usize,
    task: TaskVariant,
    n_samples: usize,
    x: &[f64],
    xh: &[f64],
    extended: bool,
) -> Result<Vec<f64>> {
    let target = ParamVector::new(x.to_vec(), k, task)?;
    let est = ParamVector { data: xh.to_vec() }.clipped();
    est.validate(k, task)?;
    let y = render(&target, k, task, n_samples)?.samples;
    let yh = render(&est, k, task, n_samples)?.samples;
    let mut out = vec![metrics::lsd(&y, &yh)?];
    match task {
        TaskVariant::Symmetric => out.push(metrics::lac(x, &est.data, k)?),
        TaskVariant::Asymmetric => out.push(metrics::mse(x, &est.data)?),
        TaskVariant::Gated => {
            out.push(metrics::lac(&x[..3 * k], &est.data[..3 * k], k)?);
            out.push(metrics::mse(x, &est.data)?);
        }
    }
    if extended {
        let sr = DEFAULT_SAMPLE_RATE;
        out.push(metrics::mss(&y, &yh, sr)?);
        out.push(metrics::wmfcc(&y, &yh, sr)?);
        out.push(metrics::sot(&y, &yh, sr, metrics::SOT_WIN_MS, metrics::SOT_HOP_MS)?);
        out.push(metrics::rms_cosine(&y, &yh)?);
    }
    Ok(out)
}

pub fn check_compatible(model: &Model, data: &Dataset) -> Result<()> {
    let c = &model.cfg;
    let m = &data.meta;
    if m.k != c.k || m.variant != c.task {
        return Err(invalid(format!(
            "checkpoint is for k={} {}, dataset is k={} {}",
            c.k, c.task, m.k, m.variant
        )));
    }
    if c.model != super::ModelKind::Random && m.n_samples != c.arch.n_samples {
        return Err(shape(format!(
            "checkpoint expects {} samples per signal, dataset has {}",
            c.arch.n_samples, m.n_samples
        )));
    }
    Ok(())
}

pub fn evaluate(model: &Model, data: &Dataset, opts: &EvalOptions) -> Result<MetricReport> {
    check_compatible(model, data)?;
    if opts.chunk == 0 {
        return Err(invalid("evaluation chunk must be at least 1"));
    }
    let n = opts.limit.map_or(data.len(), |l| l.min(data.len()));
    let (k, task, ns) = (model.cfg.k, model.cfg.task, data.meta.n_samples);
    let starts: Vec<usize> = (0..n).step_by(opts.chunk).collect();
    let chunks: Vec<Vec<Vec<f64>>> = starts
        .par_iter()
        .map(|&start| {
            let end = (start + opts.chunk).min(n);
            let audio: Vec<Vec<f64>> = (start..end).map(|i| data.audio(i)).collect();
            let refs: Vec<&[f64]> = audio.iter().map(Vec::as_slice).collect();
            let seeds: Vec<u64> = (start..end).map(|i| seed::derive(opts.seed, i as u64)).collect();
            let est = model.infer(&refs, &seeds)?;
            (start..end)
                .zip(est)
                .map(|(i, xh)| score_item(k, task, ns, &data.params(i), &xh, opts.extended))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut report = MetricReport::new(metric_names(task, opts.extended));
    for (i, row) in chunks.into_iter().flatten().enumerate() {
        report.push(i.to_string(), row)?;
    }
    Ok(report)
}
