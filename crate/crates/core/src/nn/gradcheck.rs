//! Central finite-difference verification of analytic gradients.

use super::graph::{Graph, Var};
use super::params::ParamStore;
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Relative step: `h = rel_step · max(|θ|, 1)`.
    pub rel_step: f64,
    /// Denominator floor for the relative error.
    pub floor: f64,
    /// Maximum entries probed per tensor (evenly strided); `None` probes all.
    pub max_entries: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            rel_step: 1e-5,
            floor: 1e-5,
            max_entries: Some(24),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// `(parameter name, max relative error)` per tensor.
    pub per_tensor: Vec<(String, f64)>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.per_tensor.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&(String, f64)> {
        self.per_tensor.iter().max_by(|a, b| a.1.total_cmp(&b.1))
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the gradient of the scalar built by `loss` against central
/// differences for every tensor in `store`. `loss` must be deterministic.
pub fn grad_check<F>(store: &mut ParamStore, loss: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::with_params(store);
        let l = loss(&mut g)?;
        g.backward(l)?.param_grads(store)
    };
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::with_params(s);
        let l = loss(&mut g)?;
        Ok(g.value(l).item())
    };
    let mut per_tensor = Vec::with_capacity(store.len());
    for id in store.ids().collect::<Vec<_>>() {
        let n = store.get(id).numel();
        let stride = match opts.max_entries {
            Some(m) if m > 0 && n > m => n.div_ceil(m),
            _ => 1,
        };
        let mut worst = 0.0f64;
        for j in (0..n).step_by(stride) {
            let orig = store.get(id).data()[j];
            let h = opts.rel_step * orig.abs().max(1.0);
            store.get_mut(id).data_mut()[j] = orig + h;
            let fp = eval(store)?;
            store.get_mut(id).data_mut()[j] = orig - h;
            let fm = eval(store)?;
            store.get_mut(id).data_mut()[j] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            worst = worst.max(relative_error(analytic[id.index()].data()[j], numeric, opts.floor));
        }
        per_tensor.push((store.name(id).to_string(), worst));
    }
    Ok(GradCheckReport { per_tensor })
}
