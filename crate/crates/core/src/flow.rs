//! Conditional flow matching on the straight-line path, with minibatch OT
//! pairing, conditioning dropout, and guided RK4 sampling.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::assign::ot_pair_minibatch;
use crate::error::{invalid, shape, Error, Result};
use crate::nn::{Graph, Tensor, Var};

/// Probability that a training example's conditioning is replaced by the
/// learned dropout vector.
pub const COND_DROPOUT: f64 = 0.1;
pub const DEFAULT_GUIDANCE: f64 = 2.0;
pub const DEFAULT_SAMPLER_STEPS: usize = 100;

/// `x_t = (1−t)·x0 + t·x1` and `u = x1 − x0`, row-wise with one `t` per row.
pub fn sample_path(x0: &[f64], x1: &[f64], t: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if x0.len() != x1.len() || t.is_empty() || !x0.len().is_multiple_of(t.len()) {
        return Err(shape(format!(
            "path endpoints of {} and {} values with {} times",
            x0.len(),
            x1.len(),
            t.len()
        )));
    }
    if t.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(invalid("flow time outside [0, 1]"));
    }
    let d = x0.len() / t.len();
    let mut xt = Vec::with_capacity(x0.len());
    let mut u = Vec::with_capacity(x0.len());
    for (i, (a, b)) in x0.iter().zip(x1).enumerate() {
        let ti = t[i / d];
        xt.push((1.0 - ti) * a + ti * b);
        u.push(b - a);
    }
    Ok((xt, u))
}

/// `v_u + s·(v_c − v_u)`.
pub fn guided_field(v_cond: &[f64], v_uncond: &[f64], s: f64) -> Vec<f64> {
    v_cond.iter().zip(v_uncond).map(|(c, u)| u + s * (c - u)).collect()
}

pub fn standard_normal(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coupling {
    /// Minimum total squared distance pairing within the batch.
    OptimalTransport,
    /// Noise row `j` paired with data row `j`.
    Independent,
}

/// Everything random in one flow-matching step, drawn from a single seed in
/// a fixed order (noise, times, dropout) so that changing the coupling
/// changes only the pairing.
#[derive(Debug, Clone)]
pub struct CfmBatch {
    pub batch: usize,
    pub dim: usize,
    /// Noise rows after pairing: row `j` is paired with data row `j`.
    pub x0: Vec<f64>,
    pub t: Vec<f64>,
    pub xt: Vec<f64>,
    pub u: Vec<f64>,
    /// `true` where the conditioning is replaced by the dropout vector.
    pub dropped: Vec<bool>,
}

pub fn prepare_cfm_batch(
    x1: &[f64],
    dim: usize,
    rng: &mut impl Rng,
    coupling: Coupling,
    p_drop: f64,
) -> Result<CfmBatch> {
    if dim == 0 || x1.is_empty() || !x1.len().is_multiple_of(dim) {
        return Err(shape(format!("{} data values with dimension {dim}", x1.len())));
    }
    let b = x1.len() / dim;
    let noise = standard_normal(b * dim, rng);
    let t: Vec<f64> = (0..b).map(|_| rng.gen::<f64>()).collect();
    let dropped: Vec<bool> = (0..b).map(|_| rng.gen::<f64>() < p_drop).collect();
    let x0 = match coupling {
        Coupling::Independent => noise,
        Coupling::OptimalTransport => {
            // Permute the noise, not the data, so conditioning stays aligned.
            let pairing = ot_pair_minibatch(x1, &noise, dim)?;
            let mut x0 = Vec::with_capacity(noise.len());
            for &src in &pairing.permutation {
                x0.extend_from_slice(&noise[src * dim..(src + 1) * dim]);
            }
            x0
        }
    };
    let (xt, u) = sample_path(&x0, x1, &t)?;
    Ok(CfmBatch {
        batch: b,
        dim,
        x0,
        t,
        xt,
        u,
        dropped,
    })
}

/// Batch mean of `‖v − u‖²` for a predicted field `v: [B, D]`.
pub fn cfm_loss(g: &mut Graph<'_>, v: Var, batch: &CfmBatch) -> Result<Var> {
    let target = g.constant(Tensor::new(vec![batch.batch, batch.dim], batch.u.clone())?);
    let diff = g.sub(v, target)?;
    let sq = g.square(diff);
    let s = g.sum(sq);
    let loss = g.scale(s, 1.0 / batch.batch as f64);
    if !g.value(loss).is_finite() {
        return Err(Error::NonFinite("flow matching loss".into()));
    }
    Ok(loss)
}

/// Time-dependent velocity over a row-major `[B, D]` state.
pub trait VectorField {
    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>>;
}

impl<F> VectorField for F
where
    F: Fn(&[f64], f64) -> Result<Vec<f64>>,
{
    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self(x, t)
    }
}

/// Classifier-free guided field built from one function evaluated with the
/// conditioning on (`true`) or replaced by the dropout vector (`false`).
pub struct Guided<F> {
    pub field: F,
    pub scale: f64,
}

impl<F> VectorField for Guided<F>
where
    F: Fn(&[f64], f64, bool) -> Result<Vec<f64>>,
{
    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let vc = (self.field)(x, t, true)?;
        if self.scale == 1.0 {
            return Ok(vc);
        }
        let vu = (self.field)(x, t, false)?;
        Ok(guided_field(&vc, &vu, self.scale))
    }
}

fn axpy(x: &[f64], a: f64, k: &[f64]) -> Vec<f64> {
    x.iter().zip(k).map(|(xi, ki)| xi + a * ki).collect()
}

/// Classical fixed-step RK4 from `t = 0` to `t = 1`.
pub fn integrate_rk4(field: &impl VectorField, x0: &[f64], steps: usize) -> Result<Vec<f64>> {
    if steps == 0 {
        return Err(invalid("sampler needs at least one step"));
    }
    let h = 1.0 / steps as f64;
    let mut x = x0.to_vec();
    for step in 0..steps {
        let t = step as f64 * h;
        let k1 = field.velocity(&x, t)?;
        let k2 = field.velocity(&axpy(&x, 0.5 * h, &k1), t + 0.5 * h)?;
        let k3 = field.velocity(&axpy(&x, 0.5 * h, &k2), t + 0.5 * h)?;
        let k4 = field.velocity(&axpy(&x, h, &k3), t + h)?;
        for i in 0..x.len() {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::IntegrationFailure { step });
        }
    }
    Ok(x)
}

/// Draws `x0 ~ N(0, I)` from `seed` and integrates the field to `t = 1`.
pub fn sample_rk4(field: &impl VectorField, dim: usize, steps: usize, seed: u64) -> Result<Vec<f64>> {
    let x0 = standard_normal(dim, &mut crate::seed::rng(seed));
    integrate_rk4(field, &x0, steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn path_endpoints() {
        let x0 = [0.1, -0.4, 2.0, 0.5];
        let x1 = [1.0, 0.3, -0.2, 0.7];
        let (xt, u) = sample_path(&x0, &x1, &[0.0, 1.0]).unwrap();
        assert_eq!(&xt[..2], &x0[..2]);
        assert_eq!(&xt[2..], &x1[2..]);
        assert_eq!(u[0], 0.9);
        let (xt, u) = sample_path(&x0, &x0, &[0.37, 0.8]).unwrap();
        assert_eq!(xt, x0);
        assert!(u.iter().all(|&v| v == 0.0));
        assert!(sample_path(&x0, &x1, &[1.5, 0.0]).is_err());
        assert!(sample_path(&x0, &x1[..3], &[0.5]).is_err());
    }

    #[test]
    fn guidance_cases() {
        let c = [1.0, -2.0];
        let u = [0.5, 4.0];
        assert_eq!(guided_field(&c, &u, 1.0), c);
        assert_eq!(guided_field(&c, &u, 0.0), u);
        assert_eq!(guided_field(&c, &c, 2.0), c);
    }

    #[test]
    fn oracle_field_gives_zero_loss() {
        let x1 = [0.2, 0.4, -0.6, 0.8, 0.1, -0.3];
        let b = prepare_cfm_batch(&x1, 2, &mut crate::seed::rng(3), Coupling::OptimalTransport, 0.1).unwrap();
        let mut g = Graph::new();
        let v = g.variable(Tensor::new(vec![3, 2], b.u.clone()).unwrap());
        let l = cfm_loss(&mut g, v, &b).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
    }

    #[test]
    fn ot_pairing_never_costs_more_than_identity() {
        let mut rng = crate::seed::rng(4);
        let x1 = standard_normal(16 * 3, &mut rng);
        for s in 0..50 {
            let ot = prepare_cfm_batch(&x1, 3, &mut crate::seed::rng(s), Coupling::OptimalTransport, 0.0).unwrap();
            let id = prepare_cfm_batch(&x1, 3, &mut crate::seed::rng(s), Coupling::Independent, 0.0).unwrap();
            let c = |b: &CfmBatch| b.u.iter().map(|v| v * v).sum::<f64>();
            assert!(c(&ot) <= c(&id) + 1e-12);
            assert_eq!(ot.t, id.t);
            assert_eq!(ot.dropped, id.dropped);
        }
    }

    #[test]
    fn dropout_rate_is_about_ten_percent() {
        let x1 = vec![0.0; 4000];
        let b = prepare_cfm_batch(&x1, 1, &mut crate::seed::rng(5), Coupling::Independent, COND_DROPOUT).unwrap();
        let frac = b.dropped.iter().filter(|&&d| d).count() as f64 / 4000.0;
        assert!((frac - 0.1).abs() < 0.02, "{frac}");
    }

    #[test]
    fn rk4_constant_field_is_exact() {
        let c = [0.5, -1.25, 3.0];
        let field = |_: &[f64], _: f64| Ok(c.to_vec());
        let x0 = [0.25, 0.5, -1.0];
        let x = integrate_rk4(&field, &x0, 100).unwrap();
        for i in 0..3 {
            assert!((x[i] - (x0[i] + c[i])).abs() < 1e-13);
        }
        assert!(integrate_rk4(&field, &x0, 0).is_err());
    }

    #[test]
    fn rk4_linear_field() {
        let field = |x: &[f64], _: f64| Ok(x.to_vec());
        let x0 = [1.0, -0.3];
        let x = integrate_rk4(&field, &x0, 100).unwrap();
        for i in 0..2 {
            let want = std::f64::consts::E * x0[i];
            assert!(((x[i] - want) / want).abs() < 1e-6);
        }
    }

    #[test]
    fn rk4_fourth_order_convergence() {
        // dx/dt = −2t·x  ⇒  x(1) = x0·e^{−1}.
        let field = |x: &[f64], t: f64| Ok(x.iter().map(|v| -2.0 * t * v).collect());
        let want = (-1.0f64).exp();
        let mut prev = f64::INFINITY;
        for steps in [4, 8, 16, 32] {
            let err = (integrate_rk4(&field, &[1.0], steps).unwrap()[0] - want).abs();
            if prev.is_finite() {
                assert!(prev / err >= 8.0, "{steps}: {prev} / {err}");
            }
            prev = err;
        }
    }

    #[test]
    fn non_finite_state_reports_step() {
        let field = |x: &[f64], _: f64| Ok(x.iter().map(|v| v * v * 1e200).collect());
        match integrate_rk4(&field, &[1.0], 10) {
            Err(Error::IntegrationFailure { step }) => assert!(step < 10),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn guided_wrapper_skips_unconditional_at_scale_one() {
        let calls = std::cell::Cell::new(0);
        let g = Guided {
            field: |x: &[f64], _t: f64, cond: bool| {
                calls.set(calls.get() + 1);
                Ok(x.iter().map(|v| if cond { v + 1.0 } else { *v }).collect())
            },
            scale: 1.0,
        };
        assert_eq!(g.velocity(&[1.0], 0.0).unwrap(), vec![2.0]);
        assert_eq!(calls.get(), 1);
        let g2 = Guided {
            field: g.field,
            scale: 2.0,
        };
        assert_eq!(g2.velocity(&[1.0], 0.0).unwrap(), vec![3.0]);
    }

    proptest! {
        #[test]
        fn permutation_equivariant_field_commutes_with_sampler(seed in any::<u64>()) {
            // v(x)_i = sin(x_i) + mean(x) is equivariant to coordinate permutations.
            let field = |x: &[f64], t: f64| {
                let m = x.iter().sum::<f64>() / x.len() as f64;
                Ok(x.iter().map(|v| v.sin() + m * t).collect())
            };
            let x0 = standard_normal(5, &mut crate::seed::rng(seed));
            let perm = [3usize, 0, 4, 1, 2];
            let px0: Vec<f64> = perm.iter().map(|&p| x0[p]).collect();
            let a = integrate_rk4(&field, &x0, 50).unwrap();
            let b = integrate_rk4(&field, &px0, 50).unwrap();
            for (i, &p) in perm.iter().enumerate() {
                prop_assert!((b[i] - a[p]).abs() <= 1e-12);
            }
        }
    }
}
