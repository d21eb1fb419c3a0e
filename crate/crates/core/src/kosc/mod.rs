//! The k-oscillator synthesizer.
//!
//! A parameter vector for `k` oscillators is laid out as
//! `[ω₁..ω_k, α₁..α_k, γ₁..γ_k]`, every entry in `[-1, 1]`. The gated task
//! appends one routing scalar `c ∈ {-1, +1}`. Each oscillator morphs from a
//! sine through a square to a sawtooth; the discontinuous shapes are
//! antialiased with a 2-sample PolyBLEP residual.

pub mod dataset;

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Error, Result};
use crate::seed;

/// Rendered signal length used by the task.
pub const DEFAULT_N_SAMPLES: usize = 2048;
/// Nominal sample rate; only time-based metrics look at it.
pub const DEFAULT_SAMPLE_RATE: f64 = 16_000.0;
/// Allowed overshoot of a rendered sample above full scale.
pub const RENDER_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskVariant {
    Symmetric,
    Asymmetric,
    Gated,
}

impl TaskVariant {
    /// Number of parameters for `k` oscillators.
    pub fn param_dim(self, k: usize) -> usize {
        match self {
            TaskVariant::Gated => 3 * k + 1,
            _ => 3 * k,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskVariant::Symmetric => "symmetric",
            TaskVariant::Asymmetric => "asymmetric",
            TaskVariant::Gated => "gated",
        }
    }
}

impl fmt::Display for TaskVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "symmetric" | "sym" => Ok(TaskVariant::Symmetric),
            "asymmetric" | "asym" => Ok(TaskVariant::Asymmetric),
            "gated" => Ok(TaskVariant::Gated),
            other => Err(invalid(format!("unknown task variant `{other}`"))),
        }
    }
}

/// How raw frequency parameters map to angular frequency.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrequencyLayout {
    /// Every oscillator spans `[0, π]`.
    Shared,
    /// Oscillator `i` (1-based) spans `[(i-1)π/k, iπ/k]`.
    Banded,
}

impl FrequencyLayout {
    /// Layout for a task; `gate` is the routing scalar of the gated task.
    pub fn for_task(variant: TaskVariant, gate: Option<f64>) -> FrequencyLayout {
        match variant {
            TaskVariant::Symmetric => FrequencyLayout::Shared,
            TaskVariant::Asymmetric => FrequencyLayout::Banded,
            TaskVariant::Gated => {
                if gate.unwrap_or(1.0) > 0.0 {
                    FrequencyLayout::Shared
                } else {
                    FrequencyLayout::Banded
                }
            }
        }
    }
}

/// Flat synthesizer parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub data: Vec<f64>,
}

impl ParamVector {
    pub fn new(data: Vec<f64>, k: usize, variant: TaskVariant) -> Result<Self> {
        let p = ParamVector { data };
        p.validate(k, variant)?;
        Ok(p)
    }

    pub fn validate(&self, k: usize, variant: TaskVariant) -> Result<()> {
        if k == 0 {
            return Err(invalid("k must be at least 1"));
        }
        let want = variant.param_dim(k);
        if self.data.len() != want {
            return Err(shape(format!(
                "parameter vector has length {}, expected {want} for k={k} ({variant})",
                self.data.len()
            )));
        }
        if let Some(i) = self.data.iter().position(|v| !v.is_finite() || v.abs() > 1.0) {
            return Err(invalid(format!("parameter {i} = {} outside [-1, 1]", self.data[i])));
        }
        Ok(())
    }

    pub fn omega(&self, k: usize) -> &[f64] {
        &self.data[..k]
    }

    pub fn alpha(&self, k: usize) -> &[f64] {
        &self.data[k..2 * k]
    }

    pub fn gamma(&self, k: usize) -> &[f64] {
        &self.data[2 * k..3 * k]
    }

    pub fn gate(&self, k: usize) -> Option<f64> {
        self.data.get(3 * k).copied()
    }

    /// Applies an oscillator permutation: oscillator `i` of the result is
    /// oscillator `perm[i]` of `self`. The gate entry (if any) is kept.
    pub fn permute_oscillators(&self, k: usize, perm: &[usize]) -> ParamVector {
        let mut out = self.data.clone();
        for (i, &j) in perm.iter().enumerate() {
            for block in 0..3 {
                out[block * k + i] = self.data[block * k + j];
            }
        }
        ParamVector { data: out }
    }

    pub fn clipped(&self) -> ParamVector {
        ParamVector {
            data: self.data.iter().map(|v| v.clamp(-1.0, 1.0)).collect(),
        }
    }
}

/// Mono sample buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioSignal {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
}

impl AudioSignal {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Self {
        AudioSignal { samples, sample_rate }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Maps raw frequencies in `[-1, 1]` to angular frequencies in rad/sample.
pub fn scale_frequencies(omega_raw: &[f64], layout: FrequencyLayout) -> Result<Vec<f64>> {
    let k = omega_raw.len();
    if k == 0 {
        return Err(invalid("k must be at least 1"));
    }
    if omega_raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("frequency parameters".into()));
    }
    let unit = |v: f64| (v.clamp(-1.0, 1.0) + 1.0) * 0.5;
    Ok(match layout {
        FrequencyLayout::Shared => omega_raw.iter().map(|&v| unit(v) * PI).collect(),
        FrequencyLayout::Banded => omega_raw
            .iter()
            .enumerate()
            .map(|(i, &v)| (i as f64 + unit(v)) * PI / k as f64)
            .collect(),
    })
}

/// Two-sample PolyBLEP residual at fractional phase `t` for increment `dt`.
#[inline]
pub fn polyblep(t: f64, dt: f64) -> f64 {
    if dt <= 0.0 {
        return 0.0;
    }
    if t < dt {
        let u = t / dt;
        2.0 * u - u * u - 1.0
    } else if t > 1.0 - dt {
        let u = (t - 1.0) / dt;
        u * u + 2.0 * u + 1.0
    } else {
        0.0
    }
}

#[inline]
pub fn saw_blep(phase: f64, dt: f64) -> f64 {
    2.0 * phase - 1.0 - polyblep(phase, dt)
}

#[inline]
pub fn square_blep(phase: f64, dt: f64) -> f64 {
    let naive = if phase < 0.5 { 1.0 } else { -1.0 };
    let shifted = (phase + 0.5).fract();
    naive + polyblep(phase, dt) - polyblep(shifted, dt)
}

#[inline]
fn square_naive(phase: f64) -> f64 {
    if phase < 0.5 {
        1.0
    } else {
        -1.0
    }
}

/// One oscillator sample. `phase` in cycles, `dphase` in cycles/sample and
/// `gamma_raw` the shape parameter in `[-1, 1]`.
pub fn osc_sample(phase: f64, dphase: f64, gamma_raw: f64) -> f64 {
    morph(phase, gamma_raw, |p| square_blep(p, dphase), |p| saw_blep(p, dphase))
}

fn morph(phase: f64, gamma_raw: f64, square: impl Fn(f64) -> f64, saw: impl Fn(f64) -> f64) -> f64 {
    let m = gamma_raw.clamp(-1.0, 1.0) + 1.0;
    if m <= 1.0 {
        let sine = (TAU * phase).sin();
        if m == 0.0 {
            sine
        } else {
            (1.0 - m) * sine + m * square(phase)
        }
    } else {
        let sq = square(phase);
        if m == 2.0 {
            saw(phase)
        } else {
            (2.0 - m) * sq + (m - 1.0) * saw(phase)
        }
    }
}

/// Renders `x` to `n_samples` samples.
pub fn render(x: &ParamVector, k: usize, variant: TaskVariant, n_samples: usize) -> Result<AudioSignal> {
    render_with(x, k, variant, n_samples, true)
}

/// Same as [`render`] but with PolyBLEP disabled; used to measure aliasing.
pub fn render_naive(x: &ParamVector, k: usize, variant: TaskVariant, n_samples: usize) -> Result<AudioSignal> {
    render_with(x, k, variant, n_samples, false)
}

fn render_with(
    x: &ParamVector,
    k: usize,
    variant: TaskVariant,
    n_samples: usize,
    antialias: bool,
) -> Result<AudioSignal> {
    x.validate(k, variant)?;
    if n_samples == 0 {
        return Err(invalid("n_samples must be at least 1"));
    }
    let layout = FrequencyLayout::for_task(variant, x.gate(k));
    let omega = scale_frequencies(x.omega(k), layout)?;
    let mut y = vec![0.0; n_samples];
    for ((&w, &alpha), &gamma) in omega.iter().zip(x.alpha(k)).zip(x.gamma(k)) {
        let amp = (alpha + 1.0) * 0.5;
        if amp == 0.0 {
            continue;
        }
        let dphase = w / TAU;
        for (n, out) in y.iter_mut().enumerate() {
            let phase = (n as f64 * dphase).fract();
            let s = if antialias {
                osc_sample(phase, dphase, gamma)
            } else {
                morph(phase, gamma, square_naive, |p| 2.0 * p - 1.0)
            };
            *out += amp * s;
        }
    }
    let scale = 1.0 / k as f64;
    y.iter_mut().for_each(|v| *v *= scale);
    Ok(AudioSignal::new(y, DEFAULT_SAMPLE_RATE))
}

/// Draws a parameter vector uniformly from `[-1, 1]^D` (gate uniform on ±1).
pub fn sample_params(k: usize, variant: TaskVariant, seed: u64) -> ParamVector {
    let mut rng = seed::rng(seed);
    let mut data: Vec<f64> = (0..3 * k).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    if variant == TaskVariant::Gated {
        data.push(if rng.gen_bool(0.5) { 1.0 } else { -1.0 });
    }
    ParamVector { data }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn frequency_scaling_endpoints() {
        let w = scale_frequencies(&[-1.0; 4], FrequencyLayout::Shared).unwrap();
        assert!(w.iter().all(|&v| v == 0.0));
        let w = scale_frequencies(&[1.0, 1.0], FrequencyLayout::Banded).unwrap();
        assert!((w[0] - PI / 2.0).abs() < 1e-15);
        assert!((w[1] - PI).abs() < 1e-15);
        let w = scale_frequencies(&[0.0; 3], FrequencyLayout::Shared).unwrap();
        assert!(w.iter().all(|&v| (v - PI / 2.0).abs() < 1e-15));
    }

    #[test]
    fn frequency_scaling_rejects_bad_input() {
        assert!(scale_frequencies(&[], FrequencyLayout::Shared).is_err());
        assert!(scale_frequencies(&[f64::NAN], FrequencyLayout::Shared).is_err());
    }

    #[test]
    fn banded_ranges_are_disjoint() {
        let k = 5;
        let lo = scale_frequencies(&vec![-1.0; k], FrequencyLayout::Banded).unwrap();
        let hi = scale_frequencies(&vec![1.0; k], FrequencyLayout::Banded).unwrap();
        for i in 0..k {
            assert!((lo[i] - i as f64 * PI / k as f64).abs() < 1e-12);
            assert!((hi[i] - (i + 1) as f64 * PI / k as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn osc_pure_shapes() {
        assert!((osc_sample(0.25, 0.01, -1.0) - 1.0).abs() < 1e-15);
        assert_eq!(osc_sample(0.2, 0.01, 0.0), 1.0);
        assert_eq!(osc_sample(0.7, 0.01, 0.0), -1.0);
        assert_eq!(osc_sample(0.5, 0.01, 1.0), 0.0);
    }

    #[test]
    fn polyblep_is_continuous_at_support_edges() {
        let dt = 0.03;
        assert!(polyblep(0.0, dt) == -1.0);
        assert!(polyblep(dt - 1e-12, dt).abs() < 1e-9);
        assert!(polyblep(1.0 - dt + 1e-12, dt).abs() < 1e-9);
        assert!((polyblep(1.0 - 1e-15, dt) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn single_sine() {
        // ω raw 0 maps to π/2 on the shared layout.
        let x = ParamVector::new(vec![0.0, 1.0, -1.0], 1, TaskVariant::Symmetric).unwrap();
        let y = render(&x, 1, TaskVariant::Symmetric, 8).unwrap();
        let want = [0.0, 1.0, 0.0, -1.0, 0.0, 1.0, 0.0, -1.0];
        for (a, b) in y.samples.iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn silent_when_amplitudes_are_minimal() {
        let k = 3;
        let mut x = sample_params(k, TaskVariant::Symmetric, 3);
        for a in &mut x.data[k..2 * k] {
            *a = -1.0;
        }
        let y = render(&x, k, TaskVariant::Symmetric, 256).unwrap();
        assert!(y.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn render_rejects_dimension_mismatch() {
        let x = sample_params(3, TaskVariant::Symmetric, 1);
        assert!(render(&x, 4, TaskVariant::Symmetric, 16).is_err());
        assert!(render(&x, 3, TaskVariant::Gated, 16).is_err());
        assert!(render(&x, 3, TaskVariant::Symmetric, 0).is_err());
    }

    #[test]
    fn swapped_pair_renders_identically() {
        let x = sample_params(2, TaskVariant::Symmetric, 11);
        let xs = x.permute_oscillators(2, &[1, 0]);
        let a = render(&x, 2, TaskVariant::Symmetric, 2048).unwrap();
        let b = render(&xs, 2, TaskVariant::Symmetric, 2048).unwrap();
        let err = a
            .samples
            .iter()
            .zip(&b.samples)
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-9);
    }

    #[test]
    fn asymmetric_witness_breaks_symmetry() {
        let x = ParamVector::new(vec![-0.5, 0.5, 1.0, 1.0, -1.0, -1.0], 2, TaskVariant::Asymmetric).unwrap();
        let xs = x.permute_oscillators(2, &[1, 0]);
        let a = render(&x, 2, TaskVariant::Asymmetric, 512).unwrap();
        let b = render(&xs, 2, TaskVariant::Asymmetric, 512).unwrap();
        let diff = a
            .samples
            .iter()
            .zip(&b.samples)
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max);
        assert!(diff > 1e-3);
    }

    #[test]
    fn gated_switches_symmetry() {
        let base = vec![-0.5, 0.5, 1.0, 1.0, -1.0, -1.0];
        for (gate, symmetric) in [(1.0, true), (-1.0, false)] {
            let mut d = base.clone();
            d.push(gate);
            let x = ParamVector::new(d, 2, TaskVariant::Gated).unwrap();
            let xs = x.permute_oscillators(2, &[1, 0]);
            let a = render(&x, 2, TaskVariant::Gated, 512).unwrap();
            let b = render(&xs, 2, TaskVariant::Gated, 512).unwrap();
            let diff = a
                .samples
                .iter()
                .zip(&b.samples)
                .map(|(p, q)| (p - q).abs())
                .fold(0.0, f64::max);
            assert_eq!(diff <= 1e-9, symmetric, "gate {gate}: diff {diff}");
        }
    }

    #[test]
    fn sampling_layout_and_determinism() {
        assert_eq!(sample_params(4, TaskVariant::Symmetric, 0).data.len(), 12);
        assert_eq!(sample_params(4, TaskVariant::Gated, 0).data.len(), 13);
        assert_eq!(
            sample_params(4, TaskVariant::Gated, 9),
            sample_params(4, TaskVariant::Gated, 9)
        );
        let g = sample_params(4, TaskVariant::Gated, 9);
        assert!(g.data[12] == 1.0 || g.data[12] == -1.0);
    }

    #[test]
    fn sampled_coordinates_are_centered() {
        // Uniform[-1,1] has variance 1/3; 1e5 draws give sd ≈ 1.8e-3 for the
        // mean, so ±0.02 is far outside sampling noise.
        let k = 2;
        let n = 100_000;
        let mut sums = vec![0.0; 3 * k];
        for s in 0..n {
            let x = sample_params(k, TaskVariant::Symmetric, seed::derive(42, s));
            for (acc, v) in sums.iter_mut().zip(&x.data) {
                *acc += v;
            }
        }
        for s in sums {
            assert!((s / n as f64).abs() <= 0.02);
        }
    }

    /// Band-limited square: exact Fourier series truncated at Nyquist.
    fn additive_square(dphase: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| {
                let mut acc = 0.0;
                let mut h = 1;
                while h as f64 * dphase < 0.5 {
                    acc += (TAU * h as f64 * dphase * i as f64).sin() / h as f64;
                    h += 2;
                }
                4.0 / PI * acc
            })
            .collect()
    }

    #[test]
    fn polyblep_reduces_aliasing() {
        use crate::metrics::lsd;
        let n = 2048;
        // ω raw chosen so the fundamental sits between DFT bins.
        for raw in [-0.71, -0.43, 0.13] {
            let x = ParamVector::new(vec![raw, 1.0, 0.0], 1, TaskVariant::Symmetric).unwrap();
            let dphase = scale_frequencies(&[raw], FrequencyLayout::Shared).unwrap()[0] / TAU;
            let oracle = additive_square(dphase, n);
            let blep = render(&x, 1, TaskVariant::Symmetric, n).unwrap();
            let naive = render_naive(&x, 1, TaskVariant::Symmetric, n).unwrap();
            let d_blep = lsd(&blep.samples, &oracle).unwrap();
            let d_naive = lsd(&naive.samples, &oracle).unwrap();
            assert!(d_blep < d_naive, "raw {raw}: blep {d_blep} naive {d_naive}");
        }
    }

    #[test]
    fn oscillator_output_is_bounded() {
        let mut worst: f64 = 0.0;
        for di in 1..500 {
            let dt = di as f64 / 1000.0;
            for pi in 0..2000 {
                let phase = pi as f64 / 2000.0;
                for g in [-1.0, -0.5, 0.0, 0.5, 1.0] {
                    worst = worst.max(osc_sample(phase, dt, g).abs());
                }
            }
        }
        assert!(worst <= 1.0 + RENDER_EPS, "max |osc| = {worst}");
    }

    proptest! {
        #[test]
        fn symmetric_render_is_permutation_invariant(seed in any::<u64>(), k in 1usize..6, rot in 0usize..6) {
            let x = sample_params(k, TaskVariant::Symmetric, seed);
            let mut perm: Vec<usize> = (0..k).collect();
            perm.rotate_left(rot % k);
            perm.swap(0, k - 1);
            let a = render(&x, k, TaskVariant::Symmetric, 512).unwrap();
            let b = render(&x.permute_oscillators(k, &perm), k, TaskVariant::Symmetric, 512).unwrap();
            for (p, q) in a.samples.iter().zip(&b.samples) {
                prop_assert!((p - q).abs() <= 1e-9);
            }
        }

        #[test]
        fn rendered_samples_are_bounded(seed in any::<u64>(), k in 1usize..6) {
            for variant in [TaskVariant::Symmetric, TaskVariant::Asymmetric, TaskVariant::Gated] {
                let x = sample_params(k, variant, seed);
                let y = render(&x, k, variant, 1024).unwrap();
                prop_assert!(y.samples.iter().all(|v| v.is_finite() && v.abs() <= 1.0 + RENDER_EPS));
            }
        }
    }
}
