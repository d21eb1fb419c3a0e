//! Paired nonparametric comparison used by the ordering checks.

use crate::error::{invalid, shape, Result};

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignedRankTest {
    /// Pairs with a non-zero difference.
    pub n: usize,
    /// Sum of ranks of positive differences `a − b`.
    pub w_plus: f64,
    pub z: f64,
    /// One-sided p-value for the alternative "a tends to be smaller than b".
    pub p_less: f64,
}

/// Wilcoxon signed-rank test on paired samples using the normal
/// approximation with tie and continuity corrections. Zero differences are
/// dropped.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<SignedRankTest> {
    if a.len() != b.len() {
        return Err(shape("paired samples differ in length"));
    }
    let mut d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|v| *v != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return Err(invalid("all paired differences are zero"));
    }
    d.sort_by(|x, y| x.abs().total_cmp(&y.abs()));
    let mut w_plus = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && d[j + 1].abs() == d[i].abs() {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        w_plus += d[i..=j].iter().filter(|v| **v > 0.0).count() as f64 * rank;
        i = j + 1;
    }
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let z = if var > 0.0 {
        // Continuity correction towards the mean.
        let diff = w_plus - mean;
        (diff - 0.5 * diff.signum()) / var.sqrt()
    } else {
        0.0
    };
    Ok(SignedRankTest {
        n,
        w_plus,
        z,
        p_less: normal_cdf(z),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn median_cases() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn normal_cdf_values() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((normal_cdf(1.959963984540054) - 0.975).abs() < 1e-12);
    }

    #[test]
    fn signed_rank_hand_example() {
        // Differences −1, 2, −3, 4, −5: W+ = 2 + 4 = 6, mean 7.5, var 13.75.
        let a = [0.0, 2.0, 0.0, 4.0, 0.0];
        let b = [1.0, 0.0, 3.0, 0.0, 5.0];
        let r = wilcoxon_signed_rank(&a, &b).unwrap();
        assert_eq!(r.w_plus, 6.0);
        assert!((r.z - (-1.0 / 13.75f64.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn detects_a_shift() {
        let mut rng = crate::seed::rng(5);
        let b: Vec<f64> = (0..500).map(|_| rng.gen::<f64>()).collect();
        let a: Vec<f64> = b.iter().map(|v| v - 0.05 + 0.1 * (rng.gen::<f64>() - 0.5)).collect();
        assert!(wilcoxon_signed_rank(&a, &b).unwrap().p_less < 1e-6);
        assert!(wilcoxon_signed_rank(&b, &a).unwrap().p_less > 0.99);
        assert!(wilcoxon_signed_rank(&a, &a).is_err());
    }
}
