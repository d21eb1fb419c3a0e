//! Square linear assignment and minibatch optimal-transport pairing.

use crate::error::{invalid, shape, Error, Result};

/// A perfect matching: row `j` is assigned column `permutation[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentResult {
    pub permutation: Vec<usize>,
    pub cost: f64,
}

/// Row-major square cost matrix view.
#[derive(Debug, Clone, Copy)]
pub struct CostMatrix<'a> {
    pub values: &'a [f64],
    pub n: usize,
}

impl<'a> CostMatrix<'a> {
    pub fn new(values: &'a [f64], n: usize) -> Result<Self> {
        if values.len() != n * n {
            return Err(shape(format!(
                "cost matrix has {} entries, expected {n}x{n}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("cost matrix".into()));
        }
        Ok(CostMatrix { values, n })
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.n + col]
    }

    /// `Σ_j C[j, perm[j]]`, summed in row order.
    pub fn cost_of(&self, perm: &[usize]) -> f64 {
        perm.iter().enumerate().map(|(r, &c)| self.at(r, c)).sum()
    }
}

/// Minimum-cost perfect matching via the O(n³) shortest augmenting path
/// form of the Hungarian algorithm (row/column potentials).
pub fn hungarian(cost: CostMatrix<'_>) -> AssignmentResult {
    let n = cost.n;
    if n == 0 {
        return AssignmentResult {
            permutation: Vec::new(),
            cost: 0.0,
        };
    }
    // 1-based arrays; column 0 is a virtual start node.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of_col = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of_col[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost.at(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of_col[j0] = row_of_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut permutation = vec![0; n];
    for j in 1..=n {
        permutation[row_of_col[j] - 1] = j - 1;
    }
    let total = cost.cost_of(&permutation);
    AssignmentResult {
        permutation,
        cost: total,
    }
}

pub const BRUTE_FORCE_MAX_N: usize = 8;

/// Exhaustive minimum over all `n!` permutations, visited in lexicographic
/// order; the first strict minimum wins ties.
pub fn brute_force_assignment(cost: CostMatrix<'_>) -> Result<AssignmentResult> {
    let n = cost.n;
    if n > BRUTE_FORCE_MAX_N {
        return Err(invalid(format!(
            "brute-force assignment limited to n <= {BRUTE_FORCE_MAX_N}, got {n}"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = AssignmentResult {
        cost: cost.cost_of(&perm),
        permutation: perm.clone(),
    };
    while next_permutation(&mut perm) {
        let c = cost.cost_of(&perm);
        if c < best.cost {
            best.cost = c;
            best.permutation.copy_from_slice(&perm);
        }
    }
    Ok(best)
}

/// Advances to the next permutation in lexicographic order.
pub fn next_permutation(p: &mut [usize]) -> bool {
    if p.len() < 2 {
        return false;
    }
    let mut i = p.len() - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = p.len() - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Squared-Euclidean cost between two row-major batches of `dim`-vectors.
pub fn squared_distance_matrix(source: &[f64], target: &[f64], dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || !source.len().is_multiple_of(dim) || source.len() != target.len() {
        return Err(shape(format!(
            "batches of {} and {} values do not pair up with dimension {dim}",
            source.len(),
            target.len()
        )));
    }
    let b = source.len() / dim;
    let mut c = vec![0.0; b * b];
    for i in 0..b {
        let s = &source[i * dim..(i + 1) * dim];
        for j in 0..b {
            let t = &target[j * dim..(j + 1) * dim];
            c[i * b + j] = s.iter().zip(t).map(|(x, y)| (x - y) * (x - y)).sum();
        }
    }
    Ok(c)
}

/// Pairs `source[j]` with `target[perm[j]]` minimising total squared distance.
pub fn ot_pair_minibatch(source: &[f64], target: &[f64], dim: usize) -> Result<AssignmentResult> {
    let c = squared_distance_matrix(source, target, dim)?;
    let b = source.len() / dim;
    Ok(hungarian(CostMatrix::new(&c, b)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn random_matrix(rng: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n * n).map(|_| rng.gen_range(-10.0..10.0)).collect()
    }

    #[test]
    fn identity_dominant() {
        let n = 5;
        let c: Vec<f64> = (0..n * n).map(|i| if i / n == i % n { 0.0 } else { 1.0 }).collect();
        let r = hungarian(CostMatrix::new(&c, n).unwrap());
        assert_eq!(r.permutation, (0..n).collect::<Vec<_>>());
        assert_eq!(r.cost, 0.0);
    }

    #[test]
    fn negated_permutation_matrix() {
        let perm = [3usize, 0, 4, 1, 2];
        let n = perm.len();
        let mut c = vec![0.0; n * n];
        for (r, &col) in perm.iter().enumerate() {
            c[r * n + col] = -1.0;
        }
        let res = hungarian(CostMatrix::new(&c, n).unwrap());
        assert_eq!(res.permutation, perm);
        assert_eq!(res.cost, -(n as f64));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(CostMatrix::new(&[1.0, 2.0, 3.0], 2).is_err());
        assert!(CostMatrix::new(&[1.0, f64::NAN, 3.0, 4.0], 2).is_err());
        let big = vec![0.0; 81];
        assert!(brute_force_assignment(CostMatrix::new(&big, 9).unwrap()).is_err());
    }

    #[test]
    fn brute_force_edge_cases() {
        let r = brute_force_assignment(CostMatrix::new(&[2.5], 1).unwrap()).unwrap();
        assert_eq!(r.permutation, vec![0]);
        assert_eq!(r.cost, 2.5);

        let c = vec![1.5; 16];
        let r = brute_force_assignment(CostMatrix::new(&c, 4).unwrap()).unwrap();
        assert_eq!(r.permutation, vec![0, 1, 2, 3]);
        assert_eq!(r.cost, 6.0);
    }

    #[test]
    fn brute_force_is_minimal_for_3x3() {
        let mut rng = crate::seed::rng(4);
        let c = random_matrix(&mut rng, 3);
        let m = CostMatrix::new(&c, 3).unwrap();
        let best = brute_force_assignment(m).unwrap();
        let mut p = vec![0, 1, 2];
        loop {
            assert!(best.cost <= m.cost_of(&p));
            if !next_permutation(&mut p) {
                break;
            }
        }
    }

    #[test]
    fn hungarian_matches_brute_force_7x7() {
        let mut rng = crate::seed::rng(77);
        for _ in 0..1000 {
            let c = random_matrix(&mut rng, 7);
            let m = CostMatrix::new(&c, 7).unwrap();
            assert_eq!(hungarian(m).cost, brute_force_assignment(m).unwrap().cost);
        }
    }

    #[test]
    fn ot_pairing_cases() {
        let mut rng = crate::seed::rng(8);
        let dim = 3;
        let b = 6;
        let src: Vec<f64> = (0..b * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r = ot_pair_minibatch(&src, &src, dim).unwrap();
        assert_eq!(r.permutation, (0..b).collect::<Vec<_>>());
        assert_eq!(r.cost, 0.0);

        // target[j] = source[pi^-1(j)] so that source[i] pairs with target[pi[i]].
        let mut pi: Vec<usize> = (0..b).collect();
        pi.shuffle(&mut rng);
        let mut tgt = vec![0.0; b * dim];
        for i in 0..b {
            tgt[pi[i] * dim..(pi[i] + 1) * dim].copy_from_slice(&src[i * dim..(i + 1) * dim]);
        }
        let r = ot_pair_minibatch(&src, &tgt, dim).unwrap();
        assert_eq!(r.permutation, pi);

        for _ in 0..50 {
            let s: Vec<f64> = (0..b * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let t: Vec<f64> = (0..b * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let c = squared_distance_matrix(&s, &t, dim).unwrap();
            let oracle = brute_force_assignment(CostMatrix::new(&c, b).unwrap()).unwrap();
            let got = ot_pair_minibatch(&s, &t, dim).unwrap();
            assert!((got.cost - oracle.cost).abs() <= 1e-12 * oracle.cost.abs().max(1.0));
        }
        assert!(ot_pair_minibatch(&src, &src[..dim], dim).is_err());
    }

    proptest! {
        #[test]
        fn row_permutation_permutes_assignment(seed in any::<u64>(), n in 1usize..7) {
            let mut rng = crate::seed::rng(seed);
            let c = random_matrix(&mut rng, n);
            let mut rows: Vec<usize> = (0..n).collect();
            rows.shuffle(&mut rng);
            let mut pc = vec![0.0; n * n];
            for (r, &src) in rows.iter().enumerate() {
                pc[r * n..(r + 1) * n].copy_from_slice(&c[src * n..(src + 1) * n]);
            }
            let a = hungarian(CostMatrix::new(&c, n).unwrap());
            let b = hungarian(CostMatrix::new(&pc, n).unwrap());
            prop_assert!((a.cost - b.cost).abs() <= 1e-9);
            // Optimum is unique with probability one for continuous entries.
            for (r, &src) in rows.iter().enumerate() {
                prop_assert_eq!(b.permutation[r], a.permutation[src]);
            }
        }

        #[test]
        fn row_offset_shifts_cost(seed in any::<u64>(), n in 1usize..7, row in 0usize..7, shift in -5.0f64..5.0) {
            let row = row % n;
            let mut rng = crate::seed::rng(seed);
            let c = random_matrix(&mut rng, n);
            let mut shifted = c.clone();
            for v in &mut shifted[row * n..(row + 1) * n] {
                *v += shift;
            }
            let a = hungarian(CostMatrix::new(&c, n).unwrap());
            let m = CostMatrix::new(&shifted, n).unwrap();
            let b = hungarian(m);
            prop_assert!((b.cost - a.cost - shift).abs() <= 1e-9);
            prop_assert!((m.cost_of(&a.permutation) - b.cost).abs() <= 1e-9);
        }
    }
}
