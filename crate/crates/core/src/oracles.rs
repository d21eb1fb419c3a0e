//! Slow, independent reference implementations used to verify the fast
//! algorithms: exhaustive DTW path enumeration and a dense two-phase simplex
//! LP for discrete optimal transport.

use crate::dsp::FrameSeries;
use crate::error::{invalid, Result};

/// Minimum over every monotone boundary-to-boundary path with steps
/// (1,0), (0,1), (1,1) of the summed framewise L1 cost. Exponential time.
pub fn dtw_exhaustive(a: &FrameSeries, b: &FrameSeries) -> Result<f64> {
    if a.n_frames == 0 || b.n_frames == 0 || a.n_features != b.n_features {
        return Err(invalid("dtw oracle needs two non-empty series of equal width"));
    }
    if a.n_frames + b.n_frames > 16 {
        return Err(invalid("dtw oracle limited to short series"));
    }
    let cost = |i: usize, j: usize| -> f64 { a.frame(i).iter().zip(b.frame(j)).map(|(x, y)| (x - y).abs()).sum() };
    fn walk(i: usize, j: usize, acc: f64, n: usize, m: usize, cost: &dyn Fn(usize, usize) -> f64, best: &mut f64) {
        let acc = cost(i, j) + acc;
        if i + 1 == n && j + 1 == m {
            *best = best.min(acc);
            return;
        }
        if i + 1 < n {
            walk(i + 1, j, acc, n, m, cost, best);
        }
        if j + 1 < m {
            walk(i, j + 1, acc, n, m, cost, best);
        }
        if i + 1 < n && j + 1 < m {
            walk(i + 1, j + 1, acc, n, m, cost, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(0, 0, 0.0, a.n_frames, b.n_frames, &cost, &mut best);
    Ok(best)
}

const TOL: f64 = 1e-12;

/// Solves `min cᵀx  s.t.  A x = b, x ≥ 0` (with `b ≥ 0`) by the two-phase
/// tableau simplex under Bland's rule. Returns the optimal value, or `None`
/// if infeasible or unbounded.
pub fn simplex_min(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> Option<f64> {
    let m = a.len();
    let nv = c.len();
    let width = nv + m + 1;
    let rhs = width - 1;
    let mut t: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let mut row = vec![0.0; width];
            row[..nv].copy_from_slice(&a[i]);
            row[nv + i] = 1.0;
            row[rhs] = b[i];
            row
        })
        .collect();
    let mut basis: Vec<usize> = (nv..nv + m).collect();

    let run = |t: &mut Vec<Vec<f64>>, basis: &mut Vec<usize>, cost: &[f64], allowed: usize| -> bool {
        loop {
            let reduced = |j: usize, t: &Vec<Vec<f64>>, basis: &Vec<usize>| {
                cost[j] - (0..m).map(|i| cost[basis[i]] * t[i][j]).sum::<f64>()
            };
            let Some(enter) = (0..allowed).find(|&j| reduced(j, t, basis) < -TOL) else {
                return true;
            };
            let mut leave: Option<usize> = None;
            let mut best = f64::INFINITY;
            for i in 0..m {
                if t[i][enter] > TOL {
                    let r = t[i][rhs] / t[i][enter];
                    let better = match leave {
                        None => true,
                        Some(l) => r < best - TOL || (r <= best + TOL && basis[i] < basis[l]),
                    };
                    if better {
                        best = r;
                        leave = Some(i);
                    }
                }
            }
            let Some(r) = leave else { return false };
            let piv = t[r][enter];
            t[r].iter_mut().for_each(|v| *v /= piv);
            let prow = t[r].clone();
            for (i, row) in t.iter_mut().enumerate() {
                if i != r {
                    let f = row[enter];
                    if f != 0.0 {
                        row.iter_mut().zip(&prow).for_each(|(v, p)| *v -= f * p);
                    }
                }
            }
            basis[r] = enter;
        }
    };

    let mut phase1 = vec![0.0; nv + m];
    phase1[nv..].iter_mut().for_each(|v| *v = 1.0);
    if !run(&mut t, &mut basis, &phase1, nv + m) {
        return None;
    }
    let infeas: f64 = (0..m).filter(|&i| basis[i] >= nv).map(|i| t[i][rhs]).sum();
    if infeas > 1e-9 {
        return None;
    }
    // Drive zero-valued artificials out of the basis where possible.
    for i in 0..m {
        if basis[i] >= nv {
            if let Some(j) = (0..nv).find(|&j| t[i][j].abs() > 1e-9) {
                let piv = t[i][j];
                t[i].iter_mut().for_each(|v| *v /= piv);
                let prow = t[i].clone();
                for (k, row) in t.iter_mut().enumerate() {
                    if k != i {
                        let f = row[j];
                        if f != 0.0 {
                            row.iter_mut().zip(&prow).for_each(|(v, p)| *v -= f * p);
                        }
                    }
                }
                basis[i] = j;
            }
        }
    }
    let mut phase2 = vec![0.0; nv + m];
    phase2[..nv].copy_from_slice(c);
    if !run(&mut t, &mut basis, &phase2, nv) {
        return None;
    }
    Some((0..m).map(|i| phase2[basis[i]] * t[i][rhs]).sum())
}

/// Optimal transport cost between histograms `p` and `q` (equal mass) on
/// points `pos`, with ground cost `|pos_i − pos_j|`, solved as an LP.
pub fn transport_lp(p: &[f64], q: &[f64], pos: &[f64]) -> Result<f64> {
    let n = p.len();
    if q.len() != n || pos.len() != n || n == 0 {
        return Err(invalid("transport oracle needs equal-length inputs"));
    }
    let mut a = Vec::with_capacity(2 * n);
    for i in 0..n {
        let mut row = vec![0.0; n * n];
        row[i * n..(i + 1) * n].iter_mut().for_each(|v| *v = 1.0);
        a.push(row);
    }
    for j in 0..n {
        let mut row = vec![0.0; n * n];
        (0..n).for_each(|i| row[i * n + j] = 1.0);
        a.push(row);
    }
    let b: Vec<f64> = p.iter().chain(q).copied().collect();
    let c: Vec<f64> = (0..n * n).map(|k| (pos[k / n] - pos[k % n]).abs()).collect();
    simplex_min(&a, &b, &c).ok_or_else(|| invalid("transport LP has no solution"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::FeatureKind;

    #[test]
    fn simplex_small_lp() {
        // min x + 2y  s.t.  x + y = 1,  x − y + s = 0.5  →  x = 0.75, y = 0.25.
        let a = vec![vec![1.0, 1.0, 0.0], vec![1.0, -1.0, 1.0]];
        let v = simplex_min(&a, &[1.0, 0.5], &[1.0, 2.0, 0.0]).unwrap();
        assert!((v - 1.25).abs() < 1e-12);
        // Infeasible: x = 1 and x = 2.
        assert!(simplex_min(&[vec![1.0], vec![1.0]], &[1.0, 2.0], &[1.0]).is_none());
    }

    #[test]
    fn transport_of_point_masses() {
        let pos = [0.0, 0.5, 1.0];
        let v = transport_lp(&[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0], &pos).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
        let v = transport_lp(&[0.5, 0.5, 0.0], &[0.0, 0.5, 0.5], &pos).unwrap();
        assert!((v - 0.5).abs() < 1e-12);
    }

    #[test]
    fn dtw_oracle_small() {
        let a = FrameSeries::new(vec![0.0, 1.0, 2.0], 3, 1, 1, FeatureKind::Mfcc).unwrap();
        let b = FrameSeries::new(vec![0.0, 2.0], 2, 1, 1, FeatureKind::Mfcc).unwrap();
        assert_eq!(dtw_exhaustive(&a, &b).unwrap(), 1.0);
    }
}
