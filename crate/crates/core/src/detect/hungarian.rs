//! Minimum-cost bipartite assignment (Kuhn-Munkres with potentials).

use crate::error::{Error, Result};

/// Assignment of every ground truth to a distinct prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchResult {
    /// `(prediction, ground truth)` pairs sorted by ground-truth index.
    pub pairs: Vec<(usize, usize)>,
    pub num_predictions: usize,
}

impl MatchResult {
    /// Ground-truth index per prediction, `None` for no-object.
    pub fn assignment(&self) -> Vec<Option<usize>> {
        let mut a = vec![None; self.num_predictions];
        for &(p, t) in &self.pairs {
            a[p] = Some(t);
        }
        a
    }

    pub fn total_cost(&self, cost: &[Vec<f64>]) -> f64 {
        self.pairs.iter().map(|&(p, t)| cost[p][t]).sum()
    }
}

/// `cost[p][t]` is the cost of assigning prediction `p` to ground truth `t`.
/// Needs at least as many predictions as ground truths.
pub fn hungarian_match(cost: &[Vec<f64>]) -> Result<MatchResult> {
    let n_pred = cost.len();
    let n_gt = cost.first().map_or(0, |r| r.len());
    if cost.iter().any(|r| r.len() != n_gt) {
        return Err(Error::Shape("ragged cost matrix".into()));
    }
    if n_gt > n_pred {
        return Err(Error::Invalid(format!("{n_gt} ground truths but only {n_pred} predictions")));
    }
    if cost.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matching cost".into()));
    }
    if n_gt == 0 {
        return Ok(MatchResult { pairs: Vec::new(), num_predictions: n_pred });
    }
    // Rows are ground truths (n <= m), columns predictions; 1-based with a
    // virtual column 0.
    let (n, m) = (n_gt, n_pred);
    let a = |i: usize, j: usize| cost[j - 1][i - 1];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = a(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..=m).filter(|&j| p[j] != 0).map(|j| (j - 1, p[j] - 1)).collect();
    pairs.sort_by_key(|&(_, t)| t);
    Ok(MatchResult { pairs, num_predictions: n_pred })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    /// Exhaustive minimum over injective maps from ground truths to
    /// predictions.
    fn brute_force(cost: &[Vec<f64>]) -> f64 {
        fn rec(cost: &[Vec<f64>], t: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            let n_gt = cost[0].len();
            if t == n_gt {
                *best = best.min(acc);
                return;
            }
            for p in 0..cost.len() {
                if !used[p] {
                    used[p] = true;
                    rec(cost, t + 1, used, acc + cost[p][t], best);
                    used[p] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(cost, 0, &mut vec![false; cost.len()], 0.0, &mut best);
        best
    }

    #[test]
    fn small_examples() {
        let m = hungarian_match(&[vec![3.0]]).unwrap();
        assert_eq!(m.pairs, vec![(0, 0)]);
        let c = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        let m = hungarian_match(&c).unwrap();
        assert_eq!(m.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(m.total_cost(&c), 2.0);
    }

    #[test]
    fn too_many_ground_truths() {
        assert!(hungarian_match(&[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn six_by_six_matches_permutations() {
        let mut rng = SplitMix64::new(21);
        for _ in 0..50 {
            let c: Vec<Vec<f64>> = (0..6).map(|_| (0..6).map(|_| rng.uniform(-3.0, 5.0)).collect()).collect();
            let m = hungarian_match(&c).unwrap();
            assert!((m.total_cost(&c) - brute_force(&c)).abs() < 1e-9);
        }
    }
}
