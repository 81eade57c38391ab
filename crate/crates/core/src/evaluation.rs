//! Permutation-invariant recovery metrics.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::network::Weights;

/// Threshold of the agreement statistic below which a trial counts as a
/// successful recovery.
pub const SUCCESS_THRESHOLD: f64 = 1e-3;

/// Best column matching of `W` against `W_ref`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Column `j` of `W` is matched to column `permutation[j]` of `W_ref`.
    pub permutation: Vec<usize>,
    /// `‖W − W_ref · P‖_F`.
    pub distance: f64,
    pub column_distances: Vec<f64>,
}

impl MatchResult {
    /// Reorders the columns of `w` so that they line up with the reference.
    pub fn align(&self, w: &Weights) -> Weights {
        let mut inverse = vec![0; self.permutation.len()];
        for (j, &r) in self.permutation.iter().enumerate() {
            inverse[r] = j;
        }
        w.permute_columns(&inverse)
    }
}

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method
/// with row/column potentials). Returns `assignment[row] = col`.
pub fn linear_assignment(cost: &DMatrix<f64>) -> Vec<usize> {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols(), "cost matrix must be square");
    if n == 0 {
        return Vec::new();
    }
    // 1-based arrays; index 0 is the virtual root.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut col_owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        col_owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
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
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[col_owner[j] - 1] = j - 1;
    }
    assignment
}

/// Minimizes `‖W − W_ref · P‖_F` over column permutations `P`.
pub fn column_match(w: &Weights, wref: &Weights) -> Result<MatchResult> {
    if w.matrix().shape() != wref.matrix().shape() {
        return Err(Error::DimensionMismatch(format!(
            "shapes {:?} and {:?}",
            w.matrix().shape(),
            wref.matrix().shape()
        )));
    }
    let k = w.n_neurons();
    let cost = DMatrix::from_fn(k, k, |i, j| {
        (w.matrix().column(i) - wref.matrix().column(j)).norm_squared()
    });
    let permutation = linear_assignment(&cost);
    let column_distances: Vec<f64> = permutation
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[(i, j)].sqrt())
        .collect();
    let distance = column_distances.iter().map(|d| d * d).sum::<f64>().sqrt();
    Ok(MatchResult {
        permutation,
        distance,
        column_distances,
    })
}

/// Shorthand for `column_match(w, wref).distance`.
pub fn perm_distance(w: &Weights, wref: &Weights) -> Result<f64> {
    Ok(column_match(w, wref)?.distance)
}

/// Agreement of independently trained runs: each run is aligned to the first
/// by column matching, then the population standard deviation of every
/// entry across runs is taken, and the root-mean-square of those `d·K`
/// deviations is returned.
pub fn ensemble_agreement(runs: &[Weights]) -> Result<f64> {
    if runs.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "agreement needs at least 2 runs, got {}",
            runs.len()
        )));
    }
    let reference = &runs[0];
    let mut aligned = Vec::with_capacity(runs.len());
    aligned.push(reference.matrix().clone());
    for run in &runs[1..] {
        let m = column_match(run, reference)?;
        aligned.push(m.align(run).into_matrix());
    }
    let count = aligned.len() as f64;
    let (d, k) = reference.matrix().shape();
    // Deviations from the first run keep identical runs at exactly zero.
    let offsets: Vec<DMatrix<f64>> = aligned.iter().map(|a| a - reference.matrix()).collect();
    let mut mean = DMatrix::zeros(d, k);
    for o in &offsets {
        mean += o;
    }
    mean /= count;
    let mut var = DMatrix::zeros(d, k);
    for o in &offsets {
        var += (o - &mean).map(|v| v * v);
    }
    var /= count;
    Ok((var.sum() / (d * k) as f64).sqrt())
}

pub fn is_success(e: f64, threshold: f64) -> bool {
    e < threshold
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn permutations(k: usize) -> Vec<Vec<usize>> {
        if k == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(k - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, k - 1);
                out.push(q);
            }
        }
        out
    }

    fn brute_force(w: &Weights, wref: &Weights) -> f64 {
        permutations(w.n_neurons())
            .into_iter()
            .map(|p| w.frobenius_distance(&wref.permute_columns(&p)))
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn recovers_known_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let wref = Weights::random(5, 4, 1.0, &mut rng);
        let perm = vec![2, 0, 3, 1];
        let w = wref.permute_columns(&perm);
        let m = column_match(&w, &wref).unwrap();
        assert_eq!(m.distance, 0.0);
        assert_eq!(m.permutation, perm);
        assert_eq!(m.align(&w), wref);
    }

    #[test]
    fn single_column_perturbation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let wref = Weights::random(4, 3, 1.0, &mut rng);
        let u = DVector::from_vec(vec![0.6, 0.0, -0.8, 0.0]);
        let mut m = wref.matrix().clone();
        let delta = 1e-3;
        let col = m.column(1) + delta * &u;
        m.set_column(1, &col);
        let res = column_match(&Weights::new(m).unwrap(), &wref).unwrap();
        assert!((res.distance - delta).abs() < 1e-12);
    }

    #[test]
    fn assignment_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for k in 1..=6 {
            for _ in 0..20 {
                let w = Weights::random(3, k, 1.0, &mut rng);
                let wref = Weights::random(3, k, 1.0, &mut rng);
                let got = column_match(&w, &wref).unwrap().distance;
                assert!((got - brute_force(&w, &wref)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pseudo_metric_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = Weights::random(3, 4, 1.0, &mut rng);
        let b = Weights::random(3, 4, 1.0, &mut rng);
        let ab = perm_distance(&a, &b).unwrap();
        assert!((ab - perm_distance(&b, &a).unwrap()).abs() < 1e-12);
        let ap = a.permute_columns(&[3, 2, 1, 0]);
        assert!((ab - perm_distance(&ap, &b).unwrap()).abs() < 1e-12);
        assert!((ab - perm_distance(&a, &b.permute_columns(&[1, 0, 3, 2])).unwrap()).abs() < 1e-12);
        assert!(column_match(&a, &Weights::zeros(3, 3)).is_err());
    }

    #[test]
    fn agreement_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = Weights::random(4, 3, 1.0, &mut rng);
        assert_eq!(ensemble_agreement(&[w.clone(), w.clone(), w.clone()]).unwrap(), 0.0);
        let runs = vec![
            w.clone(),
            w.permute_columns(&[1, 2, 0]),
            w.permute_columns(&[2, 1, 0]),
        ];
        assert!(ensemble_agreement(&runs).unwrap() < 1e-15);

        let scalar = |v: f64| Weights::new(nalgebra::DMatrix::from_element(1, 1, v)).unwrap();
        let e = ensemble_agreement(&[scalar(1.0), scalar(1.0), scalar(1.3)]).unwrap();
        // population std of {1, 1, 1.3}
        let expected = (2.0f64 * 0.1 * 0.1 + 0.2 * 0.2).sqrt() / 3f64.sqrt();
        assert!((e - expected).abs() < 1e-12);
        assert!((e - 0.1414213562).abs() < 1e-9);

        assert!(ensemble_agreement(&[w]).is_err());
    }

    #[test]
    fn agreement_invariant_to_run_permutations() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let base = Weights::random(3, 3, 1.0, &mut rng);
        let runs: Vec<Weights> = (0..4)
            .map(|_| {
                let noise = nalgebra::DMatrix::from_fn(3, 3, |_, _| rng.random_range(-0.01..0.01));
                Weights::new(base.matrix() + noise).unwrap()
            })
            .collect();
        let e = ensemble_agreement(&runs).unwrap();
        let shuffled: Vec<Weights> = runs
            .iter()
            .enumerate()
            .map(|(i, r)| r.permute_columns(&[[0, 1, 2], [2, 0, 1], [1, 2, 0], [0, 2, 1]][i]))
            .collect();
        assert!((e - ensemble_agreement(&shuffled).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn success_rule_is_strict() {
        assert!(is_success(0.0, SUCCESS_THRESHOLD));
        assert!(!is_success(1e-3, SUCCESS_THRESHOLD));
        assert!(is_success(9.99e-4, SUCCESS_THRESHOLD));
    }
}
