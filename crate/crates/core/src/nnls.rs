//! Nonnegative least squares by the Lawson–Hanson active-set method.

use nalgebra::{DMatrix, DVector};

#[derive(Clone, Debug, PartialEq)]
pub struct NnlsSolution {
    pub x: DVector<f64>,
    /// `|A x - b|`
    pub residual: f64,
    pub iterations: usize,
}

fn lstsq(a: &DMatrix<f64>, cols: &[usize], b: &DVector<f64>) -> DVector<f64> {
    let sub = a.select_columns(cols);
    let svd = sub.svd(true, true);
    let eps = 1e-13 * svd.singular_values.max().max(1.0);
    svd.solve(b, eps).expect("svd computed with both factors")
}

/// Minimises `|A x - b|` subject to `x >= 0`.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> NnlsSolution {
    let (m, k) = a.shape();
    assert_eq!(b.len(), m, "right-hand side length");
    let mut x = DVector::zeros(k);
    if k == 0 {
        return NnlsSolution {
            x,
            residual: b.norm(),
            iterations: 0,
        };
    }
    let tol = 10.0 * f64::EPSILON * a.norm().max(1.0) * m.max(k) as f64;
    let mut passive = vec![false; k];
    let mut iterations = 0;
    let max_outer = 3 * k + 10;
    for _ in 0..max_outer {
        let w = a.transpose() * (b - a * &x);
        let next = (0..k)
            .filter(|&j| !passive[j] && w[j] > tol)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(t) = next else { break };
        passive[t] = true;
        loop {
            iterations += 1;
            let cols: Vec<usize> = (0..k).filter(|&j| passive[j]).collect();
            let sp = lstsq(a, &cols, b);
            if sp.iter().all(|&v| v > 0.0) {
                x.fill(0.0);
                for (c, &j) in cols.iter().enumerate() {
                    x[j] = sp[c];
                }
                break;
            }
            // step back toward x until the first passive coordinate hits zero
            let mut alpha = 1.0f64;
            for (c, &j) in cols.iter().enumerate() {
                if sp[c] <= 0.0 {
                    alpha = alpha.min(x[j] / (x[j] - sp[c]));
                }
            }
            for (c, &j) in cols.iter().enumerate() {
                x[j] += alpha * (sp[c] - x[j]);
                if x[j] <= tol {
                    x[j] = 0.0;
                    passive[j] = false;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    let residual = (a * &x - b).norm();
    NnlsSolution {
        x,
        residual,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Best nonnegative unconstrained fit over every column subset.
    fn brute(a: &DMatrix<f64>, b: &DVector<f64>) -> f64 {
        let k = a.ncols();
        let mut best = b.norm();
        for mask in 1u32..(1 << k) {
            let cols: Vec<usize> = (0..k).filter(|j| mask >> j & 1 == 1).collect();
            let s = lstsq(a, &cols, b);
            if s.iter().all(|&v| v >= 0.0) {
                let mut x = DVector::zeros(k);
                for (c, &j) in cols.iter().enumerate() {
                    x[j] = s[c];
                }
                best = best.min((a * x - b).norm());
            }
        }
        best
    }

    #[test]
    fn interior_solution_matches_least_squares() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let s = nnls(&a, &b);
        assert!((s.x[0] - 1.0).abs() < 1e-12 && (s.x[1] - 2.0).abs() < 1e-12);
        assert!(s.residual < 1e-12);
    }

    #[test]
    fn negative_direction_clamps_to_zero() {
        let a = DMatrix::from_row_slice(2, 1, &[-1.0, -1.0]);
        let b = DVector::from_vec(vec![4.0, 4.0]);
        let s = nnls(&a, &b);
        assert_eq!(s.x[0], 0.0);
        assert!((s.residual - 32f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn empty_matrix() {
        let s = nnls(&DMatrix::zeros(2, 0), &DVector::from_vec(vec![3.0, 4.0]));
        assert_eq!(s.residual, 5.0);
    }

    proptest! {
        #[test]
        fn agrees_with_subset_enumeration(
            entries in proptest::collection::vec(-3.0f64..3.0, 12),
            rhs in proptest::collection::vec(-3.0f64..3.0, 3),
        ) {
            let a = DMatrix::from_row_slice(3, 4, &entries);
            let b = DVector::from_vec(rhs);
            let s = nnls(&a, &b);
            prop_assert!(s.x.iter().all(|&v| v >= 0.0));
            let oracle = brute(&a, &b);
            prop_assert!((s.residual - oracle).abs() <= 1e-8 * (1.0 + oracle), "{} vs {}", s.residual, oracle);
        }
    }
}
