//! Jacobi's integrability condition and its reduced forms.
//!
//! For a triple `(i, j, k)` the residual is
//!
//! ```text
//! g_i (d_k g_j - d_j g_k) + g_j (d_i g_k - d_k g_i) + g_k (d_j g_i - d_i g_j)
//! ```
//!
//! It vanishes whenever two indices coincide, and at a point where
//! `g_{k*} != 0` it is enough to check distinct triples that contain `k*`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{DerivMode, FieldError, FieldSpec, Point};
use crate::sampling::Grid;

/// Default tolerance with symbolic derivatives.
pub const TOL_EXACT: f64 = 1e-6;
/// Default tolerance with finite-difference derivatives.
pub const TOL_FD: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegrabilityError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("pivot component g_{pivot} vanishes at {point:?}", pivot = .pivot + 1)]
    PivotVanishes { pivot: usize, point: Vec<f64> },
    #[error("pair ({i}, {j}) is not an off-pivot pair for pivot {pivot} in dimension {n}", i = .i + 1, j = .j + 1, pivot = .pivot + 1)]
    Arity {
        i: usize,
        j: usize,
        pivot: usize,
        n: usize,
    },
    #[error("index out of range for dimension {0}")]
    Index(usize),
    #[error("every grid point was skipped as a kink point ({0} points)")]
    AllSkipped(usize),
    #[error("sampling grid is empty or does not match the field dimension")]
    BadGrid,
}

/// Residual of the cyclic identity from a field value and its Jacobian.
pub fn jacobi_from_parts(g: &[f64], jac: &[Vec<f64>], i: usize, j: usize, k: usize) -> f64 {
    g[i] * (jac[j][k] - jac[k][j]) + g[j] * (jac[k][i] - jac[i][k]) + g[k] * (jac[i][j] - jac[j][i])
}

/// Jacobi residual for the 0-based triple `(i, j, k)` at `x`.
pub fn jacobi_residual(
    spec: &FieldSpec,
    x: &[f64],
    (i, j, k): (usize, usize, usize),
    mode: DerivMode,
) -> Result<f64, IntegrabilityError> {
    let n = spec.dim();
    if i >= n || j >= n || k >= n {
        return Err(IntegrabilityError::Index(n));
    }
    let g = spec.eval(x)?;
    let jac = spec.jacobian(x, mode)?;
    Ok(jacobi_from_parts(&g, &jac, i, j, k))
}

/// Distinct triples `(i, j, kstar)` with `i < j`, both different from `kstar`.
/// Empty for `n = 2`, where every triple repeats an index.
pub fn reduced_triples(n: usize, kstar: usize) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if i != kstar && j != kstar {
                out.push((i, j, kstar));
            }
        }
    }
    out
}

/// All triples with pairwise distinct indices, `i < j < k`.
pub fn distinct_triples(n: usize) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            for k in (j + 1)..n {
                out.push((i, j, k));
            }
        }
    }
    out
}

/// `s_ij - s_ji` for `f_m = -g_m / g_pivot`, where
/// `s_ij = d_j f_i + d_pivot f_i * f_j`.
pub fn symmetry_residual(
    spec: &FieldSpec,
    x: &[f64],
    pivot: usize,
    (i, j): (usize, usize),
    mode: DerivMode,
) -> Result<f64, IntegrabilityError> {
    let n = spec.dim();
    if pivot >= n || i >= n || j >= n {
        return Err(IntegrabilityError::Index(n));
    }
    if n < 3 || i == pivot || j == pivot || i == j {
        return Err(IntegrabilityError::Arity { i, j, pivot, n });
    }
    let g = spec.eval(x)?;
    let gp = g[pivot];
    if gp == 0.0 {
        return Err(IntegrabilityError::PivotVanishes {
            pivot,
            point: x.to_vec(),
        });
    }
    let jac = spec.jacobian(x, mode)?;
    let f = |m: usize| -g[m] / gp;
    // d_l f_m = -(J[m][l] g_p - g_m J[p][l]) / g_p^2
    let df = |m: usize, l: usize| -(jac[m][l] * gp - g[m] * jac[pivot][l]) / (gp * gp);
    let s = |a: usize, b: usize| df(a, b) + df(a, pivot) * f(b);
    Ok(s(i, j) - s(j, i))
}

/// Index of the largest |g_k|, lowest index on ties.
pub fn pivot_of(g: &[f64]) -> usize {
    let mut best = 0;
    for (k, v) in g.iter().enumerate() {
        if v.abs() > g[best].abs() {
            best = k;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

/// One evaluated grid point. Indices are 1-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegrabilitySample {
    pub point: Point,
    pub pivot: usize,
    pub worst_triple: Option<[usize; 3]>,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegrabilityReport {
    pub field: Option<String>,
    pub mode: DerivMode,
    pub samples: Vec<IntegrabilitySample>,
    pub max_abs_residual: f64,
    pub skipped_kink_points: usize,
    pub tolerance: f64,
    pub verdict: Verdict,
}

impl IntegrabilityReport {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    /// `PASS max residual 0.000000` style one-liner.
    pub fn verdict_line(&self) -> String {
        let tag = match self.verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
        };
        format!(
            "{tag} max residual {:.6} (tol {:e}, {} points, {} kink points skipped)",
            self.max_abs_residual,
            self.tolerance,
            self.samples.len(),
            self.skipped_kink_points
        )
    }

    pub fn worst(&self) -> Option<&IntegrabilitySample> {
        self.samples
            .iter()
            .max_by(|a, b| a.residual.abs().total_cmp(&b.residual.abs()))
    }
}

fn sample_point(
    spec: &FieldSpec,
    x: &[f64],
    mode: DerivMode,
) -> Result<Option<IntegrabilitySample>, IntegrabilityError> {
    let g = spec.eval(x)?;
    let jac = match spec.jacobian(x, mode) {
        Ok(j) => j,
        Err(FieldError::Kink { .. }) => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    if matches!(mode, DerivMode::CentralFd { .. }) && spec.is_kink(x) {
        return Ok(None);
    }
    let kstar = pivot_of(&g);
    let mut worst = None;
    let mut residual = 0.0f64;
    for (i, j, k) in reduced_triples(spec.dim(), kstar) {
        let r = jacobi_from_parts(&g, &jac, i, j, k);
        if worst.is_none() || r.abs() > residual.abs() {
            residual = r;
            worst = Some([i + 1, j + 1, k + 1]);
        }
    }
    Ok(Some(IntegrabilitySample {
        point: Point::from(x),
        pivot: kstar + 1,
        worst_triple: worst,
        residual,
    }))
}

/// Evaluates the reduced Jacobi residuals on every grid node.
///
/// Kink points are skipped and counted; a grid on which every node is a
/// kink point is an error rather than a vacuous pass.
pub fn check_integrability(
    spec: &FieldSpec,
    grid: &Grid,
    tol: f64,
    mode: DerivMode,
) -> Result<IntegrabilityReport, IntegrabilityError> {
    if grid.is_empty() || grid.dim() != spec.dim() {
        return Err(IntegrabilityError::BadGrid);
    }
    let points = grid.points();
    let results: Vec<Result<Option<IntegrabilitySample>, IntegrabilityError>> = points
        .par_iter()
        .map(|x| sample_point(spec, x, mode))
        .collect();
    let mut samples = Vec::with_capacity(points.len());
    let mut skipped = 0;
    for r in results {
        match r? {
            Some(s) => samples.push(s),
            None => skipped += 1,
        }
    }
    if samples.is_empty() {
        return Err(IntegrabilityError::AllSkipped(skipped));
    }
    let max_abs_residual = samples.iter().map(|s| s.residual.abs()).fold(0.0, f64::max);
    let verdict = if max_abs_residual <= tol {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(IntegrabilityReport {
        field: spec.name().map(str::to_string),
        mode,
        samples,
        max_abs_residual,
        skipped_kink_points: skipped,
        tolerance: tol,
        verdict,
    })
}
