//! The ray ODE and its solution function `c(t; x~, z)`.
//!
//! With pivot `p` and `f_i = -g_i / g_p`, the state is the pivot
//! coordinate and the remaining coordinates move on the segment from
//! `x~*` to `x~`:
//!
//! ```text
//! c'(t) = f((1 - t) x~* + t x~, c(t)) . (x~ - x~*),   c(0) = z
//! ```

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::field::{lift, reduce, DomainBox, FieldError, FieldSpec};
use crate::ode::{integrate, OdeConfig, OdeError, Termination, Trajectory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RayError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error("pivot component g_{pivot} vanishes at {point:?}", pivot = .pivot + 1)]
    PivotVanishes { pivot: usize, point: Vec<f64> },
    #[error("ray left the guard box at t = {exit_t}")]
    LeftGuard { exit_t: f64 },
    #[error("integration hit its step limit at t = {t}")]
    StepLimit { t: f64 },
    #[error("reduced point has {got} coordinates, expected {expected}")]
    Dimension { got: usize, expected: usize },
}

/// Right-hand side of the ray ODE as a function of `(t, z)`.
pub fn ray_rhs<'a>(
    spec: &'a FieldSpec,
    pivot: usize,
    xstar_tilde: &'a [f64],
    xtilde: &'a [f64],
) -> impl Fn(f64, f64) -> Result<f64, RayError> + 'a {
    let dir: Vec<f64> = xtilde.iter().zip(xstar_tilde).map(|(a, b)| a - b).collect();
    let degenerate = dir.iter().all(|&d| d == 0.0);
    move |t, z| {
        if degenerate {
            return Ok(0.0);
        }
        let base: Vec<f64> = xstar_tilde
            .iter()
            .zip(xtilde)
            .map(|(s, x)| (1.0 - t) * s + t * x)
            .collect();
        let point = lift(&base, pivot, z);
        let g = spec.eval(&point)?;
        let gp = g[pivot];
        if gp == 0.0 {
            return Err(RayError::PivotVanishes { pivot, point });
        }
        let gr = reduce(&g, pivot);
        Ok(-gr.iter().zip(&dir).map(|(gi, d)| gi * d).sum::<f64>() / gp)
    }
}

type Key = (Vec<u64>, u64);

const CACHE_CAP: usize = 50_000;

/// Memoising evaluator of `c(t; x~, z)` for a fixed field, pivot and base point.
///
/// Shared across threads; the cache is cleared wholesale when it grows
/// past a fixed size.
#[derive(Debug)]
pub struct SolutionFunction {
    spec: Arc<FieldSpec>,
    pivot: usize,
    xstar: Vec<f64>,
    xstar_tilde: Vec<f64>,
    cfg: OdeConfig,
    cache: Mutex<HashMap<Key, Arc<Trajectory>>>,
}

impl Clone for SolutionFunction {
    fn clone(&self) -> Self {
        SolutionFunction::new(
            self.spec.clone(),
            self.pivot,
            self.xstar.clone(),
            self.cfg.clone(),
        )
    }
}

impl SolutionFunction {
    /// `cfg.guard_box`, when present, is a full n-dimensional box; only its
    /// pivot interval constrains the state.
    pub fn new(spec: Arc<FieldSpec>, pivot: usize, xstar: Vec<f64>, cfg: OdeConfig) -> Self {
        let xstar_tilde = reduce(&xstar, pivot);
        SolutionFunction {
            spec,
            pivot,
            xstar,
            xstar_tilde,
            cfg,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn spec(&self) -> &FieldSpec {
        &self.spec
    }

    pub fn pivot(&self) -> usize {
        self.pivot
    }

    pub fn xstar(&self) -> &[f64] {
        &self.xstar
    }

    pub fn xstar_tilde(&self) -> &[f64] {
        &self.xstar_tilde
    }

    fn state_cfg(&self) -> OdeConfig {
        let guard = self.cfg.guard_box.as_ref().map(|b| DomainBox {
            lower: vec![b.lower[self.pivot]],
            upper: vec![b.upper[self.pivot]],
        });
        OdeConfig {
            method: self.cfg.method,
            guard_box: guard,
        }
    }

    /// Full trajectory over `[0, 1]`, possibly cut short by the guard box.
    pub fn trajectory(&self, xtilde: &[f64], z: f64) -> Result<Arc<Trajectory>, RayError> {
        if xtilde.len() != self.xstar_tilde.len() {
            return Err(RayError::Dimension {
                got: xtilde.len(),
                expected: self.xstar_tilde.len(),
            });
        }
        let key = (xtilde.iter().map(|v| v.to_bits()).collect(), z.to_bits());
        if let Some(tr) = self.cache.lock().unwrap().get(&key) {
            return Ok(tr.clone());
        }
        let rhs = ray_rhs(&self.spec, self.pivot, &self.xstar_tilde, xtilde);
        let tr = Arc::new(integrate(
            |t, y: &[f64]| rhs(t, y[0]).map(|v| vec![v]),
            0.0,
            &[z],
            1.0,
            &self.state_cfg(),
        )?);
        let mut cache = self.cache.lock().unwrap();
        if cache.len() >= CACHE_CAP {
            cache.clear();
        }
        cache.insert(key, tr.clone());
        Ok(tr)
    }

    /// `c(t; x~, z)` for `t` in `[0, 1]`.
    pub fn eval(&self, t: f64, xtilde: &[f64], z: f64) -> Result<f64, RayError> {
        if t == 0.0 || xtilde == self.xstar_tilde.as_slice() {
            return Ok(z);
        }
        let tr = self.trajectory(xtilde, z)?;
        if let Some(v) = tr.eval(t) {
            return Ok(v[0]);
        }
        Err(match tr.termination {
            Termination::LeftGuardBox { t } => RayError::LeftGuard { exit_t: t },
            Termination::StepLimit { t } => RayError::StepLimit { t },
            Termination::Completed => unreachable!("completed trajectories cover [0, 1]"),
        })
    }

    /// `E^z(x~) = c(1; x~, z)`.
    pub fn level(&self, xtilde: &[f64], z: f64) -> Result<f64, RayError> {
        self.eval(1.0, xtilde, z)
    }

    pub fn cache_len(&self) -> usize {
        self.cache.lock().unwrap().len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn debreu_fn() -> SolutionFunction {
        let spec = Arc::new(FieldSpec::builtin("debreu").unwrap());
        SolutionFunction::new(spec, 1, vec![0.0, 0.0], OdeConfig::default())
    }

    #[test]
    fn ray_rhs_examples() {
        let d = FieldSpec::builtin("debreu").unwrap();
        let r = ray_rhs(&d, 1, &[0.0], &[0.5]);
        assert!((r(0.0, 1.0).unwrap() + 0.5).abs() < 1e-15);

        let a = FieldSpec::builtin("arrow_enthoven").unwrap();
        let r = ray_rhs(&a, 1, &[1.0], &[2.0]);
        let expect = -(1.0 + 2.0 / 8f64.sqrt()) / (2.0 / 8f64.sqrt());
        assert!((r(0.0, 1.0).unwrap() - expect).abs() < 1e-12);
        assert!((expect + 2.41421).abs() < 1e-5);

        let k = FieldSpec::builtin("katzner").unwrap();
        let r = ray_rhs(&k, 0, &[1.0], &[1.0]);
        assert_eq!(r(0.3, 99.0).unwrap(), 0.0);
    }

    #[test]
    fn debreu_ray_solution() {
        let c = debreu_fn();
        let v = c.level(&[0.5], 1.0).unwrap();
        assert!((v - 1.0 / 1.5).abs() < 1e-9);
        let mid = c.eval(0.5, &[0.5], 1.0).unwrap();
        assert!((mid - 1.0 / 1.25).abs() < 1e-6);
    }

    #[test]
    fn degenerate_ray_and_time_zero_are_exact() {
        let c = debreu_fn();
        for z in [-0.3, 0.0, 0.7] {
            assert_eq!(c.eval(0.8, &[0.0], z).unwrap(), z);
            assert_eq!(c.eval(0.0, &[0.4], z).unwrap().to_bits(), z.to_bits());
        }
    }

    #[test]
    fn increasing_in_z() {
        let c = debreu_fn();
        let vals: Vec<f64> = [0.2, 0.4, 0.6, 0.8, 1.0]
            .iter()
            .map(|&z| c.level(&[0.5], z).unwrap())
            .collect();
        assert!(vals.windows(2).all(|w| w[1] > w[0]), "{vals:?}");
    }

    #[test]
    fn memoisation_reuses_trajectories() {
        let c = debreu_fn();
        let a = c.trajectory(&[0.3], 0.5).unwrap();
        let b = c.trajectory(&[0.3], 0.5).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        assert_eq!(c.cache_len(), 1);
    }

    #[test]
    fn guard_exit_reports_time() {
        let spec = Arc::new(FieldSpec::builtin("debreu").unwrap());
        let guard = DomainBox::cube(2, -0.5, 0.5).unwrap();
        let c = SolutionFunction::new(
            spec,
            1,
            vec![0.0, 0.0],
            OdeConfig::default().with_guard(guard),
        );
        // c(t) = 0.45 / (1 - 0.45 * 0.9 t) reaches 0.5 near t = 0.247
        match c.level(&[-0.9], 0.45) {
            Err(RayError::LeftGuard { exit_t }) => {
                assert!((exit_t - 0.2469).abs() < 0.05, "{exit_t}")
            }
            other => panic!("{other:?}"),
        }
    }
}
