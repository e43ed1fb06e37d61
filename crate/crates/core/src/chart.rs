//! Local solution charts.
//!
//! A chart fixes a base point `x*`, a pivot `p` with `g_p(x*) != 0` and two
//! radii `delta < eps`. Inside the delta-box the solution is the unique `z`
//! with `c(1; x~, z) = x_p`, multiplied by an orientation sign that makes
//! `u` increase along `g`.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{dot, lift, norm, reduce, DomainBox, FieldError, FieldSpec, Point};
use crate::integrability::{jacobi_from_parts, pivot_of, reduced_triples, TOL_EXACT};
use crate::ode::OdeConfig;
use crate::ray::{RayError, SolutionFunction};
use crate::sampling::{rng_stream, uniform_in, Grid};
use crate::DerivMode;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChartError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Ray(#[from] RayError),
    #[error("no admissible eps: |g_{pivot}| drops below half its centre value on every box down to {eps_min:e}", pivot = .pivot + 1)]
    NoAdmissibleEps { pivot: usize, eps_min: f64 },
    #[error("no admissible delta above {delta_min:e} (eps = {eps})")]
    NoAdmissibleDelta { eps: f64, delta_min: f64 },
    #[error("integrability fails near the centre (max reduced residual {residual:e})")]
    NotIntegrable { residual: f64 },
    #[error("orientation probe could not separate u(x* - t0 g) and u(x* + t0 g)")]
    Orientation,
    #[error("point {0:?} is not inside the chart's eps-box")]
    OutsideChart(Vec<f64>),
    #[error("bracket failure at {point:?}: E(z_lo) - x_p = {lo:e}, E(z_hi) - x_p = {hi:e}")]
    Bracket { point: Vec<f64>, lo: f64, hi: f64 },
    #[error("bisection did not reach tolerance within {0} iterations")]
    IterationCap(usize),
    #[error("finite-difference stencil of half-width {h} leaves the chart at {point:?}")]
    Stencil { point: Vec<f64>, h: f64 },
    #[error("gradient of u is numerically zero at {0:?}")]
    FlatGradient(Vec<f64>),
}

/// Knobs for [`build_chart`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartConfig {
    pub ode: OdeConfig,
    pub tol_z: f64,
    pub max_iter: usize,
    /// Starting eps; defaults to half the distance from `x*` to the domain boundary.
    pub initial_eps: Option<f64>,
    /// Grid nodes per axis for the eps-box and delta-box checks.
    pub grid_per_axis: usize,
    /// Random points added to the eps-box check.
    pub random_points: usize,
    /// Pairs for the Lipschitz estimate (half far, half close).
    pub lipschitz_pairs: usize,
    /// Initial levels sampled across `[x*_p - eps, x*_p + eps]`.
    pub z_samples: usize,
    pub guard_inflation: f64,
    pub check_integrability: bool,
    pub seed: u64,
}

impl Default for ChartConfig {
    fn default() -> Self {
        ChartConfig {
            ode: OdeConfig::default(),
            tol_z: 1e-10,
            max_iter: 200,
            initial_eps: None,
            grid_per_axis: 5,
            random_points: 64,
            lipschitz_pairs: 400,
            z_samples: 5,
            guard_inflation: 1.1,
            check_integrability: true,
            seed: 0,
        }
    }
}

/// Serializable summary of a chart. Indices are 1-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartMetadata {
    pub field: Option<String>,
    pub center: Point,
    pub pivot: usize,
    pub sign: i8,
    pub eps: f64,
    pub delta: f64,
    pub lipschitz: f64,
    pub bracket: [f64; 2],
    pub tol_z: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionValue {
    /// Signed solution value.
    pub u: f64,
    /// Unsigned root: the pivot coordinate where the level set meets the axis through `x*`.
    pub z: f64,
    pub iterations: usize,
    /// `|c(1; x~, z) - x_p|`.
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub struct SolutionChart {
    spec: Arc<FieldSpec>,
    center: Vec<f64>,
    pivot: usize,
    sign: f64,
    eps: f64,
    delta: f64,
    lipschitz: f64,
    z_lo: f64,
    z_hi: f64,
    tol_z: f64,
    max_iter: usize,
    solution: SolutionFunction,
}

fn f_reduced(spec: &FieldSpec, pivot: usize, x: &[f64]) -> Result<Vec<f64>, FieldError> {
    let g = spec.eval(x)?;
    Ok(reduce(&g, pivot)
        .into_iter()
        .map(|v| -v / g[pivot])
        .collect())
}

fn box_probe_points(b: &DomainBox, cfg: &ChartConfig, stream: u64) -> Vec<Vec<f64>> {
    let mut pts = Grid::inclusive(b, cfg.grid_per_axis).points();
    let mut rng = rng_stream(cfg.seed, stream);
    pts.extend((0..cfg.random_points).map(|_| uniform_in(&mut rng, b)));
    pts
}

fn eps_box_ok(spec: &FieldSpec, pivot: usize, gp0: f64, b: &DomainBox, cfg: &ChartConfig) -> bool {
    if !b.inside(spec.domain()) {
        return false;
    }
    box_probe_points(b, cfg, 1)
        .par_iter()
        .all(|x| match spec.component(pivot, x) {
            Ok(v) => {
                v.abs() >= 0.5 * gp0.abs() && v.signum() == gp0.signum() && spec.eval(x).is_ok()
            }
            Err(_) => false,
        })
}

fn integrable_near(spec: &FieldSpec, b: &DomainBox, cfg: &ChartConfig) -> Result<(), ChartError> {
    if spec.dim() < 3 {
        return Ok(());
    }
    let worst = box_probe_points(b, cfg, 2)
        .par_iter()
        .map(|x| {
            let g = spec.eval(x)?;
            let jac = match spec.jacobian(x, DerivMode::Exact) {
                Ok(j) => j,
                Err(FieldError::Kink { .. }) => return Ok(0.0),
                Err(e) => return Err(e),
            };
            let k = pivot_of(&g);
            Ok(reduced_triples(spec.dim(), k)
                .into_iter()
                .map(|(i, j, k)| jacobi_from_parts(&g, &jac, i, j, k).abs())
                .fold(0.0, f64::max))
        })
        .collect::<Result<Vec<f64>, FieldError>>()?
        .into_iter()
        .fold(0.0, f64::max);
    if worst > TOL_EXACT {
        Err(ChartError::NotIntegrable { residual: worst })
    } else {
        Ok(())
    }
}

/// Largest sampled difference quotient of `f = -g~/g_p` over the box.
fn lipschitz_estimate(
    spec: &FieldSpec,
    pivot: usize,
    b: &DomainBox,
    cfg: &ChartConfig,
) -> Result<f64, FieldError> {
    let mut rng = rng_stream(cfg.seed, 3);
    let close = 1e-3 * b.max_width();
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..cfg.lipschitz_pairs)
        .map(|k| {
            let x = uniform_in(&mut rng, b);
            let y = if k % 2 == 0 {
                uniform_in(&mut rng, b)
            } else {
                let mut y: Vec<f64> = x
                    .iter()
                    .map(|v| v + close * rng.gen_range(-1.0..1.0))
                    .collect();
                for (i, v) in y.iter_mut().enumerate() {
                    *v = v.clamp(b.lower[i], b.upper[i]);
                }
                y
            };
            (x, y)
        })
        .collect();
    let ratios = pairs
        .par_iter()
        .map(|(x, y)| {
            let d = norm(&x.iter().zip(y).map(|(a, b)| a - b).collect::<Vec<_>>());
            if d == 0.0 {
                return Ok(0.0);
            }
            let fx = f_reduced(spec, pivot, x)?;
            let fy = f_reduced(spec, pivot, y)?;
            Ok(norm(&fx.iter().zip(&fy).map(|(a, b)| a - b).collect::<Vec<_>>()) / d)
        })
        .collect::<Result<Vec<f64>, FieldError>>()?;
    Ok(ratios.into_iter().fold(0.0, f64::max))
}

/// Ray checks for a candidate delta. All rays from the reduced delta-grid
/// must complete inside the guard box; rays started at `x*_p +- delta`
/// must stay strictly inside the eps-box; the bracket must straddle
/// `[x*_p - delta, x*_p + delta]`.
fn delta_ok(
    sol: &SolutionFunction,
    center: &[f64],
    pivot: usize,
    eps: f64,
    delta: f64,
    cfg: &ChartConfig,
) -> bool {
    let cp = center[pivot];
    let reduced_box = DomainBox::around(&reduce(center, pivot), delta);
    let xts = Grid::inclusive(&reduced_box, cfg.grid_per_axis).points();
    let m = cfg.z_samples.max(2);
    let mut zs: Vec<f64> = (0..m)
        .map(|k| cp - eps + 2.0 * eps * k as f64 / (m - 1) as f64)
        .collect();
    zs[m - 1] = cp + eps;
    zs.push(cp - delta);
    zs.push(cp + delta);
    let jobs: Vec<(&Vec<f64>, f64)> = xts
        .iter()
        .flat_map(|xt| zs.iter().map(move |&z| (xt, z)))
        .collect();
    jobs.par_iter().all(|&(xt, z)| {
        let tr = match sol.trajectory(xt, z) {
            Ok(tr) if tr.completed() => tr,
            _ => return false,
        };
        let end = tr.final_state()[0];
        if z == cp - eps && !(end < cp - delta) {
            return false;
        }
        if z == cp + eps && !(end > cp + delta) {
            return false;
        }
        if z == cp - delta || z == cp + delta {
            let (lo, hi) = tr.range();
            if !(lo[0] > cp - eps && hi[0] < cp + eps) {
                return false;
            }
        }
        true
    })
}

/// Builds a chart around `xstar`.
pub fn build_chart(
    spec: &FieldSpec,
    xstar: &[f64],
    cfg: &ChartConfig,
) -> Result<SolutionChart, ChartError> {
    let g0 = spec.eval(xstar)?;
    let pivot = pivot_of(&g0);
    let gp0 = g0[pivot];
    let n = spec.dim();
    let domain = spec.domain();
    let width = domain.max_width();
    let floor = 1e-6 * width;

    let mut eps = cfg.initial_eps.unwrap_or(0.5 * domain.margin(xstar));
    loop {
        if eps < floor {
            return Err(ChartError::NoAdmissibleEps {
                pivot,
                eps_min: floor,
            });
        }
        if eps_box_ok(spec, pivot, gp0, &DomainBox::around(xstar, eps), cfg) {
            break;
        }
        eps *= 0.5;
    }
    let eps_box = DomainBox::around(xstar, eps);
    if cfg.check_integrability {
        integrable_near(spec, &eps_box, cfg)?;
    }
    let lipschitz = lipschitz_estimate(spec, pivot, &eps_box, cfg)?;
    let radius_cap = if lipschitz > 0.0 {
        1.0 / (2.0 * lipschitz * lipschitz)
    } else {
        f64::INFINITY
    };

    let guard = DomainBox::around(xstar, cfg.guard_inflation * eps);
    let ode = OdeConfig {
        method: cfg.ode.method,
        guard_box: Some(guard),
    };
    let spec = Arc::new(spec.clone());
    let solution = SolutionFunction::new(spec.clone(), pivot, xstar.to_vec(), ode);

    let mut delta = 0.5 * eps;
    loop {
        if delta < floor {
            return Err(ChartError::NoAdmissibleDelta {
                eps,
                delta_min: floor,
            });
        }
        if delta * ((n - 1) as f64).sqrt() <= radius_cap
            && delta_ok(&solution, xstar, pivot, eps, delta, cfg)
        {
            break;
        }
        delta *= 0.5;
    }

    let mut chart = SolutionChart {
        spec,
        center: xstar.to_vec(),
        pivot,
        sign: 1.0,
        eps,
        delta,
        lipschitz,
        z_lo: xstar[pivot] - eps,
        z_hi: xstar[pivot] + eps,
        tol_z: cfg.tol_z,
        max_iter: cfg.max_iter,
        solution,
    };
    let gn = norm(&g0);
    let t0 = delta / (4.0 * gn);
    let ahead: Vec<f64> = xstar.iter().zip(&g0).map(|(x, g)| x + t0 * g).collect();
    let behind: Vec<f64> = xstar.iter().zip(&g0).map(|(x, g)| x - t0 * g).collect();
    let up = chart.eval_solution(&ahead)?.z;
    let down = chart.eval_solution(&behind)?.z;
    chart.sign = if up > down {
        1.0
    } else if up < down {
        -1.0
    } else {
        return Err(ChartError::Orientation);
    };
    Ok(chart)
}

impl SolutionChart {
    pub fn build(spec: &FieldSpec, xstar: &[f64], cfg: &ChartConfig) -> Result<Self, ChartError> {
        build_chart(spec, xstar, cfg)
    }

    pub fn spec(&self) -> &FieldSpec {
        &self.spec
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    /// 0-based pivot index.
    pub fn pivot(&self) -> usize {
        self.pivot
    }

    pub fn sign(&self) -> f64 {
        self.sign
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn bracket(&self) -> (f64, f64) {
        (self.z_lo, self.z_hi)
    }

    pub fn tol_z(&self) -> f64 {
        self.tol_z
    }

    pub fn solution_function(&self) -> &SolutionFunction {
        &self.solution
    }

    /// The open delta-box `V`.
    pub fn delta_box(&self) -> DomainBox {
        DomainBox::around(&self.center, self.delta)
    }

    pub fn eps_box(&self) -> DomainBox {
        DomainBox::around(&self.center, self.eps)
    }

    /// Whether `x` lies in the validated delta-box.
    pub fn contains(&self, x: &[f64]) -> bool {
        self.delta_box().contains_strict(x)
    }

    pub fn metadata(&self) -> ChartMetadata {
        ChartMetadata {
            field: self.spec.name().map(str::to_string),
            center: Point::from(self.center.as_slice()),
            pivot: self.pivot + 1,
            sign: self.sign as i8,
            eps: self.eps,
            delta: self.delta,
            lipschitz: self.lipschitz,
            bracket: [self.z_lo, self.z_hi],
            tol_z: self.tol_z,
        }
    }

    /// Solves `c(1; x~, z) = x_p` for `z` by bisection on the chart bracket,
    /// finishing with one secant step inside the final bracket.
    ///
    /// The radii are validated on the delta-box. Points of the eps-box
    /// outside it are still evaluated when the bracket holds there and every
    /// ray stays in the guard box; otherwise the failure is reported.
    pub fn eval_solution(&self, x: &[f64]) -> Result<SolutionValue, ChartError> {
        if !self.eps_box().contains_strict(x) {
            return Err(ChartError::OutsideChart(x.to_vec()));
        }
        let xp = x[self.pivot];
        let xt = reduce(x, self.pivot);
        if xt == self.solution.xstar_tilde() {
            return Ok(SolutionValue {
                u: self.sign * xp,
                z: xp,
                iterations: 0,
                residual: 0.0,
            });
        }
        let phi = |z: f64| -> Result<f64, ChartError> { Ok(self.solution.level(&xt, z)? - xp) };
        let (mut lo, mut hi) = (self.z_lo, self.z_hi);
        let (mut flo, mut fhi) = (phi(lo)?, phi(hi)?);
        if !(flo < 0.0 && fhi > 0.0) {
            return Err(ChartError::Bracket {
                point: x.to_vec(),
                lo: flo,
                hi: fhi,
            });
        }
        let mut iterations = 0;
        while hi - lo > self.tol_z {
            if iterations >= self.max_iter {
                return Err(ChartError::IterationCap(self.max_iter));
            }
            iterations += 1;
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let fm = phi(mid)?;
            if fm == 0.0 {
                (lo, hi, flo, fhi) = (mid, mid, 0.0, 0.0);
                break;
            }
            if fm < 0.0 {
                (lo, flo) = (mid, fm);
            } else {
                (hi, fhi) = (mid, fm);
            }
        }
        let z = if hi > lo && fhi > flo {
            lo - flo * (hi - lo) / (fhi - flo)
        } else {
            lo
        };
        let z = z.clamp(lo, hi);
        let residual = phi(z)?.abs();
        Ok(SolutionValue {
            u: self.sign * z,
            z,
            iterations,
            residual,
        })
    }

    pub fn u(&self, x: &[f64]) -> Result<f64, ChartError> {
        Ok(self.eval_solution(x)?.u)
    }

    /// `E^z(x~) = c(1; x~, z)` with `z` the unsigned level.
    pub fn eval_level_fn(&self, z: f64, xtilde: &[f64]) -> Result<f64, ChartError> {
        Ok(self.solution.level(xtilde, z)?)
    }

    /// The lifted point `(x~, E^z(x~))`.
    pub fn level_point(&self, z: f64, xtilde: &[f64]) -> Result<Vec<f64>, ChartError> {
        Ok(lift(xtilde, self.pivot, self.eval_level_fn(z, xtilde)?))
    }

    fn stencil_ok(&self, x: &[f64], h: f64) -> Result<(), ChartError> {
        let inner = DomainBox::around(&self.center, self.eps - h);
        if h > 0.0 && h < self.eps && inner.contains_strict(x) {
            Ok(())
        } else {
            Err(ChartError::Stencil {
                point: x.to_vec(),
                h,
            })
        }
    }

    /// Central-difference gradient of the signed solution.
    pub fn gradient_fd(&self, x: &[f64], h: f64) -> Result<Vec<f64>, ChartError> {
        self.stencil_ok(x, h)?;
        (0..x.len())
            .into_par_iter()
            .map(|i| {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[i] += h;
                xm[i] -= h;
                Ok((self.u(&xp)? - self.u(&xm)?) / (2.0 * h))
            })
            .collect()
    }

    /// `lambda = (du/dx_p) / g_p` with a central difference along the pivot axis.
    pub fn recover_lambda(&self, x: &[f64], h: f64) -> Result<f64, ChartError> {
        self.stencil_ok(x, h)?;
        let p = self.pivot;
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[p] += h;
        xm[p] -= h;
        let du = (self.u(&xp)? - self.u(&xm)?) / (2.0 * h);
        Ok(du / self.spec.component(p, x)?)
    }

    /// `|grad u - (grad u . g^) g^| / |grad u|`.
    pub fn gradient_alignment_residual(&self, x: &[f64], h: f64) -> Result<f64, ChartError> {
        let du = self.gradient_fd(x, h)?;
        let dn = norm(&du);
        if dn < 1e-12 {
            return Err(ChartError::FlatGradient(x.to_vec()));
        }
        let g = self.spec.eval(x)?;
        let gn = norm(&g);
        let proj = dot(&du, &g) / gn;
        let perp: Vec<f64> = du
            .iter()
            .zip(&g)
            .map(|(d, gi)| d - proj * gi / gn)
            .collect();
        Ok(norm(&perp) / dn)
    }

    /// Largest `|dE^z/dx_i - f_i(x~, E^z(x~))|` over the reduced coordinates,
    /// derivatives by central differences.
    pub fn level_pde_residual(&self, z: f64, xtilde: &[f64], h: f64) -> Result<f64, ChartError> {
        let e = self.eval_level_fn(z, xtilde)?;
        let f = f_reduced(&self.spec, self.pivot, &lift(xtilde, self.pivot, e))?;
        let mut worst = 0.0f64;
        for i in 0..xtilde.len() {
            let mut a = xtilde.to_vec();
            let mut b = xtilde.to_vec();
            a[i] += h;
            b[i] -= h;
            let d = (self.eval_level_fn(z, &a)? - self.eval_level_fn(z, &b)?) / (2.0 * h);
            worst = worst.max((d - f[i]).abs());
        }
        Ok(worst)
    }

    /// Uniform random points in the delta-box, shrunk by `margin` on every side.
    pub fn sample_points(&self, count: usize, margin: f64, seed: u64) -> Vec<Vec<f64>> {
        let inner = DomainBox::around(&self.center, self.delta - margin);
        let mut rng = rng_stream(seed, 11);
        (0..count).map(|_| uniform_in(&mut rng, &inner)).collect()
    }
}
