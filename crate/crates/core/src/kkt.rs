//! KKT certificates for minimising a quasi-convex solution `u`, given only
//! its field `g`, under differentiable convex constraints `h_i(x) <= 0`.
//!
//! A point is certified when it is feasible and
//! `-g(x*) = sum_i lambda_i grad h_i(x*)` with `lambda_i >= 0` and
//! `lambda_i h_i(x*) = 0`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::Expr;
use crate::field::{DomainBox, FieldError, FieldSpec, Point};
use crate::nnls::nnls;
use crate::parse::ParseError;
use crate::quasiconvex::QcClass;
use crate::sampling::{rng_stream, uniform_in, Grid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KktError {
    #[error("constraint {index}: {source}", index = .index + 1)]
    Parse { index: usize, source: ParseError },
    #[error("constraint {index} fails midpoint convexity between {x:?} and {y:?} by {gap:e}", index = .index + 1)]
    NotConvex {
        index: usize,
        x: Vec<f64>,
        y: Vec<f64>,
        gap: f64,
    },
    #[error("constraint {index} has a non-finite gradient at {x:?}", index = .index + 1)]
    NonFiniteGradient { index: usize, x: Vec<f64> },
    #[error("point {0:?} lies outside the domain")]
    OutsideDomain(Vec<f64>),
    #[error("constraint box must lie inside the field domain")]
    BoxOutsideDomain,
    #[error("expected points of dimension {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("no strictly feasible point found in {0} samples")]
    NoSlaterPoint(usize),
    #[error("no feasible grid point")]
    EmptyFeasibleGrid,
    #[error("constraints file: {0}")]
    Json(String),
}

const CONVEXITY_PAIRS: usize = 1000;
const CONVEXITY_SLACK: f64 = 1e-9;
const SLATER_SAMPLES: usize = 1000;
const SLATER_MARGIN: f64 = 1e-9;

/// Constraints `h_i(x) <= 0` over a box.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintSet {
    sources: Vec<String>,
    exprs: Vec<Expr>,
    grads: Vec<Vec<Expr>>,
    domain: DomainBox,
    user: usize,
}

impl ConstraintSet {
    /// Parses the constraints and spot-checks midpoint convexity on the box.
    pub fn new<S: AsRef<str>>(sources: &[S], domain: DomainBox) -> Result<Self, KktError> {
        let n = domain.dim();
        let exprs = sources
            .iter()
            .enumerate()
            .map(|(index, s)| {
                Expr::parse(s.as_ref(), n).map_err(|source| KktError::Parse { index, source })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let cs = ConstraintSet {
            sources: sources.iter().map(|s| s.as_ref().to_string()).collect(),
            grads: exprs.iter().map(|e| e.gradient(n)).collect(),
            exprs,
            user: sources.len(),
            domain,
        };
        cs.check_convexity(CONVEXITY_PAIRS, 0)?;
        Ok(cs)
    }

    /// Reads a JSON array of expression strings.
    pub fn from_json(text: &str, domain: DomainBox) -> Result<Self, KktError> {
        let sources: Vec<String> =
            serde_json::from_str(text).map_err(|e| KktError::Json(e.to_string()))?;
        ConstraintSet::new(&sources, domain)
    }

    /// The user constraints as a JSON array.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.sources[..self.user]).expect("strings serialise")
    }

    /// Appends `lo_j - x_j <= 0` and `x_j - hi_j <= 0` for every axis.
    pub fn with_box_faces(&self) -> Self {
        let n = self.domain.dim();
        let mut out = self.clone();
        for j in 0..n {
            for s in [
                format!("({}) - x{}", self.domain.lower[j], j + 1),
                format!("x{} - ({})", j + 1, self.domain.upper[j]),
            ] {
                let e = Expr::parse(&s, n).expect("face expression parses");
                out.grads.push(e.gradient(n));
                out.exprs.push(e);
                out.sources.push(s);
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.exprs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exprs.is_empty()
    }

    /// Number of constraints supplied by the caller, excluding box faces.
    pub fn user_len(&self) -> usize {
        self.user
    }

    pub fn is_face(&self, i: usize) -> bool {
        i >= self.user
    }

    pub fn sources(&self) -> &[String] {
        &self.sources
    }

    pub fn domain(&self) -> &DomainBox {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn values(&self, x: &[f64]) -> Vec<f64> {
        self.exprs.iter().map(|e| e.eval(x)).collect()
    }

    pub fn gradient(&self, i: usize, x: &[f64]) -> Vec<f64> {
        self.grads[i].iter().map(|e| e.eval(x)).collect()
    }

    /// Largest user constraint value.
    pub fn max_user_value(&self, x: &[f64]) -> f64 {
        self.exprs[..self.user]
            .iter()
            .map(|e| e.eval(x))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn feasible(&self, x: &[f64], tol: f64) -> bool {
        self.exprs.iter().all(|e| e.eval(x) <= tol)
    }

    /// `h((x + y) / 2) <= (h(x) + h(y)) / 2 + 1e-9` on sampled pairs.
    pub fn check_convexity(&self, num_pairs: usize, seed: u64) -> Result<(), KktError> {
        let mut rng = rng_stream(seed, 51);
        for _ in 0..num_pairs {
            let x = uniform_in(&mut rng, &self.domain);
            let y = uniform_in(&mut rng, &self.domain);
            let m: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 0.5 * (a + b)).collect();
            for (index, e) in self.exprs.iter().enumerate() {
                let gap = e.eval(&m) - 0.5 * (e.eval(&x) + e.eval(&y));
                if gap > CONVEXITY_SLACK || gap.is_nan() {
                    return Err(KktError::NotConvex { index, x, y, gap });
                }
                if self.gradient(index, &x).iter().any(|v| !v.is_finite()) {
                    return Err(KktError::NonFiniteGradient { index, x });
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlaterResult {
    /// Sampled point with the smallest `max_i h_i`, when that is negative.
    pub point: Option<Point>,
    pub max_value: f64,
    pub samples: usize,
}

/// Looks for a strictly feasible point among uniform samples of the box.
pub fn slater_check(cs: &ConstraintSet, num_samples: usize, seed: u64) -> SlaterResult {
    let mut rng = rng_stream(seed, 52);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..num_samples {
        let x = uniform_in(&mut rng, cs.domain());
        let v = cs.max_user_value(&x);
        if best.as_ref().is_none_or(|(b, _)| v < *b) {
            best = Some((v, x));
        }
    }
    match best {
        Some((v, x)) if v < -SLATER_MARGIN => SlaterResult {
            point: Some(Point::from(x)),
            max_value: v,
            samples: num_samples,
        },
        Some((v, _)) => SlaterResult {
            point: None,
            max_value: v,
            samples: num_samples,
        },
        None => SlaterResult {
            point: None,
            max_value: f64::INFINITY,
            samples: 0,
        },
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KktTolerances {
    pub feas_tol: f64,
    pub act_tol: f64,
    pub stat_tol: f64,
    pub slack_tol: f64,
}

impl Default for KktTolerances {
    fn default() -> Self {
        KktTolerances {
            feas_tol: 1e-8,
            act_tol: 1e-6,
            stat_tol: 1e-6,
            slack_tol: 1e-10,
        }
    }
}

impl KktTolerances {
    /// Defaults with the looser stationarity tolerance used by the search.
    pub fn search() -> Self {
        KktTolerances {
            stat_tol: 1e-4,
            ..KktTolerances::default()
        }
    }
}

/// Evidence that `u` is quasi-convex, which the certificate relies on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QcGate {
    Assume,
    Report(QcClass),
}

impl QcGate {
    fn allows(self) -> bool {
        match self {
            QcGate::Assume => true,
            QcGate::Report(c) => matches!(c, QcClass::QuasiConvex | QcClass::StrictlyQuasiConvex),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KktVerdict {
    Certified,
    Rejected,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Feasibility,
    Stationarity,
    Slackness,
    Slater,
    NotQuasiConvex,
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RejectReason::Feasibility => "feasibility",
            RejectReason::Stationarity => "stationarity",
            RejectReason::Slackness => "slackness",
            RejectReason::Slater => "slater",
            RejectReason::NotQuasiConvex => "not quasi-convex",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KktCertificate {
    pub x_star: Point,
    pub constraints: Vec<String>,
    pub values: Vec<f64>,
    pub active: Vec<bool>,
    pub multipliers: Vec<f64>,
    /// `|g(x*) + sum_i lambda_i grad h_i(x*)|`
    pub stationarity_residual: f64,
    /// `lambda_i h_i(x*)`
    pub slackness: Vec<f64>,
    /// `max_i h_i(x*)`
    pub feasibility: f64,
    pub verdict: KktVerdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<RejectReason>,
}

impl KktCertificate {
    pub fn certified(&self) -> bool {
        self.verdict == KktVerdict::Certified
    }
}

/// NNLS over the constraints flagged in `active`; the rest get zero.
fn multipliers(g: &[f64], grads: &[Vec<f64>], active: &[bool]) -> (Vec<f64>, f64) {
    let n = g.len();
    let cols: Vec<usize> = (0..grads.len()).filter(|&i| active[i]).collect();
    let a = DMatrix::from_fn(n, cols.len(), |r, c| grads[cols[c]][r]);
    let b = DVector::from_iterator(n, g.iter().map(|v| -v));
    let sol = nnls(&a, &b);
    let mut lambda = vec![0.0; grads.len()];
    for (c, &i) in cols.iter().enumerate() {
        lambda[i] = sol.x[c];
    }
    (lambda, sol.residual)
}

fn check_point(spec: &FieldSpec, cs: &ConstraintSet, x: &[f64]) -> Result<(), KktError> {
    if x.len() != cs.dim() || spec.dim() != cs.dim() {
        return Err(KktError::Dimension {
            expected: spec.dim(),
            got: x.len(),
        });
    }
    if !spec.domain().contains_strict(x) {
        return Err(KktError::OutsideDomain(x.to_vec()));
    }
    Ok(())
}

fn certificate(
    spec: &FieldSpec,
    cs: &ConstraintSet,
    x: &[f64],
    tols: &KktTolerances,
    pre: Option<RejectReason>,
) -> Result<KktCertificate, KktError> {
    let g = spec.eval(x)?;
    let values = cs.values(x);
    let grads: Vec<Vec<f64>> = (0..cs.len()).map(|i| cs.gradient(i, x)).collect();
    let active: Vec<bool> = values.iter().map(|&h| h >= -tols.act_tol).collect();
    let (lambda, residual) = multipliers(&g, &grads, &active);
    let slackness: Vec<f64> = lambda.iter().zip(&values).map(|(l, h)| l * h).collect();
    let feasibility = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let reason = pre.or_else(|| {
        if feasibility > tols.feas_tol {
            Some(RejectReason::Feasibility)
        } else if !(residual <= tols.stat_tol) {
            Some(RejectReason::Stationarity)
        } else if slackness.iter().any(|s| s.abs() > tols.slack_tol) {
            Some(RejectReason::Slackness)
        } else {
            None
        }
    });
    Ok(KktCertificate {
        x_star: Point::from(x),
        constraints: cs.sources().to_vec(),
        values,
        active,
        multipliers: lambda,
        stationarity_residual: residual,
        slackness,
        feasibility,
        verdict: if reason.is_none() {
            KktVerdict::Certified
        } else {
            KktVerdict::Rejected
        },
        reason,
    })
}

/// Checks the KKT conditions at `x`.
///
/// Constraints with `h_i(x) >= -act_tol` are active; the others get a zero
/// multiplier. Certification also needs a Slater point and a quasi-convexity
/// gate that is not known to fail.
pub fn kkt_verify(
    spec: &FieldSpec,
    cs: &ConstraintSet,
    x: &[f64],
    tols: &KktTolerances,
    gate: QcGate,
) -> Result<KktCertificate, KktError> {
    check_point(spec, cs, x)?;
    let pre = if !gate.allows() {
        Some(RejectReason::NotQuasiConvex)
    } else if slater_check(cs, SLATER_SAMPLES, 0).point.is_none() {
        Some(RejectReason::Slater)
    } else {
        None
    };
    certificate(spec, cs, x, tols, pre)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KktSearchConfig {
    pub grid_per_axis: usize,
    /// Add the faces of the constraint box as constraints.
    pub box_faces: bool,
    pub tols: KktTolerances,
    pub gate: QcGate,
    /// Distinct active sets taken from the grid into refinement.
    pub candidates: usize,
    pub max_refine_steps: usize,
}

impl Default for KktSearchConfig {
    fn default() -> Self {
        KktSearchConfig {
            grid_per_axis: 41,
            box_faces: true,
            tols: KktTolerances::search(),
            gate: QcGate::Assume,
            candidates: 5,
            max_refine_steps: 4000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KktSearchOutcome {
    pub candidate: Point,
    pub certificate: KktCertificate,
    pub on_box_face: bool,
    pub note: String,
    pub grid_points: usize,
    pub feasible_points: usize,
}

/// Gauss–Newton projection onto `{h_i = 0 : i in set}`.
fn project(cs: &ConstraintSet, set: &[usize], x: &[f64]) -> Option<Vec<f64>> {
    let n = x.len();
    let mut y = x.to_vec();
    for _ in 0..60 {
        let r = DVector::from_iterator(set.len(), set.iter().map(|&i| cs.exprs[i].eval(&y)));
        if r.amax() <= 1e-14 {
            return Some(y);
        }
        let j = DMatrix::from_fn(set.len(), n, |a, b| cs.grads[set[a]][b].eval(&y));
        let dx = j.svd(true, true).solve(&(-r), 1e-14).ok()?;
        for k in 0..n {
            y[k] += dx[k];
        }
        if y.iter().any(|v| !v.is_finite()) {
            return None;
        }
    }
    let r = set
        .iter()
        .map(|&i| cs.exprs[i].eval(&y).abs())
        .fold(0.0, f64::max);
    (r <= 1e-10).then_some(y)
}

fn residual_on(spec: &FieldSpec, cs: &ConstraintSet, set: &[usize], x: &[f64]) -> Option<f64> {
    let g = spec.eval(x).ok()?;
    let mut active = vec![false; cs.len()];
    let grads: Vec<Vec<f64>> = (0..cs.len()).map(|i| cs.gradient(i, x)).collect();
    for &i in set {
        active[i] = true;
    }
    Some(multipliers(&g, &grads, &active).1)
}

/// Pattern search along the active boundary, halving the step on failure.
fn refine(
    spec: &FieldSpec,
    cs: &ConstraintSet,
    set: &[usize],
    x0: &[f64],
    step0: f64,
    cfg: &KktSearchConfig,
) -> Option<(Vec<f64>, f64)> {
    let admissible =
        |y: &[f64]| spec.domain().contains_strict(y) && cs.feasible(y, cfg.tols.feas_tol);
    let mut x = project(cs, set, x0)?;
    if !admissible(&x) {
        return None;
    }
    let mut r = residual_on(spec, cs, set, &x)?;
    let n = x.len();
    let mut step = step0;
    let floor = 1e-13 * cs.domain().max_width();
    let mut steps = 0;
    while step > floor && r > 1e-14 && steps < cfg.max_refine_steps {
        steps += 1;
        let mut moved = false;
        for k in 0..n {
            for s in [1.0, -1.0] {
                let mut y = x.clone();
                y[k] += s * step;
                let Some(y) = project(cs, set, &y) else {
                    continue;
                };
                if !admissible(&y) {
                    continue;
                }
                if let Some(ry) = residual_on(spec, cs, set, &y) {
                    if ry < r {
                        x = y;
                        r = ry;
                        moved = true;
                    }
                }
            }
        }
        if !moved {
            step *= 0.5;
        }
    }
    Some((x, r))
}

/// Grid search for a KKT point followed by refinement on the boundary of
/// the best active sets.
pub fn kkt_search(
    spec: &FieldSpec,
    constraints: &ConstraintSet,
    cfg: &KktSearchConfig,
) -> Result<KktSearchOutcome, KktError> {
    let b = constraints.domain().clone();
    if spec.dim() != b.dim() {
        return Err(KktError::Dimension {
            expected: spec.dim(),
            got: b.dim(),
        });
    }
    if !b.within(spec.domain()) {
        return Err(KktError::BoxOutsideDomain);
    }
    if slater_check(constraints, SLATER_SAMPLES, 0).point.is_none() {
        return Err(KktError::NoSlaterPoint(SLATER_SAMPLES));
    }
    let cs = if cfg.box_faces {
        constraints.with_box_faces()
    } else {
        constraints.clone()
    };
    let grid = Grid::inclusive(&b, cfg.grid_per_axis);
    let points = grid.points();
    let cell = b
        .widths()
        .iter()
        .map(|w| w / (cfg.grid_per_axis.max(2) - 1) as f64)
        .fold(0.0, f64::max);
    let reach = cell * (b.dim() as f64).sqrt();

    let scored: Vec<(f64, Vec<usize>, Vec<f64>)> = points
        .par_iter()
        .filter(|x| spec.domain().contains_strict(x) && cs.feasible(x, cfg.tols.feas_tol))
        .filter_map(|x| {
            let g = spec.eval(x).ok()?;
            let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            let grads: Vec<Vec<f64>> = (0..cs.len()).map(|i| cs.gradient(i, x)).collect();
            let values = cs.values(x);
            let active: Vec<bool> = (0..cs.len())
                .map(|i| {
                    let gh = grads[i].iter().map(|v| v * v).sum::<f64>().sqrt();
                    values[i] >= -reach * gh - cfg.tols.act_tol
                })
                .collect();
            let (_, res) = multipliers(&g, &grads, &active);
            let set: Vec<usize> = (0..cs.len()).filter(|&i| active[i]).collect();
            Some((res / gn.max(f64::MIN_POSITIVE), set, x.clone()))
        })
        .collect();
    if scored.is_empty() {
        return Err(KktError::EmptyFeasibleGrid);
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&i, &j| scored[i].0.total_cmp(&scored[j].0).then(i.cmp(&j)));
    let mut seeds: Vec<usize> = Vec::new();
    for &i in &order {
        if seeds.len() >= cfg.candidates {
            break;
        }
        if !seeds.iter().any(|&s| scored[s].1 == scored[i].1) {
            seeds.push(i);
        }
    }

    let mut best: Option<KktCertificate> = None;
    for &s in &seeds {
        let (_, set, x0) = &scored[s];
        let x = match refine(spec, &cs, set, x0, cell, cfg) {
            Some((x, _)) => x,
            None => x0.clone(),
        };
        let cert = certificate(
            spec,
            &cs,
            &x,
            &cfg.tols,
            (!cfg.gate.allows()).then_some(RejectReason::NotQuasiConvex),
        )?;
        let better = match &best {
            None => true,
            Some(b) => {
                (cert.certified() && !b.certified())
                    || (cert.certified() == b.certified()
                        && cert.stationarity_residual < b.stationarity_residual)
            }
        };
        if better {
            best = Some(cert);
        }
    }
    let cert = best.expect("at least one seed");
    let on_box_face = (0..cs.len()).any(|i| cs.is_face(i) && cert.active[i]);
    let note = match (cert.certified(), on_box_face) {
        (true, false) => "certified interior KKT point".to_string(),
        (true, true) => {
            "no certified minimizer in box interior; minimum attained on box boundary".to_string()
        }
        (false, _) => format!(
            "best-effort candidate, rejected: {}",
            cert.reason.map(|r| r.to_string()).unwrap_or_default()
        ),
    };
    Ok(KktSearchOutcome {
        candidate: cert.x_star.clone(),
        certificate: cert,
        on_box_face,
        note,
        grid_points: points.len(),
        feasible_points: scored.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleMinimum {
    pub x: Point,
    pub value: f64,
    /// Grid spacing per axis after the last refinement round.
    pub spacing: Vec<f64>,
}

const ORACLE_ROUNDS: usize = 3;
const LOCAL_HALF_WIDTH: f64 = 4.0;

/// Brute-force minimiser of `u` over feasible grid points, refined three
/// times on a halved local grid around the incumbent.
pub fn minimize_oracle(
    u: &Expr,
    cs: &ConstraintSet,
    grid_density: usize,
) -> Result<OracleMinimum, KktError> {
    let b = cs.domain();
    let feasible = |x: &[f64]| cs.max_user_value(x) <= 0.0 || cs.user_len() == 0;
    let pick = |pts: Vec<Vec<f64>>| {
        pts.into_par_iter()
            .filter(|x| feasible(x))
            .map(|x| (u.eval(&x), x))
            .filter(|(v, _)| v.is_finite())
            .min_by(|a, b| {
                a.0.total_cmp(&b.0)
                    .then_with(|| a.1.partial_cmp(&b.1).unwrap())
            })
    };
    let m = grid_density.max(2);
    let (mut value, mut x) =
        pick(Grid::inclusive(b, m).points()).ok_or(KktError::EmptyFeasibleGrid)?;
    let mut spacing: Vec<f64> = b.widths().iter().map(|w| w / (m - 1) as f64).collect();
    for _ in 0..ORACLE_ROUNDS {
        spacing.iter_mut().for_each(|s| *s *= 0.5);
        let local = DomainBox {
            lower: (0..x.len())
                .map(|i| (x[i] - LOCAL_HALF_WIDTH * spacing[i]).max(b.lower[i]))
                .collect(),
            upper: (0..x.len())
                .map(|i| (x[i] + LOCAL_HALF_WIDTH * spacing[i]).min(b.upper[i]))
                .collect(),
        };
        let mut pts = Grid::inclusive(&local, 2 * LOCAL_HALF_WIDTH as usize + 1).points();
        pts.push(x.clone());
        if let Some((v, y)) = pick(pts) {
            if v < value {
                value = v;
                x = y;
            }
        }
    }
    Ok(OracleMinimum {
        x: Point::from(x),
        value,
        spacing,
    })
}

/// Uniform sample of feasible points, used by tests and the book.
pub fn sample_feasible(cs: &ConstraintSet, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng_stream(seed, 53);
    let mut out = Vec::with_capacity(count);
    let mut tries = 0;
    while out.len() < count && tries < 100 * count.max(1) {
        tries += 1;
        let x = uniform_in(&mut rng, cs.domain());
        if cs.max_user_value(&x) <= 0.0 || cs.user_len() == 0 {
            out.push(x);
        }
    }
    out
}
