//! Vector fields `g: U -> R^n \ {0}` on open boxes.

use std::ops::Deref;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::Expr;
use crate::parse::ParseError;

/// Default tolerance for detecting evaluation at a branch point.
pub const KINK_TOL: f64 = 1e-9;
/// Default central-difference step before per-coordinate scaling.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("dimension must be at least 2, got {0}")]
    Dimension(usize),
    #[error("expected {expected} components, got {got}")]
    ComponentCount { expected: usize, got: usize },
    #[error("component {index}: {source}")]
    Parse {
        index: usize,
        #[source]
        source: ParseError,
    },
    #[error("domain bounds must have length n with lower < upper")]
    BadDomain,
    #[error("point {0:?} is not strictly inside the domain")]
    OutsideDomain(Vec<f64>),
    #[error("point has {got} coordinates, field dimension is {n}")]
    PointDimension { got: usize, n: usize },
    #[error("field vanishes at {0:?}")]
    ZeroVector(Vec<f64>),
    #[error("non-finite field value at {0:?}")]
    NonFinite(Vec<f64>),
    #[error("kink point at {point:?}: branch gap {gap:e}; use finite differences or skip")]
    Kink { point: Vec<f64>, gap: f64 },
    #[error("unknown built-in field `{0}`")]
    UnknownBuiltin(String),
    #[error("field file: {0}")]
    Io(String),
    #[error("field file: {0}")]
    Json(String),
}

/// A point in R^n.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Point(pub Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Self {
        Point(coords)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Coordinates with index `skip` removed.
    pub fn reduced(&self, skip: usize) -> Vec<f64> {
        reduce(&self.0, skip)
    }
}

impl Deref for Point {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for Point {
    fn from(v: Vec<f64>) -> Self {
        Point(v)
    }
}

impl From<&[f64]> for Point {
    fn from(v: &[f64]) -> Self {
        Point(v.to_vec())
    }
}

pub fn reduce(x: &[f64], skip: usize) -> Vec<f64> {
    x.iter()
        .enumerate()
        .filter(|&(i, _)| i != skip)
        .map(|(_, &v)| v)
        .collect()
}

/// Inverse of [`reduce`]: inserts `value` at index `at`.
pub fn lift(reduced: &[f64], at: usize, value: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(reduced.len() + 1);
    out.extend_from_slice(&reduced[..at]);
    out.push(value);
    out.extend_from_slice(&reduced[at..]);
    out
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Axis-aligned box. Treated as open: membership tests are strict.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl DomainBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, FieldError> {
        let ok = !lower.is_empty()
            && lower.len() == upper.len()
            && lower
                .iter()
                .zip(&upper)
                .all(|(l, u)| l.is_finite() && u.is_finite() && l < u);
        if ok {
            Ok(DomainBox { lower, upper })
        } else {
            Err(FieldError::BadDomain)
        }
    }

    pub fn cube(n: usize, lo: f64, hi: f64) -> Result<Self, FieldError> {
        DomainBox::new(vec![lo; n], vec![hi; n])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains_strict(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| v.is_finite() && l < v && v < u)
    }

    pub fn contains_closed(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| l <= v && v <= u)
    }

    /// `self` lies strictly inside `outer` (closure of self in interior of outer).
    pub fn inside(&self, outer: &DomainBox) -> bool {
        self.dim() == outer.dim()
            && (0..self.dim())
                .all(|i| outer.lower[i] < self.lower[i] && self.upper[i] < outer.upper[i])
    }

    /// `self` lies inside the closure of `outer`.
    pub fn within(&self, outer: &DomainBox) -> bool {
        self.dim() == outer.dim()
            && (0..self.dim())
                .all(|i| outer.lower[i] <= self.lower[i] && self.upper[i] <= outer.upper[i])
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| 0.5 * (l + u))
            .collect()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| u - l)
            .collect()
    }

    pub fn max_width(&self) -> f64 {
        self.widths().into_iter().fold(0.0, f64::max)
    }

    pub fn diameter(&self) -> f64 {
        norm(&self.widths())
    }

    /// Distance from `x` to the nearest face.
    pub fn margin(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (l, u))| (v - l).min(u - v))
            .fold(f64::INFINITY, f64::min)
    }

    /// Cube of half-width `r` centred at `c`.
    pub fn around(c: &[f64], r: f64) -> Self {
        DomainBox {
            lower: c.iter().map(|v| v - r).collect(),
            upper: c.iter().map(|v| v + r).collect(),
        }
    }
}

/// How Jacobians are obtained.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivMode {
    /// Symbolic derivatives of the component trees.
    Exact,
    /// Central differences with base step `step`, scaled by `max(1, |x_i|)`.
    CentralFd { step: f64 },
}

impl DerivMode {
    pub fn central_fd() -> Self {
        DerivMode::CentralFd { step: FD_STEP }
    }
}

#[derive(Serialize, Deserialize)]
struct FieldFile {
    n: usize,
    components: Vec<String>,
    domain: DomainBox,
    #[serde(default)]
    name: Option<String>,
}

/// A dimension-n vector field with its open-box domain.
///
/// The symbolic Jacobian is built once at construction; the value is
/// immutable afterwards and can be shared across threads.
#[derive(Clone, Debug)]
pub struct FieldSpec {
    n: usize,
    components: Vec<Expr>,
    partials: Vec<Vec<Expr>>,
    domain: DomainBox,
    name: Option<String>,
    kink_tol: f64,
}

impl FieldSpec {
    pub fn new(
        components: Vec<Expr>,
        domain: DomainBox,
        name: Option<String>,
    ) -> Result<Self, FieldError> {
        let n = components.len();
        if n < 2 {
            return Err(FieldError::Dimension(n));
        }
        if domain.dim() != n {
            return Err(FieldError::BadDomain);
        }
        if let Some(i) = components.iter().filter_map(Expr::max_var).max() {
            if i >= n {
                return Err(FieldError::Parse {
                    index: 0,
                    source: ParseError {
                        offset: 0,
                        kind: crate::parse::ParseErrorKind::VariableOutOfRange { index: i + 1, n },
                    },
                });
            }
        }
        let partials = components.iter().map(|c| c.gradient(n)).collect();
        Ok(FieldSpec {
            n,
            components,
            partials,
            domain,
            name,
            kink_tol: KINK_TOL,
        })
    }

    pub fn from_strings<S: AsRef<str>>(
        components: &[S],
        domain: DomainBox,
        name: Option<String>,
    ) -> Result<Self, FieldError> {
        let n = components.len();
        if n < 2 {
            return Err(FieldError::Dimension(n));
        }
        let exprs = components
            .iter()
            .enumerate()
            .map(|(index, s)| {
                Expr::parse(s.as_ref(), n).map_err(|source| FieldError::Parse { index, source })
            })
            .collect::<Result<Vec<_>, _>>()?;
        FieldSpec::new(exprs, domain, name)
    }

    /// Field whose components are the symbolic partials of `potential`.
    pub fn gradient_of(
        potential: &Expr,
        domain: DomainBox,
        name: Option<String>,
    ) -> Result<Self, FieldError> {
        let n = domain.dim();
        FieldSpec::new(potential.gradient(n), domain, name)
    }

    pub fn from_json(text: &str) -> Result<Self, FieldError> {
        let file: FieldFile =
            serde_json::from_str(text).map_err(|e| FieldError::Json(e.to_string()))?;
        if file.components.len() != file.n {
            return Err(FieldError::ComponentCount {
                expected: file.n,
                got: file.components.len(),
            });
        }
        let domain = DomainBox::new(file.domain.lower, file.domain.upper)?;
        if domain.dim() != file.n {
            return Err(FieldError::BadDomain);
        }
        FieldSpec::from_strings(&file.components, domain, file.name)
    }

    pub fn from_path(path: &Path) -> Result<Self, FieldError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| FieldError::Io(format!("{}: {e}", path.display())))?;
        FieldSpec::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let file = FieldFile {
            n: self.n,
            components: self.components.iter().map(|c| c.to_string()).collect(),
            domain: self.domain.clone(),
            name: self.name.clone(),
        };
        serde_json::to_string_pretty(&file).expect("field file serialises")
    }

    pub fn builtin(name: &str) -> Result<Self, FieldError> {
        let (comps, lo, hi): (&[&str], f64, f64) = match name {
            "debreu" => (
                &[
                    "if(x2 >= 0, x2^2 / sqrt(1 + x2^4), 0)",
                    "if(x2 >= 0, 1 / sqrt(1 + x2^4), 1)",
                ],
                -2.0,
                2.0,
            ),
            "arrow_enthoven" => (
                &[
                    "1 + (x1 + 1) / sqrt((x1 + 1)^2 + 4*x2)",
                    "2 / sqrt((x1 + 1)^2 + 4*x2)",
                ],
                0.1,
                5.0,
            ),
            "katzner" => (&["-3*x1^2*x2 - x2^3", "-x1^3 - 3*x1*x2^2"], 0.1, 3.0),
            "grad_product3" => (&["x2*x3", "x1*x3", "x1*x2"], 0.25, 4.0),
            "contact3" => (&["x2", "-x1", "1"], -2.0, 2.0),
            "quasiconcave_control" => (&["-2*x1", "-2*x2"], 0.5, 2.5),
            other => return Err(FieldError::UnknownBuiltin(other.to_string())),
        };
        let domain = DomainBox::cube(comps.len(), lo, hi)?;
        FieldSpec::from_strings(comps, domain, Some(name.to_string()))
    }

    pub fn builtin_names() -> &'static [&'static str] {
        &[
            "debreu",
            "arrow_enthoven",
            "katzner",
            "grad_product3",
            "contact3",
            "quasiconcave_control",
        ]
    }

    pub fn with_kink_tol(mut self, tol: f64) -> Self {
        self.kink_tol = tol;
        self
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn components(&self) -> &[Expr] {
        &self.components
    }

    pub fn domain(&self) -> &DomainBox {
        &self.domain
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn kink_tol(&self) -> f64 {
        self.kink_tol
    }

    fn check_point(&self, x: &[f64]) -> Result<(), FieldError> {
        if x.len() != self.n {
            return Err(FieldError::PointDimension {
                got: x.len(),
                n: self.n,
            });
        }
        if !self.domain.contains_strict(x) {
            return Err(FieldError::OutsideDomain(x.to_vec()));
        }
        Ok(())
    }

    /// g(x). Errors outside the domain, on non-finite values and on g(x) = 0.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>, FieldError> {
        self.check_point(x)?;
        let g: Vec<f64> = self.components.iter().map(|c| c.eval(x)).collect();
        if g.iter().any(|v| !v.is_finite()) {
            return Err(FieldError::NonFinite(x.to_vec()));
        }
        if g.iter().all(|&v| v == 0.0) {
            return Err(FieldError::ZeroVector(x.to_vec()));
        }
        Ok(g)
    }

    /// Single component g_i(x) without the zero-vector check.
    pub fn component(&self, i: usize, x: &[f64]) -> Result<f64, FieldError> {
        self.check_point(x)?;
        let v = self.components[i].eval(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(FieldError::NonFinite(x.to_vec()))
        }
    }

    /// Whether any branch point of g is within the kink tolerance at `x`.
    pub fn is_kink(&self, x: &[f64]) -> bool {
        self.partials
            .iter()
            .flatten()
            .chain(&self.components)
            .any(|e| e.eval_guarded(x, self.kink_tol).is_err())
    }

    /// J[i][j] = dg_i/dx_j at `x`.
    pub fn jacobian(&self, x: &[f64], mode: DerivMode) -> Result<Vec<Vec<f64>>, FieldError> {
        self.check_point(x)?;
        match mode {
            DerivMode::Exact => {
                let mut jac = vec![vec![0.0; self.n]; self.n];
                for (i, row) in self.partials.iter().enumerate() {
                    // guarding the component itself catches kinks whose
                    // derivative branches happen to agree
                    if let Err(k) = self.components[i].eval_guarded(x, self.kink_tol) {
                        return Err(FieldError::Kink {
                            point: x.to_vec(),
                            gap: k.gap,
                        });
                    }
                    for (j, d) in row.iter().enumerate() {
                        let v = d
                            .eval_guarded(x, self.kink_tol)
                            .map_err(|k| FieldError::Kink {
                                point: x.to_vec(),
                                gap: k.gap,
                            })?;
                        if !v.is_finite() {
                            return Err(FieldError::NonFinite(x.to_vec()));
                        }
                        jac[i][j] = v;
                    }
                }
                Ok(jac)
            }
            DerivMode::CentralFd { step } => {
                let mut jac = vec![vec![0.0; self.n]; self.n];
                let mut xp = x.to_vec();
                for j in 0..self.n {
                    let h = step * x[j].abs().max(1.0);
                    xp[j] = x[j] + h;
                    let plus = self.raw_eval(&xp)?;
                    xp[j] = x[j] - h;
                    let minus = self.raw_eval(&xp)?;
                    xp[j] = x[j];
                    for i in 0..self.n {
                        jac[i][j] = (plus[i] - minus[i]) / (2.0 * h);
                    }
                }
                Ok(jac)
            }
        }
    }

    fn raw_eval(&self, x: &[f64]) -> Result<Vec<f64>, FieldError> {
        self.check_point(x)?;
        let g: Vec<f64> = self.components.iter().map(|c| c.eval(x)).collect();
        if g.iter().any(|v| !v.is_finite()) {
            return Err(FieldError::NonFinite(x.to_vec()));
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn katzner_value_and_jacobian_at_one_one() {
        let k = FieldSpec::builtin("katzner").unwrap();
        assert_eq!(k.eval(&[1.0, 1.0]).unwrap(), vec![-4.0, -4.0]);
        let j = k.jacobian(&[1.0, 1.0], DerivMode::Exact).unwrap();
        for row in j {
            for v in row {
                assert_eq!(v, -6.0);
            }
        }
    }

    #[test]
    fn debreu_at_origin_takes_upper_branch() {
        let d = FieldSpec::builtin("debreu").unwrap();
        assert_eq!(d.eval(&[0.0, 0.0]).unwrap(), vec![0.0, 1.0]);
        assert_eq!(d.eval(&[0.3, -0.2]).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn arrow_enthoven_at_one_one() {
        let a = FieldSpec::builtin("arrow_enthoven").unwrap();
        let g = a.eval(&[1.0, 1.0]).unwrap();
        let r8 = 8f64.sqrt();
        assert!(close(g[0], 1.0 + 2.0 / r8, 1e-15));
        assert!(close(g[1], 2.0 / r8, 1e-15));
        assert!(close(g[0], 1.70711, 1e-5) && close(g[1], 0.70711, 1e-5));
    }

    #[test]
    fn constant_field_has_zero_jacobian() {
        let f = FieldSpec::from_strings(&["1", "0"], DomainBox::cube(2, -1.0, 1.0).unwrap(), None)
            .unwrap();
        let j = f.jacobian(&[0.2, 0.3], DerivMode::Exact).unwrap();
        assert_eq!(j, vec![vec![0.0, 0.0], vec![0.0, 0.0]]);
    }

    #[test]
    fn fd_matches_exact_on_arrow_enthoven() {
        let a = FieldSpec::builtin("arrow_enthoven").unwrap();
        let x = [1.0, 1.0];
        let e = a.jacobian(&x, DerivMode::Exact).unwrap();
        let f = a.jacobian(&x, DerivMode::central_fd()).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!(
                    close(e[i][j], f[i][j], 1e-8),
                    "{i}{j}: {} vs {}",
                    e[i][j],
                    f[i][j]
                );
            }
        }
    }

    #[test]
    fn exact_jacobian_refuses_kink_points() {
        let d = FieldSpec::builtin("debreu").unwrap();
        let err = d.jacobian(&[0.1, 0.0], DerivMode::Exact).unwrap_err();
        assert!(matches!(err, FieldError::Kink { .. }));
        assert!(d.is_kink(&[0.1, 0.0]));
        assert!(!d.is_kink(&[0.1, 0.2]));
        // finite differences stay usable off the kink
        assert!(d.jacobian(&[0.1, 0.2], DerivMode::central_fd()).is_ok());
    }

    #[test]
    fn domain_and_zero_errors() {
        let f =
            FieldSpec::from_strings(&["x1", "x2"], DomainBox::cube(2, -1.0, 1.0).unwrap(), None)
                .unwrap();
        assert!(matches!(
            f.eval(&[0.0, 0.0]),
            Err(FieldError::ZeroVector(_))
        ));
        assert!(matches!(
            f.eval(&[1.0, 0.0]),
            Err(FieldError::OutsideDomain(_))
        ));
        assert!(matches!(
            f.eval(&[0.5]),
            Err(FieldError::PointDimension { .. })
        ));
        let s =
            FieldSpec::from_strings(&["1/x1", "1"], DomainBox::cube(2, -1.0, 1.0).unwrap(), None)
                .unwrap();
        assert!(matches!(s.eval(&[0.0, 0.5]), Err(FieldError::NonFinite(_))));
    }

    #[test]
    fn json_round_trip_and_errors() {
        let text = r#"{"n": 2, "components": ["x2^2", "1"], "domain": {"lower": [-1, -1], "upper": [1, 1]}, "name": "toy"}"#;
        let f = FieldSpec::from_json(text).unwrap();
        assert_eq!(f.name(), Some("toy"));
        let again = FieldSpec::from_json(&f.to_json()).unwrap();
        assert_eq!(again.components(), f.components());
        let bad =
            r#"{"n": 3, "components": ["1", "1"], "domain": {"lower": [0,0,0], "upper": [1,1,1]}}"#;
        assert!(matches!(
            FieldSpec::from_json(bad),
            Err(FieldError::ComponentCount { .. })
        ));
        let inverted =
            r#"{"n": 2, "components": ["1", "1"], "domain": {"lower": [1,0], "upper": [0,1]}}"#;
        assert!(matches!(
            FieldSpec::from_json(inverted),
            Err(FieldError::BadDomain)
        ));
        assert!(matches!(
            FieldSpec::builtin("nope"),
            Err(FieldError::UnknownBuiltin(_))
        ));
    }

    #[test]
    fn every_builtin_constructs() {
        for name in FieldSpec::builtin_names() {
            let f = FieldSpec::builtin(name).unwrap();
            let c = f.domain().center();
            assert!(f.eval(&c).is_ok(), "{name}");
        }
    }
}
