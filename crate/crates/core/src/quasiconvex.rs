//! Sampled quasi-convexity criteria for a field and a brute-force oracle.
//!
//! Pairwise condition, plain and strict:
//!
//! ```text
//! g(x).(y - x) >= 0  =>  g(y).(x - y) <= 0      (strict: < 0 for x != y)
//! ```
//!
//! Directional condition: for `g(x).v = 0`, `limsup_{t->0+} v.g(x + t v) / t`
//! is `>= 0` (strict: `> 0`).

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::Expr;
use crate::field::{dot, norm, DerivMode, DomainBox, FieldError, FieldSpec, Point};
use crate::integrability::{check_integrability, IntegrabilityError, TOL_EXACT, TOL_FD};
use crate::sampling::{rng_stream, uniform_in, Grid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QcError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Integrability(#[from] IntegrabilityError),
    #[error("direction is not orthogonal to g(x): |g.v| = {dot:e}")]
    NotOrthogonal { dot: f64 },
    #[error("direction must be nonzero")]
    ZeroDirection,
    #[error("probe box must lie inside the field domain")]
    BoxOutsideDomain,
    #[error("t sequence must contain at least one positive value")]
    EmptySequence,
}

/// Hypothesis slack, relative to `|g| |x - y|`.
pub const SLACK: f64 = 1e-9;
/// Strictness margin, relative to `|g| |x - y|`.
pub const STRICT_MARGIN: f64 = 1e-8;
/// `|g(x).v| <= ORTHO_TOL |g(x)| |v|` counts as orthogonal.
pub const ORTHO_TOL: f64 = 1e-8;
/// Number of smallest `t` values that form the limsup tail.
pub const TAIL_LEN: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Condition {
    #[serde(rename = "i")]
    Pairwise,
    #[serde(rename = "I")]
    PairwiseStrict,
    #[serde(rename = "ii")]
    Directional,
    #[serde(rename = "II")]
    DirectionalStrict,
    #[serde(rename = "brute")]
    Brute,
    #[serde(rename = "brute_strict")]
    BruteStrict,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QcVerdict {
    Holds,
    Violated,
    Inconclusive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimsupClass {
    Positive,
    Nonneg,
    ZeroMargin,
    Negative,
}

/// Result of one directional probe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimsupEstimate {
    pub x: Point,
    pub v: Vec<f64>,
    pub estimate: f64,
    /// Spread of the difference quotients over the tail.
    pub margin: f64,
    pub zero_tol: f64,
    pub class: LimsupClass,
    /// `(t, v.g(x + t v) / t)` for the smallest values of `t`.
    pub tail: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Witness {
    Pair {
        x: Point,
        y: Point,
        /// `g(x).(y - x)`
        hypothesis: f64,
        /// `g(y).(x - y)`
        conclusion: f64,
    },
    Direction(LimsupEstimate),
    Triple {
        x: Point,
        y: Point,
        t: f64,
        u_mid: f64,
        u_max: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QcReport {
    pub condition: Condition,
    pub samples: usize,
    /// Samples that met the hypothesis of the implication.
    pub tested: usize,
    pub verdict: QcVerdict,
    pub witnesses: Vec<Witness>,
    /// Smallest normalized gap observed among tested samples; positive means
    /// every tested sample satisfied the conclusion with room to spare.
    pub min_margin: Option<f64>,
    /// Directional probes whose estimate sits at zero within tolerance.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub zero_margin: Vec<LimsupEstimate>,
}

const MAX_WITNESSES: usize = 10;

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn check_box(spec: &FieldSpec, b: &DomainBox) -> Result<(), QcError> {
    if b.dim() == spec.dim() && b.within(spec.domain()) {
        Ok(())
    } else {
        Err(QcError::BoxOutsideDomain)
    }
}

/// Random unit vector orthogonal to `g`.
fn random_tangent(rng: &mut impl Rng, g: &[f64]) -> Vec<f64> {
    let gn2 = dot(g, g);
    loop {
        let r: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c = dot(&r, g) / gn2;
        let t: Vec<f64> = r.iter().zip(g).map(|(ri, gi)| ri - c * gi).collect();
        let tn = norm(&t);
        if tn > 1e-6 {
            return t.into_iter().map(|v| v / tn).collect();
        }
    }
}

/// Half uniform pairs; half `y = x + s w + noise` with `w` tangent to the
/// level set at `x`, a third of those without noise.
type PointPair = (Vec<f64>, Vec<f64>);

fn sample_pairs(
    spec: &FieldSpec,
    b: &DomainBox,
    num_pairs: usize,
    seed: u64,
) -> Result<Vec<PointPair>, QcError> {
    let mut rng = rng_stream(seed, 21);
    let size = b.max_width();
    let mut out = Vec::with_capacity(num_pairs);
    for k in 0..num_pairs {
        let x = uniform_in(&mut rng, b);
        if k % 2 == 0 {
            let y = uniform_in(&mut rng, b);
            out.push((x, y));
            continue;
        }
        let g = spec.eval(&x)?;
        let gn = norm(&g);
        let mut pushed = false;
        for _ in 0..8 {
            let w = random_tangent(&mut rng, &g);
            let s = rng.gen_range(0.05..0.5) * size * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let eta = if k % 6 == 1 {
                0.0
            } else {
                rng.gen_range(-1e-3..1e-3) * s.abs()
            };
            let y: Vec<f64> = (0..x.len())
                .map(|i| x[i] + s * w[i] + eta * g[i] / gn)
                .collect();
            if b.contains_strict(&y) {
                out.push((x.clone(), y));
                pushed = true;
                break;
            }
        }
        if !pushed {
            let y = uniform_in(&mut rng, b);
            out.push((x, y));
        }
    }
    Ok(out)
}

/// Samples pairs in `b` and checks the pairwise implication.
pub fn pairwise_condition(
    spec: &FieldSpec,
    b: &DomainBox,
    num_pairs: usize,
    strict: bool,
    seed: u64,
) -> Result<QcReport, QcError> {
    check_box(spec, b)?;
    let pairs = sample_pairs(spec, b, num_pairs, seed)?;
    let evals = pairs
        .par_iter()
        .map(|(x, y)| {
            let d = norm(&sub(x, y));
            if d == 0.0 {
                return Ok(None);
            }
            let gx = spec.eval(x)?;
            let gy = spec.eval(y)?;
            let hyp = dot(&gx, &sub(y, x));
            if hyp < -SLACK * norm(&gx) * d {
                return Ok(None);
            }
            let scale = norm(&gy) * d;
            let concl = dot(&gy, &sub(x, y));
            let ok = if strict {
                concl < -STRICT_MARGIN * scale
            } else {
                concl <= SLACK * scale
            };
            Ok(Some((ok, -concl / scale, hyp, concl)))
        })
        .collect::<Result<Vec<_>, FieldError>>()?;
    let mut tested = 0;
    let mut min_margin: Option<f64> = None;
    let mut witnesses = Vec::new();
    let mut violations = 0;
    for ((x, y), e) in pairs.iter().zip(evals) {
        let Some((ok, m, hyp, concl)) = e else {
            continue;
        };
        tested += 1;
        min_margin = Some(min_margin.map_or(m, |v: f64| v.min(m)));
        if !ok {
            violations += 1;
            if witnesses.len() < MAX_WITNESSES {
                witnesses.push(Witness::Pair {
                    x: Point::from(x.as_slice()),
                    y: Point::from(y.as_slice()),
                    hypothesis: hyp,
                    conclusion: concl,
                });
            }
        }
    }
    let verdict = if violations > 0 {
        QcVerdict::Violated
    } else if tested == 0 {
        QcVerdict::Inconclusive
    } else {
        QcVerdict::Holds
    };
    Ok(QcReport {
        condition: if strict {
            Condition::PairwiseStrict
        } else {
            Condition::Pairwise
        },
        samples: pairs.len(),
        tested,
        verdict,
        witnesses,
        min_margin,
        zero_margin: Vec::new(),
    })
}

/// `t = 2^-k` for `k = 4..=20`.
pub fn default_t_seq() -> Vec<f64> {
    (4..=20).map(|k| 0.5f64.powi(k)).collect()
}

/// Estimates `limsup_{t->0+} v.g(x + t v) / t` from the tail of `t_seq`.
pub fn directional_limsup(
    spec: &FieldSpec,
    x: &[f64],
    v: &[f64],
    t_seq: &[f64],
) -> Result<LimsupEstimate, QcError> {
    let vn = norm(v);
    if vn == 0.0 {
        return Err(QcError::ZeroDirection);
    }
    let g = spec.eval(x)?;
    let gn = norm(&g);
    let gv = dot(&g, v);
    if gv.abs() > ORTHO_TOL * gn * vn {
        return Err(QcError::NotOrthogonal { dot: gv });
    }
    let mut ts: Vec<f64> = t_seq.iter().copied().filter(|t| *t > 0.0).collect();
    if ts.is_empty() {
        return Err(QcError::EmptySequence);
    }
    ts.sort_by(f64::total_cmp);
    ts.truncate(TAIL_LEN);
    let mut tail = Vec::with_capacity(ts.len());
    for &t in &ts {
        let xt: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + t * b).collect();
        let q = dot(v, &spec.eval(&xt)?) / t;
        tail.push((t, q));
    }
    let estimate = tail.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let low = tail.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let margin = estimate - low;
    let zero_tol = 1e-6 * gn.max(1.0) * vn * vn;
    let class = if estimate.abs() <= zero_tol {
        LimsupClass::ZeroMargin
    } else if estimate < 0.0 {
        LimsupClass::Negative
    } else if estimate > margin {
        LimsupClass::Positive
    } else {
        LimsupClass::Nonneg
    };
    Ok(LimsupEstimate {
        x: Point::from(x),
        v: v.to_vec(),
        estimate,
        margin,
        zero_tol,
        class,
        tail,
    })
}

/// Directions tangent to the level set at `x`: `(g2, -g1)` and its negative
/// in the plane, random tangent pairs otherwise. Scaled so the largest
/// component has magnitude 1.
fn tangent_directions(g: &[f64], rng: &mut impl Rng, count: usize) -> Vec<Vec<f64>> {
    let unit = |v: Vec<f64>| {
        let m = v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        v.into_iter().map(|c| c / m).collect::<Vec<f64>>()
    };
    if g.len() == 2 {
        let v = unit(vec![g[1], -g[0]]);
        let w = v.iter().map(|c| -c).collect();
        return vec![v, w];
    }
    let mut out = Vec::new();
    for _ in 0..count.div_ceil(2) {
        let v = unit(random_tangent(rng, g));
        out.push(v.iter().map(|c| -c).collect());
        out.insert(out.len() - 1, v);
    }
    out
}

/// Configuration for [`qc_classify`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QcConfig {
    pub num_pairs: usize,
    /// Random probe points for the directional test, besides the box centre.
    pub num_probes: usize,
    /// Directions per probe point when `n > 2`.
    pub directions_per_probe: usize,
    pub t_seq: Vec<f64>,
    pub seed: u64,
    /// Check integrability first and refuse to classify if it fails.
    pub require_integrability: bool,
    pub integrability_grid: usize,
}

impl Default for QcConfig {
    fn default() -> Self {
        QcConfig {
            num_pairs: 10_000,
            num_probes: 16,
            directions_per_probe: 4,
            t_seq: default_t_seq(),
            seed: 0,
            require_integrability: true,
            integrability_grid: 5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QcClass {
    NotIntegrable,
    NotQuasiConvex,
    QuasiConvex,
    StrictlyQuasiConvex,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QcBundle {
    pub field: Option<String>,
    pub domain_box: DomainBox,
    pub integrability_residual: Option<f64>,
    pub class: QcClass,
    pub summary: String,
    pub reports: Vec<QcReport>,
}

impl QcBundle {
    pub fn report(&self, c: Condition) -> Option<&QcReport> {
        self.reports.iter().find(|r| r.condition == c)
    }
}

fn fmt_num(v: f64) -> String {
    let s = format!("{:.6}", v);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

/// `(a,b,...)` with trailing zeros trimmed.
pub fn fmt_point(x: &[f64]) -> String {
    format!(
        "({})",
        x.iter().map(|v| fmt_num(*v)).collect::<Vec<_>>().join(",")
    )
}

fn directional_reports(
    spec: &FieldSpec,
    b: &DomainBox,
    cfg: &QcConfig,
) -> Result<(QcReport, QcReport), QcError> {
    let mut rng = rng_stream(cfg.seed, 31);
    let mut probes = vec![b.center()];
    probes.extend((0..cfg.num_probes).map(|_| uniform_in(&mut rng, b)));
    let t_max = cfg.t_seq.iter().copied().fold(0.0, f64::max);
    let mut jobs = Vec::new();
    for x in probes {
        let g = spec.eval(&x)?;
        let reach = 0.5 * spec.domain().margin(&x);
        for v in tangent_directions(&g, &mut rng, cfg.directions_per_probe) {
            // keep x + t v inside the domain; the sign of the limsup is scale free
            let c = (reach / (t_max * norm(&v))).min(1.0);
            let v: Vec<f64> = v.into_iter().map(|vi| vi * c).collect();
            jobs.push((x.clone(), v));
        }
    }
    let estimates = jobs
        .par_iter()
        .map(|(x, v)| directional_limsup(spec, x, v, &cfg.t_seq))
        .collect::<Result<Vec<_>, QcError>>()?;
    let negative: Vec<LimsupEstimate> = estimates
        .iter()
        .filter(|e| e.class == LimsupClass::Negative)
        .cloned()
        .collect();
    let zero: Vec<LimsupEstimate> = estimates
        .iter()
        .filter(|e| e.class == LimsupClass::ZeroMargin)
        .cloned()
        .collect();
    let all_positive = estimates.iter().all(|e| e.class == LimsupClass::Positive);
    let min_margin = estimates
        .iter()
        .map(|e| e.estimate)
        .fold(None, |a: Option<f64>, e| Some(a.map_or(e, |v| v.min(e))));
    let wit: Vec<Witness> = negative
        .iter()
        .take(MAX_WITNESSES)
        .cloned()
        .map(Witness::Direction)
        .collect();
    let plain = QcReport {
        condition: Condition::Directional,
        samples: estimates.len(),
        tested: estimates.len(),
        verdict: if wit.is_empty() {
            QcVerdict::Holds
        } else {
            QcVerdict::Violated
        },
        witnesses: wit.clone(),
        min_margin,
        zero_margin: Vec::new(),
    };
    let strict_verdict = if !wit.is_empty() {
        QcVerdict::Violated
    } else if all_positive {
        QcVerdict::Holds
    } else {
        QcVerdict::Inconclusive
    };
    let strict = QcReport {
        condition: Condition::DirectionalStrict,
        samples: estimates.len(),
        tested: estimates.len(),
        verdict: strict_verdict,
        witnesses: wit,
        min_margin,
        zero_margin: zero,
    };
    Ok((plain, strict))
}

/// Runs the pairwise and directional tests on `b` and states the implied class.
///
/// The strict directional condition is never claimed from estimates that
/// sit at zero within tolerance; such probes are listed as zero-margin.
pub fn qc_classify(spec: &FieldSpec, b: &DomainBox, cfg: &QcConfig) -> Result<QcBundle, QcError> {
    check_box(spec, b)?;
    let mut bundle = QcBundle {
        field: spec.name().map(str::to_string),
        domain_box: b.clone(),
        integrability_residual: None,
        class: QcClass::Inconclusive,
        summary: String::new(),
        reports: Vec::new(),
    };
    if cfg.require_integrability && spec.dim() >= 3 {
        let grid = Grid::cell_centered(b, cfg.integrability_grid);
        let rep = match check_integrability(spec, &grid, TOL_EXACT, DerivMode::Exact) {
            Err(IntegrabilityError::AllSkipped(_)) => {
                check_integrability(spec, &grid, TOL_FD, DerivMode::central_fd())?
            }
            other => other?,
        };
        bundle.integrability_residual = Some(rep.max_abs_residual);
        if !rep.passed() {
            bundle.class = QcClass::NotIntegrable;
            bundle.summary = format!(
                "refused: integrability fails (max residual {:.6})",
                rep.max_abs_residual
            );
            return Ok(bundle);
        }
    }
    let plain = pairwise_condition(spec, b, cfg.num_pairs, false, cfg.seed)?;
    let strict = pairwise_condition(spec, b, cfg.num_pairs, true, cfg.seed)?;
    let (dir, dir_strict) = directional_reports(spec, b, cfg)?;

    let (class, summary) = if let Some(Witness::Pair { x, y, .. }) = plain.witnesses.first() {
        (
            QcClass::NotQuasiConvex,
            format!(
                "not quasi-convex: (i) violated at {},{}",
                fmt_point(x),
                fmt_point(y)
            ),
        )
    } else if let Some(Witness::Direction(e)) = dir.witnesses.first() {
        (
            QcClass::NotQuasiConvex,
            format!(
                "not quasi-convex: (ii) violated at {},{}",
                fmt_point(&e.x),
                fmt_point(&e.v)
            ),
        )
    } else if strict.verdict == QcVerdict::Holds {
        let tail = match dir_strict.verdict {
            QcVerdict::Holds => "; strict via (II)".to_string(),
            _ => match dir_strict.zero_margin.first() {
                Some(e) => format!(
                    "; (II) zero-margin witness {},{}",
                    fmt_point(&e.x),
                    fmt_point(&e.v)
                ),
                None => "; (II) inconclusive".to_string(),
            },
        };
        (
            QcClass::StrictlyQuasiConvex,
            format!("strict via (I){tail}"),
        )
    } else if plain.verdict == QcVerdict::Holds {
        (QcClass::QuasiConvex, "quasi-convex via (i)".to_string())
    } else {
        (
            QcClass::Inconclusive,
            "inconclusive: no pair met the hypothesis".to_string(),
        )
    };
    bundle.class = class;
    bundle.summary = summary;
    bundle.reports = vec![plain, strict, dir, dir_strict];
    Ok(bundle)
}

fn check_triple(u: &Expr, x: &[f64], y: &[f64], t: f64, strict: bool) -> Option<Witness> {
    let z: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(a, b)| (1.0 - t) * a + t * b)
        .collect();
    let (ux, uy, uz) = (u.eval(x), u.eval(y), u.eval(&z));
    let m = ux.max(uy);
    let tol = 1e-12 * (1.0 + m.abs());
    let bad = if strict { !(uz < m) } else { uz > m + tol };
    bad.then(|| Witness::Triple {
        x: Point::from(x),
        y: Point::from(y),
        t,
        u_mid: uz,
        u_max: m,
    })
}

fn triple_report(condition: Condition, samples: usize, hits: Vec<Witness>) -> QcReport {
    let verdict = if hits.is_empty() {
        QcVerdict::Holds
    } else {
        QcVerdict::Violated
    };
    QcReport {
        condition,
        samples,
        tested: samples,
        verdict,
        witnesses: hits.into_iter().take(MAX_WITNESSES).collect(),
        min_margin: None,
        zero_margin: Vec::new(),
    }
}

/// Checks `u((1-t)x + t y) <= max(u(x), u(y))` (strict: `<`) on random triples.
pub fn quasiconvexity_bruteforce(
    u: &Expr,
    b: &DomainBox,
    num_triples: usize,
    strict: bool,
    seed: u64,
) -> QcReport {
    let mut rng = rng_stream(seed, 41);
    let triples: Vec<(Vec<f64>, Vec<f64>, f64)> = (0..num_triples)
        .map(|_| {
            let x = uniform_in(&mut rng, b);
            let y = uniform_in(&mut rng, b);
            let t = rng.gen_range(0.0..1.0);
            (x, y, t)
        })
        .filter(|(x, y, t)| *t > 0.0 && norm(&sub(x, y)) > 1e-9)
        .collect();
    let hits: Vec<Witness> = triples
        .par_iter()
        .filter_map(|(x, y, t)| check_triple(u, x, y, *t, strict))
        .collect();
    let cond = if strict {
        Condition::BruteStrict
    } else {
        Condition::Brute
    };
    triple_report(cond, triples.len(), hits)
}

/// Exhaustive variant: every pair of nodes of an `m`-per-axis grid, with
/// `t` on `m` interior points of `(0, 1)`.
pub fn quasiconvexity_grid(u: &Expr, b: &DomainBox, m: usize, strict: bool) -> QcReport {
    let nodes = Grid::inclusive(b, m).points();
    let ts: Vec<f64> = (1..=m).map(|k| k as f64 / (m + 1) as f64).collect();
    let hits: Vec<Witness> = (0..nodes.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let nodes = &nodes;
            let ts = &ts;
            ((i + 1)..nodes.len()).flat_map(move |j| {
                ts.iter()
                    .filter_map(move |&t| check_triple(u, &nodes[i], &nodes[j], t, strict))
            })
        })
        .collect();
    let samples = nodes.len() * (nodes.len() - 1) / 2 * ts.len();
    let cond = if strict {
        Condition::BruteStrict
    } else {
        Condition::Brute
    };
    triple_report(cond, samples, hits)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn katzner_u() -> Expr {
        Expr::parse("-(x1^3*x2 + x1*x2^3)", 2).unwrap()
    }

    #[test]
    fn katzner_limsup_is_zero() {
        let k = FieldSpec::builtin("katzner").unwrap();
        let e = directional_limsup(&k, &[1.0, 1.0], &[-1.0, 1.0], &default_t_seq()).unwrap();
        assert_eq!(e.class, LimsupClass::ZeroMargin);
        assert!(e.estimate.abs() <= 1e-4);
        // v.g(x + t v) = 8 t^3 along this direction
        for (t, q) in &e.tail {
            assert!((q - 8.0 * t * t).abs() < 1e-9, "{t} {q}");
        }
        assert_eq!(e.tail.len(), TAIL_LEN);
        assert_eq!(e.tail[0].0, 0.5f64.powi(20));
    }

    #[test]
    fn limsup_of_constant_field_is_exactly_zero() {
        let f = FieldSpec::from_strings(&["0", "1"], DomainBox::cube(2, -1.0, 1.0).unwrap(), None)
            .unwrap();
        let e = directional_limsup(&f, &[0.1, 0.2], &[1.0, 0.0], &default_t_seq()).unwrap();
        assert_eq!(e.estimate, 0.0);
        assert_eq!(e.class, LimsupClass::ZeroMargin);
    }

    #[test]
    fn limsup_requires_orthogonality() {
        let k = FieldSpec::builtin("katzner").unwrap();
        assert!(matches!(
            directional_limsup(&k, &[1.0, 1.0], &[1.0, 1.0], &default_t_seq()),
            Err(QcError::NotOrthogonal { .. })
        ));
    }

    #[test]
    fn limsup_matches_quadratic_form() {
        // for smooth g the limit is v' Dg v
        let a = FieldSpec::builtin("arrow_enthoven").unwrap();
        let x = [1.5, 2.0];
        let g = a.eval(&x).unwrap();
        let v = [g[1], -g[0]];
        let j = a.jacobian(&x, DerivMode::Exact).unwrap();
        let quad: f64 = (0..2)
            .flat_map(|i| (0..2).map(move |k| (i, k)))
            .map(|(i, k)| j[i][k] * v[i] * v[k])
            .sum();
        let e = directional_limsup(&a, &x, &v, &default_t_seq()).unwrap();
        assert!((e.estimate - quad).abs() < 1e-4, "{} vs {quad}", e.estimate);
    }

    #[test]
    fn control_field_violates_pairwise() {
        let f = FieldSpec::builtin("quasiconcave_control").unwrap();
        let b = DomainBox::cube(2, 1.0, 2.0).unwrap();
        let r = pairwise_condition(&f, &b, 2000, false, 3).unwrap();
        assert_eq!(r.verdict, QcVerdict::Violated);
        assert!(!r.witnesses.is_empty());
        // the hand-checked pair
        let gx = f.eval(&[1.0, 2.0]).unwrap();
        let gy = f.eval(&[2.0, 1.0]).unwrap();
        assert_eq!(dot(&gx, &[1.0, -1.0]), 2.0);
        assert_eq!(dot(&gy, &[-1.0, 1.0]), 2.0);
    }

    #[test]
    fn arrow_enthoven_spot_pair() {
        let a = FieldSpec::builtin("arrow_enthoven").unwrap();
        let gx = a.eval(&[1.0, 1.0]).unwrap();
        let gy = a.eval(&[2.0, 0.5]).unwrap();
        let hyp = dot(&gx, &[1.0, -0.5]);
        assert!((hyp - (1.70711 - 0.35355)).abs() < 1e-4);
        let concl = dot(&gy, &[-1.0, 0.5]);
        assert!(hyp > 0.0 && concl < 0.0);
        // g(y) = (1 + 3/sqrt 11, 2/sqrt 11)
        let r11 = 11f64.sqrt();
        assert!((concl - (-(1.0 + 3.0 / r11) + 1.0 / r11)).abs() < 1e-12);
    }

    #[test]
    fn katzner_bundle() {
        let k = FieldSpec::builtin("katzner").unwrap();
        let b = DomainBox::cube(2, 0.5, 1.5).unwrap();
        let cfg = QcConfig {
            num_pairs: 2000,
            ..QcConfig::default()
        };
        let out = qc_classify(&k, &b, &cfg).unwrap();
        assert_eq!(out.class, QcClass::StrictlyQuasiConvex);
        assert_eq!(
            out.summary,
            "strict via (I); (II) zero-margin witness (1,1),(-1,1)"
        );
    }

    #[test]
    fn arrow_enthoven_bundle() {
        let a = FieldSpec::builtin("arrow_enthoven").unwrap();
        let b = DomainBox::cube(2, 0.5, 2.0).unwrap();
        let out = qc_classify(&a, &b, &QcConfig::default()).unwrap();
        assert_eq!(out.summary, "quasi-convex via (i)");
        let plain = out.report(Condition::Pairwise).unwrap();
        assert!(plain.witnesses.is_empty() && plain.tested > 1000);
        // straight level lines: tangent pairs meet the conclusion with equality
        assert_eq!(
            out.report(Condition::PairwiseStrict).unwrap().verdict,
            QcVerdict::Violated
        );
    }

    #[test]
    fn contact_form_is_refused() {
        let c = FieldSpec::builtin("contact3").unwrap();
        let out = qc_classify(
            &c,
            &DomainBox::cube(3, -1.0, 1.0).unwrap(),
            &QcConfig::default(),
        )
        .unwrap();
        assert_eq!(out.class, QcClass::NotIntegrable);
        assert!(out.summary.contains("integrability fails"));
        assert!(out.reports.is_empty());
    }

    #[test]
    fn brute_force_oracles() {
        let b = DomainBox::cube(2, 0.5, 1.5).unwrap();
        let r = quasiconvexity_bruteforce(&katzner_u(), &b, 20_000, true, 1);
        assert_eq!(r.verdict, QcVerdict::Holds);
        let concave = Expr::parse("-x1^2 - x2^2", 2).unwrap();
        let r = quasiconvexity_bruteforce(&concave, &b, 20_000, false, 1);
        assert_eq!(r.verdict, QcVerdict::Violated);
        assert!(matches!(r.witnesses[0], Witness::Triple { .. }));
    }

    #[test]
    fn negative_product_is_quasi_convex_on_the_positive_box() {
        let u = Expr::parse("-x1*x2", 2).unwrap();
        let b = DomainBox::cube(2, 1.0, 2.0).unwrap();
        assert_eq!(
            quasiconvexity_grid(&u, &b, 12, false).verdict,
            QcVerdict::Holds
        );
        assert_eq!(
            quasiconvexity_bruteforce(&u, &b, 20_000, false, 5).verdict,
            QcVerdict::Holds
        );
        // the pair from (1,2) to (2,1) stays below the endpoint level
        let mid = u.eval(&[1.5, 1.5]);
        assert!(mid < -2.0);
    }

    #[test]
    fn point_formatting() {
        assert_eq!(fmt_point(&[1.0, -1.0]), "(1,-1)");
        assert_eq!(fmt_point(&[0.25, -0.0]), "(0.25,0)");
    }
}
