//! Level sets of chart solutions and comparisons between solutions.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chart::{ChartError, SolutionChart};
use crate::field::{dot, lift, norm};
use crate::sampling::Grid;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FoliationError {
    #[error(transparent)]
    Chart(#[from] ChartError),
    #[error("level {z} is outside the chart bracket [{lo}, {hi}]")]
    LevelOutsideBracket { z: f64, lo: f64, hi: f64 },
    #[error("grid must be over the {expected} reduced coordinates and nonempty")]
    BadGrid { expected: usize },
    #[error("no grid point could be lifted onto the level set")]
    NoUsablePoints,
    #[error("degenerate tangent at {0:?}")]
    DegenerateTangent(Vec<f64>),
    #[error("value sequences must have equal length of at least 2 (got {a} and {b})")]
    Length { a: usize, b: usize },
    #[error("no pair is separated by more than gap_tol = {0:e} in both sequences")]
    NoSeparatedPairs(f64),
}

/// Step for the local tangent stencils.
pub const TANGENT_STEP: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub xtilde: Vec<f64>,
    /// `(x~, E^z(x~))` with the pivot coordinate reinserted.
    pub point: Option<Vec<f64>>,
    /// Largest `|g^ . t^_i|` over reduced directions at this point.
    pub tangent_residual: Option<f64>,
    pub failure: Option<String>,
}

/// A sampled integral manifold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSetTrace {
    /// Unsigned level: the pivot coordinate on the axis through the chart centre.
    pub z: f64,
    /// Signed solution value on this level set.
    pub u: f64,
    pub pivot: usize,
    pub grid: Grid,
    pub points: Vec<TracePoint>,
}

impl LevelSetTrace {
    pub fn lifted(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.points.iter().filter_map(|p| p.point.as_ref())
    }

    pub fn failures(&self) -> usize {
        self.points.iter().filter(|p| p.point.is_none()).count()
    }

    /// One row per lifted point: `z,x1,...,xn,tangent_residual`.
    pub fn to_csv(&self) -> String {
        let n = self.grid.dim() + 1;
        let mut out = String::from("z");
        for i in 1..=n {
            let _ = write!(out, ",x{i}");
        }
        out.push_str(",tangent_residual\n");
        for p in &self.points {
            if let Some(x) = &p.point {
                let _ = write!(out, "{}", self.z);
                for v in x {
                    let _ = write!(out, ",{v}");
                }
                let _ = writeln!(
                    out,
                    ",{}",
                    p.tangent_residual
                        .map_or(String::new(), |r| format!("{r:e}"))
                );
            }
        }
        out
    }
}

fn tangent_residual(
    chart: &SolutionChart,
    z: f64,
    xtilde: &[f64],
    at: &[f64],
    h: f64,
) -> Result<f64, FoliationError> {
    let g = chart.spec().eval(at).map_err(ChartError::from)?;
    let gn = norm(&g);
    let p = chart.pivot();
    let mut worst = 0.0f64;
    for i in 0..xtilde.len() {
        let mut a = xtilde.to_vec();
        let mut b = xtilde.to_vec();
        a[i] += h;
        b[i] -= h;
        let slope = (chart.eval_level_fn(z, &a)? - chart.eval_level_fn(z, &b)?) / (2.0 * h);
        let mut t = lift(&vec![0.0; xtilde.len()], p, slope);
        t[if i < p { i } else { i + 1 }] = 1.0;
        let tn = norm(&t);
        if !(tn > 0.0 && tn.is_finite()) {
            return Err(FoliationError::DegenerateTangent(at.to_vec()));
        }
        worst = worst.max((dot(&g, &t) / (gn * tn)).abs());
    }
    Ok(worst)
}

/// Lifts every grid node `x~` to `(x~, E^z(x~))`.
///
/// Nodes whose ray leaves the guard box are kept as failures. Tangents use
/// central differences of `E^z` with step [`TANGENT_STEP`] at each node.
pub fn trace_level_set(
    chart: &SolutionChart,
    z: f64,
    grid: &Grid,
) -> Result<LevelSetTrace, FoliationError> {
    let (lo, hi) = chart.bracket();
    if !(lo..=hi).contains(&z) {
        return Err(FoliationError::LevelOutsideBracket { z, lo, hi });
    }
    let expected = chart.center().len() - 1;
    if grid.dim() != expected || grid.is_empty() {
        return Err(FoliationError::BadGrid { expected });
    }
    let eps_box = chart.eps_box();
    let points: Vec<TracePoint> = grid
        .points()
        .into_par_iter()
        .map(|xt| {
            let lifted = chart
                .level_point(z, &xt)
                .map_err(FoliationError::from)
                .and_then(|x| {
                    if eps_box.contains_closed(&x) {
                        Ok(x)
                    } else {
                        Err(FoliationError::Chart(ChartError::OutsideChart(x)))
                    }
                });
            match lifted {
                Ok(x) => {
                    let r = tangent_residual(chart, z, &xt, &x, TANGENT_STEP);
                    TracePoint {
                        xtilde: xt,
                        tangent_residual: r.as_ref().ok().copied(),
                        failure: r.err().map(|e| e.to_string()),
                        point: Some(x),
                    }
                }
                Err(e) => TracePoint {
                    xtilde: xt,
                    point: None,
                    tangent_residual: None,
                    failure: Some(e.to_string()),
                },
            }
        })
        .collect();
    if points.iter().all(|p| p.point.is_none()) {
        return Err(FoliationError::NoUsablePoints);
    }
    Ok(LevelSetTrace {
        z,
        u: chart.sign() * z,
        pivot: chart.pivot() + 1,
        grid: grid.clone(),
        points,
    })
}

/// Largest tangent residual over the lifted points.
pub fn tangent_orthogonality_residual(trace: &LevelSetTrace) -> Result<f64, FoliationError> {
    let mut any = false;
    let mut worst = 0.0f64;
    for p in &trace.points {
        if let Some(r) = p.tangent_residual {
            any = true;
            worst = worst.max(r);
        } else if let Some(x) = &p.point {
            return Err(FoliationError::DegenerateTangent(x.clone()));
        }
    }
    if any {
        Ok(worst)
    } else {
        Err(FoliationError::NoUsablePoints)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectionVerdict {
    Increasing,
    Decreasing,
    PreconditionFailed,
    NotMonotone,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectionReport {
    pub verdict: SectionVerdict,
    pub ts: Vec<f64>,
    pub values: Vec<f64>,
    /// First sample where `g . v` vanished, if any.
    pub degenerate_t: Option<f64>,
}

/// Samples `t -> u(x + t v)` on `samples` evenly spaced points of `trange`.
///
/// `g(x + t v) . v` must stay away from zero at every sample; otherwise the
/// verdict is `PreconditionFailed` and no values are computed.
pub fn monotone_section(
    chart: &SolutionChart,
    x: &[f64],
    v: &[f64],
    trange: (f64, f64),
    samples: usize,
) -> Result<SectionReport, FoliationError> {
    let samples = samples.max(2);
    let ts: Vec<f64> = (0..samples)
        .map(|k| trange.0 + (trange.1 - trange.0) * k as f64 / (samples - 1) as f64)
        .collect();
    let pts: Vec<Vec<f64>> = ts
        .iter()
        .map(|t| x.iter().zip(v).map(|(a, b)| a + t * b).collect())
        .collect();
    let vn = norm(v);
    for k in 0..samples {
        let g = chart.spec().eval(&pts[k]).map_err(ChartError::from)?;
        if dot(&g, v).abs() <= 1e-12 * norm(&g) * vn {
            let degenerate_t = Some(ts[k]);
            return Ok(SectionReport {
                verdict: SectionVerdict::PreconditionFailed,
                ts,
                values: Vec::new(),
                degenerate_t,
            });
        }
    }
    let values = pts
        .par_iter()
        .map(|p| chart.u(p))
        .collect::<Result<Vec<f64>, ChartError>>()?;
    let verdict = if values.windows(2).all(|w| w[1] > w[0]) {
        SectionVerdict::Increasing
    } else if values.windows(2).all(|w| w[1] < w[0]) {
        SectionVerdict::Decreasing
    } else {
        SectionVerdict::NotMonotone
    };
    Ok(SectionReport {
        verdict,
        ts,
        values,
        degenerate_t: None,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Concordance {
    IncreasingTransform,
    DecreasingTransform,
    NotMonotone,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcordanceReport {
    pub verdict: Concordance,
    /// 1-based indices of the first discordant pair.
    pub violating_pair: Option<(usize, usize)>,
    pub separated_pairs: usize,
}

/// All-pairs sign agreement between two samplings of solutions at the same points.
pub fn compare_solutions(
    a: &[f64],
    b: &[f64],
    gap_tol: f64,
) -> Result<ConcordanceReport, FoliationError> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(FoliationError::Length {
            a: a.len(),
            b: b.len(),
        });
    }
    let mut reference = 0.0;
    let mut separated = 0;
    let mut violation = None;
    for i in 0..a.len() {
        for j in (i + 1)..a.len() {
            let (da, db) = (a[j] - a[i], b[j] - b[i]);
            if da.abs() <= gap_tol || db.abs() <= gap_tol {
                continue;
            }
            separated += 1;
            let s = da.signum() * db.signum();
            if reference == 0.0 {
                reference = s;
            } else if s != reference && violation.is_none() {
                violation = Some((i + 1, j + 1));
            }
        }
    }
    if separated == 0 {
        return Err(FoliationError::NoSeparatedPairs(gap_tol));
    }
    let verdict = match (violation, reference > 0.0) {
        (Some(_), _) => Concordance::NotMonotone,
        (None, true) => Concordance::IncreasingTransform,
        (None, false) => Concordance::DecreasingTransform,
    };
    Ok(ConcordanceReport {
        verdict,
        violating_pair: violation,
        separated_pairs: separated,
    })
}

/// Polylines for planar traces, one per level, in a square viewport.
/// Grid order is kept, so a 1-D grid draws as a single curve.
pub fn traces_to_svg(traces: &[LevelSetTrace], size: f64) -> Option<String> {
    if traces.iter().any(|t| t.grid.dim() != 1) {
        return None;
    }
    let pts: Vec<&Vec<f64>> = traces.iter().flat_map(|t| t.lifted()).collect();
    if pts.is_empty() {
        return None;
    }
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for p in &pts {
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    let span = (x1 - x0).max(y1 - y0).max(1e-12);
    let pad = 0.05 * size;
    let scale = (size - 2.0 * pad) / span;
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" viewBox=\"0 0 {size} {size}\">\n"
    );
    for t in traces {
        let coords: Vec<String> = t
            .lifted()
            .map(|p| {
                format!(
                    "{:.3},{:.3}",
                    pad + (p[0] - x0) * scale,
                    size - pad - (p[1] - y0) * scale
                )
            })
            .collect();
        let _ = writeln!(
            out,
            "  <polyline data-level=\"{}\" fill=\"none\" stroke=\"black\" points=\"{}\"/>",
            t.u,
            coords.join(" ")
        );
    }
    out.push_str("</svg>\n");
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart::{build_chart, ChartConfig};
    use crate::field::{DomainBox, FieldSpec};

    fn debreu_chart() -> SolutionChart {
        build_chart(
            &FieldSpec::builtin("debreu").unwrap(),
            &[0.0, 0.0],
            &ChartConfig::default(),
        )
        .unwrap()
    }

    fn line(lo: f64, hi: f64, m: usize) -> Grid {
        Grid::inclusive(&DomainBox::new(vec![lo], vec![hi]).unwrap(), m)
    }

    #[test]
    fn debreu_level_curve() {
        let c = debreu_chart();
        let tr = trace_level_set(&c, 0.5, &line(0.0, 0.5, 6)).unwrap();
        assert_eq!(tr.failures(), 0);
        for p in tr.lifted() {
            assert!((p[1] - 0.5 / (1.0 + 0.5 * p[0])).abs() < 1e-9);
        }
        let at = tr.points[2].point.as_ref().unwrap();
        assert!((at[1] - 0.45455).abs() < 1e-5);
        assert!(tangent_orthogonality_residual(&tr).unwrap() <= 1e-5);
        let csv = tr.to_csv();
        assert!(csv.starts_with("z,x1,x2,tangent_residual\n"));
        assert_eq!(csv.lines().count(), 7);
        let svg = traces_to_svg(&[tr], 200.0).unwrap();
        assert!(svg.contains("<polyline"));
    }

    #[test]
    fn single_point_trace_is_the_centre() {
        let k = FieldSpec::builtin("katzner").unwrap();
        let c = build_chart(&k, &[1.0, 1.0], &ChartConfig::default()).unwrap();
        let single = Grid {
            lower: vec![1.0],
            upper: vec![1.0],
            per_axis: 1,
            inclusive: true,
        };
        let tr = trace_level_set(&c, 1.0, &single).unwrap();
        assert_eq!(tr.points.len(), 1);
        assert_eq!(tr.points[0].point.as_deref(), Some(&[1.0, 1.0][..]));
    }

    #[test]
    fn level_outside_bracket_is_rejected() {
        let c = debreu_chart();
        assert!(matches!(
            trace_level_set(&c, 5.0, &line(0.0, 0.1, 2)),
            Err(FoliationError::LevelOutsideBracket { .. })
        ));
    }

    #[test]
    fn sections() {
        let c = debreu_chart();
        let up = monotone_section(&c, &[0.0, 0.01], &[0.0, 1.0], (-0.05, 0.05), 11).unwrap();
        assert_eq!(up.verdict, SectionVerdict::Increasing);
        let across = monotone_section(&c, &[0.01, 0.02], &[1.0, 0.0], (-0.01, 0.01), 9).unwrap();
        assert_eq!(across.verdict, SectionVerdict::Increasing);
        // g = (0, 1) on the lower half-plane, so horizontal moves are tangent there
        let flat = monotone_section(&c, &[0.0, -0.03], &[1.0, 0.0], (-0.01, 0.01), 5).unwrap();
        assert_eq!(flat.verdict, SectionVerdict::PreconditionFailed);
        assert!(flat.values.is_empty());
    }

    #[test]
    fn concordance_examples() {
        let a = [0.3, -1.0, 2.0, 0.7];
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        assert_eq!(
            compare_solutions(&a, &neg, 1e-8).unwrap().verdict,
            Concordance::DecreasingTransform
        );
        let r = compare_solutions(&[0.0, 1.0, 2.0], &[0.0, 2.0, 1.0], 1e-8).unwrap();
        assert_eq!(r.verdict, Concordance::NotMonotone);
        assert_eq!(r.violating_pair, Some((2, 3)));
        let cubed: Vec<f64> = a.iter().map(|v| v * v * v).collect();
        assert_eq!(
            compare_solutions(&a, &cubed, 1e-8).unwrap().verdict,
            Concordance::IncreasingTransform
        );
        assert!(matches!(
            compare_solutions(&[1.0, 1.0], &[2.0, 3.0], 1e-8),
            Err(FoliationError::NoSeparatedPairs(_))
        ));
        assert!(matches!(
            compare_solutions(&[1.0], &[2.0], 1e-8),
            Err(FoliationError::Length { .. })
        ));
    }
}
