//! Built-in fields paired with closed-form solutions and the behaviour the
//! rest of the library is expected to reproduce on them.

use serde::{Deserialize, Serialize};

use crate::chart::{build_chart, ChartConfig, ChartError};
use crate::expr::Expr;
use crate::field::{dot, norm, DerivMode, DomainBox, FieldError, FieldSpec};
use crate::foliation::{
    compare_solutions, tangent_orthogonality_residual, trace_level_set, Concordance,
};
use crate::integrability::{check_integrability, IntegrabilityError, TOL_EXACT, TOL_FD};
use crate::quasiconvex::{qc_classify, QcClass, QcConfig};
use crate::sampling::{rng_stream, uniform_in, Grid};

/// What the pipeline should find on a case.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Expectations {
    pub integrable: bool,
    /// Exact value of the largest integrability residual, when known.
    pub integrability_residual: Option<f64>,
    pub qc_class: Option<QcClass>,
    pub qc_summary: Option<String>,
}

#[derive(Clone, Debug)]
pub struct ExampleCase {
    pub name: String,
    pub field: FieldSpec,
    pub closed_form_u: Option<Expr>,
    pub closed_form_lambda: Option<Expr>,
    pub expected: Expectations,
    /// Where the closed form is defined and smooth enough to sample.
    pub sample_box: DomainBox,
    pub chart_center: Vec<f64>,
    pub qc_box: Option<DomainBox>,
    /// Claims that cannot be checked by sampling.
    pub notes: Vec<String>,
}

fn cube(n: usize, lo: f64, hi: f64) -> DomainBox {
    DomainBox::cube(n, lo, hi).expect("valid cube")
}

fn expr(text: &str, n: usize) -> Option<Expr> {
    Some(Expr::parse(text, n).expect("gallery expression parses"))
}

pub fn example_names() -> &'static [&'static str] {
    FieldSpec::builtin_names()
}

/// Looks up a case by name.
pub fn get_example(name: &str) -> Result<ExampleCase, FieldError> {
    let field = FieldSpec::builtin(name)?;
    let qc = |class: QcClass, summary: &str| (Some(class), Some(summary.to_string()));
    let (u, lambda, integrable, residual, (qc_class, qc_summary), sample_box, center, qc_box, notes) = match name {
        "debreu" => (
            expr("if(x2 >= 0, x2 / (1 - x1*x2), x2)", 2),
            expr("if(x2 >= 0, sqrt(1 + x2^4) / (1 - x1*x2)^2, 1)", 2),
            true,
            None,
            (None, None),
            cube(2, -0.5, 0.5),
            vec![0.0, 0.0],
            None,
            vec![
                "the solution is C1 but not C2 across x2 = 0".to_string(),
                "no C2 solution exists on a neighbourhood of the origin".to_string(),
            ],
        ),
        "arrow_enthoven" => (
            expr("(x1 - 1) + sqrt((x1 + 1)^2 + 4*x2)", 2),
            expr("1", 2),
            true,
            None,
            qc(QcClass::QuasiConvex, "quasi-convex via (i)"),
            cube(2, 0.5, 2.0),
            vec![1.0, 1.0],
            Some(cube(2, 0.5, 2.0)),
            vec![
                "level sets are straight lines".to_string(),
                "every normal solution is quasi-convex, none is convex".to_string(),
            ],
        ),
        "katzner" => (
            expr("-(x1^3*x2 + x1*x2^3)", 2),
            expr("1", 2),
            true,
            None,
            qc(QcClass::StrictlyQuasiConvex, "strict via (I); (II) zero-margin witness (1,1),(-1,1)"),
            cube(2, 0.5, 1.5),
            vec![1.0, 1.0],
            Some(cube(2, 0.5, 1.5)),
            vec!["strictly quasi-convex although the strict directional condition fails at (1,1) along (-1,1)".to_string()],
        ),
        "grad_product3" => (
            expr("x1*x2*x3", 3),
            expr("1", 3),
            true,
            None,
            (None, None),
            cube(3, 0.5, 2.0),
            vec![1.0, 1.5, 2.0],
            None,
            vec![],
        ),
        "contact3" => (
            None,
            None,
            false,
            Some(2.0),
            (Some(QcClass::NotIntegrable), None),
            cube(3, -1.0, 1.0),
            vec![0.0, 0.0, 0.0],
            Some(cube(3, -1.0, 1.0)),
            vec!["the contact form admits no integrating factor anywhere".to_string()],
        ),
        "quasiconcave_control" => (
            expr("-x1^2 - x2^2", 2),
            expr("1", 2),
            true,
            None,
            (Some(QcClass::NotQuasiConvex), None),
            cube(2, 1.0, 2.0),
            vec![1.5, 1.5],
            Some(cube(2, 1.0, 2.0)),
            vec!["the pair (1,2), (2,1) violates the pairwise condition".to_string()],
        ),
        other => return Err(FieldError::UnknownBuiltin(other.to_string())),
    };
    Ok(ExampleCase {
        name: name.to_string(),
        field,
        closed_form_u: u,
        closed_form_lambda: lambda,
        expected: Expectations {
            integrable,
            integrability_residual: residual,
            qc_class,
            qc_summary,
        },
        sample_box,
        chart_center: center,
        qc_box,
        notes,
    })
}

/// Sample sizes for [`verify_example`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub closed_form_points: usize,
    pub chart_points: usize,
    pub qc_pairs: usize,
    pub seed: u64,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            closed_form_points: 50,
            chart_points: 100,
            qc_pairs: 2000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleReport {
    pub name: String,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
    pub notes: Vec<String>,
}

const FD_H: f64 = 1e-6;
const ALIGN_TOL: f64 = 1e-5;
const CHART_H: f64 = 1e-5;
const CHART_TOL: f64 = 1e-4;

fn fd_gradient(u: &Expr, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[i] += h;
            b[i] -= h;
            (u.eval(&a) - u.eval(&b)) / (2.0 * h)
        })
        .collect()
}

/// Worst `|grad u / |grad u| - g / |g||` and worst relative `|grad u - lambda g|`.
pub fn closed_form_residuals(
    case: &ExampleCase,
    points: usize,
    seed: u64,
) -> Option<(f64, Option<f64>)> {
    let u = case.closed_form_u.as_ref()?;
    let mut rng = rng_stream(seed, 61);
    let (mut dir, mut lam) = (0.0f64, 0.0f64);
    for _ in 0..points {
        let x = uniform_in(&mut rng, &case.sample_box);
        let g = case.field.eval(&x).ok()?;
        let du = fd_gradient(u, &x, FD_H);
        let (gn, dn) = (norm(&g), norm(&du));
        let d: Vec<f64> = du.iter().zip(&g).map(|(a, b)| a / dn - b / gn).collect();
        dir = dir.max(norm(&d));
        if let Some(l) = &case.closed_form_lambda {
            let lv = l.eval(&x);
            let r: Vec<f64> = du.iter().zip(&g).map(|(a, b)| a - lv * b).collect();
            lam = lam.max(norm(&r) / dn);
        }
    }
    Some((dir, case.closed_form_lambda.as_ref().map(|_| lam)))
}

fn check(name: &str, passed: bool, detail: String) -> CheckResult {
    CheckResult {
        name: name.to_string(),
        passed,
        detail,
    }
}

/// Runs integrability, chart, level-set and quasi-convexity stages on a case
/// and compares each against its expectations.
pub fn verify_example(name: &str, budget: &Budget) -> Result<ExampleReport, FieldError> {
    let case = get_example(name)?;
    let spec = &case.field;
    let mut checks = Vec::new();

    if let Some((dir, lam)) = closed_form_residuals(&case, budget.closed_form_points, budget.seed) {
        checks.push(check(
            "closed_form_alignment",
            dir <= ALIGN_TOL,
            format!("max direction residual {dir:.3e}"),
        ));
        if let Some(l) = lam {
            checks.push(check(
                "closed_form_lambda",
                l <= ALIGN_TOL,
                format!("max relative residual {l:.3e}"),
            ));
        }
    }

    let grid = Grid::cell_centered(&case.sample_box, if spec.dim() == 2 { 9 } else { 5 });
    let integ = match check_integrability(spec, &grid, TOL_EXACT, DerivMode::Exact) {
        Err(IntegrabilityError::AllSkipped(_)) => {
            check_integrability(spec, &grid, TOL_FD, DerivMode::central_fd())
        }
        other => other,
    };
    match &integ {
        Ok(rep) => {
            let mut ok = rep.passed() == case.expected.integrable;
            if let Some(r) = case.expected.integrability_residual {
                ok &= (rep.max_abs_residual - r).abs() <= 1e-6;
            }
            checks.push(check("integrability", ok, rep.verdict_line()));
        }
        Err(e) => checks.push(check("integrability", false, e.to_string())),
    }

    let cfg = ChartConfig {
        seed: budget.seed,
        ..ChartConfig::default()
    };
    match build_chart(spec, &case.chart_center, &cfg) {
        Err(ChartError::NotIntegrable { .. }) if !case.expected.integrable => {
            checks.push(check("chart", true, "refused: not integrable".to_string()));
        }
        Err(e) => checks.push(check("chart", false, e.to_string())),
        Ok(_) if !case.expected.integrable => {
            checks.push(check(
                "chart",
                false,
                "built a chart for a non-integrable field".to_string(),
            ));
        }
        Ok(chart) => {
            checks.push(check(
                "chart",
                true,
                format!(
                    "pivot {} eps {} delta {}",
                    chart.pivot() + 1,
                    chart.eps(),
                    chart.delta()
                ),
            ));
            let pts: Vec<Vec<f64>> = chart
                .sample_points(budget.chart_points, 2.0 * CHART_H, budget.seed)
                .into_iter()
                .filter(|x| !spec.is_kink(x))
                .collect();
            let worst = pts
                .iter()
                .map(|x| chart.gradient_alignment_residual(x, CHART_H))
                .collect::<Result<Vec<f64>, _>>()
                .map(|v| v.into_iter().fold(0.0, f64::max));
            checks.push(match worst {
                Ok(w) => check(
                    "gradient_alignment",
                    w <= CHART_TOL,
                    format!("max residual {w:.3e}"),
                ),
                Err(e) => check("gradient_alignment", false, e.to_string()),
            });

            let p = chart.pivot();
            let ct: Vec<f64> = (0..spec.dim())
                .filter(|&i| i != p)
                .map(|i| case.chart_center[i])
                .collect();
            let reduced = DomainBox::around(&ct, 0.9 * chart.delta());
            let tgrid = Grid::inclusive(&reduced, if spec.dim() == 2 { 9 } else { 5 });
            let trace = trace_level_set(&chart, case.chart_center[p], &tgrid)
                .and_then(|t| tangent_orthogonality_residual(&t));
            checks.push(match trace {
                Ok(r) => check(
                    "level_trace",
                    r <= CHART_TOL,
                    format!("max tangent residual {r:.3e}"),
                ),
                Err(e) => check("level_trace", false, e.to_string()),
            });

            if let Some(u) = &case.closed_form_u {
                let built: Result<Vec<f64>, _> = pts.iter().map(|x| chart.u(x)).collect();
                let exact: Vec<f64> = pts.iter().map(|x| u.eval(x)).collect();
                let verdict = built
                    .map_err(|e| e.to_string())
                    .and_then(|b| compare_solutions(&b, &exact, 1e-9).map_err(|e| e.to_string()));
                checks.push(match verdict {
                    Ok(r) => check(
                        "concordance",
                        r.verdict == Concordance::IncreasingTransform,
                        format!("{:?} over {} separated pairs", r.verdict, r.separated_pairs),
                    ),
                    Err(e) => check("concordance", false, e),
                });
            }
        }
    }

    if let (Some(b), Some(class)) = (&case.qc_box, case.expected.qc_class) {
        let cfg = QcConfig {
            num_pairs: budget.qc_pairs,
            seed: budget.seed,
            ..QcConfig::default()
        };
        checks.push(match qc_classify(spec, b, &cfg) {
            Ok(bundle) => {
                let mut ok = bundle.class == class;
                if let Some(s) = &case.expected.qc_summary {
                    ok &= &bundle.summary == s;
                }
                check("qc_class", ok, bundle.summary)
            }
            Err(e) => check("qc_class", false, e.to_string()),
        });
    }

    Ok(ExampleReport {
        name: case.name.clone(),
        passed: checks.iter().all(|c| c.passed),
        checks,
        notes: case.notes.clone(),
    })
}

/// Whether `g` and the closed-form gradient point the same way at `x`.
pub fn same_orientation(case: &ExampleCase, x: &[f64]) -> Option<bool> {
    let u = case.closed_form_u.as_ref()?;
    let g = case.field.eval(x).ok()?;
    Some(dot(&fd_gradient(u, x, FD_H), &g) > 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_case_resolves() {
        for name in example_names() {
            let c = get_example(name).unwrap();
            assert!(c.sample_box.within(c.field.domain()), "{name}");
            assert!(c.field.domain().contains_strict(&c.chart_center), "{name}");
        }
        assert!(get_example("nope").is_err());
    }

    #[test]
    fn closed_forms_are_parallel_to_their_fields() {
        for name in example_names() {
            let c = get_example(name).unwrap();
            if let Some((dir, lam)) = closed_form_residuals(&c, 50, 0) {
                assert!(dir <= ALIGN_TOL, "{name}: {dir}");
                assert!(lam.unwrap() <= ALIGN_TOL, "{name}: {lam:?}");
                assert_eq!(same_orientation(&c, &c.chart_center), Some(true));
            }
        }
    }

    #[test]
    fn contact_case_is_refused() {
        let r = verify_example("contact3", &Budget::default()).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn debreu_case_passes() {
        let r = verify_example("debreu", &Budget::default()).unwrap();
        assert!(r.passed, "{r:#?}");
    }
}
