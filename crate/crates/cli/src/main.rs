use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use tdekit::foliation::traces_to_svg;
use tdekit::gallery::example_names;
use tdekit::integrability::{TOL_EXACT, TOL_FD};
use tdekit::{
    build_chart, check_integrability, get_example, kkt_search, kkt_verify, qc_classify,
    tangent_orthogonality_residual, trace_level_set, verify_example, Budget, ChartConfig,
    ConstraintSet, DerivMode, DomainBox, FieldSpec, Grid, IntegrabilityError, KktSearchConfig,
    KktTolerances, QcClass, QcConfig, QcGate,
};

/// Local solutions, level sets and quasi-convexity checks for `grad u = lambda g`.
#[derive(Parser)]
#[command(name = "tdekit", version)]
struct Cli {
    /// Seed for every randomised procedure.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Write the JSON report here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct FieldSource {
    /// Name of a built-in field.
    #[arg(long)]
    builtin: Option<String>,
    /// Path to a field file (JSON).
    #[arg(long)]
    field: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Check the integrability condition on a grid.
    Check {
        #[command(flatten)]
        source: FieldSource,
        /// `lo,hi` for every axis or `lo1,hi1,lo2,hi2,...`; defaults to the field domain.
        #[arg(long = "box", allow_hyphen_values = true)]
        bbox: Option<String>,
        /// Grid points per axis.
        #[arg(long, default_value_t = 7)]
        grid: usize,
        /// Use central differences instead of symbolic derivatives.
        #[arg(long)]
        fd: bool,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Build a chart and sample the solution.
    Solve {
        #[command(flatten)]
        source: FieldSource,
        /// Base point, comma separated.
        #[arg(long, allow_hyphen_values = true)]
        at: String,
        /// Random chart points to evaluate besides the base point.
        #[arg(long, default_value_t = 5)]
        samples: usize,
    },
    /// Trace level sets of the chart solution.
    Level {
        #[command(flatten)]
        source: FieldSource,
        #[arg(long, allow_hyphen_values = true)]
        at: String,
        /// Solution values, comma separated.
        #[arg(long, allow_hyphen_values = true)]
        levels: String,
        /// Grid points per reduced axis.
        #[arg(long, default_value_t = 21)]
        points: usize,
        /// CSV, or SVG when the path ends in `.svg`.
        #[arg(long)]
        plot_out: Option<PathBuf>,
    },
    /// Classify quasi-convexity on a box.
    Qc {
        #[command(flatten)]
        source: FieldSource,
        /// Defaults to the gallery box of a built-in field, else the field domain.
        #[arg(long = "box", allow_hyphen_values = true)]
        bbox: Option<String>,
        #[arg(long, default_value_t = 10_000)]
        pairs: usize,
        /// Skip the integrability gate.
        #[arg(long)]
        no_integrability: bool,
    },
    /// Verify a KKT certificate or search for one.
    Kkt {
        #[command(flatten)]
        source: FieldSource,
        /// JSON array of constraint expressions `h_i`, read as `h_i(x) <= 0`.
        #[arg(long)]
        constraints: PathBuf,
        #[arg(long = "box", allow_hyphen_values = true)]
        bbox: String,
        /// Point to verify; without it a search runs.
        #[arg(long, allow_hyphen_values = true)]
        candidate: Option<String>,
        /// Do not run the quasi-convexity check first.
        #[arg(long)]
        assume_qc: bool,
        /// Leave the faces of the box out of the constraint set.
        #[arg(long)]
        no_box_faces: bool,
        #[arg(long)]
        stat_tol: Option<f64>,
    },
    /// Built-in example gallery.
    Examples {
        #[command(subcommand)]
        action: ExampleAction,
    },
}

#[derive(Subcommand)]
enum ExampleAction {
    List,
    Run { name: String },
}

/// Usage and IO problems exit with 2, refused or violated verdicts with 1.
enum Failure {
    Usage(String),
    Refused(String),
}

type Outcome = Result<(serde_json::Value, bool), Failure>;

fn usage<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Usage(e.to_string())
}

fn refused<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Refused(e.to_string())
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("report serialises")
}

fn load_field(src: &FieldSource) -> Result<FieldSpec, Failure> {
    match (&src.builtin, &src.field) {
        (Some(name), None) => FieldSpec::builtin(name).map_err(usage),
        (None, Some(path)) => FieldSpec::from_path(path).map_err(usage),
        _ => Err(Failure::Usage(
            "give exactly one of --builtin, --field".into(),
        )),
    }
}

fn parse_point(s: &str) -> Result<Vec<f64>, Failure> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| Failure::Usage(format!("bad number {t:?}: {e}")))
        })
        .collect()
}

fn parse_box(s: &str, n: usize) -> Result<DomainBox, Failure> {
    let v = parse_point(s)?;
    match v.len() {
        2 => DomainBox::cube(n, v[0], v[1]).map_err(usage),
        k if k == 2 * n => DomainBox::new(
            v.iter().step_by(2).copied().collect(),
            v.iter().skip(1).step_by(2).copied().collect(),
        )
        .map_err(usage),
        k => Err(Failure::Usage(format!(
            "box needs 2 or {} numbers, got {k}",
            2 * n
        ))),
    }
}

fn check_dim(x: &[f64], n: usize) -> Result<(), Failure> {
    if x.len() == n {
        Ok(())
    } else {
        Err(Failure::Usage(format!(
            "expected {n} coordinates, got {}",
            x.len()
        )))
    }
}

fn run_check(
    spec: &FieldSpec,
    bbox: Option<&str>,
    m: usize,
    fd: bool,
    tol: Option<f64>,
) -> Outcome {
    let b = match bbox {
        Some(s) => parse_box(s, spec.dim())?,
        None => spec.domain().clone(),
    };
    let grid = Grid::cell_centered(&b, m);
    let run = |fd: bool| {
        let (mode, t) = if fd {
            (DerivMode::central_fd(), TOL_FD)
        } else {
            (DerivMode::Exact, TOL_EXACT)
        };
        check_integrability(spec, &grid, tol.unwrap_or(t), mode)
    };
    let rep = match run(fd) {
        Err(IntegrabilityError::AllSkipped(_)) if !fd => run(true),
        other => other,
    }
    .map_err(refused)?;
    eprintln!("{}", rep.verdict_line());
    Ok((to_value(&rep), rep.passed()))
}

fn chart_cfg(seed: u64) -> ChartConfig {
    ChartConfig {
        seed,
        ..ChartConfig::default()
    }
}

fn run_solve(spec: &FieldSpec, at: &str, samples: usize, seed: u64) -> Outcome {
    let x = parse_point(at)?;
    check_dim(&x, spec.dim())?;
    let chart = build_chart(spec, &x, &chart_cfg(seed)).map_err(refused)?;
    let mut pts = vec![x.clone()];
    pts.extend(chart.sample_points(samples, 0.0, seed));
    let h = 1e-5 * chart.eps();
    let values = pts
        .iter()
        .map(|p| {
            let v = chart.eval_solution(p).map_err(refused)?;
            let lambda = chart.recover_lambda(p, h).ok();
            Ok(json!({ "x": p, "u": v.u, "lambda": lambda, "residual": v.residual }))
        })
        .collect::<Result<Vec<_>, Failure>>()?;
    eprintln!(
        "chart pivot {} eps {} delta {}",
        chart.pivot() + 1,
        chart.eps(),
        chart.delta()
    );
    Ok((
        json!({ "chart": chart.metadata(), "samples": values }),
        true,
    ))
}

fn run_level(
    spec: &FieldSpec,
    at: &str,
    levels: &str,
    points: usize,
    plot: Option<&Path>,
    seed: u64,
) -> Outcome {
    let x = parse_point(at)?;
    check_dim(&x, spec.dim())?;
    let us = parse_point(levels)?;
    let chart = build_chart(spec, &x, &chart_cfg(seed)).map_err(refused)?;
    let p = chart.pivot();
    let ct: Vec<f64> = (0..x.len()).filter(|&i| i != p).map(|i| x[i]).collect();
    let grid = Grid::inclusive(&DomainBox::around(&ct, chart.delta()), points);
    let mut traces = Vec::new();
    let mut residuals = Vec::new();
    for u in us {
        let t = trace_level_set(&chart, chart.sign() * u, &grid).map_err(refused)?;
        residuals.push(tangent_orthogonality_residual(&t).ok());
        traces.push(t);
    }
    if let Some(path) = plot {
        let body = if path.extension().is_some_and(|e| e == "svg") {
            traces_to_svg(&traces, 480.0)
                .ok_or_else(|| Failure::Usage("SVG plots need a planar field".into()))?
        } else {
            let mut out = String::new();
            for (k, t) in traces.iter().enumerate() {
                let csv = t.to_csv();
                let skip = if k == 0 { 0 } else { 1 };
                for line in csv.lines().skip(skip) {
                    out.push_str(line);
                    out.push('\n');
                }
            }
            out
        };
        std::fs::write(path, body).map_err(usage)?;
    }
    Ok((
        json!({ "chart": chart.metadata(), "traces": traces, "tangent_residuals": residuals }),
        true,
    ))
}

fn run_qc(
    spec: &FieldSpec,
    bbox: Option<&str>,
    pairs: usize,
    no_integrability: bool,
    seed: u64,
) -> Outcome {
    let gallery_box = spec
        .name()
        .and_then(|n| get_example(n).ok())
        .and_then(|c| c.qc_box);
    let b = match (bbox, gallery_box) {
        (Some(s), _) => parse_box(s, spec.dim())?,
        (None, Some(b)) => b,
        (None, None) => spec.domain().clone(),
    };
    let cfg = QcConfig {
        num_pairs: pairs,
        seed,
        require_integrability: !no_integrability,
        ..QcConfig::default()
    };
    let bundle = qc_classify(spec, &b, &cfg).map_err(refused)?;
    eprintln!("{}", bundle.summary);
    let ok = !matches!(
        bundle.class,
        QcClass::NotQuasiConvex | QcClass::NotIntegrable
    );
    Ok((to_value(&bundle), ok))
}

#[allow(clippy::too_many_arguments)]
fn run_kkt(
    spec: &FieldSpec,
    constraints: &Path,
    bbox: &str,
    candidate: Option<&str>,
    assume_qc: bool,
    no_box_faces: bool,
    stat_tol: Option<f64>,
    seed: u64,
) -> Outcome {
    let b = parse_box(bbox, spec.dim())?;
    let text = std::fs::read_to_string(constraints).map_err(usage)?;
    let cs = ConstraintSet::from_json(&text, b.clone()).map_err(usage)?;
    let gate = if assume_qc {
        QcGate::Assume
    } else {
        let cfg = QcConfig {
            num_pairs: 2000,
            seed,
            ..QcConfig::default()
        };
        QcGate::Report(qc_classify(spec, &b, &cfg).map_err(refused)?.class)
    };
    match candidate {
        Some(c) => {
            let x = parse_point(c)?;
            check_dim(&x, spec.dim())?;
            let cs = if no_box_faces {
                cs
            } else {
                cs.with_box_faces()
            };
            let mut tols = KktTolerances::default();
            if let Some(t) = stat_tol {
                tols.stat_tol = t;
            }
            let cert = kkt_verify(spec, &cs, &x, &tols, gate).map_err(refused)?;
            match cert.reason {
                Some(r) => eprintln!("rejected: {r}"),
                None => eprintln!("certified"),
            }
            Ok((
                json!({ "qc_gate": gate, "certificate": cert }),
                cert.certified(),
            ))
        }
        None => {
            let mut cfg = KktSearchConfig {
                box_faces: !no_box_faces,
                gate,
                ..KktSearchConfig::default()
            };
            if let Some(t) = stat_tol {
                cfg.tols.stat_tol = t;
            }
            let out = kkt_search(spec, &cs, &cfg).map_err(refused)?;
            eprintln!("{}", out.note);
            let ok = out.certificate.certified();
            Ok((json!({ "qc_gate": gate, "search": out }), ok))
        }
    }
}

fn run_examples(action: &ExampleAction, seed: u64) -> Outcome {
    match action {
        ExampleAction::List => {
            let cases = example_names()
                .iter()
                .map(|n| {
                    let c = get_example(n).expect("built-in name");
                    json!({
                        "name": n,
                        "dim": c.field.dim(),
                        "closed_form_u": c.closed_form_u.map(|e| e.to_string()),
                        "expected": c.expected,
                        "notes": c.notes,
                    })
                })
                .collect::<Vec<_>>();
            Ok((json!(cases), true))
        }
        ExampleAction::Run { name } => {
            let budget = Budget {
                seed,
                ..Budget::default()
            };
            let rep = verify_example(name, &budget).map_err(usage)?;
            for c in &rep.checks {
                eprintln!(
                    "{} {} {}",
                    if c.passed { "pass" } else { "FAIL" },
                    c.name,
                    c.detail
                );
            }
            Ok((to_value(&rep), rep.passed))
        }
    }
}

fn dispatch(cli: &Cli) -> Outcome {
    let seed = cli.seed;
    match &cli.command {
        Command::Check {
            source,
            bbox,
            grid,
            fd,
            tol,
        } => run_check(&load_field(source)?, bbox.as_deref(), *grid, *fd, *tol),
        Command::Solve {
            source,
            at,
            samples,
        } => run_solve(&load_field(source)?, at, *samples, seed),
        Command::Level {
            source,
            at,
            levels,
            points,
            plot_out,
        } => run_level(
            &load_field(source)?,
            at,
            levels,
            *points,
            plot_out.as_deref(),
            seed,
        ),
        Command::Qc {
            source,
            bbox,
            pairs,
            no_integrability,
        } => run_qc(
            &load_field(source)?,
            bbox.as_deref(),
            *pairs,
            *no_integrability,
            seed,
        ),
        Command::Kkt {
            source,
            constraints,
            bbox,
            candidate,
            assume_qc,
            no_box_faces,
            stat_tol,
        } => run_kkt(
            &load_field(source)?,
            constraints,
            bbox,
            candidate.as_deref(),
            *assume_qc,
            *no_box_faces,
            *stat_tol,
            seed,
        ),
        Command::Examples { action } => run_examples(action, seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok((report, ok)) => {
            let mut text = serde_json::to_string_pretty(&report).expect("report serialises");
            text.push('\n');
            let written = match &cli.out {
                Some(path) => std::fs::write(path, text),
                None => {
                    print!("{text}");
                    Ok(())
                }
            };
            if let Err(e) = written {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
            ExitCode::from(if ok { 0 } else { 1 })
        }
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Refused(m)) => {
            eprintln!("refused: {m}");
            ExitCode::from(1)
        }
    }
}
