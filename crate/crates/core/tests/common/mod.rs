#![allow(dead_code)]

use std::sync::OnceLock;

use tdekit::{build_chart, get_example, ChartConfig, SolutionChart};

pub const CHARTED: [&str; 5] = [
    "debreu",
    "arrow_enthoven",
    "katzner",
    "grad_product3",
    "quasiconcave_control",
];

/// Gallery charts, built once per test binary.
pub fn charts() -> &'static [(&'static str, SolutionChart)] {
    static CHARTS: OnceLock<Vec<(&'static str, SolutionChart)>> = OnceLock::new();
    CHARTS.get_or_init(|| {
        CHARTED
            .iter()
            .map(|&name| {
                let case = get_example(name).unwrap();
                let chart =
                    build_chart(&case.field, &case.chart_center, &ChartConfig::default()).unwrap();
                (name, chart)
            })
            .collect()
    })
}

pub fn chart(name: &str) -> &'static SolutionChart {
    &charts().iter().find(|(n, _)| *n == name).unwrap().1
}

/// Maps unit-cube coordinates into the delta-box, shrunk by `frac` of delta.
pub fn in_delta_box(chart: &SolutionChart, unit: &[f64], frac: f64) -> Vec<f64> {
    let r = chart.delta() * (1.0 - frac);
    chart
        .center()
        .iter()
        .zip(unit)
        .map(|(c, s)| c + r * (2.0 * s - 1.0))
        .collect()
}
