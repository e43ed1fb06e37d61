mod common;

use common::{charts, in_delta_box};
use proptest::prelude::*;
use tdekit::field::reduce;
use tdekit::{integrate, OdeConfig};

fn rk4_error(a: f64, h: f64) -> f64 {
    let tr = integrate(
        |_, y: &[f64]| Ok::<_, String>(vec![a * y[0]]),
        0.0,
        &[1.0],
        1.0,
        &OdeConfig::rk4(h),
    )
    .unwrap();
    (tr.final_state()[0] - a.exp()).abs()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rk4_is_fourth_order(a in 0.5f64..2.0) {
        let ratio = rk4_error(a, 0.1) / rk4_error(a, 0.05);
        prop_assert!((12.0..=20.0).contains(&ratio), "a {a}: ratio {ratio}");
    }

    #[test]
    fn initial_state_is_stored_exactly(y0 in prop::collection::vec(-1e3f64..1e3, 1..4), t0 in -5.0f64..5.0) {
        let tr = integrate(|_, y: &[f64]| Ok::<_, String>(y.iter().map(|v| -v).collect()), t0, &y0, t0 + 1.0, &OdeConfig::default()).unwrap();
        prop_assert_eq!(tr.times[0].to_bits(), t0.to_bits());
        prop_assert!(tr.states[0].iter().zip(&y0).all(|(a, b)| a.to_bits() == b.to_bits()));
        prop_assert!(tr.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn ray_solutions_are_ordered_by_initial_value(which in 0usize..5, unit in prop::collection::vec(0.0f64..1.0, 3), s in 0.0f64..1.0, gap in 0.01f64..1.0) {
        let (name, chart) = &charts()[which];
        let p = chart.pivot();
        let n = chart.center().len();
        let xt = reduce(&in_delta_box(chart, &unit[..n], 0.0), p);
        let (lo, hi) = chart.bracket();
        let z = lo + s * (hi - lo) * (1.0 - gap);
        let z2 = z + gap * (hi - z);
        let sf = chart.solution_function();
        let (a, b) = (sf.trajectory(&xt, z).unwrap(), sf.trajectory(&xt, z2).unwrap());
        for &t in a.times.iter().chain(&b.times) {
            let (ya, yb) = (a.eval(t).unwrap()[0], b.eval(t).unwrap()[0]);
            prop_assert!(yb > ya, "{name}: t {t}, c(z={z}) = {ya}, c(z={z2}) = {yb}");
        }
    }

    #[test]
    fn ray_at_time_zero_is_the_level(which in 0usize..5, unit in prop::collection::vec(0.0f64..1.0, 3), z in -10.0f64..10.0) {
        let (_, chart) = &charts()[which];
        let n = chart.center().len();
        let xt = reduce(&in_delta_box(chart, &unit[..n], 0.0), chart.pivot());
        let c0 = chart.solution_function().eval(0.0, &xt, z).unwrap();
        prop_assert_eq!(c0.to_bits(), z.to_bits());
    }
}
