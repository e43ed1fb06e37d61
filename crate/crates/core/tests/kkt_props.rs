use proptest::prelude::*;
use tdekit::kkt::sample_feasible;
use tdekit::{
    get_example, kkt_search, kkt_verify, minimize_oracle, ConstraintSet, DomainBox, Expr,
    FieldSpec, KktSearchConfig, KktTolerances, QcGate,
};

/// Prices and a point the supporting line passes through.
fn budget() -> impl Strategy<Value = ((f64, f64), (f64, f64))> {
    ((0.5f64..3.0, 0.5f64..3.0), (0.8f64..2.0, 0.8f64..2.0))
}

fn ae_setup(
    ((p1, p2), (m1, m2)): ((f64, f64), (f64, f64)),
    sign: f64,
) -> (FieldSpec, Expr, ConstraintSet) {
    let case = get_example("arrow_enthoven").unwrap();
    let c = p1 * m1 + p2 * m2;
    let h = format!("{sign} * ({c} - {p1}*x1 - {p2}*x2)");
    let cs = ConstraintSet::new(&[h], DomainBox::cube(2, 0.25, 3.0).unwrap()).unwrap();
    (case.field, case.closed_form_u.unwrap(), cs)
}

/// Largest `|grad u|` over a grid of the box, for the grid error of the oracle.
fn grad_bound(u: &Expr, b: &DomainBox) -> f64 {
    let grad = u.gradient(2);
    tdekit::Grid::inclusive(b, 21)
        .points()
        .iter()
        .map(|x| grad.iter().map(|d| d.eval(x).powi(2)).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

/// Minimiser of `u` on the segment `p . x = c` inside the box: a dense
/// scan followed by golden-section search on the best bracket.
fn line_minimizer(
    u: &Expr,
    ((p1, p2), (m1, m2)): ((f64, f64), (f64, f64)),
    b: &DomainBox,
) -> Vec<f64> {
    let c = p1 * m1 + p2 * m2;
    let x2_of = |x1: f64| (c - p1 * x1) / p2;
    // x1 range keeping x2 inside the box
    let lo = b.lower[0].max((c - p2 * b.upper[1]) / p1);
    let hi = b.upper[0].min((c - p2 * b.lower[1]) / p1);
    let f = |x1: f64| u.eval(&[x1, x2_of(x1)]);
    let m = 10_000;
    let at = |k: usize| lo + (hi - lo) * k as f64 / m as f64;
    let k = (0..=m)
        .min_by(|&i, &j| f(at(i)).total_cmp(&f(at(j))))
        .unwrap();
    let (mut a, mut d) = (at(k.saturating_sub(1)), at((k + 1).min(m)));
    let r = (5f64.sqrt() - 1.0) / 2.0;
    while d - a > 1e-13 {
        let (b1, c1) = (d - r * (d - a), a + r * (d - a));
        if f(b1) <= f(c1) {
            d = c1;
        } else {
            a = b1;
        }
    }
    let x1 = 0.5 * (a + d);
    vec![x1, x2_of(x1)]
}

#[test]
fn grid_oracle_minimizer_is_certified() {
    let case = get_example("arrow_enthoven").unwrap();
    let cs =
        ConstraintSet::new(&["4 - 3*x1 - x2"], DomainBox::cube(2, 0.25, 3.0).unwrap()).unwrap();
    let u = case.closed_form_u.unwrap();
    let o = minimize_oracle(&u, &cs, 200).unwrap();
    let cell = o.spacing.iter().copied().fold(0.0, f64::max);
    let gmax = grad_bound(&u, cs.domain());
    let g = case.field.eval(&o.x).unwrap();
    let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let tols = KktTolerances {
        act_tol: 2.0 * cell * gmax,
        slack_tol: 2.0 * cell * gmax * gn,
        stat_tol: 1e-4,
        ..KktTolerances::default()
    };
    let cert = kkt_verify(
        &case.field,
        &cs.with_box_faces(),
        &o.x,
        &tols,
        QcGate::Assume,
    )
    .unwrap();
    assert!(cert.certified(), "{:?}: {:?}", o.x, cert.reason);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn certified_points_are_oracle_minimal(q in budget()) {
        let (field, u, cs) = ae_setup(q, 1.0);
        let out = kkt_search(&field, &cs, &KktSearchConfig::default()).unwrap();
        prop_assume!(out.certificate.certified());
        let o = minimize_oracle(&u, &cs, 100).unwrap();
        let cell = o.spacing.iter().map(|s| s * s).sum::<f64>().sqrt();
        let eps = grad_bound(&u, cs.domain()) * cell;
        prop_assert!(u.eval(&out.candidate) <= o.value + eps, "{:?}: {} vs {}", out.candidate, u.eval(&out.candidate), o.value);
    }

    #[test]
    fn line_minimizers_are_certified(q in budget()) {
        let (field, u, cs) = ae_setup(q, 1.0);
        let x = line_minimizer(&u, q, cs.domain());
        let tols = KktTolerances { stat_tol: 1e-4, ..KktTolerances::default() };
        let cert = kkt_verify(&field, &cs.with_box_faces(), &x, &tols, QcGate::Assume).unwrap();
        prop_assert!(cert.certified(), "{:?}: {:?} {:e}", x, cert.reason, cert.stationarity_residual);
    }

    #[test]
    fn inactive_constraints_get_zero_multipliers(q in budget(), seed in 0u64..1000) {
        let (field, _, cs) = ae_setup(q, 1.0);
        let faces = cs.with_box_faces();
        let tols = KktTolerances::default();
        for x in sample_feasible(&cs, 20, seed) {
            let cert = kkt_verify(&field, &faces, &x, &tols, QcGate::Assume).unwrap();
            for (h, l) in cert.values.iter().zip(&cert.multipliers) {
                prop_assert!(*l >= 0.0);
                if *h < -tols.act_tol {
                    prop_assert_eq!(*l, 0.0);
                }
            }
        }
    }

    #[test]
    fn doubling_a_constraint_halves_its_multiplier(q in budget()) {
        let (field, _, cs) = ae_setup(q, 1.0);
        let (_, _, cs2) = ae_setup(q, 2.0);
        let out = kkt_search(&field, &cs, &KktSearchConfig::default()).unwrap();
        let tols = KktSearchConfig::default().tols;
        let x = &out.candidate;
        let a = kkt_verify(&field, &cs.with_box_faces(), x, &tols, QcGate::Assume).unwrap();
        let b = kkt_verify(&field, &cs2.with_box_faces(), x, &tols, QcGate::Assume).unwrap();
        prop_assert_eq!(a.verdict, b.verdict);
        prop_assert_eq!(a.reason, b.reason);
        prop_assert!((b.multipliers[0] - 0.5 * a.multipliers[0]).abs() <= 1e-8 * (1.0 + a.multipliers[0]));
    }
}
