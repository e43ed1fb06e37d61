use proptest::prelude::*;
use tdekit::quasiconvex::{default_t_seq, fmt_point};
use tdekit::{
    directional_limsup, get_example, qc_classify, quasiconvexity_bruteforce, Condition, DomainBox,
    Expr, FieldSpec, LimsupClass, QcClass, QcConfig, QcVerdict,
};

fn cfg(seed: u64) -> QcConfig {
    QcConfig {
        num_pairs: 2000,
        seed,
        ..QcConfig::default()
    }
}

/// `s * (a x1^2 + b x2^2 + c x1 x2) + d x1 + e x2`, positive definite part.
fn quadratic(s: f64, (a, b, c, d, e): (f64, f64, f64, f64, f64)) -> Expr {
    Expr::parse(
        &format!("{s} * ({a}*x1^2 + {b}*x2^2 + {c}*x1*x2) + {d}*x1 + {e}*x2"),
        2,
    )
    .unwrap()
}

fn definite() -> impl Strategy<Value = (f64, f64, f64, f64, f64)> {
    (
        0.5f64..2.0,
        0.5f64..2.0,
        -0.9f64..0.9,
        -1.0f64..1.0,
        -1.0f64..1.0,
    )
        // |c| < sqrt(a b) keeps the quadratic form definite
        .prop_map(|(a, b, c, d, e)| (a, b, c * (a * b).sqrt(), d, e))
}

fn qc_box() -> DomainBox {
    DomainBox::cube(2, 0.5, 1.5).unwrap()
}

fn gradient_field(u: &Expr) -> FieldSpec {
    FieldSpec::gradient_of(u, DomainBox::cube(2, -3.0, 3.0).unwrap(), None).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn gallery_verdicts_match_the_oracle(seed in any::<u64>()) {
        for (name, class, strict) in [
            ("arrow_enthoven", QcClass::QuasiConvex, false),
            ("katzner", QcClass::StrictlyQuasiConvex, true),
            ("quasiconcave_control", QcClass::NotQuasiConvex, false),
        ] {
            let case = get_example(name).unwrap();
            let b = case.qc_box.clone().unwrap();
            let bundle = qc_classify(&case.field, &b, &cfg(seed)).unwrap();
            prop_assert_eq!(bundle.class, class, "{}", name);
            let brute = quasiconvexity_bruteforce(case.closed_form_u.as_ref().unwrap(), &b, 20_000, strict, seed);
            let want = if class == QcClass::NotQuasiConvex { QcVerdict::Violated } else { QcVerdict::Holds };
            prop_assert_eq!(brute.verdict, want, "{}", name);
        }
    }

    #[test]
    fn convex_and_concave_quadratics_agree_with_the_oracle(q in definite(), concave in any::<bool>(), seed in 0u64..1000) {
        let u = quadratic(if concave { -1.0 } else { 1.0 }, q);
        let bundle = qc_classify(&gradient_field(&u), &qc_box(), &cfg(seed)).unwrap();
        let brute = quasiconvexity_bruteforce(&u, &qc_box(), 20_000, false, seed);
        if concave {
            prop_assert_eq!(bundle.class, QcClass::NotQuasiConvex, "{}", u);
            prop_assert_eq!(brute.verdict, QcVerdict::Violated);
        } else {
            prop_assert!(matches!(bundle.class, QcClass::QuasiConvex | QcClass::StrictlyQuasiConvex), "{u}: {:?}", bundle.class);
            prop_assert_eq!(brute.verdict, QcVerdict::Holds);
        }
    }

    #[test]
    fn positive_directional_margins_imply_strict_pairs(q in definite(), seed in 0u64..1000) {
        let u = quadratic(1.0, q);
        let bundle = qc_classify(&gradient_field(&u), &qc_box(), &cfg(seed)).unwrap();
        let dir = bundle.report(Condition::DirectionalStrict).unwrap();
        prop_assume!(dir.verdict == QcVerdict::Holds);
        prop_assert!(dir.min_margin.unwrap() > 0.0);
        let strict = bundle.report(Condition::PairwiseStrict).unwrap();
        prop_assert_eq!(strict.verdict, QcVerdict::Holds, "{}", u);
        let brute = quasiconvexity_bruteforce(&u, &qc_box(), 20_000, true, seed);
        prop_assert_eq!(brute.verdict, QcVerdict::Holds);
    }
}

#[test]
fn katzner_strict_pairs_without_strict_directions() {
    let case = get_example("katzner").unwrap();
    let b = case.qc_box.clone().unwrap();
    let bundle = qc_classify(&case.field, &b, &QcConfig::default()).unwrap();
    let strict = bundle.report(Condition::PairwiseStrict).unwrap();
    assert_eq!(strict.verdict, QcVerdict::Holds);
    assert!(strict.tested > 0);
    let dir = bundle.report(Condition::DirectionalStrict).unwrap();
    assert_eq!(dir.verdict, QcVerdict::Inconclusive);
    let hit = dir
        .zero_margin
        .iter()
        .any(|e| fmt_point(&e.x) == "(1,1)" && e.v[0] == -e.v[1] && e.v[1] > 0.0);
    assert!(hit, "{:?}", dir.zero_margin);
    let e = directional_limsup(&case.field, &[1.0, 1.0], &[-1.0, 1.0], &default_t_seq()).unwrap();
    assert_eq!(e.class, LimsupClass::ZeroMargin);
}
