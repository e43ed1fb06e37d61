use tdekit::gallery::example_names;
use tdekit::{verify_example, Budget};

#[test]
fn every_case_reproduces_its_claims() {
    for name in example_names() {
        let rep = verify_example(name, &Budget::default()).unwrap();
        let failed: Vec<_> = rep.checks.iter().filter(|c| !c.passed).collect();
        assert!(rep.passed && failed.is_empty(), "{name}: {failed:?}");
    }
}

#[test]
fn unknown_names_are_errors() {
    assert!(verify_example("cobb_douglas", &Budget::default()).is_err());
}
