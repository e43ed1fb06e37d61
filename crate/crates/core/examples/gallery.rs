//! Runs every built-in case through the full pipeline and prints the checks.

use tdekit::gallery::{example_names, verify_example, Budget};

fn main() {
    for name in example_names() {
        let report = verify_example(name, &Budget::default()).expect("built-in name");
        println!("{name}: {}", if report.passed { "pass" } else { "FAIL" });
        for c in &report.checks {
            println!("  {:<22} {:<5} {}", c.name, c.passed, c.detail);
        }
    }
}
