use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tdekit"))
        .args(args)
        .output()
        .unwrap()
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn field_files_and_out_paths() {
    let dir = tempfile::tempdir().unwrap();
    let field = dir.path().join("field.json");
    std::fs::write(
        &field,
        r#"{"n": 3, "components": ["x2*x3", "x1*x3", "x1*x2"],
            "domain": {"lower": [0.5, 0.5, 0.5], "upper": [2, 2, 2]}}"#,
    )
    .unwrap();
    let report = dir.path().join("report.json");
    let out = run(&[
        "check",
        "--field",
        field.to_str().unwrap(),
        "--grid",
        "3",
        "--out",
        report.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["verdict"], "pass");
    assert_eq!(v["samples"].as_array().unwrap().len(), 27);
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(run(&["check"]).status.code(), Some(2));
    assert_eq!(
        run(&["check", "--builtin", "katzner", "--field", "f.json"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        run(&["check", "--builtin", "no_such_field"]).status.code(),
        Some(2)
    );
    assert_eq!(
        run(&["solve", "--builtin", "katzner", "--at", "1,1,1"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        run(&["qc", "--builtin", "katzner", "--box", "1,2,3"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn refused_charts_exit_with_one() {
    let out = run(&["solve", "--builtin", "contact3", "--at", "0,0,0"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("refused:"));
}

#[test]
fn solve_reports_one_based_pivot() {
    let out = run(&[
        "solve",
        "--builtin",
        "debreu",
        "--at",
        "0,0",
        "--samples",
        "3",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["chart"]["pivot"], 2);
    assert_eq!(v["samples"].as_array().unwrap().len(), 4);
}

#[test]
fn level_writes_csv_and_svg() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["lines.csv", "lines.svg"] {
        let path = dir.path().join(name);
        let out = run(&[
            "level",
            "--builtin",
            "arrow_enthoven",
            "--at",
            "1,1",
            "--levels",
            "0.95,1,1.05",
            "--points",
            "5",
            "--plot-out",
            path.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0), "{name}");
        let body = std::fs::read_to_string(&path).unwrap();
        if name.ends_with("svg") {
            assert_eq!(body.matches("<polyline").count(), 3);
        } else {
            assert_eq!(body.lines().count(), 1 + 3 * 5);
        }
    }
}

#[test]
fn kkt_candidate_and_search() {
    let dir = tempfile::tempdir().unwrap();
    let cons = dir.path().join("budget.json");
    std::fs::write(&cons, r#"["4 - 3*x1 - x2"]"#).unwrap();
    let c = cons.to_str().unwrap();
    let base = [
        "kkt",
        "--builtin",
        "arrow_enthoven",
        "--constraints",
        c,
        "--box",
        "0.25,3",
    ];

    let out = run(&[&base[..], &["--candidate", "1,1", "--assume-qc"]].concat());
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json(&out)["certificate"]["reason"], "stationarity");

    let out = run(&base);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["search"]["on_box_face"], true);
    let x = v["search"]["candidate"].as_array().unwrap();
    assert!((x[0].as_f64().unwrap() - 1.25).abs() < 1e-6);
}

#[test]
fn quasiconcave_field_exits_with_one() {
    let out = run(&["qc", "--builtin", "quasiconcave_control", "--pairs", "500"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json(&out)["class"], "not_quasi_convex");
}

#[test]
fn examples_list_names_every_case() {
    let out = run(&["examples", "list"]);
    let names: Vec<String> = json(&out)
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["name"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(names.len(), 6);
    assert!(names.contains(&"contact3".to_string()));
}
