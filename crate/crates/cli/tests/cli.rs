use std::path::Path;
use std::process::{Command, Output};

fn hanner(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hanner"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn certify_examples() {
    let o = hanner(&[
        "certify", "--p", "4", "--d", "2", "--n", "3", "--trials", "50", "--seed", "7",
    ]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("seed: 7"));
    assert!(stdout(&o).contains("verdict NSD: 50"));

    let o = hanner(&["certify", "--p", "2", "--d", "3", "--n", "2"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("zero hessians"));
    assert!(stdout(&o).contains("vanishes"));

    assert_eq!(
        code(&hanner(&["certify", "--p", "0.5", "--d", "3", "--n", "2"])),
        1
    );
}

#[test]
fn certify_refuses_open_regime_without_flag() {
    assert_eq!(
        code(&hanner(&[
            "certify", "--p", "1.5", "--d", "2", "--n", "3", "--trials", "2"
        ])),
        1
    );
    let o = hanner(&[
        "certify",
        "--p",
        "1.5",
        "--d",
        "2",
        "--n",
        "2",
        "--trials",
        "2",
        "--open-range",
    ]);
    assert_eq!(code(&o), 0);
}

#[test]
fn usage_and_help() {
    assert_eq!(code(&hanner(&["certify", "--bogus"])), 1);
    assert_eq!(code(&hanner(&["frobnicate"])), 1);
    assert_eq!(code(&hanner(&[])), 1);
    for sub in ["certify", "signmap", "hanner", "hunt", "selftest"] {
        let o = hanner(&[sub, "--help"]);
        assert_eq!(code(&o), 0, "{sub}");
        let help = stdout(&o);
        assert!(help.contains("--seed"), "{sub}");
        assert!(!help.contains("inject"), "{sub}");
    }
    let help = stdout(&hanner(&["signmap", "--help"]));
    for flag in ["--p", "--d", "--n", "--grid-step", "--out", "--format"] {
        assert!(help.contains(flag), "{flag}");
    }
    assert_eq!(code(&hanner(&["--version"])), 0);
}

#[test]
fn bad_thread_count_is_a_usage_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_hanner"))
        .args(["selftest", "--filter", "specfun"])
        .env("HANNER_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
}

#[test]
fn hanner_examples() {
    let dir = tempfile::tempdir().unwrap();
    let consts = write(dir.path(), "c.json", "[[[1.0, 1.0]], [[1.0, 1.0]]]");
    let o = hanner(&["hanner", "--functions", &consts, "--p", "3", "--d", "1"]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    assert!(out.contains("verdict: PASS"), "{out}");
    assert!(out.contains("margin: 0e0"), "{out}");

    let random = write(
        dir.path(),
        "r.json",
        "[[[0.25, 1.5], [0.5, -0.3], [0.25, 2.0]], [[0.6, -1.0], [0.4, 0.7]], [[1.0, 0.9]]]",
    );
    let o = hanner(&["hanner", "--functions", &random, "--p", "4", "--d", "2"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("verdict: PASS"));

    let o = hanner(&["hanner", "--functions", &random, "--p", "1.5", "--d", "2"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("verdict: CONJECTURAL"));

    let o = hanner(&["hanner", "--functions", &random, "--p", "2.5", "--d", "1"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("verdict: OPEN"));
}

#[test]
fn hanner_input_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.json", "[[[0.5, 1.0],\n [0.5 2.0]]]");
    let o = hanner(&["hanner", "--functions", &bad, "--p", "3", "--d", "2"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));

    let short = write(dir.path(), "short.json", "[[[0.5, 1.0]]]");
    assert_eq!(
        code(&hanner(&[
            "hanner",
            "--functions",
            &short,
            "--p",
            "3",
            "--d",
            "2"
        ])),
        1
    );

    let missing = dir.path().join("missing.json");
    let o = hanner(&[
        "hanner",
        "--functions",
        missing.to_str().unwrap(),
        "--p",
        "3",
        "--d",
        "2",
    ]);
    assert_eq!(code(&o), 3);
}

#[test]
fn signmap_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("m.csv");
    let o = hanner(&[
        "signmap",
        "--p",
        "3",
        "--d",
        "3",
        "--n",
        "2",
        "--grid-step",
        "0.1",
        "--format",
        "csv",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    let body = std::fs::read_to_string(&csv).unwrap();
    let mut rows = body.lines();
    assert_eq!(
        rows.next().unwrap(),
        "p,d,n,x1,x2,k,l,E_kl,err_est,verdict,witness"
    );
    let values: Vec<f64> = rows
        .map(|r| r.split(',').nth(7).unwrap().parse().unwrap())
        .collect();
    assert_eq!(values.len(), 9);
    assert!(values.iter().all(|&v| v >= 0.0));

    let json = dir.path().join("zero.json");
    let o = hanner(&[
        "signmap",
        "--p",
        "2",
        "--d",
        "2",
        "--n",
        "3",
        "--grid-step",
        "0.25",
        "--out",
        json.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    let report = hanner_core::explorer::parse_report(&std::fs::read(&json).unwrap()).unwrap();
    assert!(report
        .points
        .iter()
        .flat_map(|p| &p.ekl)
        .all(|e| e.value == 0.0));
}

#[test]
fn signmap_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("no/such/dir/m.json");
    let o = hanner(&[
        "signmap",
        "--p",
        "3",
        "--d",
        "3",
        "--n",
        "2",
        "--grid-step",
        "0.5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 3);
}

#[test]
fn hunt_records_witness_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("h.csv");
    let o = hanner(&[
        "hunt",
        "--p",
        "1.5",
        "--d",
        "2",
        "--n",
        "3",
        "--grid-step",
        "0.1",
        "--mc-samples",
        "200000",
        "--format",
        "csv",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    let body = std::fs::read_to_string(&out).unwrap();
    let witness_rows: Vec<&str> = body.lines().filter(|r| r.ends_with(",true")).collect();
    assert!(!witness_rows.is_empty());
    for r in witness_rows {
        let cols: Vec<&str> = r.split(',').collect();
        let m = cols.len();
        assert!(cols[m - 4].parse::<f64>().unwrap() > 0.0);
        assert_eq!(cols[m - 2], "PSD");
    }
}

#[test]
fn selftest_filter_and_negative_control() {
    let o = hanner(&["selftest", "--filter", "specfun"]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    assert!(out.contains("specfun: 6 passed, 0 failed"));
    assert!(!out.contains("hessian:"));
    let o = hanner(&["selftest", "--filter", "specfun", "--inject-wrong-beta"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn repeated_runs_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for path in [&a, &b] {
        let o = hanner(&[
            "certify",
            "--p",
            "3",
            "--d",
            "2",
            "--n",
            "3",
            "--trials",
            "10",
            "--seed",
            "3",
            "--out",
            path.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}
