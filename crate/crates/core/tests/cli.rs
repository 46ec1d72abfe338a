mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::data;
use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_roi-auction"));
    c.env_remove("ROI_AUCTION_DEFAULT_GRID");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", stdout(o)))
}

fn check<'a>(report: &'a Value, name: &str) -> &'a Value {
    report["checks"].as_array().unwrap().iter().find(|c| c["name"] == name).unwrap()
}

#[test]
fn dmr_check_exit_codes() {
    let ok = run(&["dmr-check", path(&data("uniform.json"))]);
    assert_eq!(ok.status.code(), Some(0));
    assert_eq!(json(&ok)["pass"], true);

    let bad = run(&["dmr-check", path(&data("decreasing-density.json"))]);
    assert_eq!(bad.status.code(), Some(1));
    let report = json(&bad);
    assert_eq!(report["pass"], false);
    assert!(report["violation_start"].as_f64().unwrap() < report["violation_end"].as_f64().unwrap());

    let missing = run(&["dmr-check", "/nonexistent/dist.json"]);
    assert_eq!(missing.status.code(), Some(2));
}

fn solve(dir: &Path, dist: &str, m: &str) -> (Output, std::path::PathBuf) {
    let out = dir.join("solution.json");
    let o = run(&["solve", path(&data(dist)), "--m", m, "--out", path(&out)]);
    (o, out)
}

#[test]
fn solve_writes_solution_and_schedule() {
    let dir = tempfile::tempdir().unwrap();
    for (m, d, rev) in [("2", 0.75, 0.375), ("3", 5.0 / 6.0, 5.0 / 12.0)] {
        let (o, out) = solve(dir.path(), "uniform.json", m);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let sol: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
        assert!((sol["D"].as_f64().unwrap() - d).abs() <= 1e-6, "M={m}");
        assert!((sol["revenue"].as_f64().unwrap() - rev).abs() <= 1e-6, "M={m}");
        assert_eq!(sol["boundary_case"], "interior_root");
        let csv = std::fs::read_to_string(dir.path().join(sol["schedule_csv_path"].as_str().unwrap())).unwrap();
        assert_eq!(csv.lines().next().unwrap(), "v,x,p_myerson,p_roi,rebate");
        assert_eq!(csv.lines().count(), 10_002);
    }
}

#[test]
fn solve_rejects_bad_inputs() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(solve(dir.path(), "uniform.json", "1").0.status.code(), Some(2));
    assert_eq!(solve(dir.path(), "decreasing-density.json", "2").0.status.code(), Some(1));
    let no_m = run(&["solve", path(&data("uniform.json")), "--out", path(&dir.path().join("x.json"))]);
    assert_eq!(no_m.status.code(), Some(2));
}

#[test]
fn solve_is_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    solve(a.path(), "power2.json", "2.5");
    solve(b.path(), "power2.json", "2.5");
    for f in ["solution.json", "solution.csv"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

fn table(alloc: &str, grid: &str) -> Value {
    let o = run(&["payment-table", path(&data(alloc)), "--m", "2", "--grid", grid, "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    json(&o)
}

#[test]
fn payment_tables() {
    let step = table("step-0.5.json", "11");
    for (v, p) in step["v"].as_array().unwrap().iter().zip(step["p_roi"].as_array().unwrap()) {
        let want = if v.as_f64().unwrap() >= 0.5 { 0.5 } else { 0.0 };
        assert!((p.as_f64().unwrap() - want).abs() <= 1e-12);
    }

    let two = table("two-step.json", "11");
    let p = |i: usize| two["p_roi"][i].as_f64().unwrap();
    assert!((p(3) - 0.1).abs() <= 1e-12);
    assert!((p(10) - 0.6).abs() <= 1e-12);

    let zero = table("zero.json", "5");
    for col in ["p_myerson", "p_roi", "rebate"] {
        assert!(zero[col].as_array().unwrap().iter().all(|x| x.as_f64() == Some(0.0)));
    }

    let dip = run(&["payment-table", path(&data("dip.json")), "--m", "2"]);
    assert_eq!(dip.status.code(), Some(1));
}

#[test]
fn audit_of_solution_passes_and_edited_schedule_fails() {
    let dir = tempfile::tempdir().unwrap();
    let (_, out) = solve(dir.path(), "uniform.json", "2");
    let ok = run(&["audit", path(&out)]);
    assert_eq!(ok.status.code(), Some(0), "{}", stdout(&ok));

    let csv_path = dir.path().join("solution.csv");
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    let mut lines: Vec<String> = csv.lines().map(str::to_owned).collect();
    for line in lines.iter_mut().skip(1) {
        let mut cols: Vec<String> = line.split(',').map(str::to_owned).collect();
        if cols[0].parse::<f64>().unwrap() >= 0.5 {
            cols[3] = format!("{}", cols[3].parse::<f64>().unwrap() + 0.01);
            *line = cols.join(",");
        }
    }
    std::fs::write(&csv_path, lines.join("\n") + "\n").unwrap();

    let bad = run(&["audit", path(&out)]);
    assert_eq!(bad.status.code(), Some(1));
    let report = json(&bad);
    assert_eq!(check(&report, "characterization")["pass"], false);
    assert_eq!(check(&report, "dsic")["pass"], false);
    assert_eq!(check(&report, "monotone")["pass"], true);
}

#[test]
fn audit_of_non_monotone_rule_fails() {
    let o = run(&["audit", path(&data("dip.json")), "--m", "2"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(check(&json(&o), "monotone")["pass"], false);
}

#[test]
fn compare_outputs() {
    let o = run(&["compare", path(&data("uniform.json")), "--m", "2", "--format", "csv"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows[0], ["name", "threshold", "rev_quad", "rev_mc", "stderr"]);
    assert_eq!(rows[1][0], "myerson_posted_price");
    assert!((rows[1][2].parse::<f64>().unwrap() - 0.25).abs() <= 1e-9);
    assert!((rows[2][2].parse::<f64>().unwrap() - 0.375).abs() <= 1e-9);
    assert_eq!(&rows[1][3..], ["", ""]);

    let o = run(&["compare", path(&data("power2.json")), "--m", "2", "--mc-samples", "20000", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let t = json(&o);
    let row = &t["rows"][1];
    let quad = row["rev_quad"].as_f64().unwrap();
    assert!((quad - 0.544331).abs() <= 1e-6);
    let mc = row["rev_mc"].as_f64().unwrap();
    let se = row["stderr"].as_f64().unwrap();
    assert!((mc - quad).abs() <= 4.0 * se, "{mc} vs {quad} (se {se})");
}

#[test]
fn example1_variants() {
    for args in [&["example1"][..], &["example1", "--m", "2"], &["example1", "--grid", "101"]] {
        let o = run(args);
        assert_eq!(o.status.code(), Some(0), "{args:?}");
        assert!(stdout(&o).contains("Myerson: 0.250000, ROI-optimal: 0.375000, D = 0.750000, audit: PASS"));
    }
}

#[test]
fn grid_default_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.json");
    let o = bin()
        .env("ROI_AUCTION_DEFAULT_GRID", "101")
        .args(["solve", path(&data("uniform.json")), "--m", "2", "--out", path(&out)])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
    assert_eq!(csv.lines().count(), 102);
}

#[test]
fn unknown_arguments_exit_2() {
    assert_eq!(run(&["solve"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}
