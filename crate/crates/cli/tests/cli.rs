use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use winodds::io::{load_csv, report_from_json};
use winodds::CsvSchema;

fn winodds(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_winodds"))
        .args(args)
        .env_remove("WINODDS_WORKERS")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate(dir: &TempDir, name: &str, n: usize, seed: u64) -> PathBuf {
    let path = dir.path().join(name);
    let (n, seed) = (n.to_string(), seed.to_string());
    let out = winodds(&["simulate", "--n", &n, "--scenario", "A", "--seed", &seed, "--out", path_str(&path)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    path
}

const SMALL: &str = "\
id,arm,u1,d1,u2,d2,age,region
a,0,10,1,4,1,61,north
b,0,12,0,12,0,55,south
c,1,15,1,15,0,70,north
d,1,20,0,9,1,48,south
e,0,7,1,7,0,66,south
f,1,20,0,20,0,59,north
";

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&winodds(&["--help"])), 0);
    assert_eq!(code(&winodds(&["analyze", "--help"])), 0);
    assert_eq!(code(&winodds(&["--version"])), 0);
}

#[test]
fn usage_errors_exit_64() {
    assert_eq!(code(&winodds(&[])), 64);
    assert_eq!(code(&winodds(&["frobnicate"])), 64);
    let out = winodds(&["simulate", "--n", "100", "--scenario", "D"]);
    assert_eq!(code(&out), 64);
    assert!(out.stdout.is_empty());
    assert_eq!(code(&winodds(&["power", "--n", "100", "--scenario", "A", "--reps", "5", "--adjust-prefixes", "0..11"])), 64);
    assert_eq!(code(&winodds(&["simulate", "--n", "100", "--scenario", "A", "--permute-flip"])), 64);
}

#[test]
fn analyze_small_file() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("small.csv");
    fs::write(&input, SMALL).unwrap();
    let out = winodds(&[
        "analyze",
        "--input",
        path_str(&input),
        "--adjust",
        "age,region",
        "--categorical",
        "region",
        "--format",
        "table",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("unadjusted") && table.contains("adjusted"));
    assert!(table.contains("region[south]"));
}

#[test]
fn malformed_csv_exits_2() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("bad.csv");
    fs::write(&input, SMALL.replace("c,1,15,1,", "c,1,15,2,")).unwrap();
    let out = winodds(&["analyze", "--input", path_str(&input)]);
    assert_eq!(code(&out), 2);
    assert!(out.stdout.is_empty());
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 3"));
    let missing = dir.path().join("missing.csv");
    assert_eq!(code(&winodds(&["analyze", "--input", path_str(&missing)])), 2);
}

#[test]
fn collinear_adjustment_exits_3() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("dup.csv");
    let mut text = String::from("id,arm,u1,d1,u2,d2,age,age2\n");
    for i in 0..40 {
        let age = 40 + (i * 7) % 31;
        let u1 = 5 + (i * 13) % 29;
        text.push_str(&format!("s{i},{},{u1},{},{u1},0,{age},{}\n", i % 2, i % 3 % 2, 2 * age));
    }
    fs::write(&input, text).unwrap();
    let out = winodds(&["analyze", "--input", path_str(&input), "--adjust", "age,age2"]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn json_report_round_trips() {
    let dir = TempDir::new().unwrap();
    let data = simulate(&dir, "trial.csv", 300, 2);
    let report = dir.path().join("report.json");
    let out = winodds(&["analyze", "--input", path_str(&data), "--adjust", "x1,x2,x3", "--out", path_str(&report)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stdout.is_empty());
    let text = fs::read_to_string(&report).unwrap();
    let parsed = report_from_json(&text).unwrap();
    assert_eq!(parsed.adjusted_for, ["x1", "x2", "x3"]);
    assert_eq!(winodds::io::report_to_json(&parsed), text);
}

#[test]
fn no_adjustment_gives_equal_columns() {
    let dir = TempDir::new().unwrap();
    let data = simulate(&dir, "trial.csv", 200, 3);
    let out = winodds(&["analyze", "--input", path_str(&data)]);
    assert_eq!(code(&out), 0);
    let r = report_from_json(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert!((r.adjusted.estimate.nu_hat - r.unadjusted.estimate.nu_hat).abs() <= 1e-10);
}

#[test]
fn simulate_is_reproducible_and_loadable() {
    let dir = TempDir::new().unwrap();
    let a = simulate(&dir, "a.csv", 500, 1);
    let b = simulate(&dir, "b.csv", 500, 1);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let ds = load_csv(&a, &CsvSchema::default()).unwrap();
    assert_eq!((ds.len(), ds.p()), (500, 10));
}

#[test]
fn power_csv_shape_and_worker_independence() {
    let dir = TempDir::new().unwrap();
    let run = |workers: &str| {
        let path = dir.path().join(format!("power-{workers}.csv"));
        let out = winodds(&[
            "power",
            "--n",
            "120",
            "--scenario",
            "B",
            "--reps",
            "10",
            "--adjust-prefixes",
            "0..3",
            "--seed",
            "5",
            "--workers",
            workers,
            "--out",
            path_str(&path),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stderr).contains("progress: 10/10"));
        fs::read_to_string(path).unwrap()
    };
    let one = run("1");
    assert_eq!(one, run("8"));
    let lines: Vec<&str> = one.lines().collect();
    assert_eq!(lines[0], "scenario,n,adjustment_size,method,rate,mc_halfwidth,reps,seed");
    assert_eq!(lines.len(), 1 + 4);
    assert!(lines[1].starts_with("B,120,0,"));
}

#[test]
fn incidence_curve_csv() {
    let dir = TempDir::new().unwrap();
    let data = simulate(&dir, "trial.csv", 300, 4);
    let out = winodds(&["incidence", "--input", path_str(&data), "--points", "11"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 12);
}
