//! End-to-end checks of the binary: artifact determinism, exit codes and
//! output formats.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_vrjp")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .env("VRJP_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("vrjp_cli_tests");
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn strip_wall_time(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.contains("wall_time_s"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn mu_curve_is_emitted_and_monotone() {
    let out = tmp("mu.csv");
    let res = run(&[
        "mu",
        "--c-min",
        "0.1",
        "--c-max",
        "2.0",
        "--steps",
        "20",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "# seed = 0");
    assert!(lines.next().unwrap().starts_with("# config_hash = "));
    assert_eq!(lines.next().unwrap(), "c,mu,err_bound");
    let mus: Vec<f64> = lines
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(mus.len(), 20);
    assert!(mus.windows(2).all(|w| w[1] > w[0]));
    assert!(std::fs::metadata(tmp("mu.summary.json")).is_ok());
}

#[test]
fn survival_reruns_reproduce_artifacts() {
    let out_a = tmp("surv_a.csv");
    let out_b = tmp("surv_b.csv");
    let args = |out: &Path| {
        vec![
            "survival".to_string(),
            "--b".into(),
            "2".into(),
            "--c".into(),
            "1".into(),
            "--x0".into(),
            "6".into(),
            "--generations".into(),
            "8".into(),
            "--replicas".into(),
            "80".into(),
            "--seed".into(),
            "31".into(),
            "--out".into(),
            out.to_str().unwrap().into(),
        ]
    };
    for out in [&out_a, &out_b] {
        let res = Command::new(bin())
            .args(args(out))
            .env("VRJP_THREADS", "2")
            .output()
            .unwrap();
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    }
    assert_eq!(
        std::fs::read(&out_a).unwrap(),
        std::fs::read(&out_b).unwrap(),
        "CSV artifacts must be byte-identical"
    );
    assert_eq!(
        strip_wall_time(&tmp("surv_a.summary.json")),
        strip_wall_time(&tmp("surv_b.summary.json")),
        "summaries must match up to wall time"
    );
}

#[test]
fn config_errors_exit_with_2() {
    for args in [
        vec!["critical-c", "--b", "0.5"],
        vec!["sample", "--law", "kernel", "--c", "1"], // missing --t
        vec!["sample", "--law", "kernel", "--c", "1", "--t", "0.5"], // t < c
        vec!["simulate", "--tree", "weird:3"],
        vec!["survival", "--c", "1"], // neither --b nor --nu
    ] {
        let res = run(&args);
        assert_eq!(res.status.code(), Some(2), "args {args:?}");
    }
}

#[test]
fn insufficient_data_exits_with_4() {
    let res = run(&[
        "barrier",
        "--kind",
        "iid",
        "--c",
        "0.3",
        "--n-min",
        "10",
        "--n-max",
        "30",
        "--replicas",
        "300",
        "--bootstrap",
        "10",
        "--seed",
        "5",
    ]);
    assert_eq!(res.status.code(), Some(4));
}

#[test]
fn simulate_writes_a_trace() {
    let trace = tmp("trace.csv");
    let res = run(&[
        "simulate",
        "--tree",
        "regular:2",
        "--c",
        "1",
        "--stop",
        "events:500",
        "--seed",
        "9",
        "--trace",
        trace.to_str().unwrap(),
    ]);
    assert!(res.status.success());
    let text = std::fs::read_to_string(&trace).unwrap();
    let mut lines = text.lines().skip_while(|l| l.starts_with('#'));
    assert_eq!(
        lines.next().unwrap(),
        "event_index,clock,vertex_height,root_occupation"
    );
    assert_eq!(lines.count(), 500);
}

#[test]
fn null_recurrence_rows_grow() {
    let out = tmp("null.csv");
    let res = run(&[
        "null-recurrence",
        "--c",
        "1",
        "--t",
        "2",
        "--budgets",
        "100,1000",
        "--replicas",
        "60",
        "--seed",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let means: Vec<f64> = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(means[1] >= means[0]);
}
