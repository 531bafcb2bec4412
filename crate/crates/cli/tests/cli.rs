use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ann_calc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ann-calc"))
        .args(args)
        .current_dir(dir)
        .env("ANN_CALC_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn build_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "build", "--problem", "decay", "--d", "2", "--T", "1", "--eps", "0.1", "--out", "net.json", "--report",
        "rep.json",
    ];
    let o = ann_calc(dir.path(), &args);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let rep: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("rep.json")).unwrap()).unwrap();
    assert_eq!(rep["pass"], true);
    assert_eq!(rep["network_path"], "net.json");
    assert_eq!(rep["config"]["seed"], 0);
    assert_eq!(rep["config"]["g"], "relu-sum-g");
    assert!(rep["measured_weighted_error"].as_f64().unwrap() <= 0.1);

    // u(1, (1, 0)) = e^{-1}
    let o = ann_calc(dir.path(), &["eval", "--net", "net.json", "--point", "1,0"]);
    assert_eq!(o.status.code(), Some(0));
    let v: f64 = stdout(&o).trim().parse().unwrap();
    assert!((v - (-1.0f64).exp()).abs() < 0.05);

    let o = ann_calc(dir.path(), &["eval", "--net", "net.json", "--point", "-1,-2"]);
    assert_eq!(stdout(&o).trim().parse::<f64>().unwrap(), 0.0);

    let o = ann_calc(dir.path(), &["certify", "--problem", "decay", "--net", "net.json", "--d", "2", "--eps", "0.1"]);
    assert_eq!(o.status.code(), Some(0));
    let o = ann_calc(
        dir.path(),
        &["certify", "--problem", "decay", "--net", "net.json", "--d", "2", "--eps", "1e-6"],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn repeated_builds_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for tag in ["a", "b"] {
        let out = format!("{tag}.json");
        let rep = format!("{tag}.rep.json");
        let o = ann_calc(
            dir.path(),
            &[
                "build", "--problem", "rotation", "--d", "3", "--eps", "0.2", "--samples", "64", "--seed", "7",
                "--out", &out, "--report", &rep,
            ],
        );
        assert_eq!(o.status.code(), Some(0));
    }
    let read = |n: &str| fs::read(dir.path().join(n)).unwrap();
    assert_eq!(read("a.json"), read("b.json"));
    // reports name their network file, which differs here
    let strip = |tag: &str| {
        let text = String::from_utf8(read(&format!("{tag}.rep.json"))).unwrap();
        text.replace(&format!("\"network_path\": \"{tag}.json\""), "")
    };
    assert_eq!(strip("a"), strip("b"));
}

#[test]
fn sweep_writes_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "sweep", "--problem", "rotation", "--d", "1,2,4,8", "--eps", "0.2,0.1,0.05", "--samples", "128", "--csv",
        "out.csv",
    ];
    let o = ann_calc(dir.path(), &args);
    let csv = fs::read_to_string(dir.path().join("out.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "d,eps,n,params,param_bound,weighted_error,pass");
    assert_eq!(lines.len(), 13);
    let all_pass = lines[1..].iter().all(|l| l.ends_with(",true"));
    assert_eq!(o.status.code(), Some(if all_pass { 0 } else { 2 }));

    let meta: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("out.csv.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["rows"], 12);
    assert_eq!(meta["config"]["samples"], 128);

    let o = ann_calc(dir.path(), &[&args[..args.len() - 1], &["again.csv"]].concat());
    assert!(o.status.success());
    assert_eq!(csv, fs::read_to_string(dir.path().join("again.csv")).unwrap());
}

#[test]
fn euler_check_reports_first_order() {
    let dir = tempfile::tempdir().unwrap();
    let o = ann_calc(dir.path(), &["euler-check", "--problem", "decay", "--d", "3", "--csv", "e.csv"]);
    assert_eq!(o.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("e.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 33 * 5);
    let meta: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("e.csv.meta.json")).unwrap()).unwrap();
    let slope = meta["slope"].as_f64().unwrap();
    assert!((-1.2..=-0.8).contains(&slope), "slope {slope}");
}

#[test]
fn membership_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let base = [
        "certify", "--problem", "decay", "--d", "1,2", "--eps", "0.2", "--samples", "32", "--report", "m.json",
    ];
    let o = ann_calc(dir.path(), &base);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rep: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("m.json")).unwrap()).unwrap();
    assert_eq!(rep["rows"].as_array().unwrap().len(), 2);
    assert_eq!(rep["surrogate"], "sampled");
    assert_eq!(rep["budget"]["r"][0], 12.0);

    let o = ann_calc(dir.path(), &[&base[..], &["--K", "1", "--r1", "0", "--r0", "0"]].concat());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn validation_failures_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cases: &[&[&str]] = &[
        &["frobnicate"],
        &["build", "--problem", "decay", "--d", "2", "--eps", "0.1"],
        &["build", "--problem", "heat", "--d", "2", "--eps", "0.1", "--out", "n.json"],
        &["build", "--problem", "decay", "--d", "2", "--eps", "1.5", "--out", "n.json"],
        &["build", "--problem", "decay", "--d", "2", "--eps", "0.1", "--kappa", "0.5", "--out", "n.json"],
        &["eval", "--net", "missing.json", "--point", "1"],
        &["sweep", "--problem", "decay", "--d", "0,1", "--eps", "0.1", "--csv", "s.csv"],
    ];
    for args in cases {
        let o = ann_calc(dir.path(), args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        assert!(!o.stderr.is_empty());
    }
    assert!(!dir.path().join("n.json").exists());
    assert_eq!(ann_calc(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn eval_rejects_bad_points() {
    let dir = tempfile::tempdir().unwrap();
    let o = ann_calc(
        dir.path(),
        &["build", "--problem", "rotation", "--d", "2", "--eps", "0.2", "--samples", "16", "--out", "r.json"],
    );
    assert!(o.status.success());
    for p in ["1, 0", "1", "1,0,2", "a,b"] {
        let o = ann_calc(dir.path(), &["eval", "--net", "r.json", "--point", p]);
        assert_eq!(o.status.code(), Some(1), "{p}");
    }
    fs::write(dir.path().join("bad.json"), b"{\"format\":\"ann-v1\"}").unwrap();
    let o = ann_calc(dir.path(), &["eval", "--net", "bad.json", "--point", "1,0"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn thread_variable_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_ann-calc"))
        .args(["euler-check", "--problem", "decay", "--d", "1", "--csv", "e.csv"])
        .current_dir(dir.path())
        .env("ANN_CALC_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}
