use std::path::PathBuf;
use std::process::{Command, Output};

use redlab_core::StabilityReport;

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn redlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_redlab")).args(args).output().expect("binary runs")
}

fn config(name: &str) -> String {
    configs().join(name).to_string_lossy().into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

#[test]
fn stability_report_of_the_worked_example() {
    let o = redlab(&["stability", &config("example4.json")]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["lambda_R"], serde_json::json!(8.0));
    assert_eq!(v["i_star"], 3);
    assert_eq!(v["verdicts"]["3"], "stable");
}

#[test]
fn stability_report_round_trips() {
    let o = redlab(&["stability", &config("example4.json"), "--lambda", "9"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let report: StabilityReport = serde_json::from_str(&text).unwrap();
    assert_eq!(report.lambda, 9.0);
    assert_eq!(format!("{}\n", report.to_json()), text);
    assert_eq!(report.verdicts["0"], redlab_core::Verdict::Unstable);
}

#[test]
fn table_three_contains_the_linear_row() {
    let o = redlab(&["table", "3"]);
    assert!(o.status.success());
    assert!(stdout(&o).lines().any(|l| l == "4,2,4,8,4"), "{}", stdout(&o));
    let o = redlab(&["table", "7"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn simulate_without_arrivals_is_empty() {
    let o = redlab(&["simulate", &config("example4.json"), "--lambda", "0", "--busy-periods", "10"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["mean_jobs"], serde_json::json!(0.0));
}

#[test]
fn seed_determines_simulate_output() {
    let run = |seed: &str| stdout(&redlab(&["simulate", &config("example4.json"), "--seed", seed, "--busy-periods", "2000"]));
    let a = run("3");
    assert_eq!(a, run("3"));
    assert_ne!(a, run("4"));
}

#[test]
fn trajectory_and_fluid_write_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("traj.csv");
    let o = redlab(&["trajectory", &config("example4.json"), "--horizon", "5", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("time,M_1,M_2,M_3,M_4\n0,0,0,0,0\n"), "{text}");

    let out = dir.path().join("fluid.csv");
    let o = redlab(&["fluid", &config("w_model_fluid.json"), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(std::fs::read_to_string(&out).unwrap().starts_with("time,server,mass\n"));
    let events = std::fs::read_to_string(dir.path().join("fluid.csv.drain_events.json")).unwrap();
    assert!(events.contains("\"time\""));
}

#[test]
fn sweep_writes_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep.csv");
    let o = redlab(&[
        "sweep",
        &config("w_model_sweep.json"),
        "--busy-periods",
        "500",
        "--seed",
        "9",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(&out).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 3);
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("sweep.csv.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seeds"], serde_json::json!([9]));
    assert_eq!(m["spec"]["busy_periods"], 500);
}

#[test]
fn config_errors_exit_one_with_a_single_line() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        (r#"{"topology": {"capacities": [1], "types": [{"servers": [0], "p": 0.9}]}}"#, "probabilities sum to 0.9"),
        (r#"{"topology": {"capacities": [1], "types": [{"servers": [1], "p": 1}]}}"#, "server index out of range"),
        (r#"{"topology": {"capacities": [1], "types": [{"servers": [0], "p": 1}]}, "sim": {"sead": 3}}"#, "sead"),
        (r#"{"topology": {"capacities": [1], "types": [{"servers": [0], "p": 1}], "extra": 1}}"#, "extra"),
        (r#"{"topology": {"capacities": [1], "types": [{"servers": [0], "p": 1}]}, "sweep": {}, "sim": {}}"#, "at most one"),
        (r#"{"topology": {"capacities": [1], "types": [{"servers": [0], "p": 1}]"#, "config"),
    ];
    for (i, (text, needle)) in cases.into_iter().enumerate() {
        let path = dir.path().join(format!("bad{i}.json"));
        std::fs::write(&path, text).unwrap();
        let o = redlab(&["simulate", path.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(1), "case {i}");
        let err = stderr(&o);
        assert_eq!(err.trim_end().lines().count(), 1, "case {i}: {err}");
        assert!(err.contains(needle), "case {i}: {err}");
    }
    let o = redlab(&["simulate", &config("example4.json"), "--lambda", "-1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--lambda"));
}

#[test]
fn missing_block_is_a_config_error() {
    let o = redlab(&["sweep", &config("example4.json")]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("sim: block is not used"), "{}", stderr(&o));
}

#[test]
fn unwritable_output_is_a_runtime_error() {
    let o = redlab(&["table", "2", "--out", "/nonexistent-dir/table.csv"]);
    assert_eq!(o.status.code(), Some(2));
}
