use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use coln::model::read_model_file;
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_coln"));
    cmd.arg("--quiet");
    cmd
}

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn tiny() -> Value {
    serde_json::from_str(&fs::read_to_string(repo().join("configs/tiny.json")).unwrap()).unwrap()
}

fn write_config(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn run(args: &[&str], config: &Path, out: &Path) -> Output {
    bin().args(args).arg("--config").arg(config).arg("--out").arg(out).output().unwrap()
}

fn ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}\n{}", o.status.code(), String::from_utf8_lossy(&o.stderr));
}

fn combined_rows(csv: &str) -> Vec<&str> {
    csv.lines().filter(|l| l.split(',').nth(1) == Some("combined")).collect()
}

#[test]
fn simulate_writes_every_round_and_artifacts() {
    let dir = TempDir::new().unwrap();
    let mut cfg = tiny();
    cfg["max_rounds"] = 5.into();
    let path = write_config(dir.path(), "c.json", &cfg);
    let out = dir.path().join("out");
    ok(&run(&["simulate"], &path, &out));
    let csv = fs::read_to_string(out.join("rounds.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("round,model_id,accuracy,loss"));
    assert_eq!(combined_rows(&csv).len(), 6);
    assert_eq!(csv.lines().count(), 1 + 6 * 3);
    for r in 0..6 {
        assert!(out.join(format!("models/round_{r:03}.json")).is_file());
    }
    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["methods"][0]["method"], "coln");
    assert_eq!(summary["rounds"].as_array().unwrap().len(), 6);
    read_model_file(&out.join("final_model.json")).unwrap();
}

#[test]
fn one_round_gives_two_combined_rows() {
    let dir = TempDir::new().unwrap();
    let mut cfg = tiny();
    cfg["max_rounds"] = 1.into();
    let path = write_config(dir.path(), "c.json", &cfg);
    let out = dir.path().join("out");
    ok(&run(&["simulate"], &path, &out));
    let csv = fs::read_to_string(out.join("rounds.csv")).unwrap();
    let rows = combined_rows(&csv);
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("0,") && rows[1].starts_with("1,"));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let path = write_config(dir.path(), "c.json", &tiny());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&run(&["simulate"], &path, &a));
    ok(&run(&["simulate"], &path, &b));
    for f in ["rounds.csv", "summary.json", "final_model.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn seed_flag_changes_the_run() {
    let dir = TempDir::new().unwrap();
    let path = write_config(dir.path(), "c.json", &tiny());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&run(&["simulate"], &path, &a));
    ok(&bin()
        .args(["simulate", "--seed", "99", "--config"])
        .arg(&path)
        .arg("--out")
        .arg(&b)
        .output()
        .unwrap());
    assert_ne!(fs::read(a.join("final_model.json")).unwrap(), fs::read(b.join("final_model.json")).unwrap());
}

#[test]
fn baselines_are_prefixed_in_the_table() {
    let dir = TempDir::new().unwrap();
    let mut cfg = tiny();
    cfg["baselines_to_run"] = serde_json::json!(["fedavg"]);
    cfg["centralized"] = true.into();
    cfg["centralized_epochs"] = 2.into();
    let path = write_config(dir.path(), "c.json", &cfg);
    let out = dir.path().join("out");
    ok(&run(&["simulate"], &path, &out));
    let csv = fs::read_to_string(out.join("rounds.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("0,coln/combined,")));
    assert!(csv.lines().any(|l| l.starts_with("0,fedavg/combined,")));
    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["methods"].as_array().unwrap().len(), 2);
    assert!(summary["centralized"]["accuracy"].is_f64());
}

#[test]
fn config_errors_exit_with_2() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");

    let cfg = serde_json::json!({
        "architecture": tiny()["architecture"],
        "data": { "files": { "label_column": "y", "hosts": [
            { "host_id": "a", "csv": "missing_a.csv" }, { "host_id": "b", "csv": "missing_b.csv" }
        ], "test": "missing_test.csv" } },
        "train": { "epochs": 1, "batch_size": 4, "learning_rate": 0.1 }
    });
    let path = write_config(dir.path(), "missing.json", &cfg);
    let o = run(&["simulate"], &path, &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing_a.csv"));

    let mut cfg = tiny();
    cfg["unexpected"] = 1.into();
    let path = write_config(dir.path(), "unknown.json", &cfg);
    assert_eq!(run(&["simulate"], &path, &out).status.code(), Some(2));

    let mut cfg = tiny();
    cfg["max_rounds"] = 0.into();
    let path = write_config(dir.path(), "zero.json", &cfg);
    assert_eq!(run(&["simulate"], &path, &out).status.code(), Some(2));

    let o = run(&["simulate"], &dir.path().join("absent.json"), &out);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn exploding_training_exits_with_3() {
    let dir = TempDir::new().unwrap();
    let mut cfg = tiny();
    cfg["train"]["learning_rate"] = 1e300.into();
    let path = write_config(dir.path(), "c.json", &cfg);
    let o = run(&["simulate"], &path, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn combine_matches_closed_form_for_identical_hosts() {
    let dir = TempDir::new().unwrap();
    let path = write_config(dir.path(), "c.json", &tiny());
    let out = dir.path().join("out");
    ok(&run(&["simulate"], &path, &out));
    let model = out.join("final_model.json");
    let m = model.to_str().unwrap();
    let combined = dir.path().join("combined.json");
    let o = bin()
        .args(["combine", "--c", "1e-3", "--out"])
        .arg(&combined)
        .args(["--submission", &format!("x:50:{m}"), "--submission", &format!("y:50:{m}")])
        .output()
        .unwrap();
    ok(&o);
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(report["shifted_fraction"].as_array().unwrap().iter().all(|f| f == 0.0));
    let w = read_model_file(&model).unwrap();
    let c = read_model_file(&combined).unwrap();
    let k = 2.0 * (1e-3f64 / 2.0).exp();
    for (a, b) in w.flatten().iter().zip(c.flatten()) {
        assert!((k * a - b).abs() <= 4.0 * f64::EPSILON * (k * a).abs(), "{a} {b}");
    }

    let o = bin()
        .args(["combine", "--out"])
        .arg(&combined)
        .args(["--submission", &format!("x:50:{m}")])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = bin()
        .args(["combine", "--out"])
        .arg(&combined)
        .args(["--submission", "x:50:/nonexistent.json", "--submission", &format!("y:5:{m}")])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn partition_is_deterministic_and_counts_match() {
    let dir = TempDir::new().unwrap();
    let path = write_config(dir.path(), "c.json", &tiny());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&run(&["partition"], &path, &a));
    ok(&run(&["partition"], &path, &b));
    for f in ["a.csv", "b.csv", "test.csv", "partition_report.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let report: Value = serde_json::from_str(&fs::read_to_string(a.join("partition_report.json")).unwrap()).unwrap();
    assert_eq!(report["hosts"][0]["class_counts"], serde_json::json!([20, 5]));
    assert_eq!(report["hosts"][1]["class_counts"], serde_json::json!([5, 20]));
    assert_eq!(report["test"]["rows"], 30);
    assert_eq!(fs::read_to_string(a.join("a.csv")).unwrap().lines().count(), 26);
}

#[test]
fn partitioned_files_reproduce_the_run() {
    let dir = TempDir::new().unwrap();
    let path = write_config(dir.path(), "c.json", &tiny());
    let parts = dir.path().join("parts");
    ok(&run(&["partition"], &path, &parts));
    ok(&run(&["simulate"], &path, &dir.path().join("direct")));

    let mut cfg = tiny();
    cfg["data"] = serde_json::json!({ "files": {
        "label_column": "label",
        "class_names": ["0", "1"],
        "hosts": [{ "host_id": "a", "csv": "parts/a.csv" }, { "host_id": "b", "csv": "parts/b.csv" }],
        "test": "parts/test.csv"
    }});
    let files = write_config(dir.path(), "files.json", &cfg);
    ok(&run(&["simulate"], &files, &dir.path().join("files")));
    assert_eq!(
        fs::read(dir.path().join("direct/rounds.csv")).unwrap(),
        fs::read(dir.path().join("files/rounds.csv")).unwrap()
    );
}

#[test]
fn eval_reports_accuracy() {
    let dir = TempDir::new().unwrap();
    let path = write_config(dir.path(), "c.json", &tiny());
    ok(&run(&["partition"], &path, &dir.path().join("parts")));
    ok(&run(&["simulate"], &path, &dir.path().join("out")));
    let o = bin()
        .args(["eval", "--label-column", "label", "--model"])
        .arg(dir.path().join("out/final_model.json"))
        .arg("--csv")
        .arg(dir.path().join("parts/test.csv"))
        .output()
        .unwrap();
    ok(&o);
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    let csv = fs::read_to_string(dir.path().join("out/rounds.csv")).unwrap();
    let last = combined_rows(&csv).last().unwrap().split(',').nth(2).unwrap().parse::<f64>().unwrap();
    assert_eq!(report["accuracy"].as_f64().unwrap(), last);
}

#[test]
fn networked_session_matches_simulation() {
    let dir = TempDir::new().unwrap();
    let mut cfg = tiny();
    cfg["session"] = serde_json::json!({ "session_id": "t", "round_timeout_secs": 60 });
    let path = write_config(dir.path(), "c.json", &cfg);
    let sim = dir.path().join("sim");
    ok(&run(&["simulate"], &path, &sim));

    let net = dir.path().join("net");
    let mut server = bin()
        .args(["serve", "--bind", "127.0.0.1:0", "--config"])
        .arg(&path)
        .arg("--out")
        .arg(&net)
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(server.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").expect("address line").to_string();
    let hosts: Vec<_> = ["a", "b"]
        .iter()
        .map(|h| {
            bin()
                .args(["join", "--host", h, "--server", &addr, "--config"])
                .arg(&path)
                .arg("--out")
                .arg(dir.path().join(format!("host_{h}")))
                .spawn()
                .unwrap()
        })
        .collect();
    for mut h in hosts {
        assert!(h.wait().unwrap().success());
    }
    let status = server.wait_with_output().unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));

    assert_eq!(fs::read(sim.join("rounds.csv")).unwrap(), fs::read(net.join("rounds.csv")).unwrap());
    for r in 0..=3 {
        let f = format!("models/round_{r:03}.json");
        assert_eq!(fs::read(sim.join(&f)).unwrap(), fs::read(net.join(&f)).unwrap(), "{f}");
    }
    let sim_final = read_model_file(&sim.join("final_model.json")).unwrap();
    for h in ["a", "b"] {
        let got = read_model_file(&dir.path().join(format!("host_{h}/{h}_final_model.json"))).unwrap();
        assert_eq!(got, sim_final);
    }
}

#[test]
fn join_without_server_fails_with_network_code() {
    let dir = TempDir::new().unwrap();
    let mut cfg = tiny();
    cfg["session"] = serde_json::json!({ "connect_timeout_secs": 1 });
    let path = write_config(dir.path(), "c.json", &cfg);
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let dead = listener.local_addr().unwrap().to_string();
    drop(listener);
    let o = bin()
        .args(["join", "--host", "a", "--server", &dead, "--config"])
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(4));

    let o = bin()
        .args(["join", "--host", "nobody", "--server", &dead, "--config"])
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}
