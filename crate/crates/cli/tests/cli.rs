use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn ssem(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssem"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

const SYM2: &str = "model.kind = sym2\nmodel.theta_star = 1.5\nem.theta0 = 3\ndata.total_samples = 100000\ndata.seed = 7\n";

#[test]
fn simulate_recovers_truth() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.cfg", SYM2);
    let out = dir.path().join("out");
    let o = ssem(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = read_json(&out.join("summary.json"));
    let theta = summary["final_theta"][1].as_f64().unwrap();
    assert!((theta - 1.5).abs() < 0.05, "{theta}");
    assert_eq!(summary["schema_version"], "ssem/1");
    assert!(summary["wall_time_seconds"].as_f64().unwrap() >= 0.0);
    assert_eq!(summary["config"]["data.seed"], "7");
}

#[test]
fn labeled_only_run_stops_after_one_update() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.cfg", SYM2);
    let out = dir.path().join("out");
    let o = ssem(&[
        "simulate",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--set",
        "data.gamma=1",
    ]);
    assert!(o.status.success());
    let summary = read_json(&out.join("summary.json"));
    assert_eq!(summary["iterations"], 1);
    assert_eq!(summary["converged"], true);
}

#[test]
fn invalid_weights_exit_two_with_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "bad.cfg",
        "model.kind = gmm\nmodel.theta_star = -1, 1\nmodel.weights = 0.4, 0.4\nem.theta0 = 0, 2\n",
    );
    let o = ssem(&[
        "simulate",
        "--config",
        &cfg,
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["field"], "model.weights");
    assert_eq!(err["class"], "config");
}

#[test]
fn unknown_key_and_missing_file_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.cfg", SYM2);
    let o = ssem(&["population", "--config", &cfg, "--set", "em.theta_zero=2"]);
    assert_eq!(o.status.code(), Some(2));
    let o = ssem(&["population", "--config", "/nonexistent/run.cfg"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "run.cfg",
        "model.kind = gmm\nmodel.theta_star = -1, 1\nem.theta0 = -1, 1000\ndata.total_samples = 1000\n",
    );
    let o = ssem(&[
        "simulate",
        "--config",
        &cfg,
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let err: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["class"], "numeric");
}

fn population_iterations(dir: &Path, extra: &[&str]) -> (u64, Value) {
    let cfg = write_config(
        dir,
        "pop.cfg",
        "model.kind = sym2\nmodel.theta_star = 2\nem.theta0 = 4\n",
    );
    let out = dir.join(format!("out{}", extra.len()));
    let mut args = vec![
        "population",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    let o = ssem(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = read_json(&out.join("summary.json"));
    (s["iterations"].as_u64().unwrap(), s)
}

#[test]
fn population_run_converges_fast_and_labels_help() {
    let dir = tempfile::tempdir().unwrap();
    let (plain, summary) = population_iterations(dir.path(), &[]);
    assert!(plain <= 12);
    let rate = summary["empirical_rate"].as_f64().unwrap();
    assert!(rate <= (-2.0f64).exp() + 1e-6);
    let last = summary["final_theta"][1].as_f64().unwrap();
    assert!((last - 2.0).abs() < 1e-8);
    let (labeled, _) = population_iterations(dir.path(), &["--set", "data.gamma=0.9"]);
    assert!(labeled < plain);
    let (start_at_truth, _) = population_iterations(
        dir.path(),
        &["--set", "em.theta0=2", "--set", "em.max_iters=50"],
    );
    assert_eq!(start_at_truth, 0);
}

#[test]
fn trajectory_csv_round_trips_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.cfg", SYM2);
    let out = dir.path().join("out");
    assert!(
        ssem(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()])
            .status
            .success()
    );
    let csv = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "iter,theta_1,theta_2,q_value,err");
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert!(rows[0][3].is_empty());
    let last = rows.last().unwrap();
    let theta: f64 = last[2].parse().unwrap();
    let summary = read_json(&out.join("summary.json"));
    assert_eq!(theta, summary["final_theta"][1].as_f64().unwrap());
    assert!(!csv.contains('\r'));
}

#[test]
fn verify_commands_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "v.cfg",
        "model.kind = sym2\nmodel.theta_star = 1.5\n",
    );
    let out = dir.path().join("v");
    let o = out.to_str().unwrap();

    assert_eq!(
        ssem(&["verify", "thm1", "--config", &cfg, "--out", o])
            .status
            .code(),
        Some(0)
    );
    let doc = read_json(&out.join("verify_thm1.json"));
    for key in ["schema_version", "config", "checks", "pass_all"] {
        assert!(doc.get(key).is_some(), "{key}");
    }
    let check = &doc["checks"][0];
    for key in ["name", "probe", "lhs", "rhs", "pass"] {
        assert!(check.get(key).is_some(), "{key}");
    }

    assert_eq!(
        ssem(&["verify", "lemma3", "--config", &cfg, "--out", o])
            .status
            .code(),
        Some(0)
    );
    let doc = read_json(&out.join("verify_lemma3.json"));
    assert_eq!(doc["details"]["lemma3"].as_array().unwrap().len(), 6);

    let r = ssem(&[
        "verify",
        "thm3-2",
        "--config",
        &cfg,
        "--out",
        o,
        "--set",
        "model.theta_star=1",
    ]);
    assert_eq!(r.status.code(), Some(0));
    let doc = read_json(&out.join("verify_thm3-2.json"));
    assert_eq!(doc["details"]["thm3-2"][0]["applicable"], false);

    let r = ssem(&["verify", "thm2", "--config", &cfg, "--out", o]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn failing_inequality_exits_four() {
    // the item-3 smoothness inequality does not hold at this truth
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "v.cfg",
        "model.kind = sym2\nmodel.theta_star = 2\n",
    );
    let out = dir.path().join("v");
    let r = ssem(&[
        "verify",
        "thm3-3",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(r.status.code(), Some(4));
    let doc = read_json(&out.join("verify_thm3-3.json"));
    assert_eq!(doc["pass_all"], false);
    let err: Value = serde_json::from_slice(&r.stderr).unwrap();
    assert_eq!(err["class"], "theorem_violation");
}

#[test]
fn summary_reruns_reproduce_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.cfg", SYM2);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(
        ssem(&["simulate", "--config", &cfg, "--out", a.to_str().unwrap()])
            .status
            .success()
    );
    let summary = a.join("summary.json");
    assert!(ssem(&[
        "simulate",
        "--config",
        summary.to_str().unwrap(),
        "--out",
        b.to_str().unwrap()
    ])
    .status
    .success());
    assert_eq!(
        std::fs::read(a.join("trajectory.csv")).unwrap(),
        std::fs::read(b.join("trajectory.csv")).unwrap()
    );
}

#[test]
fn seed_flag_changes_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "run.cfg",
        "model.kind = gmm\nmodel.theta_star = -1, 1\ndata.total_samples = 50\ndata.gamma = 0.2\n",
    );
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(ssem(&[
        "sample",
        "--config",
        &cfg,
        "--out",
        a.to_str().unwrap(),
        "--seed",
        "1"
    ])
    .status
    .success());
    assert!(ssem(&[
        "sample",
        "--config",
        &cfg,
        "--out",
        b.to_str().unwrap(),
        "--seed",
        "2"
    ])
    .status
    .success());
    let da = std::fs::read_to_string(a.join("dataset.csv")).unwrap();
    let db = std::fs::read_to_string(b.join("dataset.csv")).unwrap();
    assert_ne!(da, db);
    assert_eq!(da.lines().count(), 51);
    assert!(da.lines().filter(|l| l.starts_with("L,")).count() == 10);
}
