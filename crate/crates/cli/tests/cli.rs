use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use overlap_lab::output::{parse_metrics_csv, METRICS_HEADER};
use serde_json::{json, Value};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_overlap-lab"));
    c.env_remove("OVERLAP_LAB_SEED");
    c
}

fn write_config(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn quadratic(sigma: f64) -> Value {
    json!({"type": "quadratic", "spread": 1.0, "sigma": sigma})
}

#[test]
fn minimal_sync_run_writes_rows_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        &json!({"algorithm": "sync_sgd", "m": 1, "d": 3, "K": 10, "objective": quadratic(0.1)}),
    );
    let out = dir.path().join("out");
    let o = run(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));

    let csv = fs::read_to_string(out.join("sync_sgd-seed0.csv")).unwrap();
    assert!(csv.starts_with(METRICS_HEADER));
    assert!(!csv.contains('\r'));
    let rows = parse_metrics_csv(&csv).unwrap();
    assert_eq!(rows.len(), 10);
    assert!(rows.windows(2).all(|w| w[0].record.k < w[1].record.k));

    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    // The resolved config carries every default.
    assert_eq!(summary["config"]["alpha"], json!(0.5));
    assert_eq!(summary["config"]["beta"], json!(0.7));
    assert_eq!(summary["config"]["eta"].as_f64().unwrap(), 0.1 * 1.5);
    assert_eq!(summary["runs"][0]["summary"]["status"], json!("completed"));
    assert_eq!(summary["runs"][0]["metrics_csv"], json!("sync_sgd-seed0.csv"));
    assert!(out.join("plot.csv").exists());
}

#[test]
fn out_of_range_alpha_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        &json!({"algorithm": "overlap_local", "m": 4, "d": 3, "tau": 2, "alpha": 1.5, "K": 10,
                "objective": quadratic(0.0)}),
    );
    let o = run(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("alpha"), "{}", stderr(&o));
}

#[test]
fn unknown_key_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    fs::write(
        &path,
        "{\n  \"algorithm\": \"sync_sgd\",\n  \"m\": 1,\n  \"d\": 2,\n  \"K\": 3,\n  \"bogus\": 1,\n  \"objective\": {\"type\": \"quadratic\", \"spread\": 0, \"sigma\": 0}\n}\n",
    )
    .unwrap();
    let o = run(&["run", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("bogus") && err.contains("line 6"), "{err}");
}

#[test]
fn divergence_is_recorded_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        &json!({"algorithm": "local_sgd", "m": 2, "d": 4, "tau": 4, "eta": 5.0, "K": 500,
                "objective": quadratic(0.0)}),
    );
    let out = dir.path().join("out");
    let o = run(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["runs"][0]["summary"]["status"], json!("diverged"));
}

#[test]
fn seed_env_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        &json!({"algorithm": "overlap_local", "m": 2, "d": 2, "tau": 2, "K": 4, "seeds": [9],
                "objective": quadratic(1.0)}),
    );
    let out = dir.path().join("out");
    let o = bin()
        .env("OVERLAP_LAB_SEED", "3,4")
        .args(["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("overlap_local-seed3.csv").exists());
    assert!(out.join("overlap_local-seed4.csv").exists());
    assert!(!out.join("overlap_local-seed9.csv").exists());
}

#[test]
fn stride_thins_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        &json!({"algorithm": "local_sgd", "m": 2, "d": 2, "tau": 2, "K": 20, "objective": quadratic(1.0)}),
    );
    let out = dir.path().join("out");
    let o = run(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--stride",
        "5",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = parse_metrics_csv(&fs::read_to_string(out.join("local_sgd-seed0.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 4);
}

fn sweep_config(dir: &Path) -> PathBuf {
    write_config(
        dir,
        "sweep.json",
        &json!({"algorithm": "overlap_local", "m": 4, "d": 3, "tau": 2, "K": 50,
                "objective": quadratic(0.5),
                "sweep": {"algorithm": ["overlap_local", "local_sgd"], "seeds": [1, 2]}}),
    )
}

#[test]
fn sweep_rows_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = sweep_config(dir.path());
    let mut outputs = Vec::new();
    for (tag, jobs) in [("a", "1"), ("b", "4")] {
        let out = dir.path().join(tag);
        let o = run(&[
            "sweep",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--jobs",
            jobs,
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let csv = fs::read_to_string(out.join("sweep_summary.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1 + 4);
        outputs.push((
            csv,
            fs::read(out.join("sweep_summary.json")).unwrap(),
            fs::read(out.join("sweep_plot.csv")).unwrap(),
            fs::read(out.join("runs").join("local_sgd-tau2-K50-seed2.csv")).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn tau_axis_gives_one_point_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "sweep.json",
        &json!({"algorithm": "overlap_local", "m": 2, "d": 2, "K": 48, "objective": quadratic(0.0),
                "sweep": {"tau": [1, 2, 4, 8, 24]}}),
    );
    let out = dir.path().join("out");
    let o = run(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let plot = fs::read_to_string(out.join("sweep_plot.csv")).unwrap();
    assert_eq!(plot.lines().count(), 1 + 5);
    assert!(plot.lines().skip(1).all(|l| l.ends_with(",overlap_local-K48")));
}

#[test]
fn empty_sweep_axis_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "sweep.json",
        &json!({"algorithm": "overlap_local", "m": 2, "d": 2, "K": 4, "objective": quadratic(0.0),
                "sweep": {"tau": []}}),
    );
    let o = run(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("sweep.tau"), "{}", stderr(&o));
}

#[test]
fn verify_passes_and_detects_fault() {
    let o = run(&["verify"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(!String::from_utf8_lossy(&o.stdout).contains("FAIL"));

    let o = run(&["verify", "--perturb-pullback", "1e-6"]);
    assert!(!o.status.success());
    let stdout = String::from_utf8_lossy(&o.stdout);
    let failing: Vec<&str> = stdout.lines().filter(|l| l.contains("FAIL")).collect();
    assert_eq!(failing.len(), 1, "{stdout}");
    assert!(failing[0].contains("equivalence"), "{stdout}");
}

fn bound_config(dir: &Path, k: usize, objective: Value, init: Option<Vec<f64>>) -> PathBuf {
    let mut v = json!({"algorithm": "overlap_local", "m": 2, "d": 3, "tau": 2, "alpha": 0.6, "eta": "theorem",
                       "K": k, "seeds": [0, 1], "objective": objective});
    if let Some(init) = init {
        v["init"] = json!(init);
    }
    write_config(dir, "bound.json", &v)
}

#[test]
fn bound_refuses_short_runs_and_logistic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = bound_config(dir.path(), 100, quadratic(1.0), None);
    let o = run(&[
        "bound",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("min_iterations = 1334"), "{}", stderr(&o));

    let logistic = json!({"type": "logistic", "classes": 2, "per_class": 20, "lambda": 0.01, "batch": 4,
                          "partition": {"type": "iid"}});
    let cfg = bound_config(dir.path(), 2000, logistic, None);
    let o = run(&[
        "bound",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("quadratic"), "{}", stderr(&o));
}

#[test]
fn bound_override_and_zero_lhs_at_optimum() {
    let dir = tempfile::tempdir().unwrap();
    let objective = json!({"type": "quadratic", "spread": 0.0, "sigma": 0.0});
    let cfg = bound_config(dir.path(), 100, objective, None);
    let out = dir.path().join("out");
    let o = run(&[
        "bound",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--override-kmin",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("bound_report.json")).unwrap()).unwrap();
    assert_eq!(report["mean_lhs"], json!(0.0));
    assert_eq!(report["verdict"], json!("bound_holds"));
    assert_eq!(report["config"]["eta"], json!("theorem"));
}
