use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use misgrad::config::parse_config_str;
use misgrad::experiment::read_metrics;

fn misgrad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_misgrad")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, json: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, json).unwrap();
    p
}

fn metrics_paths(stdout: &str) -> Vec<PathBuf> {
    stdout
        .lines()
        .filter_map(|l| l.strip_prefix("metrics: "))
        .map(PathBuf::from)
        .collect()
}

fn strip_wall(csv: &str) -> Vec<String> {
    csv.lines()
        .map(|l| {
            let mut cols: Vec<&str> = l.split(',').collect();
            if cols.len() == 5 && !l.starts_with('#') {
                cols.remove(1);
            }
            cols.join(",")
        })
        .collect()
}

#[test]
fn run_writes_artifacts_and_is_seed_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"task":"poly6","estimator":"omis","B":32,"J":4,"epochs":4,"seed":3}"#,
    );
    let out = dir.path().join("runs");
    let a = misgrad(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let b = misgrad(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(b.status.success());

    let pa = metrics_paths(&String::from_utf8_lossy(&a.stdout)).remove(0);
    let pb = metrics_paths(&String::from_utf8_lossy(&b.stdout)).remove(0);
    assert_ne!(pa.parent(), pb.parent(), "each run gets its own directory");
    let run_dir = pa.parent().unwrap();
    for f in ["manifest.json", "metrics.csv", "dataset.txt", "model.bin"] {
        assert!(run_dir.join(f).is_file(), "missing {f}");
    }
    let csv_a = fs::read_to_string(&pa).unwrap();
    let csv_b = fs::read_to_string(&pb).unwrap();
    assert!(csv_a.lines().any(|l| l == "epoch,wall_ms,train_loss,eval_loss,eval_error"));
    assert_eq!(strip_wall(&csv_a), strip_wall(&csv_b));

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run_dir.join("manifest.json")).unwrap()).unwrap();
    let snapshot = manifest["config"].to_string();
    let original = parse_config_str(&fs::read_to_string(&cfg).unwrap()).unwrap();
    assert_eq!(parse_config_str(&snapshot).unwrap(), original);
    assert_eq!(manifest["seed"], 3);
    assert!(manifest["version"].as_str().unwrap().starts_with('v'));
    assert_eq!(fs::read_to_string(run_dir.join("dataset.txt")).unwrap().trim(), "poly6,320,6,regression");
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"task":"poly3","estimator":"is","B":16,"epochs":2,"seed":1}"#);
    let out = dir.path().join("runs");
    let o = misgrad(&["run", "--config", cfg.to_str().unwrap(), "--seed", "42", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let path = metrics_paths(&String::from_utf8_lossy(&o.stdout)).remove(0);
    assert_eq!(read_metrics(&path).unwrap().seed, Some(42));
}

#[test]
fn exact_descent_is_monotone() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"task":"poly6","estimator":"exact","B":32,"epochs":30}"#);
    let out = dir.path().join("runs");
    let o = misgrad(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let m = read_metrics(&metrics_paths(&String::from_utf8_lossy(&o.stdout))[0]).unwrap();
    assert_eq!(m.rows.len(), 30);
    for w in m.rows.windows(2) {
        assert!(w[1].train_loss <= w[0].train_loss, "loss rose at epoch {}", w[1].epoch);
    }
}

#[test]
fn sweep_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"task":"toy2d","estimator":"uniform","B":32,"J":2,"epochs":3}"#);
    let out = dir.path().join("runs");
    let o = misgrad(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--estimators",
        "uniform,is,omis",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout).into_owned();
    let files = metrics_paths(&stdout);
    assert_eq!(files.len(), 3);
    let estimators: Vec<String> = files.iter().map(|f| read_metrics(f).unwrap().estimator).collect();
    assert_eq!(estimators, ["uniform", "is", "omis"]);
    let table = stdout.lines().find_map(|l| l.strip_prefix("table: ")).expect("table path printed");
    let table = fs::read_to_string(table).unwrap();
    assert_eq!(table.lines().count(), 5, "comment, header and one row per estimator:\n{table}");

    let csv = dir.path().join("cmp.csv");
    let args: Vec<&str> = ["compare"]
        .into_iter()
        .chain(files.iter().map(|f| f.to_str().unwrap()))
        .chain(["--csv", csv.to_str().unwrap()])
        .collect();
    let c = misgrad(&args);
    assert!(c.status.success());
    assert_eq!(fs::read_to_string(&csv).unwrap(), table);
}

#[test]
fn compare_identical_files_ties() {
    let dir = tempfile::tempdir().unwrap();
    let body = "# task=toy2d estimator=is seed=0\nepoch,wall_ms,train_loss,eval_loss,eval_error\n1,10,0.5,0.6,0.2\n2,20,0.4,0.5,0.1\n";
    let a = write_config(dir.path(), "a.csv", body);
    let b = write_config(dir.path(), "b.csv", body);
    let o = misgrad(&["compare", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert!(o.status.success());
    let out = dir.path().join("t.csv");
    let o = misgrad(&["compare", a.to_str().unwrap(), b.to_str().unwrap(), "--csv", out.to_str().unwrap()]);
    assert!(o.status.success());
    let t = fs::read_to_string(out).unwrap();
    let rows: Vec<&str> = t.lines().skip(2).collect();
    assert_eq!(rows.len(), 2);
    for r in rows {
        assert!(r.contains(",1,"), "both rank first: {r}");
    }
}

#[test]
fn compare_rejects_task_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_config(dir.path(), "a.csv", "# task=toy2d estimator=is seed=0\nepoch,wall_ms,train_loss,eval_loss,eval_error\n1,10,0.5,0.6,0.2\n");
    let b = write_config(dir.path(), "b.csv", "# task=poly6 estimator=is seed=0\nepoch,wall_ms,train_loss,eval_loss,eval_error\n1,10,0.5,0.6,NaN\n");
    let o = misgrad(&["compare", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("poly6"));
}

#[test]
fn invalid_configs_exit_nonzero_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("runs");
    let cases = [
        (r#"{"task":"poly6","estimator":"omis","B":0,"J":4}"#, "B ≥ 1"),
        (r#"{"task":"poly6","estimator":"omis","B":32,"technique_counts":[8,8,8]}"#, "must equal B"),
        (r#"{"task":"poly6","estimator":"omis","B":32,"omis.betta":0.5}"#, "omis"),
        (r#"{"task":"poly6","estimator":"fancy","B":32}"#, "estimator"),
    ];
    for (i, (json, needle)) in cases.iter().enumerate() {
        let cfg = write_config(dir.path(), &format!("bad{i}.json"), json);
        let o = misgrad(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert!(!o.status.success(), "{json} should fail");
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.contains(needle), "{json}: stderr {err}");
    }
    let missing = misgrad(&["run", "--config", dir.path().join("nope.json").to_str().unwrap()]);
    assert!(!missing.status.success());
}

#[test]
fn shipped_example_config_parses() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/poly6-omis.json");
    let cfg = misgrad::config::parse_config(&path).unwrap();
    cfg.validate().unwrap();
}
