//! End-to-end runs of the `akd` binary in scratch directories.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use adaptive_kd::adaptive::{TeacherCache, TeacherRecord};

const CONFIG: &str = r#"
[data]
train_per_class = [20, 20, 20]
test_per_class = [20, 20, 20]
seed = 3

[teacher]
layer_sizes = [2, 16, 3]
learning_rate = 1e-2
epochs = 10
seed = 1
[teacher.variant]
kind = "finetune"

[student]
layer_sizes = [2, 3]
learning_rate = 1e-2
epochs = 6
seed = 0
[student.variant]
kind = "adaptive_kd"
t_mode = "mean"

[sweep]
modes = ["mean", "p25", "p50", "p75"]
seeds = [0, 1]

[curves]
grid_points = 21
"#;

struct Run {
    _dir: tempfile::TempDir,
    out: PathBuf,
    config: PathBuf,
}

impl Run {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let config_path = dir.path().join("exp.toml");
        fs::write(&config_path, config).unwrap();
        Self {
            out: dir.path().join("run"),
            config: config_path,
            _dir: dir,
        }
    }

    fn akd(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_akd"))
            .args(args)
            .arg("--config")
            .arg(&self.config)
            .arg("--out")
            .arg(&self.out)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let o = self.akd(args);
        assert!(
            o.status.success(),
            "akd {args:?} failed: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        String::from_utf8(o.stdout).unwrap()
    }

    fn read(&self, name: &str) -> String {
        fs::read_to_string(self.out.join(name)).unwrap()
    }
}

fn column(csv: &str, name: &str) -> Vec<f64> {
    let mut lines = csv.lines();
    let idx = lines.next().unwrap().split(',').position(|h| h == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().parse().unwrap()).collect()
}

fn without_wall_clock(json: &str) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(json).unwrap();
    v.as_object_mut().unwrap().remove("wall_clock_secs");
    v
}

fn full_pipeline(run: &Run) {
    for cmd in ["gen-data", "train-teacher", "cache-teacher", "distill"] {
        run.ok(&[cmd]);
    }
}

#[test]
fn pipeline_writes_verifiable_outputs() {
    let run = Run::new(CONFIG);
    full_pipeline(&run);
    for f in [
        "train.csv",
        "test.csv",
        "teacher.json",
        "teacher_cache.jsonl",
        "student.json",
        "report.json",
        "report_epochs.csv",
        "distill.manifest.json",
    ] {
        assert!(run.out.join(f).exists(), "{f} missing");
    }
    let summary = run.ok(&["report"]);
    assert!(summary.contains("distill: "));
    assert!(summary.contains("report: variant adaptive_kd, 6 epochs"));

    let epochs = run.read("report_epochs.csv");
    assert!(epochs.starts_with("epoch,train_loss,test_error,k,alpha_mean,alpha_min,alpha_max\n"));
    let k = column(&epochs, "k");
    let report: serde_json::Value = serde_json::from_str(&run.read("report.json")).unwrap();
    let k_plus = report["adaptive"]["k_plus"].as_f64().unwrap();
    let k_minus = report["adaptive"]["k_minus"].as_f64().unwrap();
    assert_eq!(k.len(), 6);
    assert!((k[0] - k_plus).abs() <= 1e-12 * k_plus.abs());
    assert!((k[5] - k_minus).abs() <= 1e-12 * k_minus.abs());
    assert!(k.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn reruns_are_identical_apart_from_timing() {
    let a = Run::new(CONFIG);
    let b = Run::new(CONFIG);
    full_pipeline(&a);
    full_pipeline(&b);
    for f in ["train.csv", "teacher.json", "teacher_cache.jsonl", "student.json", "report_epochs.csv"] {
        assert_eq!(a.read(f), b.read(f), "{f} differs");
    }
    assert_eq!(
        without_wall_clock(&a.read("report.json")),
        without_wall_clock(&b.read("report.json"))
    );
}

#[test]
fn tampering_is_detected() {
    let run = Run::new(CONFIG);
    full_pipeline(&run);
    let path = run.out.join("teacher_cache.jsonl");
    let mut text = fs::read_to_string(&path).unwrap();
    text.push('\n');
    fs::write(&path, text).unwrap();
    let o = run.akd(&["report"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("teacher_cache.jsonl"));
}

#[test]
fn missing_inputs_fail_cleanly() {
    let run = Run::new(CONFIG);
    let o = run.akd(&["distill"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());
    assert_eq!(run.akd(&["report"]).status.code(), Some(2));

    let bad = Run::new("[student]\nlayer_sizes = [2]\n");
    assert_eq!(bad.akd(&["gen-data"]).status.code(), Some(0));
    assert_eq!(bad.akd(&["distill"]).status.code(), Some(2));
}

#[test]
fn finetune_runs_without_a_cache() {
    let config = CONFIG.replace("kind = \"adaptive_kd\"\nt_mode = \"mean\"", "kind = \"finetune\"");
    let run = Run::new(&config);
    run.ok(&["gen-data"]);
    run.ok(&["distill"]);
    let report: serde_json::Value = serde_json::from_str(&run.read("report.json")).unwrap();
    assert_eq!(report["variant"], "finetune");
    assert!(!run.out.join("teacher_cache.jsonl").exists());
}

#[test]
fn divergence_exits_with_numeric_code() {
    let config = CONFIG.replace(
        "learning_rate = 1e-2\nepochs = 6",
        "learning_rate = 1.7976931348623157e308\noptimizer = { kind = \"sgd\" }\nepochs = 6",
    );
    let run = Run::new(&config);
    run.ok(&["gen-data"]);
    run.ok(&["train-teacher"]);
    run.ok(&["cache-teacher"]);
    let o = run.akd(&["distill"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

/// Losses spaced evenly and symmetrically around 0.5.
fn write_symmetric_cache(path: &Path, n: u64) {
    let records = (0..n)
        .map(|i| TeacherRecord {
            id: i,
            loss: 0.1 + 0.8 * i as f64 / (n - 1) as f64,
            logits: vec![0.0, 0.0, 0.0],
        })
        .collect();
    TeacherCache::new(records).unwrap().save(path).unwrap();
}

#[test]
fn threshold_sweep_on_symmetric_cache() {
    let run = Run::new(CONFIG);
    run.ok(&["gen-data"]);
    write_symmetric_cache(&run.out.join("teacher_cache.jsonl"), 60);
    let stdout = run.ok(&["sweep-t", "--jobs", "2"]);
    assert!(stdout.contains("p50"));

    let rows = run.read("sweep.csv");
    assert_eq!(rows.lines().count() - 1, 4 * 2);
    let summary = run.read("sweep_summary.csv");
    let t = column(&summary, "t");
    let modes: Vec<&str> = summary.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(modes, ["mean", "p25", "p50", "p75"]);
    assert!((t[0] - t[2]).abs() < 1e-9, "mean {} vs p50 {}", t[0], t[2]);
    assert!(t[1] < t[2] && t[2] < t[3]);

    let one = Run::new(CONFIG);
    one.ok(&["gen-data"]);
    write_symmetric_cache(&one.out.join("teacher_cache.jsonl"), 60);
    one.ok(&["sweep-t", "--jobs", "1"]);
    assert_eq!(rows, one.read("sweep.csv"));

    run.ok(&["sweep-t", "--seed-set", "5..8"]);
    assert_eq!(run.read("sweep.csv").lines().count() - 1, 4 * 3);
}

#[test]
fn alpha_curves_have_the_expected_landmarks() {
    let run = Run::new(CONFIG);
    run.ok(&["gen-data"]);
    write_symmetric_cache(&run.out.join("teacher_cache.jsonl"), 60);
    run.ok(&["alpha-curves"]);
    let csv = run.read("alpha_curves.csv");
    let x = column(&csv, "x");
    let plus = column(&csv, "alpha_k_plus");
    let zero = column(&csv, "alpha_k0");
    let minus = column(&csv, "alpha_k_minus");
    let inv_e = (-1.0f64).exp();
    assert!(zero.iter().all(|a| (a - inv_e).abs() < 1e-15));
    let last = x.len() - 1;
    assert_eq!(x[last], 0.9);
    assert!((plus[last] - 0.1).abs() < 1e-12, "{}", plus[last]);
    let pivot = x.iter().position(|&v| (v - 0.5).abs() < 1e-12).unwrap();
    for a in [plus[pivot], zero[pivot], minus[pivot]] {
        assert!((a - inv_e).abs() < 1e-12);
    }
    assert!(plus.windows(2).all(|w| w[1] <= w[0]));
    assert!(minus.windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn config_paths_resolve_against_the_config_file() {
    let run = Run::new(CONFIG);
    run.ok(&["gen-data"]);
    let data_dir = run.config.parent().unwrap().join("data");
    fs::create_dir_all(&data_dir).unwrap();
    fs::rename(run.out.join("train.csv"), data_dir.join("tr.csv")).unwrap();
    fs::rename(run.out.join("test.csv"), data_dir.join("te.csv")).unwrap();
    let config = format!("[paths]\ntrain = \"data/tr.csv\"\ntest = \"data/te.csv\"\n{CONFIG}")
        .replace("kind = \"adaptive_kd\"\nt_mode = \"mean\"", "kind = \"focal\"");
    fs::write(&run.config, config).unwrap();
    run.ok(&["distill"]);
    let manifest: serde_json::Value = serde_json::from_str(&run.read("distill.manifest.json")).unwrap();
    let inputs = manifest["inputs"].as_array().unwrap();
    assert!(inputs.iter().any(|i| i["path"].as_str().unwrap().ends_with("tr.csv")));
    assert_eq!(inputs[1]["sha256"].as_str().unwrap().len(), 64);
}
