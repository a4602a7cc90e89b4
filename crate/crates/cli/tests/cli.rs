use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use caipi_cli::output::{RunManifest, SummaryRow};

const COLORS: &str = r#"
seed = 4
folds = 2
[dataset]
kind = "colors"
n = 200
rule = 0
[learner]
kind = "linear"
loss = "squared-hinge"
regularizer = "l1"
[explainer]
samples = 300
runs = 2
[session]
budget = 12
burn-in = 3
test-subsample = 5
test-cadence = 4
[corrections]
kind = "enumerate-alternatives"
copies = 2
"#;

const DECOY: &str = r#"
seed = 1
[dataset]
kind = "decoy"
n-train = 120
n-test = 80
noise = 60
[learner]
kind = "mlp"
hidden = 16
epochs = 3
[corrections]
kind = "randomize"
copies = 1
"#;

fn caipi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_caipi"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn run_writes_metrics_summary_and_a_reproducible_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "colors.toml", COLORS);
    let out = dir.path().join("run");
    let o = caipi(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let metrics = fs::read_to_string(out.join("metrics.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = metrics.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2 * 12);
    assert!(lines.iter().all(|l| l.get("predictive").is_some() && l.get("fold").is_some()));

    let mut reader = csv::Reader::from_path(out.join("summary.csv")).unwrap();
    let rows: Vec<SummaryRow> = reader.deserialize().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[2].fold, "mean");
    assert!(rows.iter().all(|r| r.alpha0.is_some() && r.alpha1.is_some()));
    assert!(out.join("curves.csv").exists() && out.join("counterexamples.jsonl").exists());

    // the manifest's config snapshot alone reproduces the metrics
    let manifest: RunManifest = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.run_id.len(), 16);
    assert!(manifest.input_hash.starts_with(&manifest.run_id));
    let snap = write(dir.path(), "snapshot.toml", &manifest.config);
    let again = dir.path().join("again");
    let o = caipi(&["run", "--config", &snap, "--out", again.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(fs::read_to_string(again.join("metrics.jsonl")).unwrap(), metrics);
    let second: RunManifest = serde_json::from_str(&fs::read_to_string(again.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(second.input_hash, manifest.input_hash);
}

#[test]
fn overrides_change_seed_and_folds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "colors.toml", COLORS);
    let o = caipi(&["run", "--config", &cfg, "--seed", "9", "--folds", "3", "--dry-run"]);
    assert!(o.status.success());
    let resolved = String::from_utf8(o.stdout).unwrap();
    assert!(resolved.contains("seed = 9") && resolved.contains("folds = 3"), "{resolved}");
}

#[test]
fn dry_run_touches_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "colors.toml", COLORS);
    let out = dir.path().join("never");
    let o = caipi(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--dry-run"]);
    assert!(o.status.success());
    assert!(String::from_utf8(o.stdout).unwrap().contains("[learner]"));
    assert!(!out.exists());
}

#[test]
fn missing_learner_exits_2_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let text: String = COLORS
        .lines()
        .filter(|l| !l.starts_with("[learner]") && !l.starts_with("kind = \"linear\"") && !l.starts_with("loss") && !l.starts_with("regularizer"))
        .collect::<Vec<_>>()
        .join("\n");
    let cfg = write(dir.path(), "bad.toml", &text);
    for cmd in ["run", "validate"] {
        let o = caipi(&[cmd, "--config", &cfg]);
        assert_eq!(o.status.code(), Some(2));
        let err = String::from_utf8(o.stderr).unwrap();
        assert!(err.contains("learner"), "{err}");
    }
}

#[test]
fn invalid_values_report_field_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", &COLORS.replace("copies = 2", "copies = 0"));
    let o = caipi(&["validate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8(o.stderr).unwrap().contains("corrections.copies"));

    let cfg = write(dir.path(), "typo.toml", &COLORS.replace("budget = 12", "budgett = 12"));
    let o = caipi(&["validate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("budgett") && err.contains("line"), "{err}");
}

#[test]
fn validate_describes_a_good_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "colors.toml", COLORS);
    let o = caipi(&["validate", "--config", &cfg]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("valid: dataset colors"), "{text}");
}

#[test]
fn decoy_table_prints_one_column_per_setting() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "decoy.toml", DECOY);
    let out = dir.path().join("decoy");
    let o = caipi(&["decoy-table", "--config", &cfg, "--out", out.to_str().unwrap(), "--copies", "1,5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.contains("no corrections") && table.contains("c = 1") && table.contains("c = 5"));
    assert!(table.contains("train accuracy") && table.contains("test accuracy"));
    let csv = fs::read_to_string(out.join("decoy_table.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(out.join("manifest.json").exists());
}

#[test]
fn decoy_table_needs_the_mlp() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "colors.toml", COLORS);
    let o = caipi(&["decoy-table", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let o = caipi(&["validate", "--config", path.to_str().unwrap()]);
        assert!(o.status.success(), "{}: {}", path.display(), String::from_utf8_lossy(&o.stderr));
        seen += 1;
    }
    assert!(seen >= 5);
}
