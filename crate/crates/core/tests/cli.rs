use std::path::Path;
use std::process::Command;

use shadowtutor::cli::{cmd_generate, cmd_pretrain, cmd_run, cmd_sweep, ExperimentConfig};

fn small(dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    for (k, v) in [
        ("scene.height", "32"),
        ("scene.width", "32"),
        ("scene.frames", "60"),
        ("pretrain.scenes", "8"),
        ("pretrain.epochs", "1"),
    ] {
        cfg.set(k, v).unwrap();
    }
    cfg.output = dir.to_path_buf();
    cfg
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_shadowtutor"))
}

#[test]
fn generate_pretrain_then_run_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    let video = cmd_generate(&cfg).unwrap();
    let ckpt = cmd_pretrain(&cfg).unwrap();
    assert!(ckpt.iter().any(|p| p.ends_with("student.ckpt")));
    cfg.set("scene.stream", video[0].to_str().unwrap()).unwrap();
    cfg.set("student.checkpoint", dir.path().join("student.ckpt").to_str().unwrap()).unwrap();
    let (report, files) = cmd_run(&cfg).unwrap();
    assert_eq!(report.n, 60);
    assert_eq!(files.len(), 4);
    let csv = std::fs::read_to_string(dir.path().join("default.csv")).unwrap();
    assert!(csv.starts_with("scenario,fps,key_ratio_pct,traffic_mbps,miou_mean,bytes_up,bytes_down"));
    let trace = std::fs::read_to_string(dir.path().join("default_trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 61);
}

#[test]
fn sweep_writes_one_row_per_point_and_strategy() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.set("sweep.bandwidths_mbps", "40, 8").unwrap();
    let (reports, _) = cmd_sweep(&cfg).unwrap();
    assert_eq!(reports.len(), 4);
    assert!(reports[0].scenario.ends_with("shadowtutor@40Mbps"));
    assert!(reports[3].scenario.ends_with("naive@8Mbps"));
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn binary_prints_reference_bounds() {
    let out = bin().arg("bounds").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("6.993"), "{text}");
    assert!(text.contains("2.526") && text.contains("21.203"), "{text}");
}

#[test]
fn binary_reports_bad_settings() {
    let out = bin().args(["run", "-s", "algo.min_stride=0"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    let out = bin().args(["bounds", "-s", "no.such.key=1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn binary_config_file_and_dump() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.conf");
    std::fs::write(&path, "# desk run\nscene.preset = fixed-people\nalgo.max_stride = 32\n").unwrap();
    let out = bin().args(["run", "--dump-config", "-c"]).arg(&path).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("algo.max_stride = 32"), "{text}");
    let again = ExperimentConfig::parse(&text).unwrap();
    assert_eq!(again.algo.max_stride, 32);
}
