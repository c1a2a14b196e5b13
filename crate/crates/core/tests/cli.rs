use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_gcode-sentinel");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn staged_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let (data, comp, det) = (dir.path().join("data"), dir.path().join("comp"), dir.path().join("det"));
    ok(&["generate", "--dataset", "d1", "--files", "40", "--step", "4.5", "--seed", "3", "--out", p(&data)]);
    assert_eq!(fs::read_dir(&data).unwrap().count(), 41, "40 files plus manifest");

    ok(&["compromise", "--input", p(&data), "--out", p(&comp), "--counts", "ID1=2,ID6=1", "--seed", "5"]);
    let blind = comp.join("blind");
    assert!(comp.join("truth.json").exists());
    assert!(!blind.join("truth.json").exists(), "ground truth must stay out of the blind corpus");
    assert_eq!(fs::read_dir(comp.join("mutation_logs")).unwrap().count(), 3);

    ok(&["detect", "--input", p(&blind), "--out", p(&det), "--detectors", "single-stat,combined-stat,pca-agglomerative,dbscan"]);
    let flags = det.join("flags");
    assert_eq!(fs::read_dir(&flags).unwrap().count(), 4);
    assert!(det.join("features.csv").exists());
    assert!(det.join("scatter").join("pca-agglomerative.csv").exists());
    assert!(!det.join("scatter").join("dbscan.csv").exists(), "dbscan runs on the full feature space");

    let first = fs::read(flags.join("combined-stat.json")).unwrap();
    ok(&["detect", "--input", p(&blind), "--out", p(&det), "--detectors", "combined-stat"]);
    assert_eq!(fs::read(flags.join("combined-stat.json")).unwrap(), first, "detect is deterministic");

    let csv = ok(&["evaluate", "--flags", p(&flags), "--truth", p(&comp.join("truth.json")), "--input", p(&blind)]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "detector,D1_TP,D1_FP,D1_TN,D1_FN");
    assert_eq!(lines.len(), 5);
    for l in &lines[1..] {
        let cells: Vec<usize> = l.split(',').skip(1).map(|c| c.parse().unwrap()).collect();
        assert_eq!(cells.iter().sum::<usize>(), 40);
        assert_eq!(cells[0] + cells[3], 3);
    }
    let combined = lines.iter().find(|l| l.starts_with("combined-stat,")).unwrap();
    assert_eq!(*combined, "combined-stat,3,0,37,0");

    let rep = dir.path().join("rep");
    ok(&["evaluate", "--flags", p(&flags), "--truth", p(&comp.join("truth.json")), "--input", p(&blind), "--out", p(&rep)]);
    assert_eq!(fs::read_to_string(rep.join("report.csv")).unwrap(), csv);
    assert!(rep.join("report.json").exists() && rep.join("strategy_recall.csv").exists());
}

#[test]
fn dry_runs_write_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let plan = ok(&["generate", "--dataset", "d2", "--files", "10", "--out", p(&out), "--dry-run"]);
    assert!(plan.contains("\"entries\""));
    let plan = ok(&["run-all", "--preset", "desk", "--seed", "4", "--out", p(&out), "--dry-run"]);
    let v: serde_json::Value = serde_json::from_str(&plan).unwrap();
    assert_eq!(v["datasets"].as_array().unwrap().len(), 2);
    assert_eq!(v["datasets"][1]["victims"].as_array().unwrap().len(), 30);
    assert!(!out.exists());
}

#[test]
fn run_all_from_config_writes_the_documented_layout() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    fs::write(
        &config,
        r#"{"master_seed": 2, "detectors": ["combined-stat", "pca-meanshift"],
            "datasets": [{"dataset": "D2", "label": "small", "files": 36, "angular_step": 10.0,
                          "compromise": {"ID4": 1, "ID5": 1}}]}"#,
    )
    .unwrap();
    let out = dir.path().join("run");
    let csv = ok(&["run-all", "--config", p(&config), "--out", p(&out)]);
    assert!(csv.starts_with("detector,small_TP,small_FP,small_TN,small_FN\n"));
    for f in ["config.json", "run_metadata.json", "report.csv", "report.json", "strategy_recall.csv"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let root = out.join("small");
    for d in ["dataset", "blind", "mutation_logs", "flags", "scatter"] {
        assert!(root.join(d).is_dir(), "{d}");
    }
    assert!(root.join("truth.json").is_file() && root.join("features.csv").is_file());
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("run_metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["master_seed"], 2);
    assert!(meta["timing"]["elapsed_seconds"].is_number());
}

#[test]
fn usage_errors_exit_nonzero_with_a_message() {
    let out = run(&["detect", "--input", "x", "--out", "y", "--detectors", "k-means"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("k-means") && err.contains("combined-stat"), "{err}");

    let out = run(&["compromise", "--input", "x", "--out", "y", "--counts", "ID9=1"]);
    assert_eq!(out.status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["generate", "--dataset", "d1", "--files", "5", "--step", "10", "--out", p(&data)]);
    let out = run(&["compromise", "--input", p(&data), "--out", p(&dir.path().join("c")), "--counts", "ID1=9"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));

    let out = run(&["evaluate", "--flags", p(dir.path()), "--truth", "/nonexistent/truth.json", "--input", p(&data)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("truth"));

    let out = run(&["run-all", "--preset", "d1", "--out", p(&dir.path().join("r")), "--cluster-fraction", "3"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!dir.path().join("r").exists());
}
