use std::path::Path;
use std::process::{Command, Output};

use spinelink_cli::RunManifest;

const SMALL: &str = r#"{
  "phantom": {"dims": [128, 128, 48], "n_shafts": 3, "spines_per_shaft": 5, "n_axons": 4},
  "forest": {"n_trees": 20},
  "simulate": {"iterations": 10}
}"#;

const REPORTS: [&str; 9] = [
    "features.csv",
    "scores.csv",
    "trees.json",
    "assignment.csv",
    "report.json",
    "report.md",
    "topk.csv",
    "graph_f1.csv",
    "curve.csv",
];

fn spinelink(dir: &Path, args: &[&str]) -> Output {
    let config = dir.join("config.json");
    if !config.exists() {
        std::fs::write(&config, SMALL).unwrap();
    }
    Command::new(env!("CARGO_BIN_EXE_spinelink"))
        .arg("--config")
        .arg(&config)
        .arg("--data-dir")
        .arg(dir.join("data"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn same_files(a: &Path, b: &Path) {
    for f in REPORTS {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("config.json"), r#"{"phantom": {"n_shafs": 3}}"#).unwrap();
    let o = spinelink(dir.path(), &["generate"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("n_shafs"));

    let dir = tempfile::tempdir().unwrap();
    assert_eq!(spinelink(dir.path(), &["--fraction", "1.5", "fragment"]).status.code(), Some(2));
    assert_eq!(spinelink(dir.path(), &["--ks", "0", "evaluate"]).status.code(), Some(2));
    assert_eq!(spinelink(dir.path(), &["no-such-command"]).status.code(), Some(2));
    assert!(!dir.path().join("data").exists());
}

#[test]
fn missing_or_corrupt_inputs_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = spinelink(dir.path(), &["features"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("fragmented.sntg"), "{}", stderr(&o));

    assert!(spinelink(dir.path(), &["generate"]).status.success());
    assert!(spinelink(dir.path(), &["fragment"]).status.success());
    let data = dir.path().join("data");
    std::fs::remove_file(data.join("fragmented.membrane.sntg")).unwrap();
    let o = spinelink(dir.path(), &["features"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("fragmented.membrane.sntg"), "{}", stderr(&o));
    assert!(!data.join("features.csv").exists());

    std::fs::write(data.join("fragmented.membrane.sntg"), b"SNTG\x01\x00").unwrap();
    let o = spinelink(dir.path(), &["features"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("truncated"), "{}", stderr(&o));

    let o = spinelink(dir.path(), &["serve", "--addr", "127.0.0.1:0"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("trees.json"), "{}", stderr(&o));
}

#[test]
fn stage_by_stage_matches_all_and_thread_count() {
    let whole = tempfile::tempdir().unwrap();
    let o = spinelink(whole.path(), &["--threads", "1", "all"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let staged = tempfile::tempdir().unwrap();
    for stage in ["generate", "fragment", "features", "train", "score", "link", "evaluate", "simulate"] {
        let o = spinelink(staged.path(), &[stage]);
        assert!(o.status.success(), "{stage}: {}", stderr(&o));
    }
    same_files(&whole.path().join("data"), &staged.path().join("data"));
    let data = whole.path().join("data");
    let renamed: std::collections::BTreeMap<String, u64> =
        serde_json::from_str(&std::fs::read_to_string(data.join("fragmented.renamed.json")).unwrap()).unwrap();
    let lint = std::fs::read_to_string(data.join("lint.txt")).unwrap();
    assert_eq!(lint.lines().filter(|l| l.starts_with("orphan-spine\t")).count(), renamed.len());
    assert_eq!(lint.lines().count(), renamed.len(), "{lint}");
    for f in ["curve.svg", "curve.plot.json", "model.json", "ranked.csv", "assignment.json", "fragmented.renamed.json"] {
        assert!(data.join(f).exists(), "{f}");
    }

    let o = spinelink(staged.path(), &["--score-mode", "model", "score"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(staged.path().join("data/scores.csv")).unwrap();
    assert_eq!(text.lines().count(), std::fs::read_to_string(data.join("scores.csv")).unwrap().lines().count());
}

#[test]
fn resume_skips_unchanged_stages() {
    let dir = tempfile::tempdir().unwrap();
    assert!(spinelink(dir.path(), &["all"]).status.success());
    let data = dir.path().join("data");
    let first = RunManifest::load(&data.join("run_manifest.json")).unwrap();
    assert_eq!(first.stages.len(), 8);
    assert!(first.stages.iter().all(|s| !s.resumed));
    first.verify(&data).unwrap();

    assert!(spinelink(dir.path(), &["all", "--resume"]).status.success());
    let again = RunManifest::load(&data.join("run_manifest.json")).unwrap();
    assert!(again.stages.iter().all(|s| s.resumed));

    // a damaged output reruns its stage; identical regenerated bytes let the rest resume
    let before = std::fs::read(data.join("scores.csv")).unwrap();
    std::fs::write(data.join("scores.csv"), "spine_id,shaft_id,probability\n").unwrap();
    assert!(spinelink(dir.path(), &["all", "--resume"]).status.success());
    let m = RunManifest::load(&data.join("run_manifest.json")).unwrap();
    let resumed = |name: &str| m.stage(name).unwrap().resumed;
    assert!(!resumed("score"));
    assert!(resumed("generate") && resumed("features") && resumed("link") && resumed("evaluate"));
    assert_eq!(std::fs::read(data.join("scores.csv")).unwrap(), before);

    // a changed config reruns everything
    assert!(spinelink(dir.path(), &["--train-seed", "99", "all", "--resume"]).status.success());
    let m = RunManifest::load(&data.join("run_manifest.json")).unwrap();
    assert!(m.stages.iter().all(|s| !s.resumed));
    assert_eq!(m.config.train_seed, 99);
}
