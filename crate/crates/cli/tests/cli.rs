use std::path::Path;
use std::process::{Command, Output};

fn reefscale(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reefscale")).args(args).current_dir(cwd).output().unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = reefscale(args, cwd);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn simulate(dir: &Path, seed: &str) {
    ok(&["simulate", "--out", "sim", "--seed", seed, "--extent", "9", "--regions", "5"], dir);
}

#[test]
fn simulate_then_run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "1");
    let stdout = ok(&["run", "--config", "sim/config.json"], dir.path());
    let summary: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert!(summary["kept"].as_u64().unwrap() > 0);
    for f in ["manifest.jsonl", "summary.json", "tiles.jsonl", "footprints.geojson", "grid.json"] {
        assert!(dir.path().join("sim/out").join(f).exists(), "{f}");
    }
}

#[test]
fn runs_are_byte_identical() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        simulate(d.path(), "9");
        ok(&["run", "--config", "sim/config.json", "--method", "weighted"], d.path());
    }
    for f in ["manifest.jsonl", "summary.json", "tiles.jsonl"] {
        let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("sim/out").join(f)).unwrap();
        assert_eq!(read(&dirs[0]), read(&dirs[1]), "{f}");
    }
}

#[test]
fn staged_commands_match_run() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "2");
    ok(&["run", "--config", "sim/config.json"], dir.path());
    ok(&["associate", "--config", "sim/config.json", "--out", "tiles.jsonl"], dir.path());
    ok(&["aggregate", "--config", "sim/config.json", "--tiles", "tiles.jsonl", "--out", "m.jsonl"], dir.path());
    let read = |p: &str| std::fs::read(dir.path().join(p)).unwrap();
    assert_eq!(read("m.jsonl"), read("sim/out/manifest.jsonl"));
    assert_eq!(read("tiles.jsonl"), read("sim/out/tiles.jsonl"));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(reefscale(&["frobnicate"], dir.path()).status.code(), Some(2));
    assert_eq!(reefscale(&["run", "--tile-side", "abc"], dir.path()).status.code(), Some(2));
}

#[test]
fn eval_reports_missing_keys() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("labels.csv"), "tile_id,class,score\nr0000_c0000,Rock,1\nr0000_c0001,Rock,0\n").unwrap();
    std::fs::write(dir.path().join("preds.csv"), "tile_id,class,score\nr0000_c0000,Rock,0.9\n").unwrap();
    let out = reefscale(&["eval", "--labels", "labels.csv", "--preds", "preds.csv"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error:") && stderr.contains("r0000_c0001"), "{stderr}");

    std::fs::write(dir.path().join("preds.csv"), "tile_id,class,score\nr0000_c0000,Rock,0.9\nr0000_c0001,Rock,0.2\n").unwrap();
    let report = ok(&["eval", "--labels", "labels.csv", "--preds", "preds.csv"], dir.path());
    assert!(report.contains("auc_micro: 1.0000000000"), "{report}");
}

#[test]
fn eval_against_scene_oracle() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "4");
    ok(&["run", "--config", "sim/config.json"], dir.path());
    let report = ok(&["eval", "--scene", "sim/scene.json", "--preds", "sim/out/manifest.jsonl", "--out", "r.txt"], dir.path());
    assert_eq!(std::fs::read_to_string(dir.path().join("r.txt")).unwrap(), report);
    let auc: f64 = report.lines().find_map(|l| l.strip_prefix("auc_micro: ")).unwrap().parse().unwrap();
    assert!(auc > 0.95, "{report}");
}

#[test]
fn map_writes_georeferenced_rasters() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "5");
    ok(&["run", "--config", "sim/config.json"], dir.path());
    ok(&["map", "--run-dir", "sim/out", "--class", "Rock", "--class", "Algae", "--out", "maps"], dir.path());
    for f in ["Rock.png", "Rock.pgw", "Rock.prj", "Algae.png"] {
        assert!(dir.path().join("maps").join(f).exists(), "{f}");
    }
    assert!(!dir.path().join("maps/Rubble.png").exists());
    let bad = reefscale(&["map", "--run-dir", "sim/out", "--class", "Kelp"], dir.path());
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn split_writes_assignment() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("sample_id,group_key,labels\n");
    for i in 0..60 {
        let labels = if i % 3 == 0 { "Rock;Sand" } else { "Rock" };
        csv.push_str(&format!("s{i},{},{labels}\n", 2020 + i % 4));
    }
    std::fs::write(dir.path().join("samples.csv"), csv).unwrap();
    let report = ok(&["split", "--samples", "samples.csv", "--seed", "3", "--out", "assign.csv"], dir.path());
    assert!(report.lines().any(|l| l.starts_with("Sand,")), "{report}");
    let assignment = std::fs::read_to_string(dir.path().join("assign.csv")).unwrap();
    assert_eq!(assignment.lines().count(), 61);
}
