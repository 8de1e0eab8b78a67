mod common;

use std::fs;
use std::path::Path;

use common::run_bin;

fn write_sphere_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("sphere.toml");
    fs::write(
        &path,
        "seed = 2\nislands = 2\n[task]\nkind = \"synthetic_sphere\"\ndim = 3\n[backend]\nkind = \"mock\"\nsigma = 0.05\n[budget]\nmax_evals = 60\n",
    )
    .unwrap();
    path
}

fn stderr(out: &std::process::Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn run_sphere(dir: &Path) -> std::path::PathBuf {
    let config = write_sphere_config(dir);
    let run_dir = dir.join("run");
    let out = run_bin(&[
        "run",
        config.to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("best "));
    run_dir
}

#[test]
fn run_writes_outputs_and_honours_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_sphere_config(tmp.path());
    let run_dir = tmp.path().join("run");
    let out = run_bin(&[
        "run",
        config.to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
        "--max-evals",
        "20",
        "--seed",
        "9",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run_dir.join("summary.json")).unwrap()).unwrap();
    let n = summary["n_eval"].as_u64().unwrap();
    assert!((20..27).contains(&n), "n_eval {n}");
    for f in [
        "events.jsonl",
        "trajectory.csv",
        "snapshots.jsonl",
        "config.toml",
    ] {
        assert!(run_dir.join(f).exists(), "{f} missing");
    }
}

#[test]
fn topm_without_matching_events_is_a_one_line_error() {
    let tmp = tempfile::tempdir().unwrap();
    let run_dir = run_sphere(tmp.path());
    let out = run_bin(&[
        "analyze",
        "topm",
        run_dir.to_str().unwrap(),
        "--k",
        "2",
        "--out",
        tmp.path().join("a").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let err = stderr(&out);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with("error: "), "{err}");
}

#[test]
fn analyses_write_their_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let run_dir = run_sphere(tmp.path());
    let out_dir = tmp.path().join("analysis");
    let dir = out_dir.to_str().unwrap();
    let log = run_dir.to_str().unwrap();
    for args in [
        vec!["analyze", "topm", log, "--k", "5", "--out", dir],
        vec!["analyze", "ranks", log, "--k", "5", "--out", dir],
        vec!["analyze", "distance-grid", log, "--out", dir],
    ] {
        let out = run_bin(&args);
        assert!(out.status.success(), "{args:?}: {}", stderr(&out));
    }
    for f in [
        "topm.csv",
        "ranks.csv",
        "rank_groups.csv",
        "rank_scatter.csv",
        "distance_grid.csv",
    ] {
        let text = fs::read_to_string(out_dir.join(f)).unwrap();
        assert!(text.lines().count() > 1, "{f} is empty");
    }
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = run_bin(&["run", "x.toml", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--no-such-flag"));
}

#[test]
fn missing_config_fails_cleanly() {
    let out = run_bin(&["run", "/nonexistent/config.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("error: "));
}

#[test]
fn degrade_pool_drops_the_top_fifth() {
    let tmp = tempfile::tempdir().unwrap();
    let pool = tmp.path().join("pool");
    let mut scores = common::write_grid_pool(&pool, 100, 0.5, 0.004, 3);
    let out_dir = tmp.path().join("kept");
    let out = run_bin(&[
        "degrade-pool",
        "--pool",
        pool.to_str().unwrap(),
        "--fraction",
        "0.2",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("kept 80 of 100"));
    let manifest = fs::read_to_string(out_dir.join("manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 80);
    scores.sort_by(|a, b| b.total_cmp(a));
    for line in manifest.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["score"].as_f64().unwrap() < scores[19]);
    }
}

#[test]
fn seed_init_reports_every_island() {
    let tmp = tempfile::tempdir().unwrap();
    let pool = tmp.path().join("pool");
    common::write_grid_pool(&pool, 24, 0.6, 0.01, 5);
    let out_dir = tmp.path().join("assign");
    let out = run_bin(&[
        "seed-init",
        "--pool",
        pool.to_str().unwrap(),
        "--islands",
        "4",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(
        stdout.lines().filter(|l| l.starts_with("island ")).count(),
        4,
        "{stdout}"
    );
    assert!(out_dir.join("assignment.json").exists());
}

#[test]
fn snapshot_dump_lists_final_snapshot() {
    let tmp = tempfile::tempdir().unwrap();
    let run_dir = run_sphere(tmp.path());
    let out = run_bin(&["snapshot-dump", run_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.starts_with("n_eval,milestone,island_id"));
    assert_eq!(text.lines().filter(|l| l.contains(",final,")).count(), 2);
}

#[test]
fn replay_reproduces_archives() {
    let tmp = tempfile::tempdir().unwrap();
    let run_dir = run_sphere(tmp.path());
    let again = tmp.path().join("again");
    let out = run_bin(&[
        "replay",
        run_dir.to_str().unwrap(),
        "--out",
        again.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let final_ckpt = |d: &Path| fs::read(d.join("checkpoints").join("final.jsonl")).unwrap();
    assert_eq!(final_ckpt(&run_dir), final_ckpt(&again));
    assert_eq!(
        fs::read(run_dir.join("events.jsonl")).unwrap(),
        fs::read(again.join("events.jsonl")).unwrap()
    );
}

#[test]
fn bundled_config_runs() {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/circle_packing.toml");
    let tmp = tempfile::tempdir().unwrap();
    let out = run_bin(&[
        "run",
        config.to_str().unwrap(),
        "--max-evals",
        "40",
        "--out",
        tmp.path().join("run").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
}
