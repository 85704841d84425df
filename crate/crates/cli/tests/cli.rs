mod common;

use bankbm_cli::{EXIT_OK, EXIT_VALIDATION};
use common::{code, run, s, snapshot, write_config};

const SMALL: &str =
    "synth_banks = 60\nsynth_years = 8\nn_trees = 40\nrestarts = 5\nk_range = \"2-4\"\nskip_tuning = true\n";

fn simulated(dir: &std::path::Path) -> std::path::PathBuf {
    let cfg = write_config(dir, SMALL);
    let sim = dir.join("sim");
    let out = run(&["simulate", "--config", s(&cfg), "--seed", "11", "--out-dir", s(&sim)]);
    assert_eq!(code(&out), EXIT_OK, "{}", String::from_utf8_lossy(&out.stderr));
    sim.join("panel.csv")
}

#[test]
fn unreadable_input_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = run(&["pipeline", "--input", s(&dir.path().join("nope.csv")), "--seed", "1", "--out-dir", s(&out_dir)]);
    assert_eq!(code(&out), EXIT_VALIDATION);
    assert!(!out_dir.exists() || snapshot(&out_dir).is_empty());
}

#[test]
fn missing_seed_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let panel = simulated(dir.path());
    let out_dir = dir.path().join("out");
    let out = run(&["fit", "--input", s(&panel), "--out-dir", s(&out_dir)]);
    assert_eq!(code(&out), EXIT_VALIDATION);
    let out = run(&["simulate", "--out-dir", s(&out_dir)]);
    assert_eq!(code(&out), EXIT_VALIDATION);
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "n_tree = 10\n");
    let out = run(&["validate", "--config", s(&cfg), "--seed", "1"]);
    assert_eq!(code(&out), EXIT_VALIDATION);
}

#[test]
fn bad_k_range_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let panel = simulated(dir.path());
    for range in ["5-3", "1-4", "x"] {
        let out = run(&["validate", "--input", s(&panel), "--seed", "1", "--k-range", range]);
        assert_eq!(code(&out), EXIT_VALIDATION, "{range}");
    }
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    for name in ["a", "b"] {
        let out = run(&["simulate", "--config", s(&cfg), "--seed", "5", "--out-dir", s(&dir.path().join(name))]);
        assert_eq!(code(&out), EXIT_OK);
    }
    let a = snapshot(&dir.path().join("a"));
    assert_eq!(a, snapshot(&dir.path().join("b")));
    let panel = String::from_utf8(a["panel.csv"].clone()).unwrap();
    assert_eq!(panel.lines().count(), 60 * 8 + 1);
}

#[test]
fn validate_writes_rejection_log() {
    let dir = tempfile::tempdir().unwrap();
    let panel = simulated(dir.path());
    let out_dir = dir.path().join("v");
    let out = run(&["validate", "--input", s(&panel), "--seed", "1", "--out-dir", s(&out_dir)]);
    assert_eq!(code(&out), EXIT_OK);
    let log = std::fs::read_to_string(out_dir.join("rejections.csv")).unwrap();
    assert!(log.lines().count() > 1, "trimming drops at least one row");
}

#[test]
fn stages_by_hand_match_pipeline_and_rerun_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let panel = simulated(dir.path());
    let cfg = write_config(dir.path(), SMALL);
    let common = |out: &std::path::Path| {
        vec![
            "--config".to_string(),
            s(&cfg).into(),
            "--input".into(),
            s(&panel).into(),
            "--seed".into(),
            "9".into(),
            "--out-dir".into(),
            s(out).into(),
        ]
    };
    let piped = dir.path().join("piped");
    let again = dir.path().join("again");
    let manual = dir.path().join("manual");
    for out_dir in [&piped, &again] {
        let mut args = vec!["pipeline".to_string()];
        args.extend(common(out_dir));
        let out = run(&args.iter().map(String::as_str).collect::<Vec<_>>());
        assert_eq!(code(&out), EXIT_OK, "{}", String::from_utf8_lossy(&out.stderr));
    }
    for stage in ["validate", "fit", "decompose", "cluster", "characterize", "report"] {
        let mut args = vec![stage.to_string()];
        args.extend(common(&manual));
        let out = run(&args.iter().map(String::as_str).collect::<Vec<_>>());
        assert_eq!(code(&out), EXIT_OK, "{stage}: {}", String::from_utf8_lossy(&out.stderr));
    }

    let full = snapshot(&piped);
    assert_eq!(full, snapshot(&again));
    assert!(full.contains_key("run_manifest.json"));
    assert!(!full.contains_key(bankbm_cli::FAILED_MARKER));
    let by_hand = snapshot(&manual);
    for (name, bytes) in &by_hand {
        assert_eq!(Some(bytes), full.get(name), "{name} differs");
    }
    let mut expected: Vec<_> = full.keys().filter(|n| *n != "run_manifest.json").cloned().collect();
    expected.sort();
    assert_eq!(by_hand.keys().cloned().collect::<Vec<_>>(), expected);

    let manifest: serde_json::Value = serde_json::from_slice(&full["run_manifest.json"]).unwrap();
    assert_eq!(manifest["seed"], 9);
    assert_eq!(manifest["outputs"].as_object().unwrap().len(), full.len() - 1);
}

#[test]
fn single_size_group() {
    let dir = tempfile::tempdir().unwrap();
    let panel = simulated(dir.path());
    let cfg = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("m");
    let out = run(&[
        "pipeline",
        "--config",
        s(&cfg),
        "--input",
        s(&panel),
        "--seed",
        "2",
        "--size-group",
        "M",
        "--out-dir",
        s(&out_dir),
    ]);
    assert_eq!(code(&out), EXIT_OK, "{}", String::from_utf8_lossy(&out.stderr));
    let files = snapshot(&out_dir);
    assert!(files.contains_key("forest_M.json"));
    assert!(!files.contains_key("forest_L.json"));
    assert!(files.contains_key("report.md"));
}
