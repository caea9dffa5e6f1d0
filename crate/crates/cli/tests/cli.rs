use std::path::Path;
use std::process::{Command, Output};

fn latmorse(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_latmorse"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn latmorse")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_config(dir: &Path, steps: usize) {
    let cfg = format!(
        r#"{{"subdivisions":[8,8],"rollout_steps":{steps},"lipschitz_samples":2000,
            "dynamics":{{"analytic":{{"system":"contraction","dim":2}}}},
            "dataset":"train.json","output_dir":"out"}}"#
    );
    std::fs::write(dir.join("config.json"), cfg).unwrap();
}

fn contraction_setup(dir: &Path) {
    ok(&latmorse(
        &[
            "synth",
            "--system",
            "contraction",
            "--dim",
            "2",
            "--trajectories",
            "40",
            "--steps",
            "10",
            "--out",
            "train.json",
        ],
        dir,
    ));
    write_config(dir, 4);
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "synth",
        "--system",
        "bistable_1d",
        "--trajectories",
        "20",
        "--steps",
        "30",
        "--seed",
        "9",
    ];
    let a = ok(&latmorse(&args, dir.path()));
    let b = ok(&latmorse(&args, dir.path()));
    assert_eq!(a, b);
    let v: serde_json::Value = serde_json::from_str(&a).unwrap();
    assert_eq!(v["dim"], 1);
    assert_eq!(v["trajectories"].as_array().unwrap().len(), 20);
}

#[test]
fn contraction_analyze_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    contraction_setup(dir.path());
    let table = ok(&latmorse(
        &["analyze", "--config", "config.json"],
        dir.path(),
    ));
    assert!(table.starts_with("Task"), "{table}");
    assert!(table.contains("1.0000     1.0000     1.0000"), "{table}");
    for f in [
        "graph.json",
        "morse.json",
        "morse.dot",
        "roa.json",
        "roa.csv",
        "report.json",
        "run_meta.json",
    ] {
        assert!(dir.path().join("out").join(f).exists(), "{f}");
    }
    let stats = ok(&latmorse(&["stats", "--config", "config.json"], dir.path()));
    assert!(stats.contains("1 attractors"), "{stats}");
}

#[test]
fn staged_commands_follow_cache() {
    let dir = tempfile::tempdir().unwrap();
    contraction_setup(dir.path());
    // downstream stages refuse to run before their inputs exist
    let out = latmorse(&["morse", "--config", "config.json"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("build-graph"));

    ok(&latmorse(
        &["build-graph", "--config", "config.json"],
        dir.path(),
    ));
    ok(&latmorse(&["morse", "--config", "config.json"], dir.path()));
    ok(&latmorse(&["roa", "--config", "config.json"], dir.path()));
    let table = ok(&latmorse(
        &["evaluate", "--config", "config.json"],
        dir.path(),
    ));
    assert!(table.contains("1.0000"), "{table}");
}

#[test]
fn stale_cache_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    contraction_setup(dir.path());
    ok(&latmorse(
        &["analyze", "--config", "config.json"],
        dir.path(),
    ));
    write_config(dir.path(), 5);
    let out = latmorse(&["morse", "--config", "config.json"], dir.path());
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("stale") && err.contains("digest"), "{err}");
}

#[test]
fn bad_inputs_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = latmorse(&["analyze", "--config", "missing.json"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let out = latmorse(
        &[
            "synth",
            "--system",
            "lorenz",
            "--trajectories",
            "1",
            "--steps",
            "1",
        ],
        dir.path(),
    );
    assert!(!out.status.success());

    contraction_setup(dir.path());
    let out = latmorse(
        &["--workers", "0", "analyze", "--config", "config.json"],
        dir.path(),
    );
    assert!(!out.status.success());

    std::fs::write(dir.path().join("train.json"), "{\"dim\": 2").unwrap();
    let out = latmorse(&["analyze", "--config", "config.json"], dir.path());
    assert!(!out.status.success());
}
