use std::path::Path;
use std::process::{Command, Output};

fn swarmrl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_swarmrl"))
        .args(args)
        .env_remove("SWARMRL_WORKERS")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = swarmrl(args);
    assert!(
        out.status.success(),
        "swarmrl {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const TINY: &str = r#"
[task]
agents = 3
episode_len = 16

[policy]
trunk = [8]

[policy.embedding]
kind = "nn_mean"
hidden = [8]

[trainer]
workers = 2
steps_per_worker = 16
subsample_agents = 2
value_minibatch = 16
iterations = 2
checkpoint_every = 1

[eval]
episodes = 2
horizon = 10
"#;

fn write_config(dir: &Path) -> String {
    let p = dir.join("tiny.toml");
    std::fs::write(&p, TINY).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn print_config_is_loadable() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(&["train", "--print-config", "--task", "pursuit", "--agents", "9", "--obs", "local"]);
    assert!(text.contains("task = \"pursuit\""));
    assert!(text.contains("agents = 9"));
    let p = dir.path().join("printed.toml");
    std::fs::write(&p, &text).unwrap();
    let again = ok(&["train", "--print-config", "--config", p.to_str().unwrap()]);
    assert_eq!(again, text);
}

#[test]
fn invalid_configuration_lists_every_problem() {
    let out = swarmrl(&["train", "--agents", "1", "--workers", "0", "--print-config"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("agents"), "{err}");
    assert!(err.contains("workers"), "{err}");
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    std::fs::write(&p, "[trainer]\nworkerz = 3\n").unwrap();
    let out = swarmrl(&["train", "--config", p.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("workerz"));
}

#[test]
fn alpha_only_with_softmax() {
    let out = swarmrl(&["train", "--print-config", "--alpha", "2"]);
    assert!(!out.status.success());
    ok(&["train", "--print-config", "--embedding", "softmax", "--alpha", "-1.5"]);
}

#[test]
fn workers_come_from_the_environment() {
    let out = Command::new(env!("CARGO_BIN_EXE_swarmrl"))
        .args(["train", "--print-config"])
        .env("SWARMRL_WORKERS", "3")
        .output()
        .unwrap();
    assert!(String::from_utf8(out.stdout).unwrap().contains("workers = 3"));
}

#[test]
fn train_eval_and_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let run = dir.path().join("run");
    let run_s = run.to_str().unwrap();
    ok(&["train", "--config", &cfg, "--trials", "2", "--seed", "4", "--out", run_s]);
    for f in ["config.snapshot.toml", "curve.csv", "trial_00/final.ckpt", "trial_01/checkpoints/iter_00002.ckpt"] {
        assert!(run.join(f).exists(), "missing {f}");
    }

    let agg = ok(&["aggregate", run_s, "--top-q", "1"]);
    assert!(agg.starts_with("iter,avg_return\n1,"));
    assert_eq!(agg.lines().count(), 3);

    let ckpt = run.join("trial_00/final.ckpt");
    let eval_out = dir.path().join("eval");
    let text = ok(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--episodes",
        "2",
        "--horizon",
        "5",
        "--scales",
        "2,6",
        "--out",
        eval_out.to_str().unwrap(),
    ]);
    assert!(text.contains("final distance"));
    let scales = std::fs::read_to_string(eval_out.join("eval/scales.csv")).unwrap();
    assert_eq!(scales.lines().count(), 3);
    let distance = std::fs::read_to_string(eval_out.join("eval/distance.csv")).unwrap();
    assert_eq!(distance.lines().count(), 7);
}

#[test]
fn baseline_and_gain_search() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("base");
    let text = ok(&[
        "baseline",
        "--controller",
        "surround",
        "--task",
        "pursuit",
        "--agents",
        "6",
        "--boundary",
        "toroidal",
        "--episodes",
        "2",
        "--horizon",
        "50",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(text.starts_with("surround"));
    assert!(out.join("eval/capture.csv").exists());

    let gains = dir.path().join("g/gains.csv");
    ok(&[
        "tune-gains",
        "--agents",
        "4",
        "--dynamics",
        "double",
        "--episodes",
        "1",
        "--horizon",
        "120",
        "--k1",
        "0.5,1",
        "--k2",
        "0.5",
        "--d2",
        "1",
        "--out",
        gains.to_str().unwrap(),
    ]);
    let csv = std::fs::read_to_string(gains).unwrap();
    assert_eq!(csv.lines().count(), 3);

    let bad = swarmrl(&["baseline", "--controller", "magic", "--print-config"]);
    assert!(!bad.status.success());
}
