use std::path::Path;
use std::process::{Command, Output};

use crowdnav::config::RunConfig;
use crowdnav::eval::metrics_csv_header;
use crowdnav::valuenet::NetworkShape;
use crowdnav::PerType;

fn crowdnav(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crowdnav"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

/// Small network and few episodes so `train` finishes in seconds.
fn tiny_config(dir: &Path, include_entity_type: bool) -> String {
    let mut cfg = RunConfig::desk();
    let s = NetworkShape::reduced(include_entity_type);
    cfg.network.include_entity_type = include_entity_type;
    cfg.network.embed = s.embed;
    cfg.network.interaction = s.interaction;
    cfg.network.attention = s.attention;
    cfg.network.value = s.value;
    cfg.scenario.counts = PerType {
        adult: 2,
        bicycle: 0,
        child: 1,
        obstacle: 0,
    };
    cfg.training.il_episodes = 4;
    cfg.training.il_epochs = 2;
    cfg.training.rl_episodes = 4;
    cfg.training.validation_interval = 2;
    cfg.training.validation_size = 2;
    cfg.eval.test_size = 3;
    let name = if include_entity_type { "tiny.toml" } else { "tiny_ablation.toml" };
    cfg.save(&dir.join(name)).unwrap();
    name.to_string()
}

#[test]
fn missing_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = crowdnav(&["bench", "--config", "nope.toml"], dir.path());
    assert_eq!(code(&out), 1);
    let out = crowdnav(&["bench", "--profile", "huge"], dir.path());
    assert_eq!(code(&out), 1);
    let out = crowdnav(&["frobnicate"], dir.path());
    assert_eq!(code(&out), 1);
}

#[test]
fn invalid_config_values_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let text = RunConfig::desk().to_toml_string().replace("t_good = 20.0", "t_good = 40.0");
    std::fs::write(dir.path().join("bad.toml"), text).unwrap();
    let out = crowdnav(&["bench", "--config", "bad.toml", "--episodes", "1"], dir.path());
    assert_eq!(code(&out), 1, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn orca_evaluation_writes_metrics_and_enforces_thresholds() {
    let dir = tempfile::tempdir().unwrap();
    let out = crowdnav(&["evaluate", "--orca", "--episodes", "3", "--out", "ev"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = std::fs::read_to_string(dir.path().join("ev/metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert!(lines.next().unwrap().starts_with("# config_hash="));
    assert_eq!(lines.next().unwrap(), metrics_csv_header().join(","));
    assert_eq!(lines.count(), 1);
    for f in ["episodes.csv", "danger_histogram.svg", "danger_histogram.csv"] {
        assert!(dir.path().join("ev").join(f).exists(), "{f}");
    }

    let args = ["evaluate", "--orca", "--episodes", "3", "--out", "ev2", "--assert", "--min-sr", "1.01"];
    assert_eq!(code(&crowdnav(&args, dir.path())), 3);
    let args = ["evaluate", "--orca", "--episodes", "3", "--out", "ev3", "--assert", "--min-score", "-100"];
    assert_eq!(code(&crowdnav(&args, dir.path())), 0);
}

#[test]
fn evaluate_needs_exactly_one_robot() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&crowdnav(&["evaluate", "--episodes", "1"], dir.path())), 1);
}

#[test]
fn corrupt_checkpoint_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("junk.ckpt"), b"not a checkpoint").unwrap();
    let out = crowdnav(&["evaluate", "--checkpoint", "junk.ckpt", "--episodes", "1"], dir.path());
    assert_eq!(code(&out), 1);
}

#[test]
fn render_demo_and_bench() {
    let dir = tempfile::tempdir().unwrap();
    let out = crowdnav(&["render", "--index", "2", "--out", "r"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let svg = std::fs::read_to_string(dir.path().join("r/episode_0002.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    let again = crowdnav(&["render", "--index", "2", "--out", "r2"], dir.path());
    assert_eq!(code(&again), 0);
    assert_eq!(svg, std::fs::read_to_string(dir.path().join("r2/episode_0002.svg")).unwrap());
    assert!(dir.path().join("r/episode_0002.csv").exists());

    let out = crowdnav(&["demo", "--episodes", "2", "--out", "d"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("d/demos/summary.csv").exists());
    assert!(dir.path().join("d/demos/trace_00001.csv").exists());

    let a = crowdnav(&["bench", "--episodes", "2"], dir.path());
    let b = crowdnav(&["bench", "--episodes", "2", "--workers", "2"], dir.path());
    assert_eq!(code(&a), 0);
    let digest = |o: &Output| {
        let s = String::from_utf8_lossy(&o.stdout).to_string();
        s.split_whitespace().find(|w| w.starts_with("digest=")).unwrap().to_string()
    };
    assert_eq!(digest(&a), digest(&b));
}

#[test]
fn train_then_evaluate_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), true);
    let out = crowdnav(&["train", "--config", &cfg, "--out", "run"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let run = dir.path().join("run");
    for f in [
        "config.toml",
        "training_log.csv",
        "validation_curve.csv",
        "checkpoints/il.ckpt",
        "checkpoints/best.ckpt",
        "test_il/metrics.csv",
        "test_best/metrics.csv",
    ] {
        assert!(run.join(f).exists(), "{f}");
    }

    let args = ["evaluate", "--config", &cfg, "--checkpoint", "run/checkpoints/best.ckpt", "--out", "ev"];
    let out = crowdnav(&args, dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        std::fs::read_to_string(dir.path().join("ev/metrics.csv")).unwrap(),
        std::fs::read_to_string(run.join("test_best/metrics.csv")).unwrap()
    );

    // a checkpoint trained with entity types does not fit the ablation config
    let ablation = tiny_config(dir.path(), false);
    let args = ["evaluate", "--config", &ablation, "--checkpoint", "run/checkpoints/best.ckpt", "--out", "ev2"];
    assert_eq!(code(&crowdnav(&args, dir.path())), 1);
}
