use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use ctxmon::cli::config::Config;
use ctxmon::cli::table::{parse_theta_table, theta_table, Csv};
use ctxmon::envsim::make_preset;
use ctxmon::eval::{correct_controller_probability, true_regret};

const TINY: &str = r#"[environment]
preset = "tiny_debug"

[learner]
T = 300
e = 25
checkpoint_every = 100

[evaluation]
taus = [0.0, 0.5, 0.9]
episodes = 20
steps = 20
"#;

fn ctxmon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctxmon")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("config.toml");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn learn_smoke() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), TINY);
    let out = tmp.path().join("out");
    let start = Instant::now();
    let o = ctxmon(&["learn", "--config", path(&config), "--out", path(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(start.elapsed() < Duration::from_secs(5));

    let trace = Csv::read(&out.join("trace.csv")).unwrap();
    assert_eq!(trace.header, ["round", "context_id", "controller", "outcome", "score"]);
    assert_eq!(trace.rows.len(), 300);
    let checkpoints = Csv::read(&out.join("checkpoints.csv")).unwrap();
    assert_eq!(checkpoints.header, ["round", "regret", "correct_prob"]);
    assert_eq!(checkpoints.rows.iter().map(|r| r[0].as_str()).collect::<Vec<_>>(), ["100", "200", "300"]);
    let sweep = Csv::read(&out.join("sweep.csv")).unwrap();
    assert_eq!(sweep.rows.len(), 3);
    let theta = parse_theta_table(&Csv::read(&out.join("theta_final.csv")).unwrap(), 5.0).unwrap();
    assert_eq!(theta.len(), 1);
    assert_eq!((theta[0].1.n_controllers(), theta[0].1.dim()), (2, 3));
    assert!(out.join("manifest.toml").exists());
}

#[test]
fn manifest_reruns_the_experiment() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), TINY);
    let first = tmp.path().join("first");
    let second = tmp.path().join("second");
    assert!(ctxmon(&["learn", "--config", path(&config), "--out", path(&first), "--seed", "9"]).status.success());
    let manifest = first.join("manifest.toml");
    let parsed = Config::load(&manifest).unwrap();
    assert_eq!(parsed.learner.seed, 9);
    assert!(ctxmon(&["learn", "--config", path(&manifest), "--out", path(&second)]).status.success());
    for file in ["trace.csv", "checkpoints.csv", "theta_final.csv", "sweep.csv", "manifest.toml"] {
        assert_eq!(
            std::fs::read(first.join(file)).unwrap(),
            std::fs::read(second.join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn seeds_change_the_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), TINY);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(ctxmon(&["learn", "--config", path(&config), "--out", path(&a), "--seed", "1"]).status.success());
    assert!(ctxmon(&["learn", "--config", path(&config), "--out", path(&b), "--seed", "2"]).status.success());
    assert_ne!(std::fs::read(a.join("trace.csv")).unwrap(), std::fs::read(b.join("trace.csv")).unwrap());
}

#[test]
fn missing_rounds_exits_2_naming_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), &TINY.replace("T = 300\n", ""));
    let o = ctxmon(&["learn", "--config", path(&config), "--out", path(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("`T`"), "{stderr}");
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(ctxmon(&["reproduce", "rq9", "--out", "x"]).status.code(), Some(2));
    assert_eq!(ctxmon(&["learn"]).status.code(), Some(2));
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), TINY);
    let o = ctxmon(&["learn", "--config", path(&config), "--out", path(tmp.path()), "--jobs", "0"]);
    assert_eq!(o.status.code(), Some(2));
    let unknown = write_config(tmp.path(), &TINY.replace("tiny_debug", "no_such_preset"));
    let o = ctxmon(&["learn", "--config", path(&unknown), "--out", path(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_of_the_oracle_has_zero_regret() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), TINY);
    let preset = make_preset("tiny_debug").unwrap();
    let oracle = preset.truth.oracle_monitor();
    let theta = tmp.path().join("oracle.csv");
    theta_table(&[(0, &oracle), (1, &oracle)]).write(&theta).unwrap();
    let out = tmp.path().join("eval");
    let o = ctxmon(&["eval", "--config", path(&config), "--theta", path(&theta), "--out", path(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = Csv::read(&out.join("metrics.csv")).unwrap();
    let col = metrics.column("regret").unwrap();
    assert_eq!(metrics.rows.len(), 2);
    assert!(metrics.rows.iter().all(|r| r[col] == "0"));
    assert!(metrics.rows.iter().all(|r| r[metrics.column("correct_prob").unwrap()] == "1"));
}

#[test]
fn eval_rejects_bad_input() {
    let tmp = tempfile::tempdir().unwrap();
    let preset = make_preset("rq1_4ctrl").unwrap();
    let theta = tmp.path().join("rq1.csv");
    theta_table(&[(0, &preset.truth.oracle_monitor())]).write(&theta).unwrap();

    let config = write_config(tmp.path(), TINY);
    let o = ctxmon(&["eval", "--config", path(&config), "--theta", path(&theta), "--out", path(tmp.path())]);
    assert_eq!(o.status.code(), Some(2), "dimension mismatch");

    let empty = TINY.replace("taus = [0.0, 0.5, 0.9]", "taus = []");
    let config = write_config(tmp.path(), &empty.replace("tiny_debug", "rq1_4ctrl"));
    let o = ctxmon(&["eval", "--config", path(&config), "--theta", path(&theta), "--out", path(tmp.path())]);
    assert_eq!(o.status.code(), Some(2), "empty sweep");
}

#[test]
fn stored_monitors_reproduce_their_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), TINY);
    let learned = tmp.path().join("learn");
    let evaluated = tmp.path().join("eval");
    assert!(ctxmon(&["learn", "--config", path(&config), "--out", path(&learned)]).status.success());
    let theta = learned.join("theta_checkpoints.csv");
    let o = ctxmon(&["eval", "--config", path(&config), "--theta", path(&theta), "--out", path(&evaluated)]);
    assert!(o.status.success());
    assert_eq!(
        std::fs::read_to_string(learned.join("checkpoints.csv")).unwrap(),
        std::fs::read_to_string(evaluated.join("metrics.csv")).unwrap()
    );
    assert_eq!(
        std::fs::read(learned.join("sweep.csv")).unwrap(),
        std::fs::read(evaluated.join("sweep.csv")).unwrap()
    );

    // same metrics in process from the parsed table and from a fresh run
    let (cfg, preset) = Config::load(&config).unwrap().resolve().unwrap();
    let (_, trace) = ctxmon::learner::run(&cfg.learner, &preset.truth, &preset.space).unwrap();
    let stored = parse_theta_table(&Csv::read(&theta).unwrap(), 5.0).unwrap();
    assert_eq!(stored.len(), trace.checkpoints.len());
    for ((round, m), cp) in stored.iter().zip(&trace.checkpoints) {
        assert_eq!(*round, cp.round);
        let a = true_regret(m, &preset.truth, &preset.space).unwrap();
        let b = true_regret(&cp.monitor, &preset.truth, &preset.space).unwrap();
        assert!((a - b).abs() <= 1e-12);
        let a = correct_controller_probability(m, &preset.truth, &preset.space).unwrap();
        let b = correct_controller_probability(&cp.monitor, &preset.truth, &preset.space).unwrap();
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn reproduce_writes_a_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("rq3");
    let o = ctxmon(&["reproduce", "rq3", "--out", path(&out), "--seeds", "2", "--jobs", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = Csv::read(&out.join("summary.csv")).unwrap();
    assert_eq!(summary.header, ["criterion", "value", "threshold", "pass"]);
    assert_eq!(summary.rows.len(), 1);
    assert_eq!(Csv::read(&out.join("rq3.csv")).unwrap().rows.len(), 2);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("PASS") || stdout.contains("FAIL"));
}
