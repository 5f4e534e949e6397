use std::path::{Path, PathBuf};
use std::process::Command;

use tempfile::TempDir;

const TINY_CONFIG: &str = r#"{
  "dataset": {"n": 600},
  "held_out": {"n": 200},
  "model": {"hidden": 16, "depth": 1, "res_blocks": 0},
  "train": {"steps": 30, "batch_size": 32, "log_every": 10, "eval_every": 15, "eval_samples": 100, "eval_steps": 10},
  "sampler": {"steps": 10}
}"#;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

impl Run {
    fn field(&self, key: &str) -> String {
        self.stdout
            .lines()
            .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(':')))
            .unwrap_or_else(|| panic!("no `{key}` in {}", self.stdout))
            .trim()
            .to_string()
    }
}

fn rnoise(dir: &Path, args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_rnoise"))
        .args(args)
        .current_dir(dir)
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .env_remove("RNOISE_WORKERS")
        .output()
        .unwrap();
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

fn ok(dir: &Path, args: &[&str]) -> Run {
    let r = rnoise(dir, args);
    assert_eq!(r.code, 0, "rnoise {args:?}: {}", r.stderr);
    r
}

fn workspace() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("config.json"), TINY_CONFIG).unwrap();
    dir
}

fn train_rf(dir: &Path, extra: &[&str]) -> PathBuf {
    let mut args = vec!["train", "--config", "config.json"];
    args.extend_from_slice(extra);
    PathBuf::from(ok(dir, &args).field("checkpoint"))
}

fn log_body(path: &Path) -> Vec<String> {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines().filter(|l| !l.starts_with('#')).map(String::from).collect()
}

#[test]
fn zero_steps_writes_initial_checkpoint_and_header_only_log() {
    let dir = workspace();
    let r = ok(dir.path(), &["train", "--config", "config.json", "--steps", "0"]);
    let ck: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(r.field("checkpoint"))).unwrap()).unwrap();
    assert_eq!(ck["step"], 0);
    assert_eq!(log_body(&dir.path().join(r.field("log"))), vec!["step,loss,eval_metric,seconds"]);
}

#[test]
fn delta_kind_on_rf_checkpoint_is_a_contract_violation() {
    let dir = workspace();
    let ck = train_rf(dir.path(), &[]);
    let r = rnoise(dir.path(), &["sample", "--from", ck.to_str().unwrap(), "--kind", "delta_rn_sde", "-n", "10"]);
    assert_eq!(r.code, 5, "{}", r.stderr);
}

#[test]
fn guidance_on_unconditional_checkpoint_is_a_contract_violation() {
    let dir = workspace();
    let ck = train_rf(dir.path(), &[]);
    let r = rnoise(dir.path(), &["sample", "--from", ck.to_str().unwrap(), "--cfg", "1.5", "-n", "10"]);
    assert_eq!(r.code, 5, "{}", r.stderr);
}

#[test]
fn guidance_on_conditional_checkpoint_is_accepted() {
    let dir = workspace();
    let ck = train_rf(dir.path(), &["--conditional"]);
    let ck = ck.to_str().unwrap();
    ok(dir.path(), &["sample", "--from", ck, "--cfg", "1.5", "--label", "3", "-n", "20"]);
    let text = std::fs::read_to_string(dir.path().join("samples.csv")).unwrap();
    assert_eq!(text.lines().next(), Some("x0,x1,label"));
    assert!(text.lines().skip(1).all(|l| l.ends_with(",3")));
    ok(dir.path(), &["sample", "--from", ck, "--cfg", "1.5", "-n", "20", "--out", "mixed.csv"]);
}

#[test]
fn missing_or_corrupt_checkpoint_exits_4() {
    let dir = workspace();
    assert_eq!(rnoise(dir.path(), &["sample", "--from", "nope.json", "-n", "5"]).code, 4);
    std::fs::write(dir.path().join("bad.json"), "{\"format_version\": 1").unwrap();
    assert_eq!(rnoise(dir.path(), &["sample", "--from", "bad.json", "-n", "5"]).code, 4);
    assert_eq!(rnoise(dir.path(), &["finetune", "--config", "config.json", "--from", "nope.json"]).code, 4);
}

#[test]
fn bad_config_exits_2() {
    let dir = workspace();
    std::fs::write(dir.path().join("unknown.json"), r#"{"train": {"stepz": 3}}"#).unwrap();
    std::fs::write(dir.path().join("invalid.json"), r#"{"train": {"lr": -1.0}}"#).unwrap();
    std::fs::write(dir.path().join("garbled.json"), "{").unwrap();
    for name in ["unknown.json", "invalid.json", "garbled.json"] {
        let r = rnoise(dir.path(), &["train", "--config", name]);
        assert_eq!(r.code, 2, "{name}: {}", r.stderr);
    }
}

#[test]
fn finetune_mode_through_train_is_rejected() {
    let dir = workspace();
    assert_eq!(rnoise(dir.path(), &["train", "--config", "config.json", "--mode", "finetune"]).code, 2);
}

#[test]
fn eval_dimension_mismatch_exits_5() {
    let dir = workspace();
    std::fs::write(dir.path().join("three.csv"), "x0,x1,x2\n0,0,0\n1,1,1\n").unwrap();
    let r = rnoise(dir.path(), &["eval", "--gen", "three.csv", "--ref", "gaussian_ring:n=50"]);
    assert_eq!(r.code, 5, "{}", r.stderr);
}

#[test]
fn eval_of_identical_sets_is_zero() {
    let dir = workspace();
    std::fs::write(dir.path().join("pts.csv"), "x0,x1\n0,1\n2,-1\n0.5,0.25\n").unwrap();
    let r = ok(dir.path(), &["eval", "--gen", "pts.csv", "--ref", "pts.csv", "--out", "m.csv"]);
    let mut lines = r.stdout.lines();
    assert_eq!(lines.next(), Some("metric,value,n_a,n_b,seed"));
    for line in lines {
        let value: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(value, 0.0, "{line}");
    }
    ok(dir.path(), &["eval", "--gen", "pts.csv", "--ref", "pts.csv", "--out", "m.csv"]);
    let appended = std::fs::read_to_string(dir.path().join("m.csv")).unwrap();
    assert_eq!(appended.matches("metric,value").count(), 1);
}

#[test]
fn plot_handles_empty_samples_and_rejects_other_dimensions() {
    let dir = workspace();
    std::fs::write(dir.path().join("empty.csv"), "x0,x1\n").unwrap();
    ok(dir.path(), &["plot", "--samples", "empty.csv", "--out", "empty.svg"]);
    let svg = std::fs::read_to_string(dir.path().join("empty.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    std::fs::write(dir.path().join("one.csv"), "x0\n1\n2\n").unwrap();
    assert_eq!(rnoise(dir.path(), &["plot", "--samples", "one.csv"]).code, 5);
}

#[test]
fn finetune_accepts_every_family_and_block_count() {
    let dir = workspace();
    let rf = train_rf(dir.path(), &[]);
    let rf = rf.to_str().unwrap();
    let mut ratios = Vec::new();
    for blocks in ["0", "1", "2", "4"] {
        let r = ok(
            dir.path(),
            &["finetune", "--config", "config.json", "--from", rf, "--steps", "5", "--extra-blocks", blocks],
        );
        let log = std::fs::read_to_string(dir.path().join(r.field("log"))).unwrap();
        let ratio: f64 = log
            .lines()
            .find_map(|l| l.strip_prefix("# added_param_ratio="))
            .expect("ratio header")
            .parse()
            .unwrap();
        ratios.push(ratio);
    }
    assert!(ratios.windows(2).all(|w| w[0] < w[1]), "{ratios:?}");
    for family in ["gaussian", "gumbel", "uniform"] {
        let r = ok(dir.path(), &["finetune", "--config", "config.json", "--from", rf, "--steps", "5", "--family", family]);
        let log = std::fs::read_to_string(dir.path().join(r.field("log"))).unwrap();
        assert!(log.contains(&format!("# noise_family={family}")), "{log}");
    }
}

#[test]
fn finetune_step_zero_eval_matches_backbone_eval() {
    let dir = workspace();
    let rf = ok(dir.path(), &["train", "--config", "config.json"]);
    let ft = ok(
        dir.path(),
        &["finetune", "--config", "config.json", "--from", &rf.field("checkpoint"), "--steps", "15"],
    );
    let first_eval = log_body(&dir.path().join(ft.field("log")))[1].split(',').nth(2).unwrap().to_string();
    assert_eq!(first_eval.parse::<f64>().unwrap(), rf.field("final_eval_sliced_w2").parse::<f64>().unwrap());
}

#[test]
fn entropy_of_fresh_finetune_has_zero_gain() {
    let dir = workspace();
    let rf = train_rf(dir.path(), &[]);
    let ft = ok(
        dir.path(),
        &["finetune", "--config", "config.json", "--from", rf.to_str().unwrap(), "--steps", "0"],
    );
    let r = ok(dir.path(), &["entropy", "--from", &ft.field("checkpoint"), "--data", "gaussian_ring:n=300", "-n", "200", "-m", "2"]);
    let report: serde_json::Value = serde_json::from_str(r.stdout.trim()).unwrap();
    assert_eq!(report["mi_gain"].as_f64(), Some(0.0));
    assert_eq!(report["task_entropy"], report["conditional_entropy"]);
}

#[test]
fn ledger_requires_delta_sampler_and_reports_noise() {
    let dir = workspace();
    let rf = train_rf(dir.path(), &[]);
    let rf = rf.to_str().unwrap();
    assert_eq!(rnoise(dir.path(), &["sample", "--from", rf, "-n", "5", "--trajectories", "t.csv", "--ledger"]).code, 5);
    let ft = ok(dir.path(), &["finetune", "--config", "config.json", "--from", rf, "--steps", "20"]);
    let r = ok(
        dir.path(),
        &["sample", "--from", &ft.field("checkpoint"), "--kind", "delta_rn_ode", "--steps", "10", "-n", "8",
          "--trajectories", "t.csv", "--ledger"],
    );
    let text = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
    assert_eq!(text.lines().next(), Some("traj_id,step,t,x0,x1,noise0,noise1,cum0,cum1"));
    assert_eq!(text.lines().count(), 1 + 8 * 12);
    let norm: f64 = r.field("mean_cumulative_noise_norm").parse().unwrap();
    assert!(norm.is_finite() && norm >= 0.0);
}

#[test]
fn worker_count_does_not_change_samples() {
    let dir = workspace();
    let rf = train_rf(dir.path(), &[]);
    let rf = rf.to_str().unwrap();
    ok(dir.path(), &["sample", "--from", rf, "--kind", "sde", "-n", "700", "--out", "one.csv"]);
    let out = Command::new(env!("CARGO_BIN_EXE_rnoise"))
        .args(["sample", "--from", rf, "--kind", "sde", "-n", "700", "--out", "four.csv"])
        .current_dir(dir.path())
        .env("RNOISE_WORKERS", "4")
        .output()
        .unwrap();
    assert!(out.status.success());
    let read = |n: &str| std::fs::read(dir.path().join(n)).unwrap();
    assert_eq!(read("one.csv"), read("four.csv"));
}
