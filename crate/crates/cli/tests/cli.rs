use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::io::Write;

fn redp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_redp"))
        .current_dir(dir)
        .env_remove("REDP_SEED")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = redp(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn generate_is_byte_identical() {
    let t = tempfile::tempdir().unwrap();
    let args = |out: &'static str| ["generate", "--domain", "hotel", "--n", "30", "--seed", "7", "--out", out];
    ok(t.path(), &args("a.stories"));
    ok(t.path(), &args("b.stories"));
    assert_eq!(read(t.path(), "a.stories"), read(t.path(), "b.stories"));
    let manifest: serde_json::Value =
        serde_json::from_slice(&read(t.path(), "a.stories.manifest.json")).unwrap();
    assert_eq!(manifest["seeds"], serde_json::json!([7]));
    assert!(manifest["wall_clock_seconds"].as_f64().unwrap() >= 0.0);
}

#[test]
fn seed_falls_back_to_env() {
    let t = tempfile::tempdir().unwrap();
    ok(t.path(), &["generate", "--domain", "restaurant", "--n", "5", "--seed", "9", "--out", "a.stories"]);
    let out = Command::new(env!("CARGO_BIN_EXE_redp"))
        .current_dir(t.path())
        .env("REDP_SEED", "9")
        .args(["generate", "--domain", "restaurant", "--n", "5", "--out", "b.stories"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(read(t.path(), "a.stories"), read(t.path(), "b.stories"));
}

#[test]
fn unknown_domain_is_usage_error() {
    let t = tempfile::tempdir().unwrap();
    let out = redp(t.path(), &["generate", "--domain", "spaceport", "--out", "x.stories"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("hotel") && err.contains("restaurant"), "{err}");
    assert!(!t.path().join("x.stories").exists());
}

#[test]
fn missing_domain_file_is_io_error() {
    let t = tempfile::tempdir().unwrap();
    ok(t.path(), &["generate", "--handcrafted", "--out", "bundle"]);
    let out = redp(
        t.path(),
        &["train", "--policy", "redp", "--data", "bundle/toy.stories", "--domain", "missing.json", "--out", "m"],
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn train_eval_round_trip_is_deterministic() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    ok(d, &["generate", "--handcrafted", "--out", "bundle"]);
    std::fs::write(d.join("cfg.json"), r#"{"redp": {"mu_pos": 0.7}}"#).unwrap();
    for out in ["m1", "m2"] {
        ok(
            d,
            &[
                "train", "--policy", "redp", "--data", "bundle/toy.stories", "--config", "cfg.json",
                "--epochs", "5", "--seed", "3", "--out", out,
            ],
        );
    }
    assert_eq!(read(d, "m1/checkpoint.json"), read(d, "m2/checkpoint.json"));
    assert_eq!(read(d, "m1/train_log.jsonl"), read(d, "m2/train_log.jsonl"));
    let manifest: serde_json::Value = serde_json::from_slice(&read(d, "m1/manifest.json")).unwrap();
    assert_eq!(manifest["config"]["policy_config"]["redp"]["mu_pos"], 0.7);
    assert_eq!(manifest["config"]["policy_config"]["redp"]["seed"], 3);

    for out in ["e1", "e2"] {
        let stdout = ok(d, &["eval", "--checkpoint", "m1/checkpoint.json", "--data", "bundle/toy.stories", "--out", out]);
        let first = stdout.lines().next().unwrap();
        let (a, b) = first.split_once('/').unwrap();
        assert_eq!(b, "1");
        assert!(a == "0" || a == "1");
    }
    assert_eq!(read(d, "e1/report.json"), read(d, "e2/report.json"));
}

#[test]
fn lstm_config_section_is_used() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    ok(d, &["generate", "--handcrafted", "--out", "bundle"]);
    std::fs::write(d.join("cfg.json"), r#"{"lstm": {"rnn_units": 5}}"#).unwrap();
    ok(
        d,
        &["train", "--policy", "lstm_lt", "--data", "bundle/toy.stories", "--config", "cfg.json", "--epochs", "2", "--out", "m"],
    );
    let ckpt: serde_json::Value = serde_json::from_slice(&read(d, "m/checkpoint.json")).unwrap();
    assert_eq!(ckpt["config"]["rnn_units"], 5);
    assert_eq!(ckpt["config"]["prev_action_encoding"], "lt");
}

#[test]
fn bad_config_is_usage_error() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    ok(d, &["generate", "--handcrafted", "--out", "bundle"]);
    std::fs::write(d.join("cfg.json"), r#"{"redp": {"mu_pos": 1.5}}"#).unwrap();
    let out = redp(d, &["train", "--policy", "redp", "--data", "bundle/toy.stories", "--config", "cfg.json", "--out", "m"]);
    assert_eq!(out.status.code(), Some(2));
    std::fs::write(d.join("cfg.json"), r#"{"redp": {"learning_rat": 1}}"#).unwrap();
    let out = redp(d, &["train", "--policy", "redp", "--data", "bundle/toy.stories", "--config", "cfg.json", "--out", "m"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn divergence_exits_numeric() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    ok(d, &["generate", "--handcrafted", "--out", "bundle"]);
    std::fs::write(d.join("cfg.json"), r#"{"lstm": {"learning_rate": 1e308}}"#).unwrap();
    let out = redp(
        d,
        &["train", "--policy", "lstm_bin", "--data", "bundle/cooperative_hotel.stories", "--config", "cfg.json", "--epochs", "50", "--out", "m"],
    );
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn curve_output_is_independent_of_jobs() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    let curve = |jobs: &str, out: &str| {
        ok(
            d,
            &[
                "--jobs", jobs, "curve", "--policy", "lstm_bin", "--runs", "2", "--fractions", "0,4",
                "--epochs", "3", "--out", out,
            ],
        )
    };
    let table = curve("1", "c1");
    curve("2", "c2");
    assert_eq!(read(d, "c1/curve.jsonl"), read(d, "c2/curve.jsonl"));
    let lines: Vec<String> = String::from_utf8(read(d, "c1/curve.jsonl"))
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    assert_eq!(lines.len(), 2);
    let p: serde_json::Value = serde_json::from_str(&lines[1]).unwrap();
    assert_eq!(p["point"]["fraction"], 4);
    assert_eq!(p["point"]["runs"], 2);
    assert!(table.contains("fraction"));

    let out = redp(d, &["curve", "--policy", "redp", "--fractions", "79", "--out", "c3"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ablate_runs_selected_arms() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    let stdout = ok(
        d,
        &[
            "ablate", "--arms", "full,no_attention", "--runs", "1", "--fractions", "0", "--epochs", "1",
            "--out", "a",
        ],
    );
    assert!(stdout.contains("no_attention"));
    let text = String::from_utf8(read(d, "a/ablation.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 2);
    let out = redp(d, &["ablate", "--arms", "everything", "--out", "b"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn babi_pipeline() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    ok(d, &["generate", "--babi-task5", "--n", "20", "--seed", "1", "--out", "task5.txt"]);
    let summary = ok(d, &["babi", "--task5", "task5.txt", "--out", "conv"]);
    assert!(summary.starts_with("20 dialogues"), "{summary}");
    ok(
        d,
        &[
            "train", "--policy", "lstm_lt", "--data", "conv/dialogues.stories", "--domain", "conv/domain.json",
            "--epochs", "2", "--out", "m",
        ],
    );
    let stdout = ok(d, &["eval", "--checkpoint", "m/checkpoint.json", "--data", "conv/dialogues.stories", "--out", "e"]);
    assert!(stdout.lines().next().unwrap().ends_with("/20"));

    std::fs::write(d.join("bad.txt"), "1 hello\thello what can i help you with today\n2 pizza?\tsure\n").unwrap();
    let out = redp(d, &["babi", "--task5", "bad.txt", "--out", "conv2"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn export_attention_writes_records() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    ok(d, &["generate", "--handcrafted", "--out", "bundle"]);
    ok(d, &["train", "--policy", "redp", "--data", "bundle/toy.stories", "--epochs", "2", "--out", "m"]);
    ok(d, &["export-attention", "--checkpoint", "m/checkpoint.json", "--data", "bundle/toy.stories", "--out", "att"]);
    let text = String::from_utf8(read(d, "att/toy_hotel.attention.jsonl")).unwrap();
    for line in text.lines() {
        let r: serde_json::Value = serde_json::from_str(line).unwrap();
        let sum = |k: &str| r[k].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum::<f64>();
        assert!((sum("user_alignments") - 1.0).abs() < 1e-9);
        let sys = sum("system_alignments");
        assert!(r["step"] == 0 || (sys - 1.0).abs() < 1e-9);
    }
    let out = redp(
        d,
        &["export-attention", "--checkpoint", "m/checkpoint.json", "--data", "bundle/toy.stories", "--dialogue", "nope", "--out", "att2"],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn chat_quits_cleanly() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    ok(d, &["generate", "--handcrafted", "--out", "bundle"]);
    ok(d, &["train", "--policy", "lstm_bin", "--data", "bundle/toy.stories", "--epochs", "2", "--out", "m"]);
    let mut child = Command::new(env!("CARGO_BIN_EXE_redp"))
        .current_dir(d)
        .args(["chat", "--checkpoint", "m/checkpoint.json"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"inform{\"price\":\nrequest_hotel\n:quit\n")
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("error:"));
    assert!(text.contains("- "));
}

#[test]
fn bootstrap_yields_oracle_labels() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path();
    ok(d, &["generate", "--handcrafted", "--out", "bundle"]);
    ok(d, &["train", "--policy", "lstm_bin", "--data", "bundle/toy.stories", "--epochs", "2", "--out", "m"]);
    let base = ["generate", "--domain", "hotel", "--n", "10", "--seed", "4"];
    ok(d, &[&base[..], &["--out", "plain.stories"]].concat());
    let stdout = ok(d, &[&base[..], &["--bootstrap", "m/checkpoint.json", "--out", "boot.stories"]].concat());
    assert!(stdout.contains("action labels corrected"), "{stdout}");
    assert_eq!(read(d, "plain.stories"), read(d, "boot.stories"));
    let manifest: serde_json::Value = serde_json::from_slice(&read(d, "boot.stories.manifest.json")).unwrap();
    assert!(manifest["config"]["bootstrap"]["corrected"].as_u64().unwrap() > 0);
}
