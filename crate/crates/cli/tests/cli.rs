use std::path::Path;
use std::process::{Command, Output};

fn av2v(dir: &Path, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_av2v"));
    for (k, _) in std::env::vars().filter(|(k, _)| k.starts_with("AV2V_")) {
        cmd.env_remove(k);
    }
    cmd.current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = av2v(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

const SMALL: &str = r#"{"world": {"samples_per_family": 4}, "model": {"dim": 16, "n_enc_layers": 1, "n_dec_layers": 1},
    "train": {"schedule": {"batch_size": 8}, "pretrain_steps": 2, "finetune_steps": 2}}"#;

#[test]
fn gen_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("c.json"), SMALL).unwrap();
    ok(d, &["--config", "c.json", "--seed", "3", "gen", "--out-dir", "a"]);
    ok(d, &["--config", "c.json", "--seed", "3", "gen", "--out-dir", "b"]);
    ok(d, &["--config", "c.json", "--seed", "4", "gen", "--out-dir", "c"]);
    let read = |p: &str| std::fs::read(d.join(p)).unwrap();
    assert_eq!(read("a/reports.jsonl"), read("b/reports.jsonl"));
    assert_eq!(read("a/artifacts.jsonl"), read("b/artifacts.jsonl"));
    assert_ne!(read("a/reports.jsonl"), read("c/reports.jsonl"));
    assert_eq!(String::from_utf8(read("a/reports.jsonl")).unwrap().lines().count(), 80);
}

#[test]
fn embedded_report_is_its_own_nearest_neighbor() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("c.json"), SMALL).unwrap();
    let c = ["--config", "c.json"];
    let run = |rest: &[&str]| ok(d, &c.iter().chain(rest).copied().collect::<Vec<_>>());
    run(&["gen", "--out-dir", "data"]);
    let corpus = ["--reports", "data/reports.jsonl", "--roster", "data/roster.txt"];
    let with = |head: &[&'static str], tail: &[&'static str]| -> Vec<&'static str> {
        head.iter().chain(corpus.iter()).chain(tail).copied().collect()
    };
    run(&with(&["vocab"], &["--out", "vocab.txt"]));
    assert!(d.join("vocab.adaptive.json").exists());
    run(&with(&["pretrain"], &["--vocab", "vocab.txt", "--out", "m.ckpt"]));
    let metrics = std::fs::read_to_string(d.join("m.metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
    assert!(metrics.contains("\"mtp_loss\""));
    run(&with(&["embed", "--checkpoint", "m.ckpt"], &["--out", "v.bin"]));
    run(&["index", "--vectors", "v.bin", "--out", "i.bin"]);
    let out = run(&["--k", "1", "query", "--vectors", "v.bin", "--index", "i.bin", "--ids", "s000000,s000005"]);
    let lines: Vec<serde_json::Value> =
        String::from_utf8(out.stdout).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    for (line, id) in lines.iter().zip(["s000000", "s000005"]) {
        assert_eq!(line["query"], id);
        assert_eq!(line["neighbors"][0]["id"], id);
        assert_eq!(line["neighbors"][0]["distance"], 0.0);
    }
    let out = run(&["eval-knn", "--vectors", "v.bin", "--truth", "data/truth.jsonl"]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["metrics"]["one_nn_accuracy"].as_f64().is_some());
    assert_eq!(report["vectors_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn missing_input_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = av2v(dir.path(), &["index"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error [Config]"));
}

#[test]
fn unreadable_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = av2v(dir.path(), &["index", "--vectors", "nope.bin", "--out", "i.bin"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn malformed_reports_are_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("r.jsonl"), "{not json\n").unwrap();
    std::fs::write(d.join("roster.txt"), "A\n").unwrap();
    let out = av2v(d, &["ingest-check", "--reports", "r.jsonl", "--roster", "roster.txt"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn flag_beats_environment_beats_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("c.json"), r#"{"seed": 1, "world": {"samples_per_family": 2}}"#).unwrap();
    let gen = |extra_env: Option<&str>, flag: Option<&str>, out: &str| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_av2v"));
        cmd.current_dir(d).env_remove("AV2V_SEED").args(["--config", "c.json"]);
        if let Some(s) = extra_env {
            cmd.env("AV2V_SEED", s);
        }
        if let Some(s) = flag {
            cmd.args(["--seed", s]);
        }
        assert!(cmd.args(["gen", "--out-dir", out]).output().unwrap().status.success());
        std::fs::read(d.join(out).join("reports.jsonl")).unwrap()
    };
    let config_only = gen(None, None, "a");
    let seed1 = gen(None, Some("1"), "b");
    let env2 = gen(Some("2"), None, "c");
    let seed2 = gen(None, Some("2"), "d");
    let env2_flag1 = gen(Some("2"), Some("1"), "e");
    assert_eq!(config_only, seed1);
    assert_eq!(env2, seed2);
    assert_eq!(env2_flag1, seed1);
    assert_ne!(seed1, seed2);
}
