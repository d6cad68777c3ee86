use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use discorel::corpus::LoadOptions;
use discorel::eval::eval_multiclass;
use discorel::{Dataset, Model, WordEmbeddings};
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_discorel"))
        .args(args)
        .output()
        .expect("spawn discorel")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Prepared {
    dir: TempDir,
    data: PathBuf,
    emb: PathBuf,
}

fn prepared(pairs: usize) -> Prepared {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--out-dir", s(d), "--pairs", &pairs.to_string(), "--K", "8", "--seed", "3"]);
    let data = d.join("prep.jsonl");
    let emb = d.join("std.vec");
    ok(&[
        "prepare",
        "--instances",
        s(&d.join("synth.jsonl")),
        "--out",
        s(&data),
        "--embeddings",
        s(&d.join("synth.vec")),
        "--embeddings-out",
        s(&emb),
    ]);
    Prepared { dir, data, emb }
}

fn write_config(dir: &Path) -> PathBuf {
    let cfg = dir.join("cfg.toml");
    std::fs::write(
        &cfg,
        "[train]\nk = 8\nepochs = 3\nmode = \"full\"\n\n[train.hyper.upward]\neta = 0.05\n",
    )
    .unwrap();
    cfg
}

#[test]
fn pipeline_round_trip() {
    let p = prepared(20);
    let d = p.dir.path();
    let cfg = write_config(d);
    let model = d.join("m.json");
    let log = d.join("log.tsv");
    ok(&[
        "train",
        "--config",
        s(&cfg),
        "--data",
        s(&p.data),
        "--embeddings",
        s(&p.emb),
        "--model",
        s(&model),
        "--log",
        s(&log),
    ]);
    let log = std::fs::read_to_string(&log).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert!(log.lines().all(|l| l.split('\t').count() == 3));

    let preds = ok(&["predict", "--model", s(&model), "--data", s(&p.data), "--embeddings", s(&p.emb)]);
    let ds = Dataset::load(&p.data, LoadOptions::default()).unwrap();
    assert_eq!(preds.lines().count(), ds.len());
    assert!(preds.lines().all(|l| l == "subject" || l == "object"));

    let report = ok(&[
        "eval",
        "--model",
        s(&model),
        "--data",
        s(&p.data),
        "--embeddings",
        s(&p.emb),
        "--protocol",
        "multiclass",
    ]);
    let m = Model::load(&model).unwrap();
    let emb = WordEmbeddings::load(&p.emb, None).unwrap();
    let lib = eval_multiclass(&m, &ds, &emb).unwrap();
    assert_eq!(report, format!("{lib}"));
    assert!(report.starts_with("protocol\tmulticlass\n"));
}

#[test]
fn binary_eval_and_training() {
    let p = prepared(20);
    let d = p.dir.path();
    let model = d.join("b.json");
    let common = ["--data", s(&p.data), "--embeddings", s(&p.emb)];
    let mut args = vec!["train", "--model", s(&model), "--K", "8", "--mode", "upward", "--positive", "subject"];
    args.extend(common);
    ok(&args);
    let mut args = vec!["eval", "--model", s(&model), "--protocol", "binary", "--positive", "subject"];
    args.extend(common);
    let out = ok(&args);
    assert!(out.contains("\npositive\tsubject\n"));
    assert!(out.lines().any(|l| l.starts_with("f1\t")));
}

#[test]
fn same_seed_same_model() {
    let p = prepared(10);
    let d = p.dir.path();
    let cfg = write_config(d);
    let models: Vec<String> = ["a.json", "b.json"]
        .iter()
        .map(|name| {
            let path = d.join(name);
            ok(&[
                "train",
                "--config",
                s(&cfg),
                "--data",
                s(&p.data),
                "--embeddings",
                s(&p.emb),
                "--model",
                s(&path),
                "--seed",
                "11",
            ]);
            std::fs::read_to_string(path).unwrap()
        })
        .collect();
    assert_eq!(models[0], models[1]);
}

#[test]
fn empty_input_gives_empty_output() {
    let p = prepared(4);
    let d = p.dir.path();
    let model = d.join("m.json");
    ok(&["train", "--data", s(&p.data), "--embeddings", s(&p.emb), "--model", s(&model), "--K", "8", "--mode", "upward"]);
    let empty = d.join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let out = ok(&["predict", "--model", s(&model), "--data", s(&empty), "--embeddings", s(&p.emb)]);
    assert!(out.is_empty());
}

#[test]
fn malformed_data_exits_one_with_line() {
    let p = prepared(4);
    let d = p.dir.path();
    let bad = d.join("bad.jsonl");
    std::fs::write(&bad, "{\"id\": \"x\"\n").unwrap();
    let out = run(&["train", "--data", s(&bad), "--embeddings", s(&p.emb), "--model", s(&d.join("m.json"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 1"), "{err}");
}

#[test]
fn dimension_mismatch_exits_one() {
    let p = prepared(4);
    let d = p.dir.path();
    let out = run(&[
        "train",
        "--data",
        s(&p.data),
        "--embeddings",
        s(&p.emb),
        "--model",
        s(&d.join("m.json")),
        "--K",
        "9",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(run(&["bogus"]).status.code(), Some(2));
    let out = run(&["eval", "--model", "m.json", "--data", "x", "--embeddings", "y", "--protocol", "binary"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(run(&["gradcheck", "--mode", "sideways"]).status.code(), Some(2));
}

#[test]
fn gradcheck_passes() {
    let out = ok(&["gradcheck", "--K", "5", "--trials", "25"]);
    let last = out.lines().rev().find(|l| !l.is_empty()).unwrap();
    assert_eq!(last, "ok");
    let err: f64 = out
        .lines()
        .find_map(|l| l.strip_prefix("max_rel_err\t"))
        .unwrap()
        .parse()
        .unwrap();
    assert!(err < 1e-4);
}

#[test]
fn unknown_config_key_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "[train]\nepoch = 3\n").unwrap();
    let out = run(&["train", "--config", s(&cfg), "--data", "x", "--embeddings", "y", "--model", "z"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epoch"));
}
