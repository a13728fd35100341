//! End-to-end runs of the `convdr` binary on a tiny benchmark.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn convdr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_convdr"))
        .args(args)
        .output()
        .expect("spawn convdr")
}

fn ok(args: &[&str]) -> Output {
    let out = convdr(args);
    assert!(
        out.status.success(),
        "convdr {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen_tiny(dir: &Path, seed: &str) {
    ok(&[
        "gen-data",
        "--out",
        s(dir),
        "--seed",
        seed,
        "--n-topics",
        "20",
        "--distractor-docs",
        "60",
    ]);
}

#[test]
fn help_and_usage_errors_have_distinct_exit_codes() {
    assert_eq!(convdr(&["--help"]).status.code(), Some(0));
    assert_eq!(convdr(&["--version"]).status.code(), Some(0));
    assert_eq!(convdr(&[]).status.code(), Some(1));
    assert_eq!(convdr(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(convdr(&["eval", "--run"]).status.code(), Some(1));
}

#[test]
fn missing_or_malformed_inputs_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing");
    let out = convdr(&[
        "eval",
        "--run",
        s(&missing),
        "--qrels",
        s(&missing),
        "--metric",
        "ndcg@3",
    ]);
    assert_eq!(out.status.code(), Some(2));

    let run = dir.path().join("bad.run");
    fs::write(&run, "q_1 Q0 d1 one 1.0 x\n").unwrap();
    let qrels = dir.path().join("qrels.txt");
    fs::write(&qrels, "q_1 0 d1 1\n").unwrap();
    let out = convdr(&["eval", "--run", s(&run), "--qrels", s(&qrels), "--metric", "ndcg@3"]);
    assert_eq!(out.status.code(), Some(2));

    fs::write(&run, "q_1 Q0 d1 1 1.0 x\n").unwrap();
    let out = convdr(&["eval", "--run", s(&run), "--qrels", s(&qrels), "--metric", "bogus@3"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn eval_and_fuse_on_hand_written_runs() {
    let dir = tempfile::tempdir().unwrap();
    let qrels = dir.path().join("qrels.txt");
    fs::write(&qrels, "q_1 0 x 1\nq_1 0 z 2\n").unwrap();
    let a = dir.path().join("a.run");
    let b = dir.path().join("b.run");
    fs::write(&a, "q_1 Q0 x 1 2.0 a\nq_1 Q0 y 2 1.0 a\n").unwrap();
    fs::write(&b, "q_1 Q0 x 1 5.0 b\nq_1 Q0 z 2 4.0 b\n").unwrap();

    let out = ok(&[
        "eval",
        "--run",
        s(&a),
        "--qrels",
        s(&qrels),
        "--metric",
        "mrr",
        "--metric",
        "recall@5",
    ]);
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["mrr"]["mean"], 1.0);
    assert_eq!(json["recall@5"]["mean"], 0.5);

    let fused = dir.path().join("f.run");
    ok(&["fuse", "--run", s(&a), "--run", s(&b), "--out", s(&fused)]);
    let text = fs::read_to_string(&fused).unwrap();
    let first: Vec<&str> = text.lines().next().unwrap().split_whitespace().collect();
    assert_eq!(&first[..4], ["q_1", "Q0", "x", "1"]);
    assert!((first[4].parse::<f64>().unwrap() - 2.0 / 61.0).abs() < 1e-12);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("gen.json");
    fs::write(&cfg, r#"{"n_topics": 10, "distractor_docs": 30, "p_omit": 0.0}"#).unwrap();
    let a = dir.path().join("a");
    ok(&["gen-data", "--out", s(&a), "--config", s(&cfg), "--n-topics", "12"]);
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("gen_config.json")).unwrap()).unwrap();
    assert_eq!(meta["config"]["n_topics"], 12);
    assert_eq!(meta["config"]["distractor_docs"], 30);
    assert_eq!(meta["config"]["p_omit"], 0.0);

    fs::write(&cfg, r#"{"n_topics": 10, "typo_field": 1}"#).unwrap();
    let out = convdr(&["gen-data", "--out", s(&dir.path().join("b")), "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gen_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    gen_tiny(&a, "3");
    gen_tiny(&b, "3");
    gen_tiny(&c, "4");
    for f in [
        "vocab.tsv",
        "collection.tsv",
        "train.jsonl",
        "dev.jsonl",
        "test.jsonl",
        "qrels.txt",
        "gen_config.json",
    ] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f} differs"
        );
    }
    assert_ne!(
        fs::read(a.join("collection.tsv")).unwrap(),
        fs::read(c.join("collection.tsv")).unwrap()
    );
}

/// Teacher, index, student, retrieval, evaluation and analyses through the binary.
#[test]
fn pipeline_runs_and_reproduces() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    let data = p("data");
    gen_tiny(&data, "1");

    let run_pipeline = |tag: &str| -> Vec<Vec<u8>> {
        let teacher = p(&format!("teacher{tag}.ckpt"));
        let index = p(&format!("index{tag}.bin"));
        let student = p(&format!("kd{tag}.ckpt"));
        let run = p(&format!("kd{tag}.run"));
        let log = p(&format!("kd{tag}.jsonl"));
        ok(&[
            "train-teacher",
            "--data",
            s(&data),
            "--out",
            s(&teacher),
            "--epochs",
            "1",
            "--seed",
            "2",
        ]);
        ok(&[
            "encode-corpus",
            "--data",
            s(&data),
            "--encoder",
            s(&teacher),
            "--out",
            s(&index),
        ]);
        ok(&[
            "train-convdr",
            "--data",
            s(&data),
            "--teacher",
            s(&teacher),
            "--index",
            s(&index),
            "--out",
            s(&student),
            "--mode",
            "kd",
            "--epochs",
            "1",
            "--seed",
            "2",
            "--log",
            s(&log),
        ]);
        ok(&[
            "retrieve",
            "--data",
            s(&data),
            "--split",
            "dev",
            "--encoder",
            s(&student),
            "--index",
            s(&index),
            "--out",
            s(&run),
        ]);
        [teacher, index, student, run, log]
            .iter()
            .map(|f| fs::read(f).unwrap())
            .collect()
    };
    let first = run_pipeline("a");
    let second = run_pipeline("b");
    assert_eq!(first, second);

    let qrels = data.join("qrels.txt");
    let run = p("kda.run");
    let out = ok(&[
        "eval",
        "--run",
        s(&run),
        "--qrels",
        s(&qrels),
        "--metric",
        "ndcg@3",
        "--metric",
        "hole@10",
    ]);
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let ndcg = json["ndcg@3"]["mean"].as_f64().unwrap();
    assert!(json["hole@10"]["mean"].as_f64().unwrap() <= 1.0);
    assert!((0.0..=1.0).contains(&ndcg));

    let bm25 = p("bm25.run");
    ok(&[
        "retrieve",
        "--data",
        s(&data),
        "--retriever",
        "bm25",
        "--query-source",
        "oracle",
        "--out",
        s(&bm25),
    ]);
    let out = ok(&[
        "compare",
        "--run-a",
        s(&run),
        "--run-b",
        s(&bm25),
        "--qrels",
        s(&qrels),
        "--iterations",
        "200",
    ]);
    let cmp: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let p_value = cmp["p_value"].as_f64().unwrap();
    assert!(p_value > 0.0 && p_value <= 1.0);
    let bad = convdr(&["retrieve", "--data", s(&data), "--retriever", "bm25", "--out", s(&bm25)]);
    assert_eq!(bad.status.code(), Some(1));

    let curve = p("curve.csv");
    ok(&[
        "analyze",
        "per-turn",
        "--run",
        s(&run),
        "--qrels",
        s(&qrels),
        "--out",
        s(&curve),
    ]);
    assert!(fs::read_to_string(&curve).unwrap().lines().count() > 1);

    let teacher = p("teachera.ckpt");
    let student = p("kda.ckpt");
    let sims = p("sims.csv");
    let raw_teacher = format!("teacher=raw:{}", s(&teacher));
    let kd = format!("kd=convdr:{}", s(&student));
    ok(&[
        "analyze",
        "sim-matrix",
        "--data",
        s(&data),
        "--variant",
        &raw_teacher,
        "--variant",
        &kd,
        "--out",
        s(&sims),
    ]);
    assert!(!fs::read_to_string(&sims).unwrap().is_empty());
    let intrusion = p("intrusion.csv");
    ok(&[
        "analyze",
        "intrusion",
        "--data",
        s(&data),
        "--encoder",
        s(&student),
        "--out",
        s(&intrusion),
    ]);
    assert!(fs::read_to_string(&intrusion).unwrap().lines().count() > 1);

    let bench = p("bench.csv");
    ok(&[
        "bench",
        "--docs",
        "500",
        "--dim",
        "8",
        "--queries",
        "16",
        "--batch-sizes",
        "1,8",
        "--out",
        s(&bench),
    ]);
    assert_eq!(fs::read_to_string(&bench).unwrap().lines().count(), 4);

    let wrong_kind = convdr(&[
        "retrieve",
        "--data",
        s(&data),
        "--encoder",
        s(&index_path(&dir)),
        "--index",
        s(&index_path(&dir)),
        "--out",
        s(&p("x.run")),
    ]);
    assert_eq!(wrong_kind.status.code(), Some(2));
}

fn index_path(dir: &tempfile::TempDir) -> std::path::PathBuf {
    dir.path().join("indexa.bin")
}
