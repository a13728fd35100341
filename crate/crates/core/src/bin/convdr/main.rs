//! Command-line driver for the conversational dense retrieval toolkit.

macro_rules! invalid {
    ($($arg:tt)*) => {
        convdr::Error::InvalidArgument(format!($($arg)*))
    };
}

mod analyze;
mod args;
mod interactive;

use std::path::Path;
use std::process::ExitCode;

use clap::Parser;
use serde::de::DeserializeOwned;

use convdr::analysis::{bench_to_csv, latency_bench};
use convdr::corpus::io::{read_qrels, read_run, write_run};
use convdr::corpus::{generate_dataset, Dataset, GenConfig, RunFile, Split};
use convdr::encoder::{EncoderConfig, EncoderParams};
use convdr::error::Result;
use convdr::evalkit::{
    evaluate, permutation_test, reports_to_csv, reports_to_json, win_tie_loss, MetricReport, MetricSpec,
};
use convdr::experiment::{repro_all, turn_queries, ExperimentConfig, QuerySource};
use convdr::fsutil;
use convdr::index::{DenseIndex, SparseIndex};
use convdr::numerics::Tensor;
use convdr::rerank::{rerank, rrf_fuse, train_reranker, train_teacher_reranker, CrossConfig, CrossEncoderParams};
use convdr::rng;
use convdr::training::{
    build_examples, encode_corpus, teacher_pairs, train_convdr, train_teacher, write_log, StudentDev, TeacherConfig,
    TeacherDev, TrainConfig,
};

use args::*;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

/// Reads `--config` into `T`, or returns the default.
fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => Ok(serde_json::from_str(&fsutil::read_to_string(p)?)?),
        None => Ok(T::default()),
    }
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn write_text(path: &Path, body: &str) -> Result<()> {
    fsutil::write_atomic_str(path, body)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::TrainTeacher(a) => cmd_train_teacher(a),
        Command::EncodeCorpus(a) => {
            let data = Dataset::load(&a.data)?;
            let enc = EncoderParams::load(&a.encoder)?;
            let index = encode_corpus(&enc, &data.corpus)?;
            index.save(&a.out)?;
            eprintln!("encoded {} documents into {}", index.len(), a.out.display());
            Ok(())
        }
        Command::TrainConvdr(a) => cmd_train_convdr(a),
        Command::TrainReranker(a) => cmd_train_reranker(a),
        Command::Retrieve(a) => cmd_retrieve(a),
        Command::Rerank(a) => cmd_rerank(a),
        Command::Fuse(a) => {
            if a.runs.is_empty() {
                return Err(invalid!("fuse needs at least one --run"));
            }
            let runs = a.runs.iter().map(|p| read_run(p)).collect::<Result<Vec<_>>>()?;
            let refs: Vec<&RunFile> = runs.iter().collect();
            let fused = rrf_fuse(&refs, a.k_rrf, a.depth)?;
            write_run(&a.out, &fused, "rrf")
        }
        Command::Eval(a) => cmd_eval(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Analyze(a) => analyze::run(a),
        Command::Bench(a) => cmd_bench(a),
        Command::ReproAll(a) => {
            let mut cfg: ExperimentConfig = load_config(a.config.as_deref())?;
            set(&mut cfg.permutation_iterations, a.permutation_iterations);
            let summary = repro_all(&cfg, a.seed, a.n_seeds, Some(&a.out))?;
            for o in &summary.outcomes {
                let stages: Vec<String> = o.timings.iter().map(|(s, t)| format!("{s} {t:.1}s")).collect();
                eprintln!("seed {} stages: {}", o.seed, stages.join(", "));
            }
            for c in &summary.criteria {
                eprintln!(
                    "criterion {:>2}: {} {}",
                    c.id,
                    if c.pass { "PASS" } else { "FAIL" },
                    c.name
                );
            }
            Ok(())
        }
        Command::Query(a) => interactive::run(a),
    }
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let mut cfg: GenConfig = load_config(a.config.as_deref())?;
    set(&mut cfg.n_topics, a.n_topics);
    set(&mut cfg.distractor_docs, a.distractor_docs);
    set(&mut cfg.p_omit, a.p_omit);
    set(&mut cfg.p_coref, a.p_coref);
    set(&mut cfg.rewriter_error_rate, a.rewriter_error_rate);
    let data = generate_dataset(&cfg, a.seed)?;
    data.save(&a.out)?;
    eprintln!(
        "wrote {} docs, {}/{}/{} conversations to {}",
        data.corpus.len(),
        data.train.len(),
        data.dev.len(),
        data.test.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_train_teacher(a: TrainTeacherArgs) -> Result<()> {
    let data = Dataset::load(&a.data)?;
    let mut cfg: TeacherConfig = load_config(a.config.as_deref())?;
    cfg.seed = a.seed;
    set(&mut cfg.epochs, a.epochs);
    set(&mut cfg.learning_rate, a.lr);
    set(&mut cfg.batch_size, a.batch_size);
    set(&mut cfg.eval_every, a.eval_every);
    let enc_cfg = EncoderConfig {
        vocab_size: data.vocab.len(),
        seed: a.seed,
        init_scale: a.init_scale.unwrap_or(ExperimentConfig::default().encoder.init_scale),
        ..EncoderConfig::default()
    };
    let pairs = teacher_pairs(&data, a.seed)?;
    let dev = TeacherDev::oracle(&data);
    let trained = train_teacher(EncoderParams::init(enc_cfg)?, &data.corpus, &pairs, &cfg, Some(&dev))?;
    trained.params.save(&a.out)?;
    if let Some(l) = &a.log {
        write_log(l, &trained.log)?;
    }
    if let Some(last) = trained.log.iter().rev().find(|l| l.split == "dev") {
        eprintln!("teacher dev oracle ndcg@3 {:.4}", last.metric.unwrap_or(f64::NAN));
    }
    Ok(())
}

fn student_config(a: &StudentArgs) -> Result<TrainConfig> {
    let mut cfg: TrainConfig = load_config(a.config.as_deref())?;
    cfg.seed = a.seed;
    set(&mut cfg.mode, a.mode);
    set(&mut cfg.epochs, a.epochs);
    set(&mut cfg.learning_rate, a.lr);
    set(&mut cfg.batch_size, a.batch_size);
    set(&mut cfg.n_negatives, a.n_negatives);
    if a.label_budget.is_some() {
        cfg.label_budget = a.label_budget;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train_convdr(a: TrainConvdrArgs) -> Result<()> {
    let data = Dataset::load(&a.data)?;
    let teacher = EncoderParams::load(&a.teacher)?;
    let index = DenseIndex::load(&a.index)?;
    let cfg = student_config(&a.student)?;
    let train = build_examples(&data, Split::Train, &teacher, &index, cfg.n_negatives)?;
    let dev_ex = build_examples(&data, Split::Dev, &teacher, &index, 0)?;
    let dev = StudentDev::new(&dev_ex, &teacher, &data.qrels)?;
    let trained = train_convdr(&teacher, &index, &train, &cfg, Some(&dev))?;
    trained.params.save(&a.out)?;
    if let Some(l) = &a.log {
        write_log(l, &trained.log)?;
    }
    if let Some(last) = trained.log.last() {
        eprintln!(
            "{} student: dev kd {:.4}, ndcg@3 {:.4}",
            cfg.mode.name(),
            last.loss.unwrap_or(f64::NAN),
            last.metric.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

fn cmd_train_reranker(a: TrainRerankerArgs) -> Result<()> {
    let data = Dataset::load(&a.data)?;
    let encoder = EncoderParams::load(&a.encoder)?;
    let index = DenseIndex::load(&a.index)?;
    let cfg = student_config(&a.student)?;
    let train = build_examples(&data, Split::Train, &encoder, &index, cfg.n_negatives)?;
    let trained = match &a.teacher_reranker {
        None => {
            let init = CrossEncoderParams::init(CrossConfig {
                vocab_size: data.vocab.len(),
                seed: a.student.seed,
                ..CrossConfig::default()
            })?;
            train_teacher_reranker(init, &data.corpus, &train, &cfg)?
        }
        Some(p) => train_reranker(&CrossEncoderParams::load(p)?, &data.corpus, &train, &cfg)?,
    };
    trained.params.save(&a.out)?;
    if let Some(l) = &a.log {
        write_log(l, &trained.log)?;
    }
    Ok(())
}

fn cmd_retrieve(a: RetrieveArgs) -> Result<()> {
    let data = Dataset::load(&a.data)?;
    let convs = data.split(a.split);
    let run = match a.retriever {
        Retriever::Bm25 => {
            if a.query_source == QuerySource::Convdr {
                return Err(invalid!("bm25 retrieval takes raw, oracle or rewriter queries"));
            }
            let (qids, seqs) = turn_queries(convs, a.query_source, usize::MAX)?;
            let index = SparseIndex::build(&data.corpus)?;
            let mut run = RunFile::new();
            for (q, s) in qids.iter().zip(&seqs) {
                run.insert(q, index.search(s, a.k)?)?;
            }
            run
        }
        Retriever::Dense => {
            let enc_path = a
                .encoder
                .as_ref()
                .ok_or_else(|| invalid!("dense retrieval needs --encoder"))?;
            let idx_path = a
                .index
                .as_ref()
                .ok_or_else(|| invalid!("dense retrieval needs --index"))?;
            let enc = EncoderParams::load(enc_path)?;
            let index = DenseIndex::load(idx_path)?;
            let (qids, seqs) = turn_queries(convs, a.query_source, enc.config.max_len)?;
            index.search_run(&qids, &enc.encode_batch(&seqs)?, a.k)?
        }
    };
    let tag = format!("{}-{}", a.retriever.name(), a.query_source.name());
    write_run(&a.out, &run, &tag)?;
    eprintln!("wrote {} rankings to {}", run.len(), a.out.display());
    Ok(())
}

fn cmd_rerank(a: RerankArgs) -> Result<()> {
    let data = Dataset::load(&a.data)?;
    let run = read_run(&a.run)?;
    let model = CrossEncoderParams::load(&a.reranker)?;
    let max_len = a.max_len;
    let (qids, seqs) = turn_queries(data.split(a.split), QuerySource::Convdr, max_len)?;
    let inputs: std::collections::HashMap<String, Vec<u32>> = qids.into_iter().zip(seqs).collect();
    let out = rerank(&run, &data.corpus, a.depth, |qid, doc| {
        let q = inputs
            .get(qid)
            .ok_or_else(|| invalid!("qid {} is not in the {} split", qid, a.split.name()))?;
        model.score(q, &doc.tokens)
    })?;
    write_run(&a.out, &out, "rerank")
}

fn parse_metrics(metrics: &[String]) -> Result<Vec<MetricSpec>> {
    if metrics.is_empty() {
        return Ok(vec![MetricSpec::Ndcg(3)]);
    }
    metrics.iter().map(|m| m.parse()).collect()
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let run = read_run(&a.run)?;
    let qrels = read_qrels(&a.qrels)?;
    let reports = parse_metrics(&a.metric)?
        .into_iter()
        .map(|m| evaluate(m, &run, &qrels, a.min_grade))
        .collect::<Result<Vec<MetricReport>>>()?;
    let json = reports_to_json(&reports)?;
    match &a.out {
        Some(p) => write_text(p, &json)?,
        None => print!("{json}"),
    }
    if let Some(p) = &a.per_query {
        write_text(p, &reports_to_csv(&reports))?;
    }
    Ok(())
}

fn cmd_compare(a: CompareArgs) -> Result<()> {
    let qrels = read_qrels(&a.qrels)?;
    let spec: MetricSpec = a.metric.parse()?;
    let ra = evaluate(spec, &read_run(&a.run_a)?, &qrels, a.min_grade)?;
    let rb = evaluate(spec, &read_run(&a.run_b)?, &qrels, a.min_grade)?;
    let wtl = win_tie_loss(&ra, &rb)?;
    let shared: Vec<&str> = ra
        .per_qid
        .keys()
        .filter(|q| rb.per_qid.contains_key(*q))
        .map(String::as_str)
        .collect();
    let p = permutation_test(&ra.values_for(&shared)?, &rb.values_for(&shared)?, a.iterations, a.seed)?;
    let out = serde_json::json!({
        "metric": spec.to_string(),
        "n": shared.len(),
        "mean_a": ra.mean,
        "mean_b": rb.mean,
        "win": wtl.win,
        "tie": wtl.tie,
        "loss": wtl.loss,
        "p_value": p,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let mut r = rng::seeded(a.seed);
    let random = |n: usize, r: &mut rng::Rng| -> Result<Tensor> {
        use rand::Rng as _;
        Tensor::matrix(n, a.dim, (0..n * a.dim).map(|_| r.gen_range(-1.0..1.0)).collect())
    };
    let index = match &a.index {
        Some(p) => DenseIndex::load(p)?,
        None => DenseIndex::build(
            (0..a.docs).map(|i| format!("D{i:07}")).collect(),
            &random(a.docs, &mut r)?,
        )?,
    };
    if index.dim() != a.dim {
        return Err(invalid!("index dim {} differs from --dim {}", index.dim(), a.dim));
    }
    let queries = random(a.queries, &mut r)?;
    let rows = latency_bench(&index, &queries, &a.batch_sizes, a.repetitions, a.k)?;
    let csv = bench_to_csv(&rows);
    match &a.out {
        Some(p) => write_text(p, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}
