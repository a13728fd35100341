//! End-to-end experiment pipeline.
//!
//! [`run_seed`] builds one synthetic benchmark and trains every model on it;
//! [`repro_all`] repeats that over consecutive seeds, pools the per-query
//! values, checks the ordering criteria, and writes the result tables.
//! Everything written by [`repro_all`] is a pure function of the config and
//! seed, so two runs produce byte-identical directories.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    adjacent_turn_similarity, intrusion_test, intrusion_to_csv, matrix_to_csv, per_turn_metrics,
    qd_nearest_positive_similarity, similarity_matrix, EmbeddingSet, IntrusionRecord, SimMatrix, TurnPoint,
};
use crate::corpus::{generate_dataset, parse_qid, Dataset, GenConfig, RunFile, Split, TokenId};
use crate::encoder::{EncoderConfig, EncoderParams};
use crate::error::{invalid, Result};
use crate::evalkit::{mrr, ndcg_at_k, permutation_test, permutation_test_unpaired, win_tie_loss, MetricReport};
use crate::fsutil;
use crate::index::{DenseIndex, SparseIndex};
use crate::numerics::Tensor;
use crate::rerank::{rerank, rrf_fuse, train_reranker, train_teacher_reranker, CrossConfig, CrossEncoderParams};
use crate::rng::derived;
use crate::training::{
    build_examples, encode_corpus, teacher_pairs, train_convdr, train_teacher, TeacherConfig, TrainConfig,
    TrainExample, TrainMode,
};

/// Everything a reproduction run needs besides the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: GenConfig,
    pub encoder: EncoderConfig,
    pub teacher: TeacherConfig,
    /// Base student settings; mode and label budget are set per paradigm.
    pub student: TrainConfig,
    /// Labeled training turns in the few-shot setting.
    pub few_shot_budget: usize,
    pub cross: CrossConfig,
    pub reranker: TrainConfig,
    pub retrieval_depth: usize,
    pub rerank_depth: usize,
    pub k_rrf: f64,
    pub permutation_iterations: usize,
    /// Split for retrieval accuracy tables.
    pub eval_split: Split,
    /// Split for the intrusion test.
    pub intrusion_split: Split,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: GenConfig::default(),
            encoder: EncoderConfig {
                init_scale: 1.0,
                ..EncoderConfig::default()
            },
            teacher: TeacherConfig::default(),
            student: TrainConfig::default(),
            few_shot_budget: 32,
            cross: CrossConfig::default(),
            reranker: TrainConfig {
                epochs: 20,
                learning_rate: 3e-3,
                ..TrainConfig::default()
            },
            retrieval_depth: 100,
            rerank_depth: 100,
            k_rrf: 60.0,
            permutation_iterations: 10_000,
            eval_split: Split::Dev,
            intrusion_split: Split::Test,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.teacher.validate()?;
        self.student.validate()?;
        self.reranker.validate()?;
        if self.retrieval_depth == 0 || self.rerank_depth == 0 {
            return Err(invalid!("retrieval and rerank depths must be positive"));
        }
        if self.permutation_iterations == 0 {
            return Err(invalid!("permutation_iterations must be positive"));
        }
        if !(self.k_rrf >= 0.0 && self.k_rrf.is_finite()) {
            return Err(invalid!("k_rrf must be finite and non-negative"));
        }
        Ok(())
    }
}

/// What text a retriever sees for each turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum QuerySource {
    /// The turn as asked.
    Raw,
    /// The manual rewrite.
    Oracle,
    /// The simulated automatic rewrite.
    Rewriter,
    /// All turns so far, joined with SEP.
    Convdr,
}

impl QuerySource {
    pub fn name(self) -> &'static str {
        match self {
            QuerySource::Raw => "raw",
            QuerySource::Oracle => "oracle",
            QuerySource::Rewriter => "rewriter",
            QuerySource::Convdr => "convdr",
        }
    }
}

/// Qids and token sequences of every turn in `convs` under `source`.
pub fn turn_queries(
    convs: &[crate::corpus::Conversation],
    source: QuerySource,
    max_len: usize,
) -> Result<(Vec<String>, Vec<Vec<TokenId>>)> {
    let mut qids = Vec::new();
    let mut seqs = Vec::new();
    for c in convs {
        for (i, t) in c.turns.iter().enumerate() {
            qids.push(t.qid());
            seqs.push(match source {
                QuerySource::Raw => t.raw.clone(),
                QuerySource::Oracle => t.oracle.clone(),
                QuerySource::Rewriter => t.rewriter.clone(),
                QuerySource::Convdr => crate::encoder::assemble_conversational_input(c, i + 1, max_len)?,
            });
        }
    }
    Ok((qids, seqs))
}

/// Per-query NDCG@3 and MRR@5 of one retrieval method.
#[derive(Debug, Clone)]
pub struct MethodScores {
    pub name: String,
    pub ndcg3: MetricReport,
    pub mrr5: MetricReport,
}

impl MethodScores {
    fn new(name: &str, run: &RunFile, data: &Dataset) -> Result<Self> {
        Ok(MethodScores {
            name: name.to_string(),
            ndcg3: ndcg_at_k(run, &data.qrels, 3)?,
            mrr5: mrr(run, &data.qrels, 1, Some(5))?,
        })
    }

    pub fn metric(&self, metric: &str) -> &MetricReport {
        match metric {
            "mrr@5" => &self.mrr5,
            _ => &self.ndcg3,
        }
    }
}

/// Results of the whole pipeline on one seed.
#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed: u64,
    pub baselines: Vec<MethodScores>,
    pub paradigms: Vec<MethodScores>,
    pub reranking: Vec<MethodScores>,
    pub per_turn: Vec<(String, Vec<TurnPoint>)>,
    pub adjacent: Vec<(String, Vec<TurnPoint>)>,
    pub sim_matrix: SimMatrix,
    pub qd_sim: Vec<(String, f64)>,
    pub intrusion: Vec<IntrusionRecord>,
    /// Wall-clock seconds per stage. Never written to output files.
    pub timings: Vec<(String, f64)>,
}

impl SeedOutcome {
    pub fn method(&self, name: &str) -> Option<&MethodScores> {
        self.baselines
            .iter()
            .chain(&self.paradigms)
            .chain(&self.reranking)
            .find(|m| m.name == name)
    }
}

fn log(msg: &str, start: Instant) {
    eprintln!("[{:>7.1}s] {}", start.elapsed().as_secs_f64(), msg);
}

fn query_run(
    index: &DenseIndex,
    qids: &[String],
    seqs: &[Vec<TokenId>],
    enc: &EncoderParams,
    depth: usize,
) -> Result<(RunFile, Tensor)> {
    let emb = enc.encode_batch(seqs)?;
    Ok((index.search_run(qids, &emb, depth)?, emb))
}

fn paradigm_name(mode: TrainMode, budget: Option<usize>) -> String {
    match budget {
        Some(b) => format!("{}@{}", mode.name(), b),
        None if matches!(mode, TrainMode::Rank | TrainMode::MultiTask) => format!("{}-full", mode.name()),
        None => mode.name().to_string(),
    }
}

/// The student variants trained on every seed, in table order.
pub fn paradigms(few_shot_budget: usize) -> Vec<(TrainMode, Option<usize>)> {
    vec![
        (TrainMode::ZeroShot, None),
        (TrainMode::Kd, None),
        (TrainMode::Rank, Some(few_shot_budget)),
        (TrainMode::MultiTask, Some(few_shot_budget)),
        (TrainMode::Rank, None),
        (TrainMode::MultiTask, None),
    ]
}

/// Generates the dataset for `seed` and runs every stage on it.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let mut timings = Vec::new();
    let mut lap = Instant::now();
    let mut mark = |stage: &str| {
        timings.push((stage.to_string(), lap.elapsed().as_secs_f64()));
        lap = Instant::now();
    };
    let data = generate_dataset(&cfg.data, seed)?;
    mark("data");
    log(
        &format!("seed {seed}: {} docs, vocab {}", data.corpus.len(), data.vocab.len()),
        start,
    );

    let enc_cfg = EncoderConfig {
        vocab_size: data.vocab.len(),
        seed,
        ..cfg.encoder.clone()
    };
    let pairs = teacher_pairs(&data, seed)?;
    let tcfg = TeacherConfig {
        seed,
        ..cfg.teacher.clone()
    };
    let teacher = train_teacher(EncoderParams::init(enc_cfg)?, &data.corpus, &pairs, &tcfg, None)?.params;
    let index = encode_corpus(&teacher, &data.corpus)?;
    mark("teacher");
    let bm25 = SparseIndex::build(&data.corpus)?;
    log(&format!("seed {seed}: teacher trained, corpus encoded"), start);

    let depth = cfg.retrieval_depth;
    let convs = data.split(cfg.eval_split);
    let max_len = teacher.config.max_len;
    let mut baselines = Vec::new();
    let mut sets = Vec::new();
    let mut qids = Vec::new();
    for source in [QuerySource::Raw, QuerySource::Rewriter, QuerySource::Oracle] {
        let (q, seqs) = turn_queries(convs, source, max_len)?;
        qids = q;
        let source = source.name();
        let mut sparse = RunFile::new();
        for (q, s) in qids.iter().zip(&seqs) {
            sparse.insert(q, bm25.search(s, depth)?)?;
        }
        baselines.push(MethodScores::new(&format!("bm25-{source}"), &sparse, &data)?);
        let (dense, emb) = query_run(&index, &qids, &seqs, &teacher, depth)?;
        baselines.push(MethodScores::new(&format!("dense-{source}"), &dense, &data)?);
        sets.push(EmbeddingSet::new(&format!("dense-{source}"), qids.clone(), emb)?);
    }

    mark("baselines");
    let train = build_examples(&data, Split::Train, &teacher, &index, cfg.student.n_negatives)?;
    let eval = build_examples(&data, cfg.eval_split, &teacher, &index, 0)?;
    mark("examples");
    let inputs: Vec<Vec<TokenId>> = eval.iter().map(|e| e.input.clone()).collect();
    let mut paradigm_scores = Vec::new();
    let mut kd_student = None;
    let mut kd_run = None;
    for (mode, budget) in paradigms(cfg.few_shot_budget) {
        let scfg = TrainConfig {
            mode,
            label_budget: budget,
            seed,
            ..cfg.student.clone()
        };
        let student = train_convdr(&teacher, &index, &train, &scfg, None)?.params;
        let name = paradigm_name(mode, budget);
        let (run, emb) = query_run(&index, &qids, &inputs, &student, depth)?;
        paradigm_scores.push(MethodScores::new(&name, &run, &data)?);
        if budget.is_none() {
            sets.push(EmbeddingSet::new(&name, qids.clone(), emb)?);
        }
        if mode == TrainMode::Kd {
            kd_student = Some(student);
            kd_run = Some(run);
        }
        mark(&format!("student:{name}"));
        log(&format!("seed {seed}: student {name} trained"), start);
    }
    let kd_student = kd_student.ok_or_else(|| invalid!("paradigm list has no KD student"))?;
    let kd_run = kd_run.ok_or_else(|| invalid!("paradigm list has no KD student"))?;

    let reranking = rerank_stage(cfg, seed, &data, &train, &eval, &kd_run)?;
    mark("rerank");
    log(&format!("seed {seed}: rerankers trained"), start);

    let mut per_turn = Vec::new();
    for name in [
        "dense-raw",
        "dense-rewriter",
        "dense-oracle",
        "bm25-raw",
        "zero-shot",
        "kd",
        "multi-task-full",
    ] {
        let m = baselines
            .iter()
            .chain(&paradigm_scores)
            .find(|m| m.name == name)
            .ok_or_else(|| invalid!("no method {}", name))?;
        per_turn.push((name.to_string(), per_turn_metrics(&m.ndcg3)?));
    }
    let adjacent = vec![
        (
            "dense-raw".to_string(),
            adjacent_turn_similarity(convs, |c, k| teacher.encode(&c.turns[k - 1].raw))?,
        ),
        (
            "dense-oracle".to_string(),
            adjacent_turn_similarity(convs, |c, k| teacher.encode(&c.turns[k - 1].oracle))?,
        ),
        (
            "kd".to_string(),
            adjacent_turn_similarity(convs, |c, k| {
                kd_student.encode(&crate::encoder::assemble_conversational_input(c, k, max_len)?)
            })?,
        ),
    ];
    let sim_matrix = similarity_matrix(&sets)?;
    let qd_sim = sets
        .iter()
        .map(|s| {
            Ok((
                s.name.clone(),
                qd_nearest_positive_similarity(s, &index, &data.qrels)?.0,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let intrusion = intrusion_test(&kd_student, data.split(cfg.intrusion_split), &data.vocab, seed)?;
    mark("analysis");
    log(&format!("seed {seed}: analyses done"), start);

    Ok(SeedOutcome {
        seed,
        baselines,
        paradigms: paradigm_scores,
        reranking,
        per_turn,
        adjacent,
        sim_matrix,
        qd_sim,
        intrusion,
        timings,
    })
}

fn rerank_stage(
    cfg: &ExperimentConfig,
    seed: u64,
    data: &Dataset,
    train: &[TrainExample],
    eval: &[TrainExample],
    kd_run: &RunFile,
) -> Result<Vec<MethodScores>> {
    let cross_cfg = CrossConfig {
        vocab_size: data.vocab.len(),
        seed,
        ..cfg.cross.clone()
    };
    let rcfg = TrainConfig {
        seed,
        ..cfg.reranker.clone()
    };
    let teacher = train_teacher_reranker(CrossEncoderParams::init(cross_cfg)?, &data.corpus, train, &rcfg)?.params;
    let student = train_reranker(&teacher, &data.corpus, train, &rcfg)?.params;
    let inputs: BTreeMap<&str, &[TokenId]> = eval.iter().map(|e| (e.qid.as_str(), e.input.as_slice())).collect();
    let score_with = |p: &CrossEncoderParams| {
        rerank(kd_run, &data.corpus, cfg.rerank_depth, |qid, doc| {
            let conv = inputs.get(qid).ok_or_else(|| invalid!("no input for {}", qid))?;
            p.score(conv, &doc.tokens)
        })
    };
    let zs = score_with(&teacher)?;
    let kd = score_with(&student)?;
    let fused = rrf_fuse(&[kd_run, &kd], cfg.k_rrf, cfg.retrieval_depth)?;
    Ok(vec![
        MethodScores::new("kd", kd_run, data)?,
        MethodScores::new("kd+rerank-zero-shot", &zs, data)?,
        MethodScores::new("kd+rerank-kd", &kd, data)?,
        MethodScores::new("kd+rrf", &fused, data)?,
    ])
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Per-query values of `method` over all seeds, keyed `seed:qid`.
fn pooled(outcomes: &[SeedOutcome], method: &str, metric: &str) -> Result<MetricReport> {
    let mut per_qid = BTreeMap::new();
    let mut excluded = 0;
    for o in outcomes {
        let m = o
            .method(method)
            .ok_or_else(|| invalid!("no method {}", method))?
            .metric(metric);
        excluded += m.excluded;
        for (q, v) in &m.per_qid {
            per_qid.insert(format!("{}:{}", o.seed, q), *v);
        }
    }
    Ok(MetricReport {
        name: format!("{method} {metric}"),
        mean: mean(&per_qid.values().copied().collect::<Vec<_>>()),
        evaluated: per_qid.len(),
        excluded,
        per_qid,
    })
}

fn seed_means(outcomes: &[SeedOutcome], method: &str, metric: &str) -> Result<Vec<f64>> {
    outcomes
        .iter()
        .map(|o| {
            Ok(o.method(method)
                .ok_or_else(|| invalid!("no method {}", method))?
                .metric(metric)
                .mean)
        })
        .collect()
}

/// One paired comparison over pooled per-query values.
#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    pub metric: String,
    pub n: usize,
    pub median_a: f64,
    pub median_b: f64,
    pub mean_a: f64,
    pub mean_b: f64,
    pub win: usize,
    pub tie: usize,
    pub loss: usize,
    pub p_value: f64,
}

impl Comparison {
    /// `a` beats `b` on the median of seed means with p < 0.05.
    pub fn significant_win(&self) -> bool {
        self.median_a > self.median_b && self.p_value < 0.05
    }
}

fn compare(
    outcomes: &[SeedOutcome],
    a: &str,
    b: &str,
    metric: &str,
    iterations: usize,
    seed: u64,
) -> Result<Comparison> {
    let ra = pooled(outcomes, a, metric)?;
    let rb = pooled(outcomes, b, metric)?;
    let shared: Vec<&str> = ra
        .per_qid
        .keys()
        .filter(|q| rb.per_qid.contains_key(*q))
        .map(String::as_str)
        .collect();
    let wtl = win_tie_loss(&ra, &rb)?;
    let va = ra.values_for(&shared)?;
    let vb = rb.values_for(&shared)?;
    let p = permutation_test(&va, &vb, iterations, sub_seed(seed, &format!("{a}|{b}|{metric}")))?;
    Ok(Comparison {
        a: a.to_string(),
        b: b.to_string(),
        metric: metric.to_string(),
        n: shared.len(),
        median_a: median(&seed_means(outcomes, a, metric)?),
        median_b: median(&seed_means(outcomes, b, metric)?),
        mean_a: mean(&va),
        mean_b: mean(&vb),
        win: wtl.win,
        tie: wtl.tie,
        loss: wtl.loss,
        p_value: p,
    })
}

fn sub_seed(seed: u64, stream: &str) -> u64 {
    derived(seed, stream).next_u64()
}

/// Outcome of one acceptance criterion computed from the pipeline.
#[derive(Debug, Clone, Serialize)]
pub struct CriterionResult {
    pub id: u32,
    pub name: String,
    pub pass: bool,
    pub detail: serde_json::Value,
}

/// The pooled drop `self_sim − sim` for high-overlap and zero-overlap discards.
#[derive(Debug, Clone, Serialize)]
pub struct IntrusionSummary {
    pub n_high: usize,
    pub n_zero: usize,
    pub mean_drop_high: f64,
    pub mean_drop_zero: f64,
    pub p_value: f64,
}

pub fn intrusion_summary(records: &[IntrusionRecord], iterations: usize, seed: u64) -> Result<IntrusionSummary> {
    let drop = |r: &IntrusionRecord| r.self_sim - r.sim_before_after;
    let high: Vec<f64> = records.iter().filter(|r| r.overlap_ratio >= 0.5).map(drop).collect();
    let zero: Vec<f64> = records.iter().filter(|r| r.overlap_ratio == 0.0).map(drop).collect();
    let p = permutation_test_unpaired(&high, &zero, iterations, sub_seed(seed, "intrusion-test"))?;
    Ok(IntrusionSummary {
        n_high: high.len(),
        n_zero: zero.len(),
        mean_drop_high: mean(&high),
        mean_drop_zero: mean(&zero),
        p_value: p,
    })
}

/// Everything [`repro_all`] computed, for callers that check criteria in code.
#[derive(Debug, Clone)]
pub struct ReproSummary {
    pub outcomes: Vec<SeedOutcome>,
    pub comparisons: Vec<Comparison>,
    pub intrusion: IntrusionSummary,
    pub criteria: Vec<CriterionResult>,
}

impl ReproSummary {
    pub fn comparison(&self, a: &str, b: &str, metric: &str) -> Option<&Comparison> {
        self.comparisons
            .iter()
            .find(|c| c.a == a && c.b == b && c.metric == metric)
    }
}

const COMPARISONS: [(&str, &str, &str); 11] = [
    ("kd", "zero-shot", "ndcg@3"),
    ("kd", "rank@32", "ndcg@3"),
    ("kd", "multi-task@32", "ndcg@3"),
    ("multi-task-full", "zero-shot", "mrr@5"),
    ("rank-full", "zero-shot", "mrr@5"),
    ("multi-task-full", "rank-full", "mrr@5"),
    ("dense-oracle", "dense-raw", "ndcg@3"),
    ("dense-oracle", "dense-rewriter", "ndcg@3"),
    ("dense-rewriter", "dense-raw", "ndcg@3"),
    ("dense-raw", "bm25-raw", "ndcg@3"),
    ("kd+rerank-kd", "kd", "ndcg@3"),
];

/// Late-turn (5–8) mean of a per-qid report.
fn late_turn_mean(r: &MetricReport) -> Result<f64> {
    let mut v = Vec::new();
    for (q, x) in &r.per_qid {
        if (5..=8).contains(&parse_qid(q)?.1) {
            v.push(*x);
        }
    }
    Ok(mean(&v))
}

fn evaluate_criteria(
    cfg: &ExperimentConfig,
    outcomes: &[SeedOutcome],
    comparisons: &[Comparison],
    intrusion: &IntrusionSummary,
) -> Result<Vec<CriterionResult>> {
    let find = |a: &str, b: &str, m: &str| {
        comparisons
            .iter()
            .find(|c| c.a == a && c.b == b && c.metric == m)
            .ok_or_else(|| invalid!("comparison {} vs {} missing", a, b))
    };
    let budget = cfg.few_shot_budget;
    let rank_fs = format!("rank@{budget}");
    let kd_zs = find("kd", "zero-shot", "ndcg@3")?;
    let kd_rank = find("kd", &rank_fs, "ndcg@3")?;
    let mt_zs = find("multi-task-full", "zero-shot", "mrr@5")?;
    let rank_zs = find("rank-full", "zero-shot", "mrr@5")?;
    let mt_rank = find("multi-task-full", "rank-full", "mrr@5")?;
    let or_raw = find("dense-oracle", "dense-raw", "ndcg@3")?;
    let or_rw = find("dense-oracle", "dense-rewriter", "ndcg@3")?;
    let rw_raw = find("dense-rewriter", "dense-raw", "ndcg@3")?;
    let raw_bm = find("dense-raw", "bm25-raw", "ndcg@3")?;
    let defaults = GenConfig::default();
    let bm25_asserted =
        cfg.data.rewriter_error_rate == defaults.rewriter_error_rate && cfg.data.p_omit == defaults.p_omit;

    let late_kd: Vec<f64> = outcomes
        .iter()
        .map(|o| late_turn_mean(&o.method("kd").expect("kd").ndcg3))
        .collect::<Result<_>>()?;
    let late_raw: Vec<f64> = outcomes
        .iter()
        .map(|o| late_turn_mean(&o.method("dense-raw").expect("dense-raw").ndcg3))
        .collect::<Result<_>>()?;

    let j = |c: &Comparison| serde_json::to_value(c).unwrap_or_default();
    Ok(vec![
        CriterionResult {
            id: 5,
            name: "few-shot ordering: KD beats zero-shot and Rank".into(),
            pass: kd_zs.significant_win() && kd_rank.significant_win(),
            detail: serde_json::json!({ "kd_vs_zero_shot": j(kd_zs), "kd_vs_rank": j(kd_rank) }),
        },
        CriterionResult {
            id: 6,
            name: "supervised ordering: Multi-Task and Rank beat zero-shot".into(),
            pass: mt_zs.significant_win() && rank_zs.significant_win(),
            detail: serde_json::json!({
                "multi_task_vs_zero_shot": j(mt_zs),
                "rank_vs_zero_shot": j(rank_zs),
                "multi_task_vs_rank_reported": j(mt_rank),
            }),
        },
        CriterionResult {
            id: 7,
            name: "baseline ordering: oracle > rewriter > raw dense".into(),
            pass: or_rw.median_a > or_rw.median_b
                && rw_raw.median_a > rw_raw.median_b
                && or_raw.significant_win()
                && (!bm25_asserted || raw_bm.median_a >= raw_bm.median_b),
            detail: serde_json::json!({
                "oracle_vs_raw": j(or_raw),
                "oracle_vs_rewriter": j(or_rw),
                "rewriter_vs_raw": j(rw_raw),
                "dense_raw_vs_bm25_raw": j(raw_bm),
                "bm25_asserted": bm25_asserted,
            }),
        },
        CriterionResult {
            id: 8,
            name: "intrusion: high-overlap discards move the KD embedding more".into(),
            pass: intrusion.mean_drop_high > intrusion.mean_drop_zero && intrusion.p_value < 0.05,
            detail: serde_json::to_value(intrusion)?,
        },
        CriterionResult {
            id: 9,
            name: "per-turn robustness: KD at turns 5-8 vs raw-query teacher".into(),
            pass: median(&late_kd) >= median(&late_raw),
            detail: serde_json::json!({
                "kd_turns_5_8": late_kd,
                "raw_turns_5_8": late_raw,
                "median_kd": median(&late_kd),
                "median_raw": median(&late_raw),
            }),
        },
    ])
}

/// Runs `n_seeds` consecutive seeds from `seed`, evaluates the criteria, and
/// writes the tables into `out` if given.
pub fn repro_all(cfg: &ExperimentConfig, seed: u64, n_seeds: usize, out: Option<&Path>) -> Result<ReproSummary> {
    cfg.validate()?;
    if n_seeds == 0 {
        return Err(invalid!("n_seeds must be positive"));
    }
    let start = Instant::now();
    let outcomes = (0..n_seeds as u64)
        .map(|i| run_seed(cfg, seed + i))
        .collect::<Result<Vec<_>>>()?;
    let iters = cfg.permutation_iterations;
    let comparisons = COMPARISONS
        .iter()
        .map(|&(a, b, m)| {
            let a = a.replace("@32", &format!("@{}", cfg.few_shot_budget));
            let b = b.replace("@32", &format!("@{}", cfg.few_shot_budget));
            compare(&outcomes, &a, &b, m, iters, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    let records: Vec<IntrusionRecord> = outcomes
        .iter()
        .flat_map(|o| {
            o.intrusion.iter().map(move |r| IntrusionRecord {
                qid: format!("{}:{}", o.seed, r.qid),
                ..r.clone()
            })
        })
        .collect();
    let intrusion = intrusion_summary(&records, iters, seed)?;
    let criteria = evaluate_criteria(cfg, &outcomes, &comparisons, &intrusion)?;
    let summary = ReproSummary {
        outcomes,
        comparisons,
        intrusion,
        criteria,
    };
    if let Some(dir) = out {
        write_tables(cfg, seed, &summary, &records, dir)?;
    }
    log(&format!("repro-all finished {} seeds", n_seeds), start);
    Ok(summary)
}

fn method_table(outcomes: &[SeedOutcome], pick: impl Fn(&SeedOutcome) -> &[MethodScores]) -> String {
    let mut s = String::from("seed,method,ndcg@3,mrr@5,evaluated\n");
    for o in outcomes {
        for m in pick(o) {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                o.seed, m.name, m.ndcg3.mean, m.mrr5.mean, m.ndcg3.evaluated
            ));
        }
    }
    if let Some(first) = outcomes.first() {
        for m in pick(first) {
            let n: Vec<f64> = outcomes
                .iter()
                .map(|o| {
                    pick(o)
                        .iter()
                        .find(|x| x.name == m.name)
                        .map_or(f64::NAN, |x| x.ndcg3.mean)
                })
                .collect();
            let r: Vec<f64> = outcomes
                .iter()
                .map(|o| {
                    pick(o)
                        .iter()
                        .find(|x| x.name == m.name)
                        .map_or(f64::NAN, |x| x.mrr5.mean)
                })
                .collect();
            s.push_str(&format!("median,{},{},{},\n", m.name, median(&n), median(&r)));
        }
    }
    s
}

fn curves_csv(curves: &[(String, Vec<TurnPoint>)]) -> String {
    let mut s = String::from("variant,turn,mean,count\n");
    for (name, curve) in curves {
        for p in curve {
            s.push_str(&format!("{},{},{},{}\n", name, p.turn, p.mean, p.count));
        }
    }
    s
}

fn write_tables(
    cfg: &ExperimentConfig,
    seed: u64,
    summary: &ReproSummary,
    records: &[IntrusionRecord],
    dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| crate::error::Error::io(dir, e))?;
    let outcomes = &summary.outcomes;
    let write = |name: &str, body: &str| fsutil::write_atomic_str(&dir.join(name), body);
    write("config.json", &(serde_json::to_string_pretty(cfg)? + "\n"))?;
    write("table_baselines.csv", &method_table(outcomes, |o| &o.baselines))?;
    write("table_paradigms.csv", &method_table(outcomes, |o| &o.paradigms))?;
    write("table_rerank.csv", &method_table(outcomes, |o| &o.reranking))?;

    let mut sig = String::from("a,b,metric,n,median_a,median_b,mean_a,mean_b,win,tie,loss,p_value\n");
    for c in &summary.comparisons {
        sig.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            c.a, c.b, c.metric, c.n, c.median_a, c.median_b, c.mean_a, c.mean_b, c.win, c.tie, c.loss, c.p_value
        ));
    }
    write("significance.csv", &sig)?;
    write("intrusion.csv", &intrusion_to_csv(records))?;

    let mut per_turn = Vec::new();
    let mut adjacent = Vec::new();
    let mut qd = String::from("seed,variant,mean_nearest_positive_dot\n");
    let mut sims = String::new();
    for o in outcomes {
        per_turn.extend(o.per_turn.iter().map(|(n, c)| (format!("{}:{}", o.seed, n), c.clone())));
        adjacent.extend(o.adjacent.iter().map(|(n, c)| (format!("{}:{}", o.seed, n), c.clone())));
        for (n, v) in &o.qd_sim {
            qd.push_str(&format!("{},{},{}\n", o.seed, n, v));
        }
        sims.push_str(&format!("# seed {}\n", o.seed));
        sims.push_str(&matrix_to_csv(&o.sim_matrix));
    }
    write("per_turn.csv", &curves_csv(&per_turn))?;
    write("adjacent_sim.csv", &curves_csv(&adjacent))?;
    write("qd_sim.csv", &qd)?;
    write("sim_matrix.csv", &sims)?;

    let acceptance = serde_json::json!({
        "seed": seed,
        "n_seeds": outcomes.len(),
        "criteria": summary.criteria,
    });
    write("acceptance.json", &(serde_json::to_string_pretty(&acceptance)? + "\n"))
}
