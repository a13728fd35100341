use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use convdr::corpus::Split;
use convdr::experiment::QuerySource;
use convdr::training::TrainMode;

#[derive(Parser)]
#[command(name = "convdr", version, about = "Few-shot conversational dense retrieval toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a synthetic conversational search benchmark.
    GenData(GenDataArgs),
    /// Train the ad hoc teacher dual encoder on manual rewrites.
    TrainTeacher(TrainTeacherArgs),
    /// Encode the collection into a dense index.
    EncodeCorpus(EncodeCorpusArgs),
    /// Train a conversational query encoder from the teacher.
    TrainConvdr(TrainConvdrArgs),
    /// Train a teacher reranker, or a conversational one from a teacher.
    TrainReranker(TrainRerankerArgs),
    /// Retrieve a run for one split.
    Retrieve(RetrieveArgs),
    /// Rerank the head of a run with a cross-encoder.
    Rerank(RerankArgs),
    /// Reciprocal-rank fusion of several runs.
    Fuse(FuseArgs),
    /// Evaluate a run against qrels.
    Eval(EvalArgs),
    /// Win/tie/loss and a paired permutation test between two runs.
    Compare(CompareArgs),
    /// Embedding-space studies.
    Analyze(AnalyzeArgs),
    /// Dense search latency, per-query loop versus batches.
    Bench(BenchArgs),
    /// Run the whole pipeline over several seeds and write every table.
    ReproAll(ReproAllArgs),
    /// Interactive conversational search session.
    Query(QueryArgs),
}

#[derive(Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON generator config; flags below take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n_topics: Option<usize>,
    #[arg(long)]
    pub distractor_docs: Option<usize>,
    #[arg(long)]
    pub p_omit: Option<f64>,
    #[arg(long)]
    pub p_coref: Option<f64>,
    #[arg(long)]
    pub rewriter_error_rate: Option<f64>,
}

#[derive(Args)]
pub struct TrainTeacherArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub init_scale: Option<f64>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Per-epoch JSONL log.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Args)]
pub struct EncodeCorpusArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub encoder: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct StudentArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<TrainMode>,
    #[arg(long)]
    pub label_budget: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub n_negatives: Option<usize>,
}

#[derive(Args)]
pub struct TrainConvdrArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub teacher: PathBuf,
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[command(flatten)]
    pub student: StudentArgs,
}

#[derive(Args)]
pub struct TrainRerankerArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Dual encoder used to mine negatives.
    #[arg(long)]
    pub encoder: PathBuf,
    #[arg(long)]
    pub index: PathBuf,
    /// Distil from this reranker; without it an ad hoc teacher reranker is trained.
    #[arg(long)]
    pub teacher_reranker: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[command(flatten)]
    pub student: StudentArgs,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Retriever {
    Dense,
    Bm25,
}

impl Retriever {
    pub fn name(self) -> &'static str {
        match self {
            Retriever::Dense => "dense",
            Retriever::Bm25 => "bm25",
        }
    }
}

#[derive(Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = Split::Dev)]
    pub split: Split,
    #[arg(long, value_enum, default_value_t = QuerySource::Convdr)]
    pub query_source: QuerySource,
    #[arg(long, value_enum, default_value_t = Retriever::Dense)]
    pub retriever: Retriever,
    #[arg(long)]
    pub encoder: Option<PathBuf>,
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub k: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct RerankArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = Split::Dev)]
    pub split: Split,
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub reranker: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub depth: usize,
    #[arg(long, default_value_t = 256)]
    pub max_len: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct FuseArgs {
    #[arg(long = "run", required = true)]
    pub runs: Vec<PathBuf>,
    #[arg(long, default_value_t = 60.0)]
    pub k_rrf: f64,
    #[arg(long, default_value_t = 100)]
    pub depth: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
    /// Metrics such as ndcg@3, mrr, mrr@5, recall@5, map@10, hole@10.
    #[arg(long)]
    pub metric: Vec<String>,
    #[arg(long, default_value_t = 1)]
    pub min_grade: u32,
    /// Summary JSON; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-query CSV.
    #[arg(long)]
    pub per_query: Option<PathBuf>,
}

#[derive(Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub run_a: PathBuf,
    #[arg(long)]
    pub run_b: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
    #[arg(long, default_value = "ndcg@3")]
    pub metric: String,
    #[arg(long, default_value_t = 1)]
    pub min_grade: u32,
    #[arg(long, default_value_t = 10_000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct AnalyzeArgs {
    #[command(subcommand)]
    pub study: Study,
}

/// An encoder applied to one query source, written `NAME=SOURCE:CHECKPOINT`.
#[derive(Clone, Debug)]
pub struct VariantSpec {
    pub name: String,
    pub source: QuerySource,
    pub checkpoint: PathBuf,
}

impl std::str::FromStr for VariantSpec {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let (name, rest) = s.split_once('=').ok_or("expected NAME=SOURCE:CHECKPOINT")?;
        let (source, ckpt) = rest.split_once(':').ok_or("expected NAME=SOURCE:CHECKPOINT")?;
        if name.is_empty() || ckpt.is_empty() {
            return Err("expected NAME=SOURCE:CHECKPOINT".into());
        }
        Ok(VariantSpec {
            name: name.to_string(),
            source: QuerySource::from_str(source, true)?,
            checkpoint: PathBuf::from(ckpt),
        })
    }
}

#[derive(Args)]
pub struct VariantArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = Split::Dev)]
    pub split: Split,
    /// Repeatable `NAME=SOURCE:CHECKPOINT`, e.g. `kd=convdr:kd.ckpt`.
    #[arg(long = "variant", required = true)]
    pub variants: Vec<VariantSpec>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand)]
pub enum Study {
    /// Mean dot product between variants on the same queries.
    SimMatrix(VariantArgs),
    /// Mean similarity between queries and their nearest relevant document.
    QdSim {
        #[command(flatten)]
        variants: VariantArgs,
        #[arg(long)]
        index: PathBuf,
    },
    /// Per-turn metric curve of a run.
    PerTurn {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        #[arg(long, default_value = "ndcg@3")]
        metric: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-turn similarity of each query embedding with the previous turn's.
    AdjacentSim(VariantArgs),
    /// Discard one previous turn and measure the embedding shift.
    Intrusion {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = Split::Test)]
        split: Split,
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump query embeddings as CSV for external plotting.
    ExportEmbeddings(VariantArgs),
}

#[derive(Args)]
pub struct BenchArgs {
    /// Benchmark this index instead of a random one.
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long, default_value_t = 100_000)]
    pub docs: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 256)]
    pub queries: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,8,64")]
    pub batch_sizes: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    pub repetitions: usize,
    #[arg(long, default_value_t = 100)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ReproAllArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub n_seeds: usize,
    /// JSON experiment config; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub permutation_iterations: Option<usize>,
}

#[derive(Args)]
pub struct QueryArgs {
    /// Read turns from standard input.
    #[arg(long)]
    pub interactive: bool,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub encoder: PathBuf,
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
}
