use convdr::analysis::{
    adjacent_turn_similarity, curve_to_csv, export_embeddings, intrusion_test, intrusion_to_csv, matrix_to_csv,
    per_turn_metrics, qd_nearest_positive_similarity, similarity_matrix, EmbeddingSet,
};
use convdr::corpus::io::{read_qrels, read_run};
use convdr::corpus::Dataset;
use convdr::encoder::{assemble_conversational_input, EncoderParams};
use convdr::error::Result;
use convdr::evalkit::{evaluate, MetricSpec};
use convdr::experiment::{turn_queries, QuerySource};
use convdr::index::DenseIndex;

use crate::args::{AnalyzeArgs, Study, VariantArgs};

fn emit(out: Option<&std::path::Path>, body: &str) -> Result<()> {
    match out {
        Some(p) => crate::write_text(p, body),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn embedding_sets(a: &VariantArgs, data: &Dataset) -> Result<Vec<EmbeddingSet>> {
    a.variants
        .iter()
        .map(|v| {
            let enc = EncoderParams::load(&v.checkpoint)?;
            let (qids, seqs) = turn_queries(data.split(a.split), v.source, enc.config.max_len)?;
            EmbeddingSet::new(&v.name, qids, enc.encode_batch(&seqs)?)
        })
        .collect()
}

pub fn run(a: AnalyzeArgs) -> Result<()> {
    match a.study {
        Study::SimMatrix(v) => {
            let data = Dataset::load(&v.data)?;
            let m = similarity_matrix(&embedding_sets(&v, &data)?)?;
            emit(v.out.as_deref(), &matrix_to_csv(&m))
        }
        Study::QdSim { variants, index } => {
            let data = Dataset::load(&variants.data)?;
            let index = DenseIndex::load(&index)?;
            let mut s = String::from("variant,mean_nearest_positive_dot,evaluated\n");
            for set in embedding_sets(&variants, &data)? {
                let (mean, per) = qd_nearest_positive_similarity(&set, &index, &data.qrels)?;
                s.push_str(&format!("{},{},{}\n", set.name, mean, per.len()));
            }
            emit(variants.out.as_deref(), &s)
        }
        Study::PerTurn {
            run,
            qrels,
            metric,
            out,
        } => {
            let spec: MetricSpec = metric.parse()?;
            let report = evaluate(spec, &read_run(&run)?, &read_qrels(&qrels)?, 1)?;
            emit(out.as_deref(), &curve_to_csv(&per_turn_metrics(&report)?))
        }
        Study::AdjacentSim(v) => {
            let data = Dataset::load(&v.data)?;
            let convs = data.split(v.split);
            let mut s = String::from("variant,turn,mean,count\n");
            for spec in &v.variants {
                let enc = EncoderParams::load(&spec.checkpoint)?;
                let max_len = enc.config.max_len;
                let curve = adjacent_turn_similarity(convs, |c, k| {
                    let t = &c.turns[k - 1];
                    match spec.source {
                        QuerySource::Raw => enc.encode(&t.raw),
                        QuerySource::Oracle => enc.encode(&t.oracle),
                        QuerySource::Rewriter => enc.encode(&t.rewriter),
                        QuerySource::Convdr => enc.encode(&assemble_conversational_input(c, k, max_len)?),
                    }
                })?;
                for p in curve {
                    s.push_str(&format!("{},{},{},{}\n", spec.name, p.turn, p.mean, p.count));
                }
            }
            emit(v.out.as_deref(), &s)
        }
        Study::Intrusion {
            data,
            split,
            encoder,
            seed,
            out,
        } => {
            let data = Dataset::load(&data)?;
            let enc = EncoderParams::load(&encoder)?;
            let records = intrusion_test(&enc, data.split(split), &data.vocab, seed)?;
            emit(out.as_deref(), &intrusion_to_csv(&records))
        }
        Study::ExportEmbeddings(v) => {
            let data = Dataset::load(&v.data)?;
            emit(v.out.as_deref(), &export_embeddings(&embedding_sets(&v, &data)?))
        }
    }
}
