use rand::seq::SliceRandom;
use rand::Rng as _;

use super::{adam_step, minibatches, EpochLog, TeacherConfig, Trained};
use crate::corpus::{Corpus, Dataset, Qrels, Split, TokenId};
use crate::encoder::EncoderParams;
use crate::error::{data_err, Result};
use crate::evalkit::ndcg_at_k;
use crate::index::DenseIndex;
use crate::numerics::{AdamState, ParamSet, Tape};
use crate::rng::derived;

/// An ad hoc training pair: an oracle query and one relevant document.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherPair {
    pub qid: String,
    pub query: Vec<TokenId>,
    /// Corpus position of the positive document.
    pub positive: usize,
    /// Corpus positions of every document judged relevant, sorted.
    pub relevant: Vec<usize>,
}

/// One pair per training turn; the positive is a seeded pick among the
/// grade-2 documents (grade 1 if none).
pub fn teacher_pairs(data: &Dataset, seed: u64) -> Result<Vec<TeacherPair>> {
    let mut rng = derived(seed, "teacher-pairs");
    let mut out = Vec::new();
    for conv in data.split(Split::Train) {
        for t in &conv.turns {
            let qid = t.qid();
            let mut relevant: Vec<usize> = data
                .qrels
                .relevant(&qid, 1)
                .into_iter()
                .filter_map(|d| data.corpus.position(d))
                .collect();
            relevant.sort_unstable();
            let mut best: Vec<usize> = data
                .qrels
                .relevant(&qid, 2)
                .into_iter()
                .filter_map(|d| data.corpus.position(d))
                .collect();
            if best.is_empty() {
                best = relevant.clone();
            }
            let Some(&positive) = best.choose(&mut rng) else {
                continue;
            };
            out.push(TeacherPair {
                qid,
                query: t.oracle.clone(),
                positive,
                relevant,
            });
        }
    }
    Ok(out)
}

/// Dev queries for monitoring teacher training.
pub struct TeacherDev<'a> {
    pub qids: Vec<String>,
    pub queries: Vec<Vec<TokenId>>,
    pub qrels: &'a Qrels,
}

impl<'a> TeacherDev<'a> {
    /// Oracle queries of the dev split.
    pub fn oracle(data: &'a Dataset) -> Self {
        let turns = data.split(Split::Dev).iter().flat_map(|c| &c.turns);
        let (qids, queries) = turns.map(|t| (t.qid(), t.oracle.clone())).unzip();
        TeacherDev {
            qids,
            queries,
            qrels: &data.qrels,
        }
    }

    /// Dev NDCG@3 of `params` used as a siamese encoder over `corpus`.
    pub fn ndcg3(&self, params: &EncoderParams, corpus: &Corpus) -> Result<f64> {
        let index = encode_corpus(params, corpus)?;
        let q = params.encode_batch(&self.queries)?;
        let run = index.search_run(&self.qids, &q, 3)?;
        Ok(ndcg_at_k(&run, self.qrels, 3)?.mean)
    }
}

/// Encodes every document and freezes the result into an index.
pub fn encode_corpus(params: &EncoderParams, corpus: &Corpus) -> Result<DenseIndex> {
    let seqs: Vec<&[TokenId]> = corpus.docs().iter().map(|d| d.tokens.as_slice()).collect();
    let emb = params.encode_batch(&seqs)?;
    DenseIndex::build(corpus.doc_ids(), &emb)
}

/// Trains a siamese dual encoder with in-batch plus random negatives.
pub fn train_teacher(
    init: EncoderParams,
    corpus: &Corpus,
    pairs: &[TeacherPair],
    cfg: &TeacherConfig,
    dev: Option<&TeacherDev<'_>>,
) -> Result<Trained<EncoderParams>> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(data_err!("teacher training needs at least one pair"));
    }
    if corpus.is_empty() {
        return Err(data_err!("teacher training needs a non-empty corpus"));
    }
    let mut params = init;
    let mut log = Vec::new();
    if let Some(d) = dev {
        log.push(dev_line(0, d.ndcg3(&params, corpus)?));
    }
    if cfg.epochs == 0 {
        return Ok(Trained { params, log });
    }
    let mut adam = AdamState::new(&params.tensors(), cfg.learning_rate)?;
    let mut rng = derived(cfg.seed, "teacher-train");
    let n_docs = corpus.len();
    for epoch in 1..=cfg.epochs {
        let mut total = 0.0;
        for batch in minibatches(pairs.len(), cfg.batch_size, &mut rng) {
            let b = batch.len();
            // Docs: batch positives, then n_negatives random docs per example.
            let mut doc_pos: Vec<usize> = batch.iter().map(|&i| pairs[i].positive).collect();
            for &i in &batch {
                let rel = &pairs[i].relevant;
                let mut picked = 0;
                while picked < cfg.n_negatives && rel.len() < n_docs {
                    let d = rng.gen_range(0..n_docs);
                    if rel.binary_search(&d).is_err() {
                        doc_pos.push(d);
                        picked += 1;
                    }
                }
            }
            let doc_seqs: Vec<&[TokenId]> = doc_pos.iter().map(|&p| corpus.docs()[p].tokens.as_slice()).collect();
            let query_seqs: Vec<&[TokenId]> = batch.iter().map(|&i| pairs[i].query.as_slice()).collect();

            let mut tape = Tape::new();
            let nodes = params.register(&mut tape);
            let q = nodes.encode_batch(&mut tape, &query_seqs)?;
            let d = nodes.encode_batch(&mut tape, &doc_seqs)?;
            let scores = tape.matmul_nt(q, d)?;
            let nd = doc_pos.len();
            let mut losses = Vec::with_capacity(b);
            let mut neg_start = b;
            for (r, &i) in batch.iter().enumerate() {
                let p = &pairs[i];
                let mut cols = vec![r];
                for (c, &other) in batch.iter().enumerate() {
                    let op = pairs[other].positive;
                    if c != r && op != p.positive && p.relevant.binary_search(&op).is_err() {
                        cols.push(c);
                    }
                }
                let n_neg = if p.relevant.len() < n_docs { cfg.n_negatives } else { 0 };
                cols.extend(neg_start..neg_start + n_neg);
                neg_start += n_neg;
                let flat: Vec<usize> = cols.iter().map(|c| r * nd + c).collect();
                let s = tape.select(scores, &flat)?;
                losses.push(tape.softmax_nll(s, 0)?);
            }
            let sum = tape.sum(&losses)?;
            let loss = tape.scale(sum, 1.0 / b as f64)?;
            total += tape.value(loss).item()? * b as f64;
            let mut g = tape.backward(loss)?;
            let mut grads = nodes.grads(&mut g);
            if cfg.freeze_embeddings {
                grads[0].data_mut().fill(0.0);
            }
            drop(tape);
            adam_step(&mut params, &mut adam, &grads)?;
        }
        log.push(EpochLog {
            epoch,
            split: "train".into(),
            loss: Some(total / pairs.len() as f64),
            metric: None,
        });
        if let Some(d) = dev {
            let due = cfg.eval_every > 0 && epoch % cfg.eval_every == 0;
            if due || epoch == cfg.epochs {
                log.push(dev_line(epoch, d.ndcg3(&params, corpus)?));
            }
        }
    }
    Ok(Trained { params, log })
}

fn dev_line(epoch: usize, ndcg: f64) -> EpochLog {
    EpochLog {
        epoch,
        split: "dev".into(),
        loss: None,
        metric: Some(ndcg),
    }
}
