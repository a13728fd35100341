use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;

use super::negatives::filter_hits;
use super::{adam_step, kd_loss, minibatches, EpochLog, TrainConfig, TrainMode, Trained};
use crate::corpus::{Dataset, Qrels, Split, TokenId};
use crate::encoder::{assemble_conversational_input, init_student_from_teacher, EncoderParams};
use crate::error::{data_err, invalid, Result};
use crate::evalkit::ndcg_at_k;
use crate::index::DenseIndex;
use crate::numerics::{AdamState, ParamSet, Tape, Tensor};
use crate::rng::derived;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub qid: String,
    /// Raw q_1 ⊕ SEP ⊕ … ⊕ q_k.
    pub input: Vec<TokenId>,
    pub oracle: Vec<TokenId>,
    /// Judged grade ≥ 1, in doc_id order.
    pub positives: Vec<String>,
    /// Teacher-mined negatives in rank order; disjoint from `positives`.
    pub negatives: Vec<String>,
}

/// Examples for every turn of `split`, with `n_negatives` teacher-mined
/// negatives each.
pub fn build_examples(
    data: &Dataset,
    split: Split,
    teacher: &EncoderParams,
    index: &DenseIndex,
    n_negatives: usize,
) -> Result<Vec<TrainExample>> {
    let max_len = teacher.config.max_len;
    let mut out = Vec::new();
    for conv in data.split(split) {
        for (k, t) in conv.turns.iter().enumerate() {
            let qid = t.qid();
            out.push(TrainExample {
                positives: data.qrels.relevant(&qid, 1).into_iter().map(str::to_string).collect(),
                qid,
                input: assemble_conversational_input(conv, k + 1, max_len)?,
                oracle: t.oracle.clone(),
                negatives: Vec::new(),
            });
        }
    }
    if n_negatives > 0 && !index.is_empty() && !out.is_empty() {
        let oracles: Vec<&[TokenId]> = out.iter().map(|e| e.oracle.as_slice()).collect();
        let q = teacher.encode_batch(&oracles)?;
        let max_pos = out.iter().map(|e| e.positives.len()).max().unwrap_or(0);
        let hits = index.search_batch(&q, (n_negatives + max_pos).min(index.len()))?;
        for (e, h) in out.iter_mut().zip(hits) {
            let pos: HashSet<String> = e.positives.iter().cloned().collect();
            e.negatives = filter_hits(index, &h, &pos, n_negatives);
        }
    }
    Ok(out)
}

/// Held-out examples for per-epoch monitoring.
pub struct StudentDev<'a> {
    pub qids: Vec<String>,
    pub inputs: Vec<Vec<TokenId>>,
    /// Teacher embeddings of the oracle rewrites, [n, d].
    pub targets: Tensor,
    pub qrels: &'a Qrels,
}

impl<'a> StudentDev<'a> {
    pub fn new(examples: &[TrainExample], teacher: &EncoderParams, qrels: &'a Qrels) -> Result<Self> {
        let oracles: Vec<&[TokenId]> = examples.iter().map(|e| e.oracle.as_slice()).collect();
        Ok(StudentDev {
            qids: examples.iter().map(|e| e.qid.clone()).collect(),
            inputs: examples.iter().map(|e| e.input.clone()).collect(),
            targets: teacher.encode_batch(&oracles)?,
            qrels,
        })
    }

    /// (mean kd_loss, NDCG@3) of `student` on the dev examples.
    pub fn evaluate(&self, student: &EncoderParams, index: &DenseIndex) -> Result<(f64, f64)> {
        let emb = student.encode_batch(&self.inputs)?;
        let mut kd = 0.0;
        for i in 0..self.qids.len() {
            kd += kd_loss(emb.row(i), self.targets.row(i))?;
        }
        let kd = kd / self.qids.len().max(1) as f64;
        let run = index.search_run(&self.qids, &emb, 3)?;
        Ok((kd, ndcg_at_k(&run, self.qrels, 3)?.mean))
    }
}

/// Indices of the examples whose labels may be used: a seeded sample of
/// `label_budget` examples that have at least one positive and one negative.
fn labeled_subset(train: &[TrainExample], cfg: &TrainConfig) -> Vec<usize> {
    let mut usable: Vec<usize> = (0..train.len())
        .filter(|&i| !train[i].positives.is_empty() && !train[i].negatives.is_empty())
        .collect();
    if let Some(budget) = cfg.label_budget {
        usable.shuffle(&mut derived(cfg.seed, "label-budget"));
        usable.truncate(budget);
        usable.sort_unstable();
    }
    usable
}

/// Trains a student query encoder initialized from `teacher`.
///
/// Document embeddings are read from `index` and never modified; `teacher`
/// is only read.
pub fn train_convdr(
    teacher: &EncoderParams,
    index: &DenseIndex,
    train: &[TrainExample],
    cfg: &TrainConfig,
    dev: Option<&StudentDev<'_>>,
) -> Result<Trained<EncoderParams>> {
    cfg.validate()?;
    if index.dim() != teacher.dim() && !index.is_empty() {
        return Err(invalid!(
            "index dim {} does not match encoder dim {}",
            index.dim(),
            teacher.dim()
        ));
    }
    let mut student = init_student_from_teacher(teacher);
    let mut log = Vec::new();
    let dev_line = |epoch: usize, s: &EncoderParams, log: &mut Vec<EpochLog>| -> Result<()> {
        if let Some(d) = dev {
            let (kd, ndcg) = d.evaluate(s, index)?;
            log.push(EpochLog {
                epoch,
                split: "dev".into(),
                loss: Some(kd),
                metric: Some(ndcg),
            });
        }
        Ok(())
    };
    dev_line(0, &student, &mut log)?;
    let epochs = cfg.effective_epochs();
    if epochs == 0 {
        return Ok(Trained { params: student, log });
    }

    if cfg.mode.uses_kd() && train.iter().any(|e| e.oracle.is_empty()) {
        return Err(data_err!(
            "{} training needs an oracle rewrite for every example",
            cfg.mode.name()
        ));
    }
    let labeled = if cfg.mode.uses_rank() {
        let l = labeled_subset(train, cfg);
        if l.is_empty() {
            return Err(data_err!(
                "{} training needs labeled examples with negatives",
                cfg.mode.name()
            ));
        }
        l
    } else {
        Vec::new()
    };
    let active: Vec<usize> = match cfg.mode {
        TrainMode::Rank => labeled.clone(),
        _ => (0..train.len()).collect(),
    };
    if active.is_empty() {
        return Err(data_err!("no training examples"));
    }
    let is_labeled: HashSet<usize> = labeled.iter().copied().collect();

    let targets = if cfg.mode.uses_kd() {
        let oracles: Vec<&[TokenId]> = train.iter().map(|e| e.oracle.as_slice()).collect();
        Some(teacher.encode_batch(&oracles)?)
    } else {
        None
    };
    let rows: HashMap<&str, usize> = index
        .doc_ids()
        .iter()
        .enumerate()
        .map(|(i, d)| (d.as_str(), i))
        .collect();
    let row_of = |d: &str| -> Result<usize> {
        rows.get(d)
            .copied()
            .ok_or_else(|| data_err!("document {} is not in the index", d))
    };

    let dim = teacher.dim();
    let mut adam = AdamState::new(&student.tensors(), cfg.learning_rate)?;
    let mut rng = derived(cfg.seed, "convdr-train");
    for epoch in 1..=epochs {
        let mut total = 0.0;
        for batch in minibatches(active.len(), cfg.batch_size, &mut rng) {
            let ex: Vec<usize> = batch.iter().map(|&i| active[i]).collect();
            let b = ex.len();
            let inputs: Vec<&[TokenId]> = ex.iter().map(|&i| train[i].input.as_slice()).collect();

            // Frozen candidate rows for labeled examples: positive first.
            let mut cand = Vec::new();
            let mut groups = Vec::new();
            for (r, &i) in ex.iter().enumerate() {
                if !is_labeled.contains(&i) {
                    continue;
                }
                let e = &train[i];
                let pos = e.positives.choose(&mut rng).expect("labeled examples have positives");
                let start = cand.len() / dim;
                for d in std::iter::once(pos).chain(&e.negatives) {
                    cand.extend(index.row_f64(row_of(d)?));
                }
                groups.push((r, start, 1 + e.negatives.len()));
            }

            let mut tape = Tape::new();
            let nodes = student.register(&mut tape);
            let q = nodes.encode_batch(&mut tape, &inputs)?;
            let mut terms = Vec::new();
            if let Some(t) = &targets {
                let mut data = Vec::with_capacity(b * dim);
                for &i in &ex {
                    data.extend_from_slice(t.row(i));
                }
                let target = tape.constant(Tensor::matrix(b, dim, data)?);
                terms.push(tape.mse(q, target)?);
            }
            if !groups.is_empty() {
                let nd = cand.len() / dim;
                let docs = tape.constant(Tensor::matrix(nd, dim, cand)?);
                let scores = tape.matmul_nt(q, docs)?;
                let mut ranks = Vec::with_capacity(groups.len());
                for &(r, start, len) in &groups {
                    let flat: Vec<usize> = (start..start + len).map(|c| r * nd + c).collect();
                    let s = tape.select(scores, &flat)?;
                    ranks.push(tape.softmax_nll(s, 0)?);
                }
                let sum = tape.sum(&ranks)?;
                terms.push(tape.scale(sum, cfg.rank_weight / b as f64)?);
            }
            let loss = tape.sum(&terms)?;
            total += tape.value(loss).item()? * b as f64;
            let mut g = tape.backward(loss)?;
            let grads = nodes.grads(&mut g);
            drop(tape);
            adam_step(&mut student, &mut adam, &grads)?;
        }
        log.push(EpochLog {
            epoch,
            split: "train".into(),
            loss: Some(total / active.len() as f64),
            metric: None,
        });
        dev_line(epoch, &student, &mut log)?;
    }
    Ok(Trained { params: student, log })
}
