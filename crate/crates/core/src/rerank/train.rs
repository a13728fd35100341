use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::cross::CrossEncoderParams;
use crate::corpus::{Corpus, TokenId};
use crate::error::{data_err, Result};
use crate::numerics::{AdamState, ParamSet, Tape, Tensor};
use crate::rng::derived;
use crate::training::{adam_step, minibatches, EpochLog, TrainConfig, TrainExample, TrainMode, Trained};

/// Reranker examples share the student's example type: conversational input,
/// oracle rewrite, judged positives, and teacher-mined negatives.
pub type RerankExample = TrainExample;

fn tokens<'c>(corpus: &'c Corpus, doc_id: &str) -> Result<&'c [TokenId]> {
    corpus
        .get(doc_id)
        .map(|d| d.tokens.as_slice())
        .ok_or_else(|| data_err!("document {} is not in the corpus", doc_id))
}

/// Ad hoc reranker: oracle query against its positive and all mined
/// negatives, softmax NLL with the positive first.
pub fn train_teacher_reranker(
    init: CrossEncoderParams,
    corpus: &Corpus,
    examples: &[RerankExample],
    cfg: &TrainConfig,
) -> Result<Trained<CrossEncoderParams>> {
    cfg.validate()?;
    let usable: Vec<usize> = (0..examples.len())
        .filter(|&i| !examples[i].positives.is_empty() && !examples[i].negatives.is_empty())
        .collect();
    if usable.is_empty() {
        return Err(data_err!(
            "reranker training needs examples with positives and negatives"
        ));
    }
    let mut params = init;
    let mut log = Vec::new();
    let mut adam = AdamState::new(&params.tensors(), cfg.learning_rate)?;
    let mut rng = derived(cfg.seed, "reranker-teacher");
    for epoch in 1..=cfg.epochs {
        let mut total = 0.0;
        for batch in minibatches(usable.len(), cfg.batch_size, &mut rng) {
            let b = batch.len();
            let mut seqs = Vec::new();
            let mut groups = Vec::with_capacity(b);
            for &bi in &batch {
                let e = &examples[usable[bi]];
                let pos = e.positives.choose(&mut rng).expect("non-empty");
                let start = seqs.len();
                for d in std::iter::once(pos).chain(&e.negatives) {
                    seqs.push(params.combine(&e.oracle, tokens(corpus, d)?)?);
                }
                groups.push((start, seqs.len() - start));
            }
            let mut tape = Tape::new();
            let nodes = params.register(&mut tape);
            let (_, scores) = nodes.forward(&mut tape, &seqs)?;
            let mut losses = Vec::with_capacity(b);
            for (start, len) in groups {
                let idx: Vec<usize> = (start..start + len).collect();
                let s = tape.select(scores, &idx)?;
                losses.push(tape.softmax_nll(s, 0)?);
            }
            let sum = tape.sum(&losses)?;
            let loss = tape.scale(sum, 1.0 / b as f64)?;
            total += tape.value(loss).item()? * b as f64;
            let mut g = tape.backward(loss)?;
            let mut grads = nodes.grads(&mut g);
            if params.config.freeze_embeddings {
                grads[0].data_mut().fill(0.0);
            }
            drop(tape);
            adam_step(&mut params, &mut adam, &grads)?;
        }
        log.push(EpochLog {
            epoch,
            split: "train".into(),
            loss: Some(total / usable.len() as f64),
            metric: None,
        });
    }
    Ok(Trained { params, log })
}

/// Few-shot reranker training from a teacher reranker.
///
/// KD matches the student's hidden layer on (conversation, doc) to the
/// teacher's on (oracle, doc); Rank is a two-way softmax over one positive
/// and one mined negative; Multi-Task sums both.
pub fn train_reranker(
    teacher: &CrossEncoderParams,
    corpus: &Corpus,
    examples: &[RerankExample],
    cfg: &TrainConfig,
) -> Result<Trained<CrossEncoderParams>> {
    cfg.validate()?;
    let mut student = teacher.clone();
    let mut log = Vec::new();
    let epochs = cfg.effective_epochs();
    if epochs == 0 {
        return Ok(Trained { params: student, log });
    }
    let usable: Vec<usize> = (0..examples.len())
        .filter(|&i| !examples[i].positives.is_empty() && !examples[i].negatives.is_empty())
        .collect();
    let mut labeled = usable.clone();
    if let Some(budget) = cfg.label_budget {
        labeled.shuffle(&mut derived(cfg.seed, "label-budget"));
        labeled.truncate(budget);
        labeled.sort_unstable();
    }
    if cfg.mode.uses_rank() && labeled.is_empty() {
        return Err(data_err!("{} training needs labeled examples", cfg.mode.name()));
    }
    if cfg.mode.uses_kd() && usable.iter().any(|&i| examples[i].oracle.is_empty()) {
        return Err(data_err!("kd training needs oracle rewrites"));
    }
    let active = if cfg.mode == TrainMode::Rank {
        labeled.clone()
    } else {
        usable
    };
    if active.is_empty() {
        return Err(data_err!("no reranker training examples"));
    }
    let is_labeled: HashSet<usize> = labeled.into_iter().collect();
    let d_hid = teacher.config.d_hid;
    let mut adam = AdamState::new(&student.tensors(), cfg.learning_rate)?;
    let mut rng = derived(cfg.seed, "reranker-train");
    for epoch in 1..=epochs {
        let mut total = 0.0;
        for batch in minibatches(active.len(), cfg.batch_size, &mut rng) {
            let b = batch.len();
            let mut seqs = Vec::with_capacity(2 * b);
            let mut target = Vec::new();
            let mut rank_rows = Vec::new();
            for &bi in &batch {
                let i = active[bi];
                let e = &examples[i];
                let pos = e.positives.choose(&mut rng).expect("non-empty");
                let neg = e.negatives.choose(&mut rng).expect("non-empty");
                if is_labeled.contains(&i) {
                    rank_rows.push(seqs.len());
                }
                for d in [pos, neg] {
                    let dt = tokens(corpus, d)?;
                    seqs.push(student.combine(&e.input, dt)?);
                    if cfg.mode.uses_kd() {
                        target.extend(teacher.hidden(&e.oracle, dt)?);
                    }
                }
            }
            let mut tape = Tape::new();
            let nodes = student.register(&mut tape);
            let (h, scores) = nodes.forward(&mut tape, &seqs)?;
            let mut terms = Vec::new();
            if cfg.mode.uses_kd() {
                let t = tape.constant(Tensor::matrix(seqs.len(), d_hid, target)?);
                terms.push(tape.mse(h, t)?);
            }
            if cfg.mode.uses_rank() && !rank_rows.is_empty() {
                let mut ranks = Vec::with_capacity(rank_rows.len());
                for &r in &rank_rows {
                    let s = tape.select(scores, &[r, r + 1])?;
                    ranks.push(tape.softmax_nll(s, 0)?);
                }
                let sum = tape.sum(&ranks)?;
                terms.push(tape.scale(sum, cfg.rank_weight / b as f64)?);
            }
            if terms.is_empty() {
                continue;
            }
            let loss = tape.sum(&terms)?;
            total += tape.value(loss).item()? * b as f64;
            let mut g = tape.backward(loss)?;
            let mut grads = nodes.grads(&mut g);
            if student.config.freeze_embeddings {
                grads[0].data_mut().fill(0.0);
            }
            drop(tape);
            adam_step(&mut student, &mut adam, &grads)?;
        }
        log.push(EpochLog {
            epoch,
            split: "train".into(),
            loss: Some(total / active.len() as f64),
            metric: None,
        });
    }
    Ok(Trained { params: student, log })
}

/// Fraction of examples where a random positive outscores a random
/// unjudged-or-irrelevant document, using the conversational input.
pub fn pairwise_accuracy(
    params: &CrossEncoderParams,
    corpus: &Corpus,
    examples: &[RerankExample],
    seed: u64,
) -> Result<f64> {
    let mut rng = derived(seed, "pairwise-accuracy");
    let mut hits = 0usize;
    let mut n = 0usize;
    for e in examples {
        let Some(pos) = e.positives.choose(&mut rng) else {
            continue;
        };
        if e.positives.len() >= corpus.len() {
            continue;
        }
        let neg = loop {
            let d = &corpus.docs()[rng.gen_range(0..corpus.len())];
            if !e.positives.contains(&d.doc_id) {
                break d;
            }
        };
        let sp = params.score(&e.input, tokens(corpus, pos)?)?;
        let sn = params.score(&e.input, &neg.tokens)?;
        n += 1;
        if sp > sn {
            hits += 1;
        }
    }
    if n == 0 {
        return Err(data_err!("no examples with positives"));
    }
    Ok(hits as f64 / n as f64)
}
