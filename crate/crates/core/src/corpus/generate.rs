//! Synthetic conversational-search benchmark.
//!
//! Each topic owns three topic tokens and each of its facets owns two facet
//! tokens. A turn's information need is "topic + facet". Later raw turns drop
//! context: the topic may collapse to the PRONOUN token, and the facet may be
//! replaced by COREF (the turn then continues the previous facet). Documents:
//!
//! * grade 2: all topic tokens and both facet tokens,
//! * grade 1: topic tokens and one facet token,
//! * distractor: one facet's tokens paired with a different topic's tokens.
//!
//! Everything is padded with function words drawn from a Zipf-like law.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::types::{Conversation, ConversationTurn, Corpus, Document, Qrels};
use super::vocab::{TokenClass, TokenId, Vocab, COREF, PRONOUN};
use super::Dataset;
use crate::error::{invalid, Result};
use crate::rng::{derived, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub n_topics: usize,
    pub facets_per_topic: usize,
    pub turns_per_conversation: usize,
    /// Documents per facet for each of grade 2 and grade 1.
    pub docs_per_facet: usize,
    pub distractor_docs: usize,
    pub p_omit: f64,
    pub p_coref: f64,
    pub rewriter_error_rate: f64,
    pub train_fraction: f64,
    pub dev_fraction: f64,
    pub function_words: usize,
    /// Function words added to every query.
    pub query_padding: usize,
    pub doc_padding_min: usize,
    pub doc_padding_max: usize,
    /// Exponent of the rank-frequency law for function words.
    pub function_word_zipf: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_topics: 200,
            facets_per_topic: 5,
            turns_per_conversation: 8,
            docs_per_facet: 3,
            distractor_docs: 5000,
            p_omit: 0.7,
            p_coref: 0.3,
            rewriter_error_rate: 0.25,
            train_fraction: 0.7,
            dev_fraction: 0.1,
            function_words: 48,
            query_padding: 2,
            doc_padding_min: 3,
            doc_padding_max: 8,
            function_word_zipf: 1.0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_topics == 0 {
            return Err(invalid!("n_topics must be positive"));
        }
        if self.facets_per_topic == 0 || self.turns_per_conversation == 0 || self.docs_per_facet == 0 {
            return Err(invalid!(
                "facets_per_topic, turns_per_conversation and docs_per_facet must be positive"
            ));
        }
        if self.distractor_docs > 0 && self.n_topics < 2 {
            return Err(invalid!("distractors need at least two topics"));
        }
        for (name, p) in [
            ("p_omit", self.p_omit),
            ("p_coref", self.p_coref),
            ("rewriter_error_rate", self.rewriter_error_rate),
            ("train_fraction", self.train_fraction),
            ("dev_fraction", self.dev_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid!("{} must lie in [0, 1], got {}", name, p));
            }
        }
        if self.train_fraction + self.dev_fraction > 1.0 + 1e-12 {
            return Err(invalid!("train_fraction + dev_fraction exceeds 1"));
        }
        if self.function_words == 0 && (self.query_padding > 0 || self.doc_padding_max > 0) {
            return Err(invalid!("padding requires function_words > 0"));
        }
        if self.doc_padding_min > self.doc_padding_max {
            return Err(invalid!("doc_padding_min exceeds doc_padding_max"));
        }
        if !(self.function_word_zipf >= 0.0 && self.function_word_zipf.is_finite()) {
            return Err(invalid!("function_word_zipf must be a finite non-negative number"));
        }
        Ok(())
    }

    /// (train, dev, test) topic counts.
    pub fn split_sizes(&self) -> (usize, usize, usize) {
        let n = self.n_topics;
        let train = (((n as f64) * self.train_fraction).round() as usize).min(n);
        let dev = (((n as f64) * self.dev_fraction).round() as usize).min(n - train);
        (train, dev, n - train - dev)
    }
}

const FUNCTION_WORDS: [&str; 48] = [
    "the", "of", "and", "a", "to", "in", "is", "what", "for", "on", "are", "with", "as", "how", "was", "about", "by",
    "from", "at", "or", "an", "be", "this", "which", "tell", "me", "more", "does", "do", "can", "were", "why", "who",
    "when", "where", "its", "their", "there", "some", "other", "into", "than", "also", "between", "after", "before",
    "any", "such",
];

struct Topic {
    tokens: [TokenId; 3],
    facets: Vec<[TokenId; 2]>,
}

/// Sampler over function words with weight 1/(rank+1)^s.
struct FunctionWords {
    ids: Vec<TokenId>,
    cumulative: Vec<f64>,
}

impl FunctionWords {
    fn sample(&self, rng: &mut Rng) -> TokenId {
        let total = *self.cumulative.last().expect("non-empty");
        let u = rng.gen::<f64>() * total;
        let i = self.cumulative.partition_point(|&c| c <= u);
        self.ids[i.min(self.ids.len() - 1)]
    }

    fn sample_n(&self, n: usize, rng: &mut Rng) -> Vec<TokenId> {
        (0..n).map(|_| self.sample(rng)).collect()
    }
}

fn build_vocab(cfg: &GenConfig) -> Result<(Vocab, Vec<Topic>, FunctionWords)> {
    let mut vocab = Vocab::with_reserved();
    let mut fw = Vec::with_capacity(cfg.function_words);
    for i in 0..cfg.function_words {
        let w = match FUNCTION_WORDS.get(i) {
            Some(w) => (*w).to_string(),
            None => format!("fw{i}"),
        };
        fw.push(vocab.add(&w, TokenClass::Function)?);
    }
    let width = cfg.n_topics.to_string().len().max(3);
    let mut topics = Vec::with_capacity(cfg.n_topics);
    for t in 0..cfg.n_topics {
        let mut tokens = [0; 3];
        for (j, slot) in tokens.iter_mut().enumerate() {
            *slot = vocab.add(&format!("tp{:0width$}{}", t, ['a', 'b', 'c'][j]), TokenClass::Topic)?;
        }
        let mut facets = Vec::with_capacity(cfg.facets_per_topic);
        for f in 0..cfg.facets_per_topic {
            let a = vocab.add(&format!("fc{:0width$}x{}a", t, f), TokenClass::Facet)?;
            let b = vocab.add(&format!("fc{:0width$}x{}b", t, f), TokenClass::Facet)?;
            facets.push([a, b]);
        }
        topics.push(Topic { tokens, facets });
    }
    let mut cumulative = Vec::with_capacity(fw.len());
    let mut acc = 0.0;
    for r in 0..fw.len() {
        acc += 1.0 / ((r + 1) as f64).powf(cfg.function_word_zipf);
        cumulative.push(acc);
    }
    Ok((vocab, topics, FunctionWords { ids: fw, cumulative }))
}

enum DocKind {
    Grade2,
    Grade1,
    Distractor,
}

struct DraftDoc {
    tokens: Vec<TokenId>,
    topic: usize,
    facet: usize,
    kind: DocKind,
}

/// Generates a complete dataset bundle from `cfg` and `seed`.
pub fn generate_dataset(cfg: &GenConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let (vocab, topics, fw) = build_vocab(cfg)?;

    // Documents.
    let mut rng = derived(seed, "documents");
    let mut drafts = Vec::new();
    let pad = |rng: &mut Rng| {
        let n = rng.gen_range(cfg.doc_padding_min..=cfg.doc_padding_max);
        if n == 0 {
            Vec::new()
        } else {
            fw.sample_n(n, rng)
        }
    };
    for (t, topic) in topics.iter().enumerate() {
        for (f, facet) in topic.facets.iter().enumerate() {
            for _ in 0..cfg.docs_per_facet {
                let mut tokens = topic.tokens.to_vec();
                tokens.extend_from_slice(facet);
                tokens.extend(pad(&mut rng));
                drafts.push(DraftDoc {
                    tokens,
                    topic: t,
                    facet: f,
                    kind: DocKind::Grade2,
                });
            }
            for _ in 0..cfg.docs_per_facet {
                let mut tokens = topic.tokens.to_vec();
                tokens.push(facet[rng.gen_range(0..2)]);
                tokens.extend(pad(&mut rng));
                drafts.push(DraftDoc {
                    tokens,
                    topic: t,
                    facet: f,
                    kind: DocKind::Grade1,
                });
            }
        }
    }
    let n_pairs = cfg.n_topics * cfg.facets_per_topic;
    for i in 0..cfg.distractor_docs {
        let pair = i % n_pairs;
        let (t, f) = (pair / cfg.facets_per_topic, pair % cfg.facets_per_topic);
        let mut other = rng.gen_range(0..cfg.n_topics - 1);
        if other >= t {
            other += 1;
        }
        let mut tokens = topics[other].tokens.to_vec();
        tokens.extend_from_slice(&topics[t].facets[f]);
        tokens.extend(pad(&mut rng));
        drafts.push(DraftDoc {
            tokens,
            topic: t,
            facet: f,
            kind: DocKind::Distractor,
        });
    }
    for d in &mut drafts {
        d.tokens.shuffle(&mut rng);
    }
    drafts.shuffle(&mut rng);

    let id_width = drafts.len().to_string().len().max(6);
    // (topic, facet) -> doc ids per kind
    let mut grade2 = vec![Vec::new(); n_pairs];
    let mut grade1 = vec![Vec::new(); n_pairs];
    let mut distract = vec![Vec::new(); n_pairs];
    let mut docs = Vec::with_capacity(drafts.len());
    for (i, d) in drafts.into_iter().enumerate() {
        let doc_id = format!("DOC{:0id_width$}", i);
        let pair = d.topic * cfg.facets_per_topic + d.facet;
        match d.kind {
            DocKind::Grade2 => grade2[pair].push(doc_id.clone()),
            DocKind::Grade1 => grade1[pair].push(doc_id.clone()),
            DocKind::Distractor => distract[pair].push(doc_id.clone()),
        }
        docs.push(Document {
            doc_id,
            tokens: d.tokens,
        });
    }
    let corpus = Corpus::new(docs)?;

    // Conversations.
    let mut rng = derived(seed, "conversations");
    let mut conversations = Vec::with_capacity(cfg.n_topics);
    let mut qrels = Qrels::new();
    for (t, topic) in topics.iter().enumerate() {
        let topic_id = (t + 1).to_string();
        let mut turns = Vec::with_capacity(cfg.turns_per_conversation);
        let mut facet = rng.gen_range(0..cfg.facets_per_topic);
        for k in 1..=cfg.turns_per_conversation {
            let (coref, omit) = if k == 1 {
                (false, false)
            } else {
                (rng.gen_bool(cfg.p_coref), rng.gen_bool(cfg.p_omit))
            };
            if k > 1 && !coref && cfg.facets_per_topic > 1 {
                let mut next = rng.gen_range(0..cfg.facets_per_topic - 1);
                if next >= facet {
                    next += 1;
                }
                facet = next;
            }
            let padding = fw.sample_n(cfg.query_padding, &mut rng);
            let mut oracle = padding.clone();
            oracle.extend_from_slice(&topic.tokens);
            oracle.extend_from_slice(&topic.facets[facet]);
            let mut raw = padding;
            if omit {
                raw.push(PRONOUN);
            } else {
                raw.extend_from_slice(&topic.tokens);
            }
            if coref {
                raw.push(COREF);
            } else {
                raw.extend_from_slice(&topic.facets[facet]);
            }
            let withdraw = k > 1 && rng.gen_bool(cfg.rewriter_error_rate);
            let rewriter = if withdraw { raw.clone() } else { oracle.clone() };
            let turn = ConversationTurn {
                topic_id: topic_id.clone(),
                turn_no: k as u32,
                raw,
                oracle,
                rewriter,
            };
            let qid = turn.qid();
            let pair = t * cfg.facets_per_topic + facet;
            for d in &grade2[pair] {
                qrels.insert(&qid, d, 2);
            }
            for d in &grade1[pair] {
                qrels.insert(&qid, d, 1);
            }
            for d in &distract[pair] {
                qrels.insert(&qid, d, 0);
            }
            turns.push(turn);
        }
        conversations.push(Conversation { topic_id, turns });
    }

    // Topic-level split.
    let mut order: Vec<usize> = (0..cfg.n_topics).collect();
    order.shuffle(&mut derived(seed, "split"));
    let (n_train, n_dev, _) = cfg.split_sizes();
    let mut train_idx = order[..n_train].to_vec();
    let mut dev_idx = order[n_train..n_train + n_dev].to_vec();
    let mut test_idx = order[n_train + n_dev..].to_vec();
    for v in [&mut train_idx, &mut dev_idx, &mut test_idx] {
        v.sort_unstable();
    }
    let pick = |idx: &[usize]| idx.iter().map(|&i| conversations[i].clone()).collect::<Vec<_>>();

    Ok(Dataset {
        vocab,
        corpus,
        train: pick(&train_idx),
        dev: pick(&dev_idx),
        test: pick(&test_idx),
        qrels,
        config: cfg.clone(),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GenConfig {
        GenConfig {
            n_topics: 12,
            facets_per_topic: 3,
            turns_per_conversation: 5,
            docs_per_facet: 2,
            distractor_docs: 40,
            ..GenConfig::default()
        }
    }

    #[test]
    fn rejects_inconsistent_configs() {
        for cfg in [
            GenConfig { n_topics: 0, ..small() },
            GenConfig { p_omit: 1.5, ..small() },
            GenConfig {
                train_fraction: 0.8,
                dev_fraction: 0.5,
                ..small()
            },
            GenConfig { n_topics: 1, ..small() },
            GenConfig {
                doc_padding_min: 9,
                doc_padding_max: 2,
                ..small()
            },
        ] {
            assert!(generate_dataset(&cfg, 1).is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn degenerate_config_has_no_context_loss() {
        let cfg = GenConfig {
            p_omit: 0.0,
            p_coref: 0.0,
            rewriter_error_rate: 0.0,
            ..small()
        };
        let ds = generate_dataset(&cfg, 3).unwrap();
        for t in ds.all_conversations().flat_map(|c| &c.turns) {
            assert_eq!(t.raw, t.oracle);
            assert_eq!(t.rewriter, t.oracle);
        }
    }

    #[test]
    fn split_is_by_topic_and_complete() {
        let ds = generate_dataset(&small(), 5).unwrap();
        let (a, b, c) = small().split_sizes();
        assert_eq!((ds.train.len(), ds.dev.len(), ds.test.len()), (a, b, c));
        let mut ids: Vec<_> = ds.all_conversations().map(|c| c.topic_id.clone()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 12);
    }
}
