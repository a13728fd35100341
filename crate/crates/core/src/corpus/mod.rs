//! Conversations, documents, judgments, runs, and their file formats.

mod generate;
pub mod io;
mod types;
mod vocab;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use generate::{generate_dataset, GenConfig};
pub use types::{parse_qid, rank_order, Conversation, ConversationTurn, Corpus, Document, Qrels, RunFile, ScoredDoc};
pub use vocab::{tokenize, TokenClass, TokenId, Tokenized, Vocab, COREF, PAD, PRONOUN, SEP};

use crate::error::{invalid, Result};
use crate::fsutil;

/// Which conversations of a bundle to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

/// A complete benchmark: vocabulary, collection, split conversations, judgments.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub vocab: Vocab,
    pub corpus: Corpus,
    pub train: Vec<Conversation>,
    pub dev: Vec<Conversation>,
    pub test: Vec<Conversation>,
    pub qrels: Qrels,
    pub config: GenConfig,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct BundleMeta {
    seed: u64,
    config: GenConfig,
}

pub const VOCAB_FILE: &str = "vocab.tsv";
pub const COLLECTION_FILE: &str = "collection.tsv";
pub const QRELS_FILE: &str = "qrels.txt";
pub const META_FILE: &str = "gen_config.json";

impl Dataset {
    pub fn split(&self, split: Split) -> &[Conversation] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    pub fn all_conversations(&self) -> impl Iterator<Item = &Conversation> {
        self.train.iter().chain(&self.dev).chain(&self.test)
    }

    pub fn find_turn(&self, qid: &str) -> Option<(&Conversation, usize)> {
        let (topic, turn) = parse_qid(qid).ok()?;
        let conv = self.all_conversations().find(|c| c.topic_id == topic)?;
        let k = turn as usize;
        (k >= 1 && k <= conv.turns.len()).then_some((conv, k))
    }

    /// Writes the bundle files into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        io::write_vocab(&dir.join(VOCAB_FILE), &self.vocab)?;
        io::write_collection(&dir.join(COLLECTION_FILE), &self.corpus, &self.vocab)?;
        for split in [Split::Train, Split::Dev, Split::Test] {
            io::write_conversations(
                &dir.join(format!("{}.jsonl", split.name())),
                self.split(split),
                &self.vocab,
            )?;
        }
        io::write_qrels(&dir.join(QRELS_FILE), &self.qrels)?;
        let meta = BundleMeta {
            seed: self.seed,
            config: self.config.clone(),
        };
        fsutil::write_atomic_str(&dir.join(META_FILE), &(serde_json::to_string_pretty(&meta)? + "\n"))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let vocab = io::read_vocab(&dir.join(VOCAB_FILE))?;
        let corpus = io::read_collection(&dir.join(COLLECTION_FILE), &vocab)?;
        let read = |s: Split| io::read_conversations(&dir.join(format!("{}.jsonl", s.name())), &vocab);
        let train = read(Split::Train)?;
        let dev = read(Split::Dev)?;
        let test = read(Split::Test)?;
        let qrels = io::read_qrels(&dir.join(QRELS_FILE))?;
        let meta: BundleMeta = serde_json::from_str(&fsutil::read_to_string(&dir.join(META_FILE))?)?;
        let ds = Dataset {
            vocab,
            corpus,
            train,
            dev,
            test,
            qrels,
            config: meta.config,
            seed: meta.seed,
        };
        ds.check_references()?;
        Ok(ds)
    }

    /// Every judged qid is a turn and every judged doc is in the collection.
    pub fn check_references(&self) -> Result<()> {
        let qids: std::collections::HashSet<String> = self
            .all_conversations()
            .flat_map(|c| c.turns.iter().map(|t| t.qid()))
            .collect();
        for (qid, docs) in self.qrels.iter() {
            if !qids.contains(qid) {
                return Err(invalid!("qrels qid {} has no conversation turn", qid));
            }
            for d in docs.keys() {
                if self.corpus.get(d).is_none() {
                    return Err(invalid!("qrels doc {} for {} is not in the collection", d, qid));
                }
            }
        }
        Ok(())
    }
}
