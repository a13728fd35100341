//! TREC qrels/run files, JSONL conversations, and the TSV collection.
//!
//! Each format has a string-level reader/writer (the `path` argument only
//! labels error messages) and a file-level wrapper.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::types::{Conversation, ConversationTurn, Corpus, Document, Qrels, RunFile, ScoredDoc};
use super::vocab::Vocab;
use crate::error::{Error, Result};
use crate::fsutil;

/// `qid 0 doc_id grade` per line, sorted by qid then doc_id.
pub fn qrels_to_string(qrels: &Qrels) -> String {
    let mut s = String::new();
    for (qid, docs) in qrels.iter() {
        for (doc, grade) in docs {
            s.push_str(&format!("{qid} 0 {doc} {grade}\n"));
        }
    }
    s
}

pub fn parse_qrels(text: &str, path: &str) -> Result<Qrels> {
    let mut q = Qrels::new();
    for (n, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 4 {
            return Err(Error::parse(path, n + 1, "expected `qid 0 doc_id grade`"));
        }
        let grade: u32 = fields[3].parse().map_err(|_| {
            Error::parse(
                path,
                n + 1,
                format!("grade {:?} is not a non-negative integer", fields[3]),
            )
        })?;
        q.insert(fields[0], fields[2], grade);
    }
    Ok(q)
}

/// `qid Q0 doc_id rank score tag` per line; ranks start at 1.
pub fn run_to_string(run: &RunFile, tag: &str) -> String {
    let mut s = String::new();
    for (qid, docs) in run.iter() {
        for (i, d) in docs.iter().enumerate() {
            s.push_str(&format!("{} Q0 {} {} {} {}\n", qid, d.doc_id, i + 1, d.score, tag));
        }
    }
    s
}

pub fn parse_run(text: &str, path: &str) -> Result<RunFile> {
    let mut by_qid: BTreeMap<String, Vec<(u64, ScoredDoc, usize)>> = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 6 {
            return Err(Error::parse(path, n + 1, "expected `qid Q0 doc_id rank score tag`"));
        }
        let rank: u64 = fields[3]
            .parse()
            .map_err(|_| Error::parse(path, n + 1, format!("bad rank {:?}", fields[3])))?;
        let score: f64 = fields[4]
            .parse()
            .map_err(|_| Error::parse(path, n + 1, format!("bad score {:?}", fields[4])))?;
        if !score.is_finite() {
            return Err(Error::parse(path, n + 1, "non-finite score"));
        }
        by_qid.entry(fields[0].to_string()).or_default().push((
            rank,
            ScoredDoc {
                doc_id: fields[2].to_string(),
                score,
            },
            n + 1,
        ));
    }
    let mut run = RunFile::new();
    for (qid, mut rows) in by_qid {
        rows.sort_by_key(|r| r.0);
        let mut seen = std::collections::HashSet::new();
        for (_, d, line) in &rows {
            if !seen.insert(d.doc_id.clone()) {
                return Err(Error::parse(
                    path,
                    *line,
                    format!("duplicate doc {} for qid {}", d.doc_id, qid),
                ));
            }
        }
        run.insert(&qid, rows.into_iter().map(|r| r.1).collect())?;
    }
    Ok(run)
}

#[derive(Debug, Serialize, Deserialize)]
struct TurnRecord {
    turn_no: u32,
    raw: String,
    oracle: String,
    rewriter: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct ConversationRecord {
    topic_id: String,
    turns: Vec<TurnRecord>,
}

pub fn conversations_to_jsonl(convs: &[Conversation], vocab: &Vocab) -> Result<String> {
    let mut s = String::new();
    for c in convs {
        let rec = ConversationRecord {
            topic_id: c.topic_id.clone(),
            turns: c
                .turns
                .iter()
                .map(|t| {
                    Ok(TurnRecord {
                        turn_no: t.turn_no,
                        raw: vocab.detokenize(&t.raw)?,
                        oracle: vocab.detokenize(&t.oracle)?,
                        rewriter: vocab.detokenize(&t.rewriter)?,
                    })
                })
                .collect::<Result<_>>()?,
        };
        s.push_str(&serde_json::to_string(&rec)?);
        s.push('\n');
    }
    Ok(s)
}

pub fn parse_conversations(text: &str, vocab: &Vocab, path: &str) -> Result<Vec<Conversation>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: ConversationRecord =
            serde_json::from_str(line).map_err(|e| Error::parse(path, n + 1, e.to_string()))?;
        let conv = Conversation {
            topic_id: rec.topic_id.clone(),
            turns: rec
                .turns
                .into_iter()
                .map(|t| ConversationTurn {
                    topic_id: rec.topic_id.clone(),
                    turn_no: t.turn_no,
                    raw: vocab.tokenize(&t.raw).ids,
                    oracle: vocab.tokenize(&t.oracle).ids,
                    rewriter: vocab.tokenize(&t.rewriter).ids,
                })
                .collect(),
        };
        conv.validate().map_err(|e| Error::parse(path, n + 1, e.to_string()))?;
        out.push(conv);
    }
    Ok(out)
}

/// `doc_id<TAB>text` per line.
pub fn collection_to_tsv(corpus: &Corpus, vocab: &Vocab) -> Result<String> {
    let mut s = String::new();
    for d in corpus.docs() {
        s.push_str(&d.doc_id);
        s.push('\t');
        s.push_str(&vocab.detokenize(&d.tokens)?);
        s.push('\n');
    }
    Ok(s)
}

pub fn parse_collection(text: &str, vocab: &Vocab, path: &str) -> Result<Corpus> {
    let mut docs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (id, body) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, n + 1, "expected doc_id<TAB>text"))?;
        if id.is_empty() {
            return Err(Error::parse(path, n + 1, "empty doc_id"));
        }
        let tokens = vocab.tokenize(body).ids;
        if tokens.is_empty() {
            return Err(Error::parse(path, n + 1, format!("document {id} has no known tokens")));
        }
        docs.push(Document {
            doc_id: id.to_string(),
            tokens,
        });
    }
    Corpus::new(docs).map_err(|e| Error::parse(path, 0, e.to_string()))
}

fn label(path: &Path) -> String {
    path.display().to_string()
}

pub fn read_qrels(path: &Path) -> Result<Qrels> {
    parse_qrels(&fsutil::read_to_string(path)?, &label(path))
}

pub fn write_qrels(path: &Path, qrels: &Qrels) -> Result<()> {
    fsutil::write_atomic_str(path, &qrels_to_string(qrels))
}

pub fn read_run(path: &Path) -> Result<RunFile> {
    parse_run(&fsutil::read_to_string(path)?, &label(path))
}

pub fn write_run(path: &Path, run: &RunFile, tag: &str) -> Result<()> {
    fsutil::write_atomic_str(path, &run_to_string(run, tag))
}

pub fn read_conversations(path: &Path, vocab: &Vocab) -> Result<Vec<Conversation>> {
    parse_conversations(&fsutil::read_to_string(path)?, vocab, &label(path))
}

pub fn write_conversations(path: &Path, convs: &[Conversation], vocab: &Vocab) -> Result<()> {
    fsutil::write_atomic_str(path, &conversations_to_jsonl(convs, vocab)?)
}

pub fn read_collection(path: &Path, vocab: &Vocab) -> Result<Corpus> {
    parse_collection(&fsutil::read_to_string(path)?, vocab, &label(path))
}

pub fn write_collection(path: &Path, corpus: &Corpus, vocab: &Vocab) -> Result<()> {
    fsutil::write_atomic_str(path, &collection_to_tsv(corpus, vocab)?)
}

pub fn read_vocab(path: &Path) -> Result<Vocab> {
    Vocab::from_tsv(&fsutil::read_to_string(path)?, &label(path))
}

pub fn write_vocab(path: &Path, vocab: &Vocab) -> Result<()> {
    fsutil::write_atomic_str(path, &vocab.to_tsv())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qrels_line_parses() {
        let q = parse_qrels("31_4 0 DOC7 2\n", "q").unwrap();
        assert_eq!(q.grade("31_4", "DOC7"), Some(2));
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let err = parse_qrels("1_1 0 A 1\n1_1 0 B\n", "q.txt").unwrap_err();
        assert!(err.to_string().contains("q.txt:2"), "{err}");
        let err = parse_run("1_1 Q0 A 1 0.5 t\n1_1 Q0 A 2 0.4 t\n", "r.txt").unwrap_err();
        assert!(err.to_string().contains("r.txt:2"), "{err}");
        assert!(parse_run("1_1 Q0 A one 0.5 t\n", "r").is_err());
        assert!(parse_qrels("1_1 0 A -1\n", "q").is_err());
    }

    #[test]
    fn tied_scores_serialize_by_doc_id() {
        let mut r = RunFile::new();
        r.insert_pairs("1_1", vec![("DOCB", 3.0), ("DOCA", 3.0)]).unwrap();
        assert_eq!(run_to_string(&r, "t"), "1_1 Q0 DOCA 1 3 t\n1_1 Q0 DOCB 2 3 t\n");
    }

    #[test]
    fn run_round_trip() {
        let mut r = RunFile::new();
        r.insert_pairs("1_2", vec![("A", 0.1 + 0.2), ("B", -1e-300), ("C", 7.25)])
            .unwrap();
        r.insert_pairs("1_1", vec![("Z", 1.0)]).unwrap();
        let back = parse_run(&run_to_string(&r, "x"), "r").unwrap();
        assert_eq!(back, r);
    }
}
