use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use crate::corpus::{Corpus, Document, RunFile, ScoredDoc};
use crate::error::{data_err, invalid, Result};

pub const DEFAULT_K_RRF: f64 = 60.0;
pub const DEFAULT_DEPTH: usize = 100;

/// Rescores the top `depth` documents of every ranking with `scorer`
/// (ties by doc_id). Documents below the cut keep their relative order and
/// are placed after the reranked block.
pub fn rerank<F>(run: &RunFile, corpus: &Corpus, depth: usize, scorer: F) -> Result<RunFile>
where
    F: Fn(&str, &Document) -> Result<f64> + Sync,
{
    if depth == 0 {
        return Err(invalid!("rerank depth must be at least 1"));
    }
    let qids: Vec<(&str, &[ScoredDoc])> = run.iter().collect();
    let ranked: Vec<(String, Vec<ScoredDoc>)> = qids
        .par_iter()
        .map(|&(qid, docs)| {
            let cut = depth.min(docs.len());
            let mut head = Vec::with_capacity(docs.len());
            for d in &docs[..cut] {
                let doc = corpus
                    .get(&d.doc_id)
                    .ok_or_else(|| data_err!("run document {} is not in the corpus", d.doc_id))?;
                head.push(ScoredDoc {
                    doc_id: d.doc_id.clone(),
                    score: scorer(qid, doc)?,
                });
            }
            let floor = head.iter().map(|d| d.score).fold(f64::INFINITY, f64::min);
            let step = floor.abs().max(1.0) * 1e-6;
            for (i, d) in docs[cut..].iter().enumerate() {
                head.push(ScoredDoc {
                    doc_id: d.doc_id.clone(),
                    score: floor - step * (i + 1) as f64,
                });
            }
            Ok((qid.to_string(), head))
        })
        .collect::<Result<_>>()?;
    let mut out = RunFile::new();
    for (qid, docs) in ranked {
        out.insert(&qid, docs)?;
    }
    Ok(out)
}

/// Reciprocal rank fusion: Σ 1/(k_rrf + rank) over the runs that rank the
/// document within `depth`.
pub fn rrf_fuse(runs: &[&RunFile], k_rrf: f64, depth: usize) -> Result<RunFile> {
    if runs.is_empty() {
        return Err(invalid!("rrf_fuse needs at least one run"));
    }
    if !(k_rrf >= 0.0 && k_rrf.is_finite()) || depth == 0 {
        return Err(invalid!("rrf_fuse needs k_rrf >= 0 and depth >= 1"));
    }
    let qids: BTreeSet<&str> = runs.iter().flat_map(|r| r.qids()).collect();
    let mut out = RunFile::new();
    for qid in qids {
        let mut ranks: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for r in runs {
            if let Some(docs) = r.get(qid) {
                for (i, d) in docs.iter().take(depth).enumerate() {
                    ranks.entry(d.doc_id.as_str()).or_default().push(i + 1);
                }
            }
        }
        // Summing in rank order makes the score independent of run order.
        let fused = ranks
            .into_iter()
            .map(|(doc, mut rs)| {
                rs.sort_unstable();
                let score = rs.iter().map(|&r| 1.0 / (k_rrf + r as f64)).sum();
                (doc, score)
            })
            .collect();
        out.insert_pairs(qid, fused)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(qid: &str, docs: &[&str]) -> RunFile {
        let mut r = RunFile::new();
        let n = docs.len();
        r.insert_pairs(
            qid,
            docs.iter().enumerate().map(|(i, d)| (*d, (n - i) as f64)).collect(),
        )
        .unwrap();
        r
    }

    #[test]
    fn single_run_scores() {
        let a = run("1_1", &["x", "y", "z"]);
        let f = rrf_fuse(&[&a], 60.0, 100).unwrap();
        let got = f.get("1_1").unwrap();
        assert_eq!(got[0].doc_id, "x");
        assert_eq!(got[2].score, 1.0 / 63.0);
    }

    #[test]
    fn rank_one_twice() {
        let a = run("1_1", &["x", "y"]);
        let b = run("1_1", &["x", "z"]);
        let f = rrf_fuse(&[&a, &b], 60.0, 100).unwrap();
        assert!((f.get("1_1").unwrap()[0].score - 2.0 / 61.0).abs() < 1e-12);
    }

    #[test]
    fn split_ranks_beat_middle_ranks() {
        let a = run("1_1", &["p", "q", "r"]);
        let b = run("1_1", &["s", "q", "p"]);
        let f = rrf_fuse(&[&a, &b], 60.0, 100).unwrap();
        assert_eq!(f.get("1_1").unwrap()[0].doc_id, "p");
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(rrf_fuse(&[], 60.0, 10).is_err());
    }
}
