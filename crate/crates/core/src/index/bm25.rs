use std::collections::{BTreeMap, HashMap};

use crate::corpus::{Corpus, ScoredDoc, TokenId};
use crate::error::{data_err, invalid, Result};

pub const BM25_K1: f64 = 0.9;
pub const BM25_B: f64 = 0.4;

/// Okapi BM25 over an inverted index of token ids.
#[derive(Debug, Clone)]
pub struct SparseIndex {
    doc_ids: Vec<String>,
    postings: HashMap<TokenId, Vec<(u32, u32)>>,
    doc_lens: Vec<u32>,
    avgdl: f64,
    k1: f64,
    b: f64,
}

impl SparseIndex {
    pub fn build(corpus: &Corpus) -> Result<Self> {
        Self::with_params(corpus, BM25_K1, BM25_B)
    }

    pub fn with_params(corpus: &Corpus, k1: f64, b: f64) -> Result<Self> {
        if corpus.is_empty() {
            return Err(data_err!("cannot build BM25 over an empty corpus"));
        }
        if !(k1 >= 0.0 && (0.0..=1.0).contains(&b)) {
            return Err(invalid!("BM25 needs k1 >= 0 and 0 <= b <= 1"));
        }
        let mut postings: HashMap<TokenId, Vec<(u32, u32)>> = HashMap::new();
        let mut doc_lens = Vec::with_capacity(corpus.len());
        for (i, d) in corpus.docs().iter().enumerate() {
            let mut tf: BTreeMap<TokenId, u32> = BTreeMap::new();
            for &t in &d.tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (t, c) in tf {
                postings.entry(t).or_default().push((i as u32, c));
            }
            doc_lens.push(d.tokens.len() as u32);
        }
        let avgdl = doc_lens.iter().map(|&l| l as f64).sum::<f64>() / doc_lens.len() as f64;
        Ok(SparseIndex {
            doc_ids: corpus.doc_ids(),
            postings,
            doc_lens,
            avgdl,
            k1,
            b,
        })
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn idf(&self, token: TokenId) -> f64 {
        let n = self.len() as f64;
        let df = self.postings.get(&token).map_or(0, Vec::len) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    /// Documents matching at least one query token, top `k` by BM25.
    pub fn search(&self, query: &[TokenId], k: usize) -> Result<Vec<ScoredDoc>> {
        if k == 0 {
            return Err(invalid!("K must be at least 1"));
        }
        let mut qtf: BTreeMap<TokenId, u32> = BTreeMap::new();
        for &t in query {
            *qtf.entry(t).or_default() += 1;
        }
        let mut scores: HashMap<u32, f64> = HashMap::new();
        for (t, mult) in qtf {
            let Some(list) = self.postings.get(&t) else {
                continue;
            };
            let idf = self.idf(t);
            for &(d, tf) in list {
                let tf = tf as f64;
                let norm = self.k1 * (1.0 - self.b + self.b * self.doc_lens[d as usize] as f64 / self.avgdl);
                *scores.entry(d).or_insert(0.0) += mult as f64 * idf * tf / (tf + norm);
            }
        }
        let mut out: Vec<ScoredDoc> = scores
            .into_iter()
            .map(|(d, s)| ScoredDoc {
                doc_id: self.doc_ids[d as usize].clone(),
                score: s,
            })
            .collect();
        out.sort_by(crate::corpus::rank_order);
        out.truncate(k);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;

    fn corpus(docs: &[&[TokenId]]) -> Corpus {
        Corpus::new(
            docs.iter()
                .enumerate()
                .map(|(i, t)| Document {
                    doc_id: format!("D{i}"),
                    tokens: t.to_vec(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_doc_closed_form() {
        let ix = SparseIndex::build(&corpus(&[&[10, 11]])).unwrap();
        let got = ix.search(&[10], 5).unwrap();
        let want = (0.5f64 / 1.5 + 1.0).ln() * (1.0 / (1.0 + 0.9));
        assert_eq!(got.len(), 1);
        assert!((got[0].score - want).abs() < 1e-15);
    }

    #[test]
    fn unknown_terms_give_empty_result() {
        let ix = SparseIndex::build(&corpus(&[&[10, 11], &[12]])).unwrap();
        assert!(ix.search(&[99], 5).unwrap().is_empty());
        assert!(ix.search(&[], 5).unwrap().is_empty());
    }

    #[test]
    fn query_multiplicity_scales_contribution() {
        let ix = SparseIndex::build(&corpus(&[&[10, 11], &[12, 13]])).unwrap();
        let one = ix.search(&[10], 1).unwrap()[0].score;
        let two = ix.search(&[10, 10], 1).unwrap()[0].score;
        assert!((two - 2.0 * one).abs() < 1e-15);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(SparseIndex::build(&Corpus::default()).is_err());
    }
}
