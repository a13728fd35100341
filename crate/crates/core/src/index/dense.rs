use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::path::Path;

use rayon::prelude::*;

use super::format;
use crate::corpus::{RunFile, ScoredDoc};
use crate::error::{data_err, invalid, shape_err, Result};
use crate::numerics::Tensor;

/// Row-major f32 document matrix with exact top-K search.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseIndex {
    doc_ids: Vec<String>,
    dim: usize,
    data: Vec<f32>,
    // Position of each row's doc_id in ascending id order; breaks score ties.
    id_rank: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub row: usize,
    pub score: f64,
}

#[derive(Clone, Copy)]
struct Cand {
    score: f64,
    rank: u32,
    row: u32,
}

impl PartialEq for Cand {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Cand {}
impl PartialOrd for Cand {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Cand {
    // Greater means better: higher score, then smaller doc_id.
    fn cmp(&self, o: &Self) -> Ordering {
        self.score.total_cmp(&o.score).then_with(|| o.rank.cmp(&self.rank))
    }
}

struct TopK {
    k: usize,
    heap: BinaryHeap<std::cmp::Reverse<Cand>>,
}

impl TopK {
    fn new(k: usize) -> Self {
        TopK {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    #[inline]
    fn offer(&mut self, c: Cand) {
        if self.heap.len() < self.k {
            self.heap.push(std::cmp::Reverse(c));
        } else if let Some(worst) = self.heap.peek() {
            if c > worst.0 {
                self.heap.pop();
                self.heap.push(std::cmp::Reverse(c));
            }
        }
    }

    fn finish(self) -> Vec<Hit> {
        let mut v: Vec<Cand> = self.heap.into_iter().map(|r| r.0).collect();
        v.sort_by(|a, b| b.cmp(a));
        v.into_iter()
            .map(|c| Hit {
                row: c.row as usize,
                score: c.score,
            })
            .collect()
    }
}

#[inline]
fn score_row(q: &[f64], row: &[f32]) -> f64 {
    let mut s = 0.0;
    for (a, &b) in q.iter().zip(row) {
        s += a * b as f64;
    }
    s
}

const INTERLEAVE: usize = 4;

impl DenseIndex {
    /// `embeddings` is [n, dim]; values are rounded to f32.
    pub fn build(doc_ids: Vec<String>, embeddings: &Tensor) -> Result<Self> {
        let (n, dim) = embeddings.dims2()?;
        if n != doc_ids.len() {
            return Err(shape_err!("{} embedding rows for {} doc ids", n, doc_ids.len()));
        }
        let data = embeddings.data().iter().map(|&x| x as f32).collect();
        Self::from_f32(doc_ids, dim, data)
    }

    pub fn from_f32(doc_ids: Vec<String>, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != doc_ids.len() * dim {
            return Err(shape_err!(
                "{} values do not form {} rows of dim {}",
                data.len(),
                doc_ids.len(),
                dim
            ));
        }
        if doc_ids.len() > u32::MAX as usize {
            return Err(invalid!("too many documents"));
        }
        let mut order: Vec<usize> = (0..doc_ids.len()).collect();
        order.sort_by(|&a, &b| doc_ids[a].cmp(&doc_ids[b]));
        for w in order.windows(2) {
            if doc_ids[w[0]] == doc_ids[w[1]] {
                return Err(data_err!("duplicate doc_id {}", doc_ids[w[0]]));
            }
        }
        let mut id_rank = vec![0u32; doc_ids.len()];
        for (r, &i) in order.iter().enumerate() {
            id_rank[i] = r as u32;
        }
        Ok(DenseIndex {
            doc_ids,
            dim,
            data,
            id_rank,
        })
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_id(&self, row: usize) -> &str {
        &self.doc_ids[row]
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Stored row widened back to f64.
    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&x| x as f64).collect()
    }

    pub fn as_f32(&self) -> &[f32] {
        &self.data
    }

    /// The stored matrix widened to f64, shape [n, dim].
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.len(), self.dim],
            self.data.iter().map(|&x| x as f64).collect(),
        )
        .expect("consistent shape")
    }

    /// Dot product of `q` with a stored row, accumulated in f64.
    pub fn score(&self, q: &[f64], row: usize) -> f64 {
        score_row(q, self.row(row))
    }

    fn check(&self, dim: usize, k: usize) -> Result<()> {
        if k == 0 {
            return Err(invalid!("K must be at least 1"));
        }
        if dim != self.dim && !self.is_empty() {
            return Err(shape_err!("query dim {} does not match index dim {}", dim, self.dim));
        }
        Ok(())
    }

    /// Top-`k` rows by `q·d`, descending, exact ties by doc_id ascending.
    pub fn search(&self, q: &[f64], k: usize) -> Result<Vec<Hit>> {
        self.check(q.len(), k)?;
        let mut top = TopK::new(k.min(self.len()));
        for i in 0..self.len() {
            top.offer(Cand {
                score: score_row(q, self.row(i)),
                rank: self.id_rank[i],
                row: i as u32,
            });
        }
        Ok(top.finish())
    }

    /// Row i of the result equals `search(queries.row(i), k)` bit for bit.
    pub fn search_batch(&self, queries: &Tensor, k: usize) -> Result<Vec<Vec<Hit>>> {
        let (nq, dim) = match queries.dims2() {
            Ok(d) => d,
            Err(_) if queries.is_empty() => return Ok(Vec::new()),
            Err(e) => return Err(e),
        };
        if nq == 0 {
            return Ok(Vec::new());
        }
        self.check(dim, k)?;
        let blocks: Vec<usize> = (0..nq).step_by(INTERLEAVE).collect();
        let out: Vec<Vec<Vec<Hit>>> = blocks
            .par_iter()
            .map(|&start| {
                let end = (start + INTERLEAVE).min(nq);
                self.search_block(queries, start, end, k)
            })
            .collect();
        Ok(out.into_iter().flatten().collect())
    }

    // Scores up to four queries per pass over the matrix so each row is
    // loaded once. Each accumulator sums in the same order as `score_row`.
    fn search_block(&self, queries: &Tensor, start: usize, end: usize, k: usize) -> Vec<Vec<Hit>> {
        let m = end - start;
        let kk = k.min(self.len());
        let mut tops: Vec<TopK> = (0..m).map(|_| TopK::new(kk)).collect();
        let qs: Vec<&[f64]> = (start..end).map(|i| queries.row(i)).collect();
        if m == INTERLEAVE {
            let (q0, q1, q2, q3) = (qs[0], qs[1], qs[2], qs[3]);
            for i in 0..self.len() {
                let row = self.row(i);
                let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
                for j in 0..self.dim {
                    let d = row[j] as f64;
                    s0 += q0[j] * d;
                    s1 += q1[j] * d;
                    s2 += q2[j] * d;
                    s3 += q3[j] * d;
                }
                let rank = self.id_rank[i];
                let row_id = i as u32;
                for (t, s) in tops.iter_mut().zip([s0, s1, s2, s3]) {
                    t.offer(Cand {
                        score: s,
                        rank,
                        row: row_id,
                    });
                }
            }
        } else {
            for i in 0..self.len() {
                let row = self.row(i);
                for (t, q) in tops.iter_mut().zip(&qs) {
                    t.offer(Cand {
                        score: score_row(q, row),
                        rank: self.id_rank[i],
                        row: i as u32,
                    });
                }
            }
        }
        tops.into_iter().map(TopK::finish).collect()
    }

    pub fn hits_to_scored(&self, hits: &[Hit]) -> Vec<ScoredDoc> {
        hits.iter()
            .map(|h| ScoredDoc {
                doc_id: self.doc_ids[h.row].clone(),
                score: h.score,
            })
            .collect()
    }

    /// Batched search packaged as a run file.
    pub fn search_run(&self, qids: &[String], queries: &Tensor, k: usize) -> Result<RunFile> {
        let results = self.search_batch(queries, k)?;
        if results.len() != qids.len() {
            return Err(shape_err!("{} queries for {} qids", results.len(), qids.len()));
        }
        let mut run = RunFile::new();
        for (qid, hits) in qids.iter().zip(results) {
            run.insert(qid, self.hits_to_scored(&hits))?;
        }
        Ok(run)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        format::write_embeddings(path, &self.doc_ids, self.dim, &self.data)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (ids, dim, data) = format::read_embeddings(path)?;
        Self::from_f32(ids, dim, data)
    }
}
