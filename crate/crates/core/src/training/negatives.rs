use std::collections::HashSet;

use crate::corpus::TokenId;
use crate::encoder::EncoderParams;
use crate::error::Result;
use crate::index::{DenseIndex, Hit};

/// Top teacher-ranked documents for the oracle query that are not judged
/// relevant, in rank order; at most `n`.
pub fn sample_negatives(
    index: &DenseIndex,
    teacher: &EncoderParams,
    oracle: &[TokenId],
    positives: &HashSet<String>,
    n: usize,
) -> Result<Vec<String>> {
    if n == 0 || index.is_empty() {
        return Ok(Vec::new());
    }
    let q = teacher.encode(oracle)?;
    let hits = index.search(&q, (n + positives.len()).min(index.len()))?;
    Ok(filter_hits(index, &hits, positives, n))
}

pub(crate) fn filter_hits(index: &DenseIndex, hits: &[Hit], positives: &HashSet<String>, n: usize) -> Vec<String> {
    hits.iter()
        .map(|h| index.doc_id(h.row))
        .filter(|d| !positives.contains(*d))
        .take(n)
        .map(str::to_string)
        .collect()
}
