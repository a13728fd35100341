use std::collections::BTreeSet;

use rand::Rng as _;
use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{Conversation, TokenId, Vocab};
use crate::encoder::{assemble_turns, EncoderParams};
use crate::error::Result;
use crate::numerics::dot;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntrusionRecord {
    pub qid: String,
    pub discarded_turn_no: u32,
    /// emb(full)·emb(without the discarded turn).
    pub sim_before_after: f64,
    /// emb(full)·emb(full).
    pub self_sim: f64,
    pub overlap_ratio: f64,
}

fn content_set(tokens: &[TokenId], vocab: &Vocab) -> BTreeSet<TokenId> {
    tokens.iter().copied().filter(|&t| vocab.is_content(t)).collect()
}

/// Share of the oracle's unique content tokens that also occur in `discarded`.
/// An oracle without content tokens gives 0.
pub fn content_overlap(discarded: &[TokenId], oracle: &[TokenId], vocab: &Vocab) -> f64 {
    let o = content_set(oracle, vocab);
    if o.is_empty() {
        return 0.0;
    }
    let d = content_set(discarded, vocab);
    o.intersection(&d).count() as f64 / o.len() as f64
}

/// For every turn k ≥ 2, removes one seeded previous turn j < k from the
/// conversational input and records how the embedding moves.
pub fn intrusion_test(
    encoder: &EncoderParams,
    conversations: &[Conversation],
    vocab: &Vocab,
    seed: u64,
) -> Result<Vec<IntrusionRecord>> {
    let mut rng = rng::derived(seed, "intrusion");
    let mut jobs = Vec::new();
    for conv in conversations {
        for k in 2..=conv.turns.len() {
            jobs.push((conv, k, rng.gen_range(1..k)));
        }
    }
    let max_len = encoder.config.max_len;
    jobs.par_iter()
        .map(|&(conv, k, j)| {
            let raw = conv.raw_turns();
            let full = assemble_turns(&raw[..k], max_len)?;
            let without: Vec<&[TokenId]> = raw[..k]
                .iter()
                .enumerate()
                .filter(|(i, _)| i + 1 != j)
                .map(|(_, t)| *t)
                .collect();
            let cut = assemble_turns(&without, max_len)?;
            let e_full = encoder.encode(&full)?;
            let e_cut = encoder.encode(&cut)?;
            let turn = &conv.turns[k - 1];
            Ok(IntrusionRecord {
                qid: turn.qid(),
                discarded_turn_no: j as u32,
                sim_before_after: dot(&e_full, &e_cut),
                self_sim: dot(&e_full, &e_full),
                overlap_ratio: content_overlap(raw[j - 1], &turn.oracle, vocab),
            })
        })
        .collect()
}

pub fn intrusion_to_csv(records: &[IntrusionRecord]) -> String {
    let mut s = String::from("qid,discarded_turn,sim,self_sim,overlap\n");
    for r in records {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.qid, r.discarded_turn_no, r.sim_before_after, r.self_sim, r.overlap_ratio
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TokenClass;

    fn vocab() -> Vocab {
        let mut v = Vocab::with_reserved();
        v.add("of", TokenClass::Function).unwrap();
        v.add("bronze", TokenClass::Topic).unwrap();
        v.add("age", TokenClass::Topic).unwrap();
        v.add("tools", TokenClass::Facet).unwrap();
        v
    }

    #[test]
    fn overlap_bounds() {
        let v = vocab();
        assert_eq!(content_overlap(&[4, 2], &[5, 6, 7], &v), 0.0);
        assert_eq!(content_overlap(&[5, 6, 7, 4], &[5, 6, 7, 4], &v), 1.0);
        assert!((content_overlap(&[5, 5], &[5, 6, 4], &v) - 0.5).abs() < 1e-15);
        assert_eq!(content_overlap(&[5], &[4, 2], &v), 0.0);
    }
}
