use crate::corpus::{Conversation, TokenId, SEP};
use crate::error::{invalid, Result};

/// Joins turns with SEP, dropping the earliest turns until the sequence fits
/// `max_len`. The last turn is never dropped; if it alone is too long, its
/// last `max_len` tokens are kept.
pub fn assemble_turns(turns: &[&[TokenId]], max_len: usize) -> Result<Vec<TokenId>> {
    if turns.is_empty() {
        return Err(invalid!("no turns to assemble"));
    }
    if max_len == 0 {
        return Err(invalid!("max_len must be positive"));
    }
    let mut start = 0;
    let mut total: usize = turns.iter().map(|t| t.len()).sum::<usize>() + turns.len() - 1;
    while total > max_len && start + 1 < turns.len() {
        total -= turns[start].len() + 1;
        start += 1;
    }
    let last = turns[turns.len() - 1];
    if start == turns.len() - 1 && last.len() > max_len {
        return Ok(last[last.len() - max_len..].to_vec());
    }
    let mut out = Vec::with_capacity(total);
    for (i, t) in turns[start..].iter().enumerate() {
        if i > 0 {
            out.push(SEP);
        }
        out.extend_from_slice(t);
    }
    Ok(out)
}

/// Student input for turn `k` (1-based): raw q_1 ⊕ SEP ⊕ … ⊕ q_k.
pub fn assemble_conversational_input(conv: &Conversation, k: usize, max_len: usize) -> Result<Vec<TokenId>> {
    if k == 0 || k > conv.turns.len() {
        return Err(invalid!(
            "turn {} out of range for topic {} with {} turns",
            k,
            conv.topic_id,
            conv.turns.len()
        ));
    }
    let turns: Vec<&[TokenId]> = conv.turns[..k].iter().map(|t| t.raw.as_slice()).collect();
    assemble_turns(&turns, max_len)
}
