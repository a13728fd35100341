use crate::error::{shape_err, Result};
use crate::numerics::{dot, softmax_nll, NodeId, Tape};

/// Mean squared error between student and teacher embeddings.
pub fn kd_loss(student: &[f64], teacher: &[f64]) -> Result<f64> {
    if student.len() != teacher.len() || student.is_empty() {
        return Err(shape_err!("kd_loss dims {} vs {}", student.len(), teacher.len()));
    }
    let s: f64 = student.iter().zip(teacher).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(s / student.len() as f64)
}

/// Softmax NLL of the positive over `[q·d⁺, q·d⁻_1, …]`.
pub fn rank_loss(q: &[f64], pos: &[f64], negs: &[&[f64]]) -> Result<f64> {
    let mut scores = Vec::with_capacity(negs.len() + 1);
    for d in std::iter::once(pos).chain(negs.iter().copied()) {
        if d.len() != q.len() {
            return Err(shape_err!("rank_loss dims {} vs {}", q.len(), d.len()));
        }
        scores.push(dot(q, d));
    }
    softmax_nll(&scores, 0)
}

pub fn multi_task_loss(kd: f64, rank: f64) -> f64 {
    kd + rank
}

/// Tape form of [`kd_loss`]; `teacher` should be a constant node.
pub fn kd_loss_node(tape: &mut Tape<'_>, student: NodeId, teacher: NodeId) -> Result<NodeId> {
    tape.mse(student, teacher)
}

/// Tape form of [`rank_loss`]; `docs` is a [1+n, d] matrix with the positive first.
pub fn rank_loss_node(tape: &mut Tape<'_>, q: NodeId, docs: NodeId) -> Result<NodeId> {
    let scores = tape.matmul_nt(q, docs)?;
    tape.softmax_nll(scores, 0)
}

pub fn multi_task_loss_node(tape: &mut Tape<'_>, kd: NodeId, rank: NodeId) -> Result<NodeId> {
    tape.add(kd, rank)
}
