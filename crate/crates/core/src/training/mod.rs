//! Teacher training, teacher-mined negatives, and the student paradigms.
//!
//! The student starts as a copy of the teacher and only its query side is
//! trained; document embeddings always come from the frozen teacher index.

mod losses;
mod negatives;
mod student;
mod teacher;

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use losses::{kd_loss, kd_loss_node, multi_task_loss, multi_task_loss_node, rank_loss, rank_loss_node};
pub use negatives::sample_negatives;
pub use student::{build_examples, train_convdr, StudentDev, TrainExample};
pub use teacher::{encode_corpus, teacher_pairs, train_teacher, TeacherDev, TeacherPair};

use crate::error::{invalid, Result};
use crate::fsutil;
use crate::numerics::{AdamState, ParamSet, Tensor};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    ZeroShot,
    Kd,
    Rank,
    MultiTask,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::ZeroShot => "zero-shot",
            TrainMode::Kd => "kd",
            TrainMode::Rank => "rank",
            TrainMode::MultiTask => "multi-task",
        }
    }

    pub fn uses_kd(self) -> bool {
        matches!(self, TrainMode::Kd | TrainMode::MultiTask)
    }

    pub fn uses_rank(self) -> bool {
        matches!(self, TrainMode::Rank | TrainMode::MultiTask)
    }
}

/// Student (and reranker) training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub n_negatives: usize,
    pub seed: u64,
    /// Caps how many training turns may use relevance labels.
    pub label_budget: Option<usize>,
    /// Weight of the ranking term in multi-task training.
    pub rank_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Kd,
            epochs: 8,
            batch_size: 4,
            learning_rate: 1e-3,
            n_negatives: 9,
            seed: 0,
            label_budget: None,
            rank_weight: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_common(self.batch_size, self.learning_rate)?;
        if !(self.rank_weight >= 0.0 && self.rank_weight.is_finite()) {
            return Err(invalid!("rank_weight must be finite and non-negative"));
        }
        Ok(())
    }

    /// Epoch count after applying the zero-shot override.
    pub fn effective_epochs(&self) -> usize {
        if self.mode == TrainMode::ZeroShot {
            0
        } else {
            self.epochs
        }
    }
}

/// Teacher (ad hoc dual encoder) training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Uniform random negatives per query, on top of in-batch negatives.
    pub n_negatives: usize,
    pub seed: u64,
    /// Evaluate on dev every this many epochs; 0 means only before and after.
    pub eval_every: usize,
    /// Keep the token embeddings at their initial values.
    pub freeze_embeddings: bool,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig {
            epochs: 20,
            batch_size: 4,
            learning_rate: 1e-3,
            n_negatives: 9,
            seed: 0,
            eval_every: 0,
            freeze_embeddings: false,
        }
    }
}

impl TeacherConfig {
    pub fn validate(&self) -> Result<()> {
        check_common(self.batch_size, self.learning_rate)
    }
}

fn check_common(batch_size: usize, lr: f64) -> Result<()> {
    if batch_size == 0 {
        return Err(invalid!("batch_size must be at least 1"));
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(invalid!("learning_rate must be positive"));
    }
    Ok(())
}

/// One line of a training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub split: String,
    pub loss: Option<f64>,
    /// Dev NDCG@3 when an index is available.
    pub metric: Option<f64>,
}

pub fn log_to_jsonl(log: &[EpochLog]) -> Result<String> {
    let mut s = String::new();
    for e in log {
        s.push_str(&serde_json::to_string(e)?);
        s.push('\n');
    }
    Ok(s)
}

pub fn write_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    fsutil::write_atomic_str(path, &log_to_jsonl(log)?)
}

/// Trained parameters plus the per-epoch log.
#[derive(Debug, Clone)]
pub struct Trained<P> {
    pub params: P,
    pub log: Vec<EpochLog>,
}

/// Shuffled minibatches of `0..n`.
pub(crate) fn minibatches(n: usize, batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

pub(crate) fn adam_step<P: ParamSet>(params: &mut P, adam: &mut AdamState, grads: &[Tensor]) -> Result<()> {
    let mut t = params.tensors_mut();
    adam.step(&mut t, grads)
}
