//! Conversational dense retrieval with a frozen ad hoc teacher.
//!
//! A teacher dual encoder is trained on de-contextualized (oracle) queries and
//! its document embeddings are frozen into a [`index::DenseIndex`]. A student
//! query encoder, initialized from the teacher, learns to map the raw
//! multi-turn conversation into the teacher's embedding space by knowledge
//! distillation ([`training::TrainMode::Kd`]), a ranking loss
//! ([`training::TrainMode::Rank`]), or both.
//!
//! Everything runs on small bag-of-tokens encoders over a synthetic
//! conversational corpus ([`corpus::generate_dataset`]); TREC run/qrels files
//! are supported for external data.

pub mod error;
pub mod fsutil;
pub mod rng;

pub mod analysis;
pub mod corpus;
pub mod encoder;
pub mod evalkit;
pub mod experiment;
pub mod index;
pub mod numerics;
pub mod rerank;
pub mod training;

pub use error::{Error, Result};
