//! Cross-encoder reranking and reciprocal-rank fusion.

mod cross;
mod fuse;
mod train;

pub use cross::{CrossConfig, CrossEncoderParams, CrossNodes, CROSS_ENCODER_KIND};
pub use fuse::{rerank, rrf_fuse, DEFAULT_DEPTH, DEFAULT_K_RRF};
pub use train::{pairwise_accuracy, train_reranker, train_teacher_reranker, RerankExample};
