//! Embedding-space studies: similarity matrices, query-document similarity,
//! per-turn curves, the turn-discard intrusion test, and a latency benchmark.

mod bench;
mod intrusion;
mod similarity;

pub use bench::{bench_to_csv, latency_bench, BenchRow};
pub use intrusion::{content_overlap, intrusion_test, intrusion_to_csv, IntrusionRecord};
pub use similarity::{
    adjacent_turn_similarity, curve_to_csv, export_embeddings, matrix_to_csv, per_turn_metrics,
    qd_nearest_positive_similarity, similarity_matrix, EmbeddingSet, SimMatrix, TurnPoint,
};
