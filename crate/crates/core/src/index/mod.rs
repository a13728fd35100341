//! Exact dense retrieval over frozen document embeddings, and BM25.

mod bm25;
mod dense;
pub mod format;

pub use bm25::{SparseIndex, BM25_B, BM25_K1};
pub use dense::{DenseIndex, Hit};
