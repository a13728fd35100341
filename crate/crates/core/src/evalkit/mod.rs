//! TREC-style ranking metrics and significance testing.
//!
//! Metrics are evaluated over the qids present in the run. Unjudged documents
//! count as grade 0; a qid whose judgments cannot produce a defined value (no
//! relevant documents, or nothing judged for hole rate) is excluded and
//! counted in [`MetricReport::excluded`].

mod compare;
mod metrics;
mod report;

pub use compare::{permutation_test, permutation_test_unpaired, win_tie_loss, WinTieLoss, TIE_EPS};
pub use metrics::{evaluate, hole_rate_at_k, map_at_k, mrr, ndcg_at_k, recall_at_k, MetricReport, MetricSpec};
pub use report::{reports_to_csv, reports_to_json};
