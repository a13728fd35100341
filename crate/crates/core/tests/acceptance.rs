//! Acceptance criteria 1-11, run in sequence with one PASS/FAIL line each.
//!
//! Everything shares one test so that the timed stages do not compete for
//! cores with each other.

#[path = "gradients.rs"]
mod gradients;
#[path = "metrics.rs"]
mod metrics;
#[path = "retrieval.rs"]
mod retrieval;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use convdr::analysis::latency_bench;
use convdr::experiment::{repro_all, ExperimentConfig, ReproSummary};
use convdr::index::DenseIndex;
use convdr::numerics::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Line {
    id: u32,
    name: String,
    pass: bool,
    detail: String,
}

/// Runs each check, catching panics, and reports elapsed seconds.
fn run_checks(checks: &[fn()]) -> (bool, f64) {
    let start = Instant::now();
    let pass = checks.iter().all(|c| std::panic::catch_unwind(*c).is_ok());
    (pass, start.elapsed().as_secs_f64())
}

fn oracle_line(id: u32, name: &str, checks: &[fn()], budget_s: Option<f64>) -> Line {
    let (ok, secs) = run_checks(checks);
    let in_time = budget_s.is_none_or(|b| secs < b);
    let budget = budget_s.map_or(String::new(), |b| format!(" (budget {b:.0}s)"));
    Line {
        id,
        name: name.into(),
        pass: ok && in_time,
        detail: format!("checks {}, {secs:.2}s{budget}", if ok { "ok" } else { "failed" }),
    }
}

fn files_under(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}

/// Seconds spent producing the zero-shot, KD and few-shot Rank students,
/// including the shared data and teacher stages they depend on.
fn few_shot_seconds(summary: &ReproSummary, budget: usize) -> f64 {
    let stages = [
        "data".to_string(),
        "teacher".into(),
        "examples".into(),
        "student:zero-shot".into(),
        "student:kd".into(),
        format!("student:rank@{budget}"),
    ];
    summary
        .outcomes
        .iter()
        .flat_map(|o| o.timings.iter())
        .filter(|(s, _)| stages.contains(s))
        .map(|(_, t)| t)
        .sum()
}

fn latency_line() -> Line {
    let (n, dim, nq) = (100_000, 64, 256);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let docs = Tensor::matrix(n, dim, (0..n * dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let index = DenseIndex::build((0..n).map(|i| format!("D{i:07}")).collect(), &docs).unwrap();
    drop(docs);
    let queries = Tensor::matrix(nq, dim, (0..nq * dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let rows = latency_bench(&index, &queries, &[64], 3, 100).unwrap();
    let lp = rows.iter().find(|r| r.mode == "loop").unwrap();
    let batch = rows.iter().find(|r| r.mode == "batch" && r.batch_size == 64).unwrap();
    Line {
        id: 10,
        name: "batch-64 search is no slower per query than the loop".into(),
        pass: batch.mean_ms_per_query <= lp.mean_ms_per_query,
        detail: format!(
            "loop {:.4} ms/query, batch-64 {:.4} ms/query (medians {:.4} / {:.4})",
            lp.mean_ms_per_query, batch.mean_ms_per_query, lp.median_ms_per_query, batch.median_ms_per_query
        ),
    }
}

#[test]
fn acceptance_criteria() {
    let mut lines = vec![
        oracle_line(
            1,
            "autodiff matches central differences",
            &[
                gradients::random_graphs_match_finite_differences,
                gradients::encode_gradients,
                gradients::encode_matches_inference_path,
                gradients::kd_loss_gradients_and_value,
                gradients::rank_loss_gradients_and_value,
                gradients::rank_loss_through_trainable_documents,
                gradients::multi_task_gradients_and_value,
                gradients::batched_multi_task_gradients,
                gradients::cross_score_gradients_and_value,
            ],
            Some(30.0),
        ),
        oracle_line(
            2,
            "dense search equals brute force",
            &[
                retrieval::search_and_batch_match_brute_force,
                retrieval::all_ties_order_by_doc_id,
            ],
            Some(60.0),
        ),
        oracle_line(
            3,
            "metrics equal naive references",
            &[
                metrics::metrics_match_naive_reference,
                metrics::ndcg_fixtures,
                metrics::mrr_fixtures,
                metrics::recall_map_hole_fixtures,
            ],
            None,
        ),
        oracle_line(
            4,
            "reciprocal rank fusion",
            &[
                fusion::doc_first_in_two_runs_scores_two_over_61,
                fusion::fusion_is_invariant_to_run_order,
            ],
            None,
        ),
    ];

    let cfg = ExperimentConfig::default();
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let t = Instant::now();
    let first = repro_all(&cfg, 0, 5, Some(dir_a.path())).unwrap();
    let first_secs = t.elapsed().as_secs_f64();

    for c in &first.criteria {
        let mut detail = serde_json::to_string(&c.detail).unwrap();
        let mut pass = c.pass;
        if c.id == 5 {
            let secs = few_shot_seconds(&first, cfg.few_shot_budget);
            pass &= secs < 180.0;
            detail = format!("training {secs:.1}s (budget 180s); {detail}");
        }
        lines.push(Line {
            id: c.id,
            name: c.name.clone(),
            pass,
            detail,
        });
    }

    lines.push(latency_line());

    let t = Instant::now();
    repro_all(&cfg, 0, 5, Some(dir_b.path())).unwrap();
    let second_secs = t.elapsed().as_secs_f64();
    let a = files_under(dir_a.path());
    let b = files_under(dir_b.path());
    let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
    lines.push(Line {
        id: 11,
        name: "repro-all is byte-identical across runs".into(),
        pass: !a.is_empty() && a.len() == b.len() && differing.is_empty() && first_secs < 600.0 && second_secs < 600.0,
        detail: format!(
            "{} files, {} differ, runs {first_secs:.0}s and {second_secs:.0}s (budget 600s each)",
            a.len(),
            differing.len()
        ),
    });

    lines.sort_by_key(|l| l.id);
    for l in &lines {
        println!(
            "criterion {:>2}: {} {}",
            l.id,
            if l.pass { "PASS" } else { "FAIL" },
            l.name
        );
        println!("              {}", l.detail);
    }
    let failed: Vec<u32> = lines.iter().filter(|l| !l.pass).map(|l| l.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
