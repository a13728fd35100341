//! Ranking metrics against a naive reference, plus hand fixtures.

use std::collections::HashMap;

use convdr::corpus::{Qrels, RunFile};
use convdr::evalkit::{
    hole_rate_at_k, map_at_k, mrr, ndcg_at_k, permutation_test, recall_at_k, win_tie_loss, MetricReport,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-9;

/// One query: ranked doc names and a judgment table.
struct Case {
    ranked: Vec<String>,
    grades: HashMap<String, u32>,
}

impl Case {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let pool: Vec<String> = (0..30).map(|i| format!("doc{i}")).collect();
        let n_ret = rng.gen_range(0..=20);
        let ranked: Vec<String> = pool.choose_multiple(rng, n_ret).cloned().collect();
        let mut grades = HashMap::new();
        let n_judged = rng.gen_range(0..=20);
        let judged: Vec<String> = pool.choose_multiple(rng, n_judged).cloned().collect();
        for d in judged {
            let g = rng.gen_range(0..=3);
            grades.insert(d, g);
        }
        Case { ranked, grades }
    }

    fn grade(&self, d: &str) -> u32 {
        *self.grades.get(d).unwrap_or(&0)
    }

    fn files(&self) -> (RunFile, Qrels) {
        let mut run = RunFile::new();
        let n = self.ranked.len();
        run.insert_pairs(
            "q_1",
            self.ranked
                .iter()
                .enumerate()
                .map(|(i, d)| (d.clone(), (n - i) as f64))
                .collect(),
        )
        .unwrap();
        let mut qrels = Qrels::new();
        for (d, g) in &self.grades {
            qrels.insert("q_1", d, *g);
        }
        (run, qrels)
    }

    fn ndcg(&self, k: usize) -> Option<f64> {
        let mut dcg = 0.0;
        for i in 0..k.min(self.ranked.len()) {
            dcg += self.grade(&self.ranked[i]) as f64 / (2.0 + i as f64).log2();
        }
        let mut ideal: Vec<u32> = self.grades.values().copied().collect();
        ideal.sort();
        ideal.reverse();
        let mut idcg = 0.0;
        for (i, g) in ideal.iter().take(k).enumerate() {
            idcg += *g as f64 / (2.0 + i as f64).log2();
        }
        if self.grades.is_empty() || idcg == 0.0 {
            None
        } else {
            Some(dcg / idcg)
        }
    }

    fn n_relevant(&self, min: u32) -> usize {
        self.grades.values().filter(|&&g| g >= min).count()
    }

    fn mrr(&self, min: u32, cutoff: Option<usize>) -> Option<f64> {
        if self.n_relevant(min) == 0 {
            return None;
        }
        for (i, d) in self.ranked.iter().enumerate() {
            if cutoff.is_some_and(|c| i >= c) {
                break;
            }
            if self.grade(d) >= min {
                return Some(1.0 / (i + 1) as f64);
            }
        }
        Some(0.0)
    }

    fn recall(&self, k: usize, min: u32) -> Option<f64> {
        let total = self.n_relevant(min);
        if total == 0 {
            return None;
        }
        let found = self.ranked.iter().take(k).filter(|d| self.grade(d) >= min).count();
        Some(found as f64 / total as f64)
    }

    fn map(&self, k: usize, min: u32) -> Option<f64> {
        let total = self.n_relevant(min);
        if total == 0 {
            return None;
        }
        let mut ap = 0.0;
        for i in 0..k.min(self.ranked.len()) {
            if self.grade(&self.ranked[i]) >= min {
                let rel_so_far = self.ranked[..=i].iter().filter(|d| self.grade(d) >= min).count();
                ap += rel_so_far as f64 / (i + 1) as f64;
            }
        }
        Some(ap / total as f64)
    }

    fn hole(&self, k: usize) -> Option<f64> {
        if self.grades.is_empty() || self.ranked.is_empty() {
            return None;
        }
        let top = &self.ranked[..k.min(self.ranked.len())];
        let holes = top.iter().filter(|d| !self.grades.contains_key(*d)).count();
        Some(holes as f64 / top.len() as f64)
    }
}

fn value(r: &MetricReport) -> Option<f64> {
    r.per_qid.get("q_1").copied()
}

fn close(got: Option<f64>, want: Option<f64>, what: &str, case: usize) {
    match (got, want) {
        (None, None) => {}
        (Some(g), Some(w)) => assert!((g - w).abs() <= EPS, "{what} case {case}: {g} vs {w}"),
        _ => panic!("{what} case {case}: {got:?} vs {want:?}"),
    }
}

#[test]
pub fn metrics_match_naive_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(31337);
    for case in 0..1000 {
        let c = Case::random(&mut rng);
        let (run, qrels) = c.files();
        close(value(&ndcg_at_k(&run, &qrels, 3).unwrap()), c.ndcg(3), "ndcg@3", case);
        close(
            value(&ndcg_at_k(&run, &qrels, 10).unwrap()),
            c.ndcg(10),
            "ndcg@10",
            case,
        );
        close(value(&mrr(&run, &qrels, 1, None).unwrap()), c.mrr(1, None), "mrr", case);
        close(
            value(&mrr(&run, &qrels, 1, Some(5)).unwrap()),
            c.mrr(1, Some(5)),
            "mrr@5",
            case,
        );
        close(
            value(&mrr(&run, &qrels, 2, Some(5)).unwrap()),
            c.mrr(2, Some(5)),
            "mrr@5 g2",
            case,
        );
        close(
            value(&recall_at_k(&run, &qrels, 5, 1).unwrap()),
            c.recall(5, 1),
            "recall@5",
            case,
        );
        close(
            value(&map_at_k(&run, &qrels, 10, 1).unwrap()),
            c.map(10, 1),
            "map@10",
            case,
        );
        close(
            value(&hole_rate_at_k(&run, &qrels, 10).unwrap()),
            c.hole(10),
            "hole@10",
            case,
        );
    }
}

fn fixture(ranked: &[&str], judged: &[(&str, u32)]) -> (RunFile, Qrels) {
    let c = Case {
        ranked: ranked.iter().map(|s| s.to_string()).collect(),
        grades: judged.iter().map(|(d, g)| (d.to_string(), *g)).collect(),
    };
    c.files()
}

#[test]
pub fn ndcg_fixtures() {
    let (run, qrels) = fixture(&["a", "b", "c"], &[("a", 2), ("b", 1), ("c", 1)]);
    assert_eq!(ndcg_at_k(&run, &qrels, 3).unwrap().mean, 1.0);
    let (run, qrels) = fixture(&["x", "y", "a"], &[("a", 1)]);
    assert_eq!(ndcg_at_k(&run, &qrels, 3).unwrap().mean, 0.5);
    let (run, qrels) = fixture(&["a"], &[("a", 0)]);
    let r = ndcg_at_k(&run, &qrels, 3).unwrap();
    assert_eq!((r.evaluated, r.excluded), (0, 1));
}

#[test]
pub fn mrr_fixtures() {
    let (run, qrels) = fixture(&["x", "y", "a"], &[("a", 1)]);
    assert_eq!(mrr(&run, &qrels, 1, None).unwrap().mean, 1.0 / 3.0);
    let (run, qrels) = fixture(&["p", "q", "r", "s", "t", "a"], &[("a", 1)]);
    assert_eq!(mrr(&run, &qrels, 1, Some(5)).unwrap().mean, 0.0);
    let (run, qrels) = fixture(&["a", "b"], &[("a", 1), ("b", 2)]);
    assert_eq!(mrr(&run, &qrels, 2, None).unwrap().mean, 0.5);
}

#[test]
pub fn recall_map_hole_fixtures() {
    let (run, qrels) = fixture(&["a", "x", "b", "y"], &[("a", 1), ("b", 2)]);
    assert_eq!(recall_at_k(&run, &qrels, 5, 1).unwrap().mean, 1.0);
    let (run, qrels) = fixture(&["x", "a"], &[("a", 1)]);
    assert_eq!(map_at_k(&run, &qrels, 10, 1).unwrap().mean, 0.5);

    let ten: Vec<String> = (0..10).map(|i| format!("d{i}")).collect();
    let ten: Vec<&str> = ten.iter().map(String::as_str).collect();
    let all: Vec<(&str, u32)> = ten.iter().map(|d| (*d, 0)).collect();
    let (run, qrels) = fixture(&ten, &all);
    assert_eq!(hole_rate_at_k(&run, &qrels, 10).unwrap().mean, 0.0);
    let (run, qrels) = fixture(&ten, &[("elsewhere", 1)]);
    assert_eq!(hole_rate_at_k(&run, &qrels, 10).unwrap().mean, 1.0);
    let (run, qrels) = fixture(&ten, &all[..7]);
    assert!((hole_rate_at_k(&run, &qrels, 10).unwrap().mean - 0.3).abs() < 1e-15);
}

#[test]
pub fn metrics_are_bounded_and_relabeling_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..200 {
        let c = Case::random(&mut rng);
        let renamed = Case {
            ranked: c.ranked.iter().map(|d| format!("z{d}")).collect(),
            grades: c.grades.iter().map(|(d, g)| (format!("z{d}"), *g)).collect(),
        };
        let (r1, q1) = c.files();
        let (r2, q2) = renamed.files();
        for (a, b) in [
            (ndcg_at_k(&r1, &q1, 3).unwrap(), ndcg_at_k(&r2, &q2, 3).unwrap()),
            (mrr(&r1, &q1, 1, None).unwrap(), mrr(&r2, &q2, 1, None).unwrap()),
            (map_at_k(&r1, &q1, 10, 1).unwrap(), map_at_k(&r2, &q2, 10, 1).unwrap()),
            (
                recall_at_k(&r1, &q1, 5, 1).unwrap(),
                recall_at_k(&r2, &q2, 5, 1).unwrap(),
            ),
            (
                hole_rate_at_k(&r1, &q1, 10).unwrap(),
                hole_rate_at_k(&r2, &q2, 10).unwrap(),
            ),
        ] {
            assert_eq!(a.per_qid, b.per_qid);
            assert!(a.per_qid.values().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}

fn report(vals: &[f64]) -> MetricReport {
    MetricReport {
        name: "m".into(),
        per_qid: vals.iter().enumerate().map(|(i, v)| (format!("q_{i}"), *v)).collect(),
        mean: vals.iter().sum::<f64>() / vals.len() as f64,
        evaluated: vals.len(),
        excluded: 0,
    }
}

#[test]
pub fn win_tie_loss_fixtures() {
    let a = report(&[0.5, 0.3, 0.4]);
    let b = report(&[0.3, 0.3, 0.5]);
    let w = win_tie_loss(&a, &b).unwrap();
    assert_eq!((w.win, w.tie, w.loss), (1, 1, 1));
    let s = win_tie_loss(&b, &a).unwrap();
    assert_eq!((s.win, s.tie, s.loss), (w.loss, w.tie, w.win));
    let same = win_tie_loss(&a, &a).unwrap();
    assert_eq!((same.win, same.tie, same.loss), (0, 3, 0));
    let mut other = report(&[0.1]);
    other.per_qid = [("elsewhere".to_string(), 0.1)].into();
    assert!(win_tie_loss(&a, &other).is_err());
}

/// Exact two-sided p over all 2ⁿ sign assignments, without the +1 smoothing.
fn exhaustive_p(d: &[f64]) -> f64 {
    let n = d.len();
    let observed = d.iter().sum::<f64>().abs();
    let mut count = 0u64;
    for mask in 0u64..(1 << n) {
        let s: f64 = d
            .iter()
            .enumerate()
            .map(|(i, v)| if mask >> i & 1 == 1 { -v } else { *v })
            .sum();
        if s.abs() >= observed * (1.0 - 1e-12) {
            count += 1;
        }
    }
    count as f64 / (1u64 << n) as f64
}

#[test]
pub fn permutation_test_matches_exhaustive_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let iterations = 20_000;
    for case in 0..20 {
        let n = rng.gen_range(2..=12);
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let shift = rng.gen_range(0.0..0.4);
        let b: Vec<f64> = a.iter().map(|x| x - shift + rng.gen_range(-0.3..0.3)).collect();
        let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let exact = exhaustive_p(&d);
        let got = permutation_test(&a, &b, iterations, case).unwrap();
        let sigma = (exact * (1.0 - exact) / iterations as f64).sqrt();
        let bound = 3.0 * sigma + 1.0 / iterations as f64;
        assert!((got - exact).abs() <= bound, "case {case}: sampled {got} exact {exact}");
    }
}

#[test]
pub fn permutation_test_fixtures() {
    let a = [0.2, 0.5, 0.9, 0.1];
    assert_eq!(permutation_test(&a, &a, 1000, 1).unwrap(), 1.0);
    let x: Vec<f64> = (0..40).map(|i| 0.9 + 0.001 * (i % 3) as f64).collect();
    let y: Vec<f64> = (0..40).map(|i| 0.1 + 0.001 * (i % 5) as f64).collect();
    let iters = 5000;
    assert!(permutation_test(&x, &y, iters, 2).unwrap() <= 2.0 / (iters + 1) as f64);
    assert!(permutation_test(&x, &y[..39], iters, 2).is_err());
}
