use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::corpus::{Qrels, RunFile, ScoredDoc};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub name: String,
    pub per_qid: BTreeMap<String, f64>,
    pub mean: f64,
    pub evaluated: usize,
    pub excluded: usize,
}

impl MetricReport {
    fn build(name: String, values: Vec<(String, Option<f64>)>) -> Self {
        let mut per_qid = BTreeMap::new();
        let mut excluded = 0;
        for (q, v) in values {
            match v {
                Some(v) => {
                    per_qid.insert(q, v);
                }
                None => excluded += 1,
            }
        }
        let evaluated = per_qid.len();
        let mean = if evaluated == 0 {
            0.0
        } else {
            per_qid.values().sum::<f64>() / evaluated as f64
        };
        MetricReport {
            name,
            per_qid,
            mean,
            evaluated,
            excluded,
        }
    }

    /// Values for `qids` in order; errors if any is missing.
    pub fn values_for(&self, qids: &[&str]) -> Result<Vec<f64>> {
        qids.iter()
            .map(|q| {
                self.per_qid
                    .get(*q)
                    .copied()
                    .ok_or_else(|| invalid!("{} has no value for qid {}", self.name, q))
            })
            .collect()
    }

    /// Restricts the report to qids accepted by `keep`.
    pub fn filter(&self, mut keep: impl FnMut(&str) -> bool) -> MetricReport {
        let values = self
            .per_qid
            .iter()
            .filter(|(q, _)| keep(q))
            .map(|(q, v)| (q.clone(), Some(*v)))
            .collect();
        MetricReport::build(self.name.clone(), values)
    }
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(invalid!("metric cutoff must be at least 1"));
    }
    Ok(())
}

fn per_query(name: String, run: &RunFile, f: impl Fn(&str, &[ScoredDoc]) -> Option<f64>) -> MetricReport {
    let values = run.iter().map(|(q, docs)| (q.to_string(), f(q, docs))).collect();
    MetricReport::build(name, values)
}

/// Linear-gain NDCG: Σ grade_i / log2(i+1) over the top k, normalized by the ideal.
pub fn ndcg_at_k(run: &RunFile, qrels: &Qrels, k: usize) -> Result<MetricReport> {
    check_k(k)?;
    Ok(per_query(format!("ndcg@{k}"), run, |q, docs| {
        let judged = qrels.judged(q)?;
        let mut ideal: Vec<u32> = judged.values().copied().filter(|&g| g > 0).collect();
        ideal.sort_unstable_by(|a, b| b.cmp(a));
        let idcg: f64 = ideal
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, &g)| g as f64 / ((i + 2) as f64).log2())
            .sum();
        if idcg == 0.0 {
            return None;
        }
        let dcg: f64 = docs
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, d)| judged.get(&d.doc_id).copied().unwrap_or(0) as f64 / ((i + 2) as f64).log2())
            .sum();
        Some(dcg / idcg)
    }))
}

/// Reciprocal rank of the first doc with grade ≥ `min_grade`, within `cutoff` if given.
pub fn mrr(run: &RunFile, qrels: &Qrels, min_grade: u32, cutoff: Option<usize>) -> Result<MetricReport> {
    if min_grade == 0 {
        return Err(invalid!("min_grade must be at least 1"));
    }
    if let Some(c) = cutoff {
        check_k(c)?;
    }
    let name = match cutoff {
        Some(c) => format!("mrr@{c}"),
        None => "mrr".to_string(),
    };
    Ok(per_query(name, run, |q, docs| {
        let judged = qrels.judged(q)?;
        if !judged.values().any(|&g| g >= min_grade) {
            return None;
        }
        let limit = cutoff.unwrap_or(docs.len());
        let rr = docs
            .iter()
            .take(limit)
            .position(|d| judged.get(&d.doc_id).is_some_and(|&g| g >= min_grade))
            .map_or(0.0, |i| 1.0 / (i + 1) as f64);
        Some(rr)
    }))
}

fn relevant_count(qrels: &Qrels, q: &str, min_grade: u32) -> usize {
    qrels
        .judged(q)
        .map_or(0, |m| m.values().filter(|&&g| g >= min_grade).count())
}

pub fn recall_at_k(run: &RunFile, qrels: &Qrels, k: usize, min_grade: u32) -> Result<MetricReport> {
    check_k(k)?;
    Ok(per_query(format!("recall@{k}"), run, |q, docs| {
        let total = relevant_count(qrels, q, min_grade);
        if total == 0 {
            return None;
        }
        let hit = docs
            .iter()
            .take(k)
            .filter(|d| qrels.grade(q, &d.doc_id).is_some_and(|g| g >= min_grade))
            .count();
        Some(hit as f64 / total as f64)
    }))
}

/// Average precision over the top k, divided by the total relevant count.
pub fn map_at_k(run: &RunFile, qrels: &Qrels, k: usize, min_grade: u32) -> Result<MetricReport> {
    check_k(k)?;
    Ok(per_query(format!("map@{k}"), run, |q, docs| {
        let total = relevant_count(qrels, q, min_grade);
        if total == 0 {
            return None;
        }
        let mut hits = 0usize;
        let mut sum = 0.0;
        for (i, d) in docs.iter().take(k).enumerate() {
            if qrels.grade(q, &d.doc_id).is_some_and(|g| g >= min_grade) {
                hits += 1;
                sum += hits as f64 / (i + 1) as f64;
            }
        }
        Some(sum / total as f64)
    }))
}

/// Fraction of the top k with no judgment at all.
pub fn hole_rate_at_k(run: &RunFile, qrels: &Qrels, k: usize) -> Result<MetricReport> {
    check_k(k)?;
    Ok(per_query(format!("hole@{k}"), run, |q, docs| {
        let judged = qrels.judged(q)?;
        let n = k.min(docs.len());
        if n == 0 {
            return None;
        }
        let holes = docs[..n].iter().filter(|d| !judged.contains_key(&d.doc_id)).count();
        Some(holes as f64 / n as f64)
    }))
}

/// A metric name as accepted on the command line, e.g. `ndcg@3` or `mrr`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricSpec {
    Ndcg(usize),
    Mrr(Option<usize>),
    Recall(usize),
    Map(usize),
    Hole(usize),
}

impl FromStr for MetricSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (base, k) = match s.split_once('@') {
            Some((b, k)) => {
                let k: usize = k.parse().map_err(|_| invalid!("bad cutoff in metric {:?}", s))?;
                check_k(k)?;
                (b, Some(k))
            }
            None => (s, None),
        };
        let need = |k: Option<usize>| k.ok_or_else(|| invalid!("metric {:?} needs a cutoff", s));
        Ok(match base {
            "ndcg" => MetricSpec::Ndcg(need(k)?),
            "mrr" => MetricSpec::Mrr(k),
            "recall" => MetricSpec::Recall(need(k)?),
            "map" => MetricSpec::Map(need(k)?),
            "hole" => MetricSpec::Hole(need(k)?),
            _ => return Err(invalid!("unknown metric {:?}", s)),
        })
    }
}

impl fmt::Display for MetricSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricSpec::Ndcg(k) => write!(f, "ndcg@{k}"),
            MetricSpec::Mrr(None) => write!(f, "mrr"),
            MetricSpec::Mrr(Some(k)) => write!(f, "mrr@{k}"),
            MetricSpec::Recall(k) => write!(f, "recall@{k}"),
            MetricSpec::Map(k) => write!(f, "map@{k}"),
            MetricSpec::Hole(k) => write!(f, "hole@{k}"),
        }
    }
}

/// Computes one metric; `min_grade` applies to MRR, recall and MAP.
pub fn evaluate(spec: MetricSpec, run: &RunFile, qrels: &Qrels, min_grade: u32) -> Result<MetricReport> {
    match spec {
        MetricSpec::Ndcg(k) => ndcg_at_k(run, qrels, k),
        MetricSpec::Mrr(c) => mrr(run, qrels, min_grade, c),
        MetricSpec::Recall(k) => recall_at_k(run, qrels, k, min_grade),
        MetricSpec::Map(k) => map_at_k(run, qrels, k, min_grade),
        MetricSpec::Hole(k) => hole_rate_at_k(run, qrels, k),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(docs: &[&str]) -> RunFile {
        let mut r = RunFile::new();
        let n = docs.len();
        r.insert_pairs(
            "1_1",
            docs.iter().enumerate().map(|(i, d)| (*d, (n - i) as f64)).collect(),
        )
        .unwrap();
        r
    }

    fn qrels(pairs: &[(&str, u32)]) -> Qrels {
        let mut q = Qrels::new();
        for (d, g) in pairs {
            q.insert("1_1", d, *g);
        }
        q
    }

    #[test]
    fn ndcg_hand_cases() {
        let q = qrels(&[("c", 1)]);
        let r = ndcg_at_k(&run(&["a", "b", "c"]), &q, 3).unwrap();
        assert!((r.mean - 0.5).abs() < 1e-15);
        let q = qrels(&[("a", 2), ("b", 1), ("c", 0)]);
        assert_eq!(ndcg_at_k(&run(&["a", "b", "c"]), &q, 3).unwrap().mean, 1.0);
    }

    #[test]
    fn mrr_hand_cases() {
        let q = qrels(&[("c", 1)]);
        assert_eq!(mrr(&run(&["a", "b", "c"]), &q, 1, None).unwrap().mean, 1.0 / 3.0);
        let q = qrels(&[("f", 1)]);
        assert_eq!(
            mrr(&run(&["a", "b", "c", "d", "e", "f"]), &q, 1, Some(5)).unwrap().mean,
            0.0
        );
        let q = qrels(&[("a", 1), ("b", 2)]);
        assert_eq!(mrr(&run(&["a", "b"]), &q, 2, None).unwrap().mean, 0.5);
    }

    #[test]
    fn recall_map_hole() {
        let q = qrels(&[("a", 1), ("c", 1)]);
        assert_eq!(recall_at_k(&run(&["a", "b", "c"]), &q, 5, 1).unwrap().mean, 1.0);
        let q = qrels(&[("b", 1)]);
        assert_eq!(map_at_k(&run(&["a", "b", "c"]), &q, 10, 1).unwrap().mean, 0.5);
        let ids: Vec<String> = (0..10).map(|i| format!("d{i}")).collect();
        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let judged: Vec<(&str, u32)> = refs[..7].iter().map(|d| (*d, 0)).collect();
        let r = hole_rate_at_k(&run(&refs), &qrels(&judged), 10).unwrap();
        assert!((r.mean - 0.3).abs() < 1e-15);
    }

    #[test]
    fn unjudged_qids_are_excluded() {
        let r = ndcg_at_k(&run(&["a"]), &Qrels::new(), 3).unwrap();
        assert_eq!((r.evaluated, r.excluded, r.mean), (0, 1, 0.0));
    }

    #[test]
    fn metric_spec_round_trip() {
        for s in ["ndcg@3", "mrr", "mrr@5", "recall@5", "map@10", "hole@10"] {
            assert_eq!(s.parse::<MetricSpec>().unwrap().to_string(), s);
        }
        assert!("ndcg".parse::<MetricSpec>().is_err());
        assert!("ndcg@0".parse::<MetricSpec>().is_err());
        assert!("p@5".parse::<MetricSpec>().is_err());
    }
}
