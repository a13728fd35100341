use rand::seq::SliceRandom;
use rand::RngCore;
use serde::Serialize;

use super::MetricReport;
use crate::error::{invalid, shape_err, Result};
use crate::rng::seeded;

/// Per-query differences smaller than this count as ties.
pub const TIE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WinTieLoss {
    pub win: usize,
    pub tie: usize,
    pub loss: usize,
}

impl WinTieLoss {
    pub fn total(&self) -> usize {
        self.win + self.tie + self.loss
    }

    /// (win, tie, loss) as percentages of the compared queries.
    pub fn percentages(&self) -> (f64, f64, f64) {
        let n = self.total().max(1) as f64;
        (
            100.0 * self.win as f64 / n,
            100.0 * self.tie as f64 / n,
            100.0 * self.loss as f64 / n,
        )
    }
}

/// Compares A against B on the qids both reports evaluated.
pub fn win_tie_loss(a: &MetricReport, b: &MetricReport) -> Result<WinTieLoss> {
    let mut w = WinTieLoss {
        win: 0,
        tie: 0,
        loss: 0,
    };
    for (q, va) in &a.per_qid {
        let Some(vb) = b.per_qid.get(q) else {
            continue;
        };
        let d = va - vb;
        if d.abs() < TIE_EPS {
            w.tie += 1;
        } else if d > 0.0 {
            w.win += 1;
        } else {
            w.loss += 1;
        }
    }
    if w.total() == 0 {
        return Err(invalid!("{} and {} share no evaluated qids", a.name, b.name));
    }
    Ok(w)
}

/// Two-sided paired sign-flip randomization test on the mean difference.
///
/// Returns `(count + 1) / (iterations + 1)` where `count` is the number of
/// sign assignments whose |mean difference| reaches the observed one.
pub fn permutation_test(a: &[f64], b: &[f64], iterations: usize, seed: u64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(shape_err!("paired samples of length {} and {}", a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(invalid!("permutation test needs at least 2 pairs"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let observed = d.iter().sum::<f64>().abs();
    let threshold = observed * (1.0 - 1e-12);
    let mut rng = seeded(seed);
    let mut count = 0usize;
    let mut bits = Vec::with_capacity(d.len().div_ceil(64));
    for _ in 0..iterations {
        bits.clear();
        bits.extend((0..d.len().div_ceil(64)).map(|_| rng.next_u64()));
        let mut s = 0.0;
        for (i, v) in d.iter().enumerate() {
            if bits[i / 64] >> (i % 64) & 1 == 1 {
                s -= v;
            } else {
                s += v;
            }
        }
        if s.abs() >= threshold {
            count += 1;
        }
    }
    Ok((count + 1) as f64 / (iterations + 1) as f64)
}

/// Two-sided label-shuffling test on the difference of group means.
pub fn permutation_test_unpaired(a: &[f64], b: &[f64], iterations: usize, seed: u64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(invalid!("both groups must be non-empty"));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let observed = (mean(a) - mean(b)).abs();
    let threshold = observed * (1.0 - 1e-12);
    let mut pool: Vec<f64> = a.iter().chain(b).copied().collect();
    let mut rng = seeded(seed);
    let mut count = 0usize;
    for _ in 0..iterations {
        pool.shuffle(&mut rng);
        let (pa, pb) = pool.split_at(a.len());
        if (mean(pa) - mean(pb)).abs() >= threshold {
            count += 1;
        }
    }
    Ok((count + 1) as f64 / (iterations + 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn report(vals: &[(&str, f64)]) -> MetricReport {
        let per_qid: BTreeMap<String, f64> = vals.iter().map(|(q, v)| (q.to_string(), *v)).collect();
        MetricReport {
            name: "m".into(),
            mean: 0.0,
            evaluated: per_qid.len(),
            excluded: 0,
            per_qid,
        }
    }

    #[test]
    fn wtl_construction_and_symmetry() {
        let a = report(&[("1", 0.5), ("2", 0.3), ("3", 0.1)]);
        let b = report(&[("1", 0.3), ("2", 0.3), ("3", 0.2)]);
        let w = win_tie_loss(&a, &b).unwrap();
        assert_eq!((w.win, w.tie, w.loss), (1, 1, 1));
        let s = win_tie_loss(&b, &a).unwrap();
        assert_eq!((s.win, s.loss), (w.loss, w.win));
        let same = win_tie_loss(&a, &a).unwrap();
        assert_eq!((same.win, same.tie, same.loss), (0, 3, 0));
        assert!(win_tie_loss(&a, &report(&[("9", 0.0)])).is_err());
    }

    #[test]
    fn identical_samples_give_p_one() {
        let a = [0.1, 0.2, 0.3];
        assert_eq!(permutation_test(&a, &a, 1000, 1).unwrap(), 1.0);
    }

    #[test]
    fn large_shift_gives_minimal_p() {
        let a: Vec<f64> = (0..40).map(|i| 10.0 + (i as f64 * 0.37).sin() * 0.01).collect();
        let b: Vec<f64> = (0..40).map(|i| (i as f64 * 0.91).cos() * 0.01).collect();
        let p = permutation_test(&a, &b, 10_000, 3).unwrap();
        assert!(p <= 2.0 / 10_001.0, "{p}");
    }

    #[test]
    fn rejects_bad_lengths() {
        assert!(permutation_test(&[1.0], &[1.0], 10, 0).is_err());
        assert!(permutation_test(&[1.0, 2.0], &[1.0], 10, 0).is_err());
        assert!(permutation_test_unpaired(&[], &[1.0], 10, 0).is_err());
    }
}
