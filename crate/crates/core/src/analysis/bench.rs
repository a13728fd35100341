use std::time::Instant;

use serde::Serialize;

use crate::error::{invalid, Result};
use crate::index::DenseIndex;
use crate::numerics::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    /// `loop` for one search per query, `batch` otherwise.
    pub mode: String,
    pub batch_size: usize,
    pub mean_ms_per_query: f64,
    pub median_ms_per_query: f64,
}

/// Times the per-query loop and each batch size on a single thread,
/// reporting wall time per query amortized over the whole query set.
pub fn latency_bench(
    index: &DenseIndex,
    queries: &Tensor,
    batch_sizes: &[usize],
    repetitions: usize,
    k: usize,
) -> Result<Vec<BenchRow>> {
    if repetitions < 3 {
        return Err(invalid!("repetitions must be at least 3, got {}", repetitions));
    }
    if batch_sizes.contains(&0) {
        return Err(invalid!("batch sizes must be positive"));
    }
    let (n, dim) = queries.dims2()?;
    if n == 0 {
        return Err(invalid!("no queries to benchmark"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| invalid!("thread pool: {}", e))?;
    pool.install(|| {
        let run_loop = || -> Result<()> {
            for i in 0..n {
                std::hint::black_box(index.search(queries.row(i), k)?);
            }
            Ok(())
        };
        let run_batch = |b: usize| -> Result<()> {
            let mut start = 0;
            while start < n {
                let end = (start + b).min(n);
                let chunk = Tensor::matrix(end - start, dim, queries.data()[start * dim..end * dim].to_vec())?;
                std::hint::black_box(index.search_batch(&chunk, k)?);
                start = end;
            }
            Ok(())
        };
        let time = |f: &dyn Fn() -> Result<()>| -> Result<Vec<f64>> {
            f()?;
            let mut per_query = Vec::with_capacity(repetitions);
            for _ in 0..repetitions {
                let t = Instant::now();
                f()?;
                per_query.push(t.elapsed().as_secs_f64() * 1e3 / n as f64);
            }
            Ok(per_query)
        };
        let mut rows = vec![summarize("loop", 1, time(&run_loop)?)];
        for &b in batch_sizes {
            rows.push(summarize("batch", b, time(&|| run_batch(b))?));
        }
        Ok(rows)
    })
}

fn summarize(mode: &str, batch_size: usize, mut t: Vec<f64>) -> BenchRow {
    t.sort_by(f64::total_cmp);
    let mid = t.len() / 2;
    let median = if t.len() % 2 == 1 {
        t[mid]
    } else {
        (t[mid - 1] + t[mid]) / 2.0
    };
    BenchRow {
        mode: mode.to_string(),
        batch_size,
        mean_ms_per_query: t.iter().sum::<f64>() / t.len() as f64,
        median_ms_per_query: median,
    }
}

pub fn bench_to_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("mode,batch_size,mean_ms_per_query,median_ms_per_query\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{}\n",
            r.mode, r.batch_size, r.mean_ms_per_query, r.median_ms_per_query
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_row_per_configuration() {
        let idx = DenseIndex::build(
            (0..50).map(|i| format!("D{i}")).collect(),
            &Tensor::matrix(50, 4, (0..200).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap(),
        )
        .unwrap();
        let q = Tensor::matrix(8, 4, (0..32).map(|i| (i as f64).cos()).collect()).unwrap();
        let rows = latency_bench(&idx, &q, &[1, 4], 3, 5).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows
            .iter()
            .all(|r| r.mean_ms_per_query > 0.0 && r.median_ms_per_query > 0.0));
        assert!(latency_bench(&idx, &q, &[4], 2, 5).is_err());
    }
}
