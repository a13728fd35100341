//! Exact dense search against a brute-force scan.

use convdr::index::DenseIndex;
use convdr::numerics::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Instance {
    index: DenseIndex,
    ids: Vec<String>,
    rows: Vec<Vec<f32>>,
    queries: Tensor,
}

fn instance(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Instance {
    // coarse values make exact score ties common
    let coarse = rng.gen_bool(0.5);
    let value = |rng: &mut ChaCha8Rng| -> f64 {
        if coarse {
            rng.gen_range(-2i32..=2) as f64 * 0.25
        } else {
            rng.gen_range(-1.0..1.0)
        }
    };
    let mut ids: Vec<String> = (0..n).map(|i| format!("d{:05}", i)).collect();
    ids.shuffle(rng);
    let emb: Vec<f64> = (0..n * dim).map(|_| value(rng)).collect();
    let nq = rng.gen_range(1..9);
    let q: Vec<f64> = (0..nq * dim).map(|_| value(rng)).collect();
    let emb = Tensor::matrix(n, dim, emb).unwrap();
    let index = DenseIndex::build(ids.clone(), &emb).unwrap();
    let rows = (0..n).map(|i| emb.row(i).iter().map(|&x| x as f32).collect()).collect();
    Instance {
        index,
        ids,
        rows,
        queries: Tensor::matrix(nq, dim, q).unwrap(),
    }
}

fn brute_force(inst: &Instance, q: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = inst
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut s = 0.0;
            for j in 0..q.len() {
                s += q[j] * r[j] as f64;
            }
            (i, s)
        })
        .collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| inst.ids[a.0].cmp(&inst.ids[b.0])));
    all.truncate(k);
    all
}

#[test]
pub fn search_and_batch_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut sizes: Vec<(usize, usize)> = vec![(10_000, 64), (1, 64), (7, 3)];
    while sizes.len() < 50 {
        sizes.push((rng.gen_range(1..=10_000), rng.gen_range(1..=64)));
    }
    for (case, &(n, dim)) in sizes.iter().enumerate() {
        let inst = instance(&mut rng, n, dim);
        for k in [1, 10, 100] {
            let batch = inst.index.search_batch(&inst.queries, k).unwrap();
            assert_eq!(batch.len(), inst.queries.shape()[0]);
            for (qi, got_batch) in batch.iter().enumerate() {
                let q = inst.queries.row(qi);
                let want = brute_force(&inst, q, k);
                let got = inst.index.search(q, k).unwrap();
                assert_eq!(got.len(), want.len(), "case {case} n={n} k={k}");
                for (h, (row, score)) in got.iter().zip(&want) {
                    assert_eq!(h.row, *row, "case {case} n={n} dim={dim} k={k}");
                    assert_eq!(h.score.to_bits(), score.to_bits());
                }
                assert_eq!(&got, got_batch, "batch differs, case {case} k={k}");
            }
        }
    }
}

#[test]
pub fn k_larger_than_index_returns_everything() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let inst = instance(&mut rng, 5, 4);
    let hits = inst.index.search(inst.queries.row(0), 100).unwrap();
    assert_eq!(hits.len(), 5);
}

#[test]
pub fn all_ties_order_by_doc_id() {
    let ids: Vec<String> = ["c", "a", "d", "b"].iter().map(|s| s.to_string()).collect();
    let emb = Tensor::matrix(4, 2, vec![1.0; 8]).unwrap();
    let index = DenseIndex::build(ids, &emb).unwrap();
    let hits = index.search(&[0.5, 0.5], 3).unwrap();
    let order: Vec<&str> = hits.iter().map(|h| index.doc_id(h.row)).collect();
    assert_eq!(order, ["a", "b", "c"]);
}

#[test]
pub fn invalid_queries_are_rejected() {
    let emb = Tensor::matrix(2, 3, vec![0.0; 6]).unwrap();
    let index = DenseIndex::build(vec!["x".into(), "y".into()], &emb).unwrap();
    assert!(index.search(&[1.0, 2.0, 3.0], 0).is_err());
    assert!(index.search(&[1.0, 2.0], 1).is_err());
}

#[test]
pub fn save_load_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let inst = instance(&mut rng, 300, 16);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("index.bin");
    inst.index.save(&path).unwrap();
    let loaded = DenseIndex::load(&path).unwrap();
    assert_eq!(loaded, inst.index);
    assert_eq!(
        loaded.search_batch(&inst.queries, 10).unwrap(),
        inst.index.search_batch(&inst.queries, 10).unwrap()
    );
}
