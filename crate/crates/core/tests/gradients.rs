//! Reverse-mode gradients against central finite differences.

use convdr::encoder::{EncoderConfig, EncoderParams};
use convdr::numerics::{NodeId, ParamSet, Tape, Tensor};
use convdr::rerank::{CrossConfig, CrossEncoderParams};
use convdr::training::{kd_loss, kd_loss_node, multi_task_loss, multi_task_loss_node, rank_loss, rank_loss_node};
use convdr::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
// Gradients smaller than this are compared in absolute terms.
const FLOOR: f64 = 1e-5;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FLOOR)
}

/// Builds a scalar loss from parameter leaves.
type Builder<'f> = dyn Fn(&mut Tape<'_>, &[NodeId]) -> Result<NodeId> + 'f;

fn eval(params: &[Tensor], build: &Builder) -> f64 {
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = params.iter().map(|p| tape.param(p)).collect();
    let loss = build(&mut tape, &ids).unwrap();
    tape.value(loss).item().unwrap()
}

/// Largest relative error over every parameter entry.
fn max_error(params: &[Tensor], build: &Builder) -> f64 {
    let grads: Vec<Tensor> = {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = params.iter().map(|p| tape.param(p)).collect();
        let loss = build(&mut tape, &ids).unwrap();
        let g = tape.backward(loss).unwrap();
        ids.iter().map(|&i| g.get(i)).collect()
    };
    let mut worst = 0.0f64;
    let mut work = params.to_vec();
    for (pi, g) in grads.iter().enumerate() {
        assert_eq!(g.shape(), params[pi].shape());
        for j in 0..params[pi].len() {
            let orig = params[pi].data()[j];
            work[pi].data_mut()[j] = orig + H;
            let up = eval(&work, build);
            work[pi].data_mut()[j] = orig - H;
            let down = eval(&work, build);
            work[pi].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * H);
            worst = worst.max(rel_err(g.data()[j], numeric));
        }
    }
    worst
}

/// One randomly shaped graph: embedding lookups, pooling or not, a stack
/// of affine+tanh layers, and a random scalar head.
struct RandomGraph {
    params: Vec<Tensor>,
    ids: Vec<u32>,
    pool: bool,
    layers: usize,
    head: u8,
    target: Tensor,
    pick: Vec<usize>,
    positive: usize,
    scale: f64,
}

impl RandomGraph {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        let vocab = rng.gen_range(3..8);
        let d = rng.gen_range(2..5);
        let n_ids = rng.gen_range(1..5);
        let layers = rng.gen_range(1..3);
        let mut params = vec![rand_tensor(rng, &[vocab, d], 1.0)];
        let mut width = d;
        for _ in 0..layers {
            let next = rng.gen_range(2..5);
            params.push(rand_tensor(rng, &[width, next], 0.8));
            params.push(rand_tensor(rng, &[next], 0.5));
            width = next;
        }
        // extra matrix for dot / matmul_nt heads
        let others = rng.gen_range(2..4);
        params.push(rand_tensor(rng, &[others, width], 1.0));
        let pool = rng.gen_bool(0.5);
        let rows = if pool { 1 } else { n_ids };
        let target = if pool {
            rand_tensor(rng, &[width], 1.0)
        } else {
            rand_tensor(rng, &[rows, width], 1.0)
        };
        let flat = rows * width;
        let pick = (0..rng.gen_range(2..5)).map(|_| rng.gen_range(0..flat)).collect();
        RandomGraph {
            ids: (0..n_ids).map(|_| rng.gen_range(0..vocab as u32)).collect(),
            pool,
            layers,
            head: rng.gen_range(0..5),
            target,
            pick,
            positive: rng.gen_range(0..others),
            scale: rng.gen_range(0.2..2.0),
            params,
        }
    }

    fn build(&self, tape: &mut Tape<'_>, p: &[NodeId]) -> Result<NodeId> {
        let mut x = tape.gather(p[0], &self.ids)?;
        if self.pool {
            x = tape.mean_rows(x)?;
        }
        for l in 0..self.layers {
            x = tape.matmul(x, p[1 + 2 * l])?;
            x = tape.add_bias(x, p[2 + 2 * l])?;
            x = tape.tanh(x)?;
        }
        let other = p[p.len() - 1];
        let target = tape.constant(self.target.clone());
        let loss = match self.head {
            0 => tape.mse(x, target)?,
            1 => {
                let q = if self.pool { x } else { tape.mean_rows(x)? };
                let s = tape.matmul_nt(q, other)?;
                tape.softmax_nll(s, self.positive)?
            }
            2 => {
                let s = tape.select(x, &self.pick)?;
                let m = tape.mse(x, target)?;
                let d = tape.dot(s, s)?;
                tape.add(m, d)?
            }
            3 => {
                let d = tape.dot(x, target)?;
                let m = tape.mse(x, target)?;
                tape.sum(&[d, m, d])?
            }
            _ => {
                let q = if self.pool { x } else { tape.mean_rows(x)? };
                let cat = tape.concat_rows(&[q, q])?;
                let s = tape.matmul_nt(cat, other)?;
                let mean = tape.mean_rows(s)?;
                let nll = tape.softmax_nll(mean, self.positive)?;
                let t = tape.tanh(nll)?;
                let parts: Vec<NodeId> = (0..2).map(|_| t).collect();
                let st = tape.stack(&parts)?;
                let tgt = tape.constant(Tensor::vector(vec![0.1, -0.2]));
                tape.mse(st, tgt)?
            }
        };
        tape.scale(loss, self.scale)
    }
}

#[test]
pub fn random_graphs_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6ad);
    let mut worst = 0.0f64;
    for case in 0..150 {
        let g = RandomGraph::new(&mut rng);
        let e = max_error(&g.params, &|t, p| g.build(t, p));
        assert!(e < TOL, "graph {case} (head {}) rel err {e:e}", g.head);
        worst = worst.max(e);
    }
    eprintln!("random graphs: worst rel err {worst:e}");
}

fn small_encoder(seed: u64) -> EncoderParams {
    EncoderParams::init(EncoderConfig {
        vocab_size: 9,
        d_emb: 4,
        d_hid: 5,
        d_out: 3,
        init_scale: 0.8,
        seed,
        ..EncoderConfig::default()
    })
    .unwrap()
}

fn small_cross(seed: u64) -> CrossEncoderParams {
    CrossEncoderParams::init(CrossConfig {
        vocab_size: 9,
        d_emb: 4,
        d_hid: 5,
        init_scale: 0.8,
        seed,
        ..CrossConfig::default()
    })
    .unwrap()
}

type EncoderLoss<'a> = dyn Fn(&mut Tape<'_>, &EncoderParams, &[NodeId]) -> Result<NodeId> + 'a;

fn encoder_grads_check(seed: u64, loss: &EncoderLoss<'_>) -> f64 {
    let enc = small_encoder(seed);
    let params: Vec<Tensor> = enc.tensors().into_iter().cloned().collect();
    max_error(&params, &|t, ids| loss(t, &enc, ids))
}

fn nodes(ids: &[NodeId]) -> convdr::encoder::EncoderNodes {
    convdr::encoder::EncoderNodes {
        embedding: ids[0],
        w1: ids[1],
        b1: ids[2],
        w2: ids[3],
        b2: ids[4],
    }
}

#[test]
pub fn encode_gradients() {
    for seed in 0..5 {
        let e = encoder_grads_check(seed, &|t, _, ids| {
            let h = nodes(ids).encode(t, &[3, 1, 3, 7])?;
            let w = t.constant(Tensor::vector(vec![0.5, -1.0, 2.0]));
            t.dot(h, w)
        });
        assert!(e < TOL, "encode rel err {e:e}");
    }
}

#[test]
pub fn encode_matches_inference_path() {
    let enc = small_encoder(3);
    let mut tape = Tape::new();
    let n = enc.register(&mut tape);
    let h = n.encode(&mut tape, &[2, 8, 2]).unwrap();
    let direct = enc.encode(&[2, 8, 2]).unwrap();
    for (a, b) in tape.value(h).data().iter().zip(&direct) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
pub fn kd_loss_gradients_and_value() {
    let teacher_out = vec![0.3, -0.7, 1.1];
    for seed in 0..5 {
        let e = encoder_grads_check(seed, &|t, _, ids| {
            let s = nodes(ids).encode(t, &[1, 4, 5])?;
            let target = t.constant(Tensor::vector(teacher_out.clone()));
            kd_loss_node(t, s, target)
        });
        assert!(e < TOL, "kd rel err {e:e}");
    }
    let enc = small_encoder(1);
    let s = enc.encode(&[1, 4, 5]).unwrap();
    let mut tape = Tape::new();
    let n = enc.register(&mut tape);
    let sn = n.encode(&mut tape, &[1, 4, 5]).unwrap();
    let tn = tape.constant(Tensor::vector(teacher_out.clone()));
    let l = kd_loss_node(&mut tape, sn, tn).unwrap();
    let want = kd_loss(&s, &teacher_out).unwrap();
    assert!((tape.value(l).item().unwrap() - want).abs() < 1e-12);
}

fn doc_matrix() -> Tensor {
    Tensor::matrix(
        4,
        3,
        vec![0.2, -0.5, 0.9, 1.0, 0.1, -0.3, -0.4, 0.6, 0.2, 0.05, -0.8, 0.7],
    )
    .unwrap()
}

#[test]
pub fn rank_loss_gradients_and_value() {
    for seed in 0..5 {
        let e = encoder_grads_check(seed, &|t, _, ids| {
            let q = nodes(ids).encode(t, &[0, 6, 2, 2])?;
            let docs = t.constant(doc_matrix());
            rank_loss_node(t, q, docs)
        });
        assert!(e < TOL, "rank rel err {e:e}");
    }
    let enc = small_encoder(2);
    let q = enc.encode(&[0, 6, 2, 2]).unwrap();
    let d = doc_matrix();
    let negs: Vec<&[f64]> = (1..4).map(|i| d.row(i)).collect();
    let want = rank_loss(&q, d.row(0), &negs).unwrap();
    let mut tape = Tape::new();
    let n = enc.register(&mut tape);
    let qn = n.encode(&mut tape, &[0, 6, 2, 2]).unwrap();
    let dn = tape.constant(d.clone());
    let l = rank_loss_node(&mut tape, qn, dn).unwrap();
    assert!((tape.value(l).item().unwrap() - want).abs() < 1e-12);
}

#[test]
pub fn rank_loss_through_trainable_documents() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..10 {
        let params = vec![rand_tensor(&mut rng, &[3], 1.0), rand_tensor(&mut rng, &[5, 3], 1.0)];
        let e = max_error(&params, &|t, p| rank_loss_node(t, p[0], p[1]));
        assert!(e < TOL, "rank (docs) rel err {e:e}");
    }
}

#[test]
pub fn multi_task_gradients_and_value() {
    let teacher_out = vec![-0.2, 0.4, 0.9];
    for seed in 0..5 {
        let e = encoder_grads_check(seed, &|t, _, ids| {
            let n = nodes(ids);
            let conv = n.encode(t, &[1, 2, 3, 8])?;
            let target = t.constant(Tensor::vector(teacher_out.clone()));
            let kd = kd_loss_node(t, conv, target)?;
            let docs = t.constant(doc_matrix());
            let rank = rank_loss_node(t, conv, docs)?;
            multi_task_loss_node(t, kd, rank)
        });
        assert!(e < TOL, "multi-task rel err {e:e}");
    }
    let enc = small_encoder(4);
    let conv = enc.encode(&[1, 2, 3, 8]).unwrap();
    let d = doc_matrix();
    let negs: Vec<&[f64]> = (1..4).map(|i| d.row(i)).collect();
    let want = multi_task_loss(
        kd_loss(&conv, &teacher_out).unwrap(),
        rank_loss(&conv, d.row(0), &negs).unwrap(),
    );
    let mut tape = Tape::new();
    let n = enc.register(&mut tape);
    let c = n.encode(&mut tape, &[1, 2, 3, 8]).unwrap();
    let tn = tape.constant(Tensor::vector(teacher_out.clone()));
    let kd = kd_loss_node(&mut tape, c, tn).unwrap();
    let dn = tape.constant(d.clone());
    let rank = rank_loss_node(&mut tape, c, dn).unwrap();
    let l = multi_task_loss_node(&mut tape, kd, rank).unwrap();
    assert!((tape.value(l).item().unwrap() - want).abs() < 1e-12);
}

#[test]
pub fn batched_multi_task_gradients() {
    // the student training graph: batch encode, per-row KD and rank, averaged
    let e = encoder_grads_check(9, &|t, _, ids| {
        let n = nodes(ids);
        let q = n.encode_batch(t, &[vec![1u32, 2], vec![5, 5, 0], vec![7]])?;
        let target = t.constant(Tensor::matrix(3, 3, (0..9).map(|i| (i as f64 * 0.37).sin()).collect())?);
        let kd = kd_loss_node(t, q, target)?;
        let docs = n.encode_batch(t, &[vec![3u32, 4], vec![6], vec![8, 1, 1]])?;
        let mut ranks = Vec::new();
        for r in 0..3 {
            let row = t.select(q, &[r * 3, r * 3 + 1, r * 3 + 2])?;
            ranks.push(rank_loss_node(t, row, docs)?);
        }
        let rs = t.sum(&ranks)?;
        let rank = t.scale(rs, 1.0 / 3.0)?;
        multi_task_loss_node(t, kd, rank)
    });
    assert!(e < TOL, "batched multi-task rel err {e:e}");
}

#[test]
pub fn cross_score_gradients_and_value() {
    for seed in 0..5 {
        let cross = small_cross(seed);
        let params: Vec<Tensor> = cross.tensors().into_iter().cloned().collect();
        let seqs = vec![
            cross.combine(&[1, 2], &[4, 5, 6]).unwrap(),
            cross.combine(&[3], &[7, 7]).unwrap(),
        ];
        let e = max_error(&params, &|t, ids| {
            let n = convdr::rerank::CrossNodes {
                embedding: ids[0],
                w1: ids[1],
                b1: ids[2],
                w2: ids[3],
                b2: ids[4],
            };
            let (h, s) = n.forward(t, &seqs)?;
            let flat = t.select(s, &[0, 1])?;
            let nll = t.softmax_nll(flat, 0)?;
            let target = t.constant(Tensor::matrix(2, 5, vec![0.1; 10])?);
            let kd = t.mse(h, target)?;
            t.add(nll, kd)
        });
        assert!(e < TOL, "cross rel err {e:e}");
    }
    let cross = small_cross(0);
    let mut tape = Tape::new();
    let n = cross.register(&mut tape);
    let seq = cross.combine(&[1, 2], &[4, 5, 6]).unwrap();
    let (_, s) = n.forward(&mut tape, &[seq]).unwrap();
    let want = cross.score(&[1, 2], &[4, 5, 6]).unwrap();
    assert!((tape.value(s).data()[0] - want).abs() < 1e-12);
}
