//! Bag-of-tokens dual encoder.
//!
//! `H0 = W2ᵀ · tanh(W1ᵀ · mean_i E[token_i] + b1) + b2`. One fixed vector per
//! query or document; relevance is a dot product. The teacher encodes both
//! queries and documents; the student is a query-side copy.

pub mod checkpoint;
mod input;

use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use input::{assemble_conversational_input, assemble_turns};

use crate::corpus::TokenId;
use crate::error::{invalid, shape_err, Result};
use crate::numerics::{vecmat, Gradients, NodeId, ParamSet, Tape, Tensor};
use crate::rng::derived;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub d_emb: usize,
    pub d_hid: usize,
    pub d_out: usize,
    pub max_len: usize,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            vocab_size: 0,
            d_emb: 64,
            d_hid: 128,
            d_out: 64,
            max_len: 256,
            init_scale: 0.1,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.d_emb == 0 || self.d_hid == 0 || self.d_out == 0 {
            return Err(invalid!("encoder dimensions must be positive: {:?}", self));
        }
        if self.max_len < 4 {
            return Err(invalid!("max_len must be at least 4, got {}", self.max_len));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(invalid!("init_scale must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    /// vocab × d_emb
    pub embedding: Tensor,
    /// d_emb × d_hid
    pub w1: Tensor,
    pub b1: Tensor,
    /// d_hid × d_out
    pub w2: Tensor,
    pub b2: Tensor,
}

pub const DUAL_ENCODER_KIND: &str = "dual-encoder";

fn uniform(shape: &[usize], scale: f64, rng: &mut crate::rng::Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| if scale > 0.0 { rng.gen_range(-scale..scale) } else { 0.0 })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}

impl EncoderParams {
    /// Weights uniform in (−init_scale, init_scale); biases zero.
    pub fn init(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = derived(config.seed, "encoder-init");
        let c = &config;
        Ok(EncoderParams {
            embedding: uniform(&[c.vocab_size, c.d_emb], c.init_scale, &mut rng),
            w1: uniform(&[c.d_emb, c.d_hid], c.init_scale, &mut rng),
            b1: Tensor::zeros(&[c.d_hid]),
            w2: uniform(&[c.d_hid, c.d_out], c.init_scale, &mut rng),
            b2: Tensor::zeros(&[c.d_out]),
            config,
        })
    }

    /// All-zero parameters of the given shape.
    pub fn zeros(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let c = &config;
        Ok(EncoderParams {
            embedding: Tensor::zeros(&[c.vocab_size, c.d_emb]),
            w1: Tensor::zeros(&[c.d_emb, c.d_hid]),
            b1: Tensor::zeros(&[c.d_hid]),
            w2: Tensor::zeros(&[c.d_hid, c.d_out]),
            b2: Tensor::zeros(&[c.d_out]),
            config,
        })
    }

    pub fn dim(&self) -> usize {
        self.config.d_out
    }

    fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        if tokens.is_empty() {
            return Err(invalid!("cannot encode an empty token list"));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(invalid!(
                "token id {} outside vocabulary of {}",
                bad,
                self.config.vocab_size
            ));
        }
        Ok(())
    }

    /// Mean of the token embedding rows.
    pub(crate) fn pool(&self, tokens: &[TokenId]) -> Vec<f64> {
        let d = self.config.d_emb;
        let mut mean = vec![0.0; d];
        for &t in &canonical(tokens) {
            for (m, e) in mean.iter_mut().zip(self.embedding.row(t as usize)) {
                *m += e;
            }
        }
        let n = tokens.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    /// H0 for one token sequence.
    pub fn encode(&self, tokens: &[TokenId]) -> Result<Vec<f64>> {
        self.check_tokens(tokens)?;
        let c = &self.config;
        let mean = self.pool(tokens);
        let mut h = vec![0.0; c.d_hid];
        vecmat(&mean, self.w1.data(), c.d_hid, &mut h);
        for (v, b) in h.iter_mut().zip(self.b1.data()) {
            *v = (*v + b).tanh();
        }
        let mut out = vec![0.0; c.d_out];
        vecmat(&h, self.w2.data(), c.d_out, &mut out);
        for (v, b) in out.iter_mut().zip(self.b2.data()) {
            *v += b;
        }
        Ok(out)
    }

    /// Row i equals `encode(seqs[i])`.
    pub fn encode_batch<S: AsRef<[TokenId]> + Sync>(&self, seqs: &[S]) -> Result<Tensor> {
        let rows: Vec<Vec<f64>> = seqs
            .par_iter()
            .map(|s| self.encode(s.as_ref()))
            .collect::<Result<_>>()?;
        let mut data = Vec::with_capacity(rows.len() * self.dim());
        for r in rows {
            data.extend(r);
        }
        Tensor::matrix(seqs.len(), self.dim(), data)
    }

    /// Registers the parameters as trainable leaves.
    pub fn register<'a>(&'a self, tape: &mut Tape<'a>) -> EncoderNodes {
        EncoderNodes {
            embedding: tape.param(&self.embedding),
            w1: tape.param(&self.w1),
            b1: tape.param(&self.b1),
            w2: tape.param(&self.w2),
            b2: tape.param(&self.b2),
        }
    }

    /// Registers the parameters as constants (frozen encoder).
    pub fn register_frozen<'a>(&'a self, tape: &mut Tape<'a>) -> EncoderNodes {
        EncoderNodes {
            embedding: tape.constant_ref(&self.embedding),
            w1: tape.constant_ref(&self.w1),
            b1: tape.constant_ref(&self.b1),
            w2: tape.constant_ref(&self.w2),
            b2: tape.constant_ref(&self.b2),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(
            path,
            DUAL_ENCODER_KIND,
            serde_json::to_value(&self.config)?,
            &[
                ("embedding", &self.embedding),
                ("w1", &self.w1),
                ("b1", &self.b1),
                ("w2", &self.w2),
                ("b2", &self.b2),
            ],
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, tensors) = checkpoint::load(path, DUAL_ENCODER_KIND)?;
        let config: EncoderConfig = serde_json::from_value(header.config)?;
        let [embedding, w1, b1, w2, b2]: [Tensor; 5] = tensors
            .try_into()
            .map_err(|_| shape_err!("dual-encoder checkpoint must hold 5 tensors"))?;
        let p = EncoderParams {
            config,
            embedding,
            w1,
            b1,
            w2,
            b2,
        };
        p.check_shapes()?;
        Ok(p)
    }

    fn check_shapes(&self) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        let expect: [(&Tensor, Vec<usize>); 5] = [
            (&self.embedding, vec![c.vocab_size, c.d_emb]),
            (&self.w1, vec![c.d_emb, c.d_hid]),
            (&self.b1, vec![c.d_hid]),
            (&self.w2, vec![c.d_hid, c.d_out]),
            (&self.b2, vec![c.d_out]),
        ];
        for (t, s) in expect {
            if t.shape() != s.as_slice() {
                return Err(shape_err!("parameter shape {:?}, expected {:?}", t.shape(), s));
            }
        }
        Ok(())
    }
}

impl ParamSet for EncoderParams {
    fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.embedding, &self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.embedding,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
        ]
    }
}

/// Tape handles for an encoder's parameters.
#[derive(Debug, Clone, Copy)]
pub struct EncoderNodes {
    pub embedding: NodeId,
    pub w1: NodeId,
    pub b1: NodeId,
    pub w2: NodeId,
    pub b2: NodeId,
}

impl EncoderNodes {
    /// Mean-pooled input for one sequence, shape [d_emb].
    pub fn pool(&self, tape: &mut Tape<'_>, tokens: &[TokenId]) -> Result<NodeId> {
        if tokens.is_empty() {
            return Err(invalid!("cannot encode an empty token list"));
        }
        let rows = tape.gather(self.embedding, &canonical(tokens))?;
        tape.mean_rows(rows)
    }

    /// MLP head over a pooled vector or a matrix of pooled rows.
    pub fn head(&self, tape: &mut Tape<'_>, pooled: NodeId) -> Result<NodeId> {
        let h = tape.matmul(pooled, self.w1)?;
        let h = tape.add_bias(h, self.b1)?;
        let h = tape.tanh(h)?;
        let o = tape.matmul(h, self.w2)?;
        tape.add_bias(o, self.b2)
    }

    /// H0 for one sequence, shape [d_out].
    pub fn encode(&self, tape: &mut Tape<'_>, tokens: &[TokenId]) -> Result<NodeId> {
        let p = self.pool(tape, tokens)?;
        self.head(tape, p)
    }

    /// H0 for several sequences, shape [n, d_out]; row i matches [`EncoderNodes::encode`].
    pub fn encode_batch<S: AsRef<[TokenId]>>(&self, tape: &mut Tape<'_>, seqs: &[S]) -> Result<NodeId> {
        let pooled = seqs
            .iter()
            .map(|s| self.pool(tape, s.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        let m = tape.concat_rows(&pooled)?;
        self.head(tape, m)
    }

    /// Gradients in [`ParamSet`] order.
    pub fn grads(&self, g: &mut Gradients) -> Vec<Tensor> {
        vec![
            g.take(self.embedding),
            g.take(self.w1),
            g.take(self.b1),
            g.take(self.w2),
            g.take(self.b2),
        ]
    }
}

/// Tokens sorted by id, so pooling sums in the same order for every
/// permutation of the multiset and the result is exactly order-invariant.
pub(crate) fn canonical(tokens: &[TokenId]) -> Vec<TokenId> {
    let mut t = tokens.to_vec();
    t.sort_unstable();
    t
}

/// Student initialization: an independent deep copy of the teacher.
pub fn init_student_from_teacher(teacher: &EncoderParams) -> EncoderParams {
    teacher.clone()
}
