use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{TokenId, SEP};
use crate::encoder::checkpoint;
use crate::error::{invalid, shape_err, Result};
use crate::numerics::{dot, vecmat, Gradients, NodeId, ParamSet, Tape, Tensor};
use crate::rng::derived;

pub const CROSS_ENCODER_KIND: &str = "cross-encoder";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrossConfig {
    pub vocab_size: usize,
    pub d_emb: usize,
    pub d_hid: usize,
    pub init_scale: f64,
    pub seed: u64,
    /// Keep the token embeddings at their initial values during training.
    pub freeze_embeddings: bool,
}

impl Default for CrossConfig {
    fn default() -> Self {
        CrossConfig {
            vocab_size: 0,
            d_emb: 64,
            d_hid: 128,
            init_scale: 1.0,
            seed: 0,
            freeze_embeddings: true,
        }
    }
}

impl CrossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.d_emb == 0 || self.d_hid == 0 {
            return Err(invalid!("cross-encoder dimensions must be positive: {:?}", self));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(invalid!("init_scale must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Mean-pooled token embeddings of `conv ⊕ SEP ⊕ doc` through a two-layer
/// MLP to a scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossEncoderParams {
    pub config: CrossConfig,
    pub embedding: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    /// d_hid × 1
    pub w2: Tensor,
    /// [1]
    pub b2: Tensor,
}

impl CrossEncoderParams {
    pub fn init(config: CrossConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = derived(config.seed, "cross-init");
        let c = &config;
        let mut u = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    if c.init_scale > 0.0 {
                        rng.gen_range(-c.init_scale..c.init_scale)
                    } else {
                        0.0
                    }
                })
                .collect()
        };
        Ok(CrossEncoderParams {
            embedding: Tensor::matrix(c.vocab_size, c.d_emb, u(c.vocab_size * c.d_emb))?,
            w1: Tensor::matrix(c.d_emb, c.d_hid, u(c.d_emb * c.d_hid))?,
            b1: Tensor::zeros(&[c.d_hid]),
            w2: Tensor::matrix(c.d_hid, 1, u(c.d_hid))?,
            b2: Tensor::zeros(&[1]),
            config,
        })
    }

    pub fn zeros(config: CrossConfig) -> Result<Self> {
        config.validate()?;
        let c = &config;
        Ok(CrossEncoderParams {
            embedding: Tensor::zeros(&[c.vocab_size, c.d_emb]),
            w1: Tensor::zeros(&[c.d_emb, c.d_hid]),
            b1: Tensor::zeros(&[c.d_hid]),
            w2: Tensor::zeros(&[c.d_hid, 1]),
            b2: Tensor::zeros(&[1]),
            config,
        })
    }

    /// The pooled token sequence, sorted so pooling is order-invariant.
    pub fn combine(&self, conv: &[TokenId], doc: &[TokenId]) -> Result<Vec<TokenId>> {
        if conv.is_empty() || doc.is_empty() {
            return Err(invalid!("cross_score needs non-empty query and document"));
        }
        let mut all = Vec::with_capacity(conv.len() + doc.len() + 1);
        all.extend_from_slice(conv);
        all.push(SEP);
        all.extend_from_slice(doc);
        if let Some(&bad) = all.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(invalid!(
                "token id {} outside vocabulary of {}",
                bad,
                self.config.vocab_size
            ));
        }
        all.sort_unstable();
        Ok(all)
    }

    /// Hidden layer `tanh(W1ᵀ·pool + b1)`; the distillation target.
    pub fn hidden(&self, conv: &[TokenId], doc: &[TokenId]) -> Result<Vec<f64>> {
        let tokens = self.combine(conv, doc)?;
        let d = self.config.d_emb;
        let mut mean = vec![0.0; d];
        for &t in &tokens {
            for (m, e) in mean.iter_mut().zip(self.embedding.row(t as usize)) {
                *m += e;
            }
        }
        let n = tokens.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        let mut h = vec![0.0; self.config.d_hid];
        vecmat(&mean, self.w1.data(), self.config.d_hid, &mut h);
        for (v, b) in h.iter_mut().zip(self.b1.data()) {
            *v = (*v + b).tanh();
        }
        Ok(h)
    }

    pub fn score(&self, conv: &[TokenId], doc: &[TokenId]) -> Result<f64> {
        let h = self.hidden(conv, doc)?;
        Ok(dot(&h, self.w2.data()) + self.b2.data()[0])
    }

    pub fn register<'a>(&'a self, tape: &mut Tape<'a>) -> CrossNodes {
        CrossNodes {
            embedding: tape.param(&self.embedding),
            w1: tape.param(&self.w1),
            b1: tape.param(&self.b1),
            w2: tape.param(&self.w2),
            b2: tape.param(&self.b2),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(
            path,
            CROSS_ENCODER_KIND,
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
        let (header, tensors) = checkpoint::load(path, CROSS_ENCODER_KIND)?;
        let config: CrossConfig = serde_json::from_value(header.config)?;
        config.validate()?;
        let [embedding, w1, b1, w2, b2]: [Tensor; 5] = tensors
            .try_into()
            .map_err(|_| shape_err!("cross-encoder checkpoint must hold 5 tensors"))?;
        let c = &config;
        let expect = [
            (embedding.shape(), vec![c.vocab_size, c.d_emb]),
            (w1.shape(), vec![c.d_emb, c.d_hid]),
            (b1.shape(), vec![c.d_hid]),
            (w2.shape(), vec![c.d_hid, 1]),
            (b2.shape(), vec![1]),
        ];
        for (got, want) in expect {
            if got != want.as_slice() {
                return Err(shape_err!("parameter shape {:?}, expected {:?}", got, want));
            }
        }
        Ok(CrossEncoderParams {
            config,
            embedding,
            w1,
            b1,
            w2,
            b2,
        })
    }
}

impl ParamSet for CrossEncoderParams {
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

#[derive(Debug, Clone, Copy)]
pub struct CrossNodes {
    pub embedding: NodeId,
    pub w1: NodeId,
    pub b1: NodeId,
    pub w2: NodeId,
    pub b2: NodeId,
}

impl CrossNodes {
    /// Hidden rows [n, d_hid] and scores [n, 1] for already combined sequences.
    pub fn forward(&self, tape: &mut Tape<'_>, combined: &[Vec<TokenId>]) -> Result<(NodeId, NodeId)> {
        let pooled = combined
            .iter()
            .map(|s| {
                let rows = tape.gather(self.embedding, s)?;
                tape.mean_rows(rows)
            })
            .collect::<Result<Vec<_>>>()?;
        let m = tape.concat_rows(&pooled)?;
        let h = tape.matmul(m, self.w1)?;
        let h = tape.add_bias(h, self.b1)?;
        let h = tape.tanh(h)?;
        let s = tape.matmul(h, self.w2)?;
        let s = tape.add_bias(s, self.b2)?;
        Ok((h, s))
    }

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
