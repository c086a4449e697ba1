//! Transformer encoder blocks: scaled dot-product attention, multi-head
//! self-attention, position-wise feed-forward, post-norm residuals and the
//! sinusoidal position table.
//!
//! Parameter bundles are generic over their storage so the same structure
//! holds plain tensors, tape handles, gradients or optimizer moments.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub(crate) fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::uniform(&[rows, cols], bound, rng)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionHeadParams<T = Tensor> {
    pub w_q: T,
    pub w_k: T,
    pub w_v: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiHeadParams<T = Tensor> {
    pub heads: Vec<AttentionHeadParams<T>>,
    pub w_o: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeedForwardParams<T = Tensor> {
    pub w1: T,
    pub b1: T,
    pub w2: T,
    pub b2: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayerParams<T = Tensor> {
    pub attention: MultiHeadParams<T>,
    pub ffn: FeedForwardParams<T>,
    pub norm1_gain: T,
    pub norm1_bias: T,
    pub norm2_gain: T,
    pub norm2_bias: T,
}

impl<T> AttentionHeadParams<T> {
    pub fn map<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> AttentionHeadParams<U> {
        AttentionHeadParams {
            w_q: f(&format!("{prefix}.w_q"), &self.w_q),
            w_k: f(&format!("{prefix}.w_k"), &self.w_k),
            w_v: f(&format!("{prefix}.w_v"), &self.w_v),
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut T)) {
        f(&format!("{prefix}.w_q"), &mut self.w_q);
        f(&format!("{prefix}.w_k"), &mut self.w_k);
        f(&format!("{prefix}.w_v"), &mut self.w_v);
    }
}

impl<T> MultiHeadParams<T> {
    pub fn map<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> MultiHeadParams<U> {
        MultiHeadParams {
            heads: self
                .heads
                .iter()
                .enumerate()
                .map(|(i, h)| h.map(&format!("{prefix}.head{i}"), f))
                .collect(),
            w_o: f(&format!("{prefix}.w_o"), &self.w_o),
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut T)) {
        for (i, h) in self.heads.iter_mut().enumerate() {
            h.visit_mut(&format!("{prefix}.head{i}"), f);
        }
        f(&format!("{prefix}.w_o"), &mut self.w_o);
    }
}

impl<T> FeedForwardParams<T> {
    pub fn map<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> FeedForwardParams<U> {
        FeedForwardParams {
            w1: f(&format!("{prefix}.w1"), &self.w1),
            b1: f(&format!("{prefix}.b1"), &self.b1),
            w2: f(&format!("{prefix}.w2"), &self.w2),
            b2: f(&format!("{prefix}.b2"), &self.b2),
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut T)) {
        f(&format!("{prefix}.w1"), &mut self.w1);
        f(&format!("{prefix}.b1"), &mut self.b1);
        f(&format!("{prefix}.w2"), &mut self.w2);
        f(&format!("{prefix}.b2"), &mut self.b2);
    }
}

impl<T> EncoderLayerParams<T> {
    pub fn map<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> EncoderLayerParams<U> {
        EncoderLayerParams {
            attention: self.attention.map(&format!("{prefix}.attn"), f),
            ffn: self.ffn.map(&format!("{prefix}.ffn"), f),
            norm1_gain: f(&format!("{prefix}.norm1.gain"), &self.norm1_gain),
            norm1_bias: f(&format!("{prefix}.norm1.bias"), &self.norm1_bias),
            norm2_gain: f(&format!("{prefix}.norm2.gain"), &self.norm2_gain),
            norm2_bias: f(&format!("{prefix}.norm2.bias"), &self.norm2_bias),
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut T)) {
        self.attention.visit_mut(&format!("{prefix}.attn"), f);
        self.ffn.visit_mut(&format!("{prefix}.ffn"), f);
        f(&format!("{prefix}.norm1.gain"), &mut self.norm1_gain);
        f(&format!("{prefix}.norm1.bias"), &mut self.norm1_bias);
        f(&format!("{prefix}.norm2.gain"), &mut self.norm2_gain);
        f(&format!("{prefix}.norm2.bias"), &mut self.norm2_bias);
    }
}

impl MultiHeadParams {
    /// Glorot-initialized projections; each head gets width `d_model / n_heads`.
    pub fn init(d_model: usize, n_heads: usize, rng: &mut impl Rng) -> Result<Self> {
        if n_heads == 0 || !d_model.is_multiple_of(n_heads) {
            return Err(Error::Config(format!(
                "d_model ({d_model}) must be divisible by n_heads ({n_heads})"
            )));
        }
        let d_k = d_model / n_heads;
        let heads = (0..n_heads)
            .map(|_| AttentionHeadParams {
                w_q: glorot(d_model, d_k, rng),
                w_k: glorot(d_model, d_k, rng),
                w_v: glorot(d_model, d_k, rng),
            })
            .collect();
        Ok(MultiHeadParams {
            heads,
            w_o: glorot(d_model, d_model, rng),
        })
    }
}

impl FeedForwardParams {
    pub fn init(d_model: usize, d_ff: usize, rng: &mut impl Rng) -> Self {
        FeedForwardParams {
            w1: glorot(d_model, d_ff, rng),
            b1: Tensor::zeros(&[d_ff]),
            w2: glorot(d_ff, d_model, rng),
            b2: Tensor::zeros(&[d_model]),
        }
    }
}

impl EncoderLayerParams {
    pub fn init(d_model: usize, n_heads: usize, d_ff: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(EncoderLayerParams {
            attention: MultiHeadParams::init(d_model, n_heads, rng)?,
            ffn: FeedForwardParams::init(d_model, d_ff, rng),
            norm1_gain: Tensor::full(&[d_model], 1.0),
            norm1_bias: Tensor::zeros(&[d_model]),
            norm2_gain: Tensor::full(&[d_model], 1.0),
            norm2_bias: Tensor::zeros(&[d_model]),
        })
    }

    /// Registers every tensor on `tape`.
    pub fn on_tape(&self, tape: &mut Tape) -> EncoderLayerParams<Var> {
        self.map("", &mut |_, t| tape.leaf(t.clone()))
    }
}

/// Sinusoidal position table, `[max_len × d_model]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionalEncodingTable {
    pub table: Tensor,
}

pub fn positional_encoding(max_len: usize, d_model: usize) -> Result<PositionalEncodingTable> {
    if d_model == 0 || !d_model.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "positional encoding needs an even d_model, got {d_model}"
        )));
    }
    if max_len == 0 {
        return Err(Error::Config(
            "positional encoding needs max_len >= 1".into(),
        ));
    }
    let mut table = Tensor::zeros(&[max_len, d_model]);
    let data = table.data_mut();
    for pos in 0..max_len {
        for i in 0..d_model / 2 {
            let angle = pos as f64 / 10000f64.powf((2 * i) as f64 / d_model as f64);
            data[pos * d_model + 2 * i] = angle.sin();
            data[pos * d_model + 2 * i + 1] = angle.cos();
        }
    }
    Ok(PositionalEncodingTable { table })
}

impl PositionalEncodingTable {
    /// First `len` rows repeated `batch` times, matching a sample-major `[batch·len × d]` layout.
    pub fn tiled(&self, len: usize, batch: usize) -> Result<Tensor> {
        let d = self.table.last_dim();
        if len > self.table.rows() {
            return Err(Error::dim(
                "positional_encoding",
                self.table.shape(),
                &[len, d],
            ));
        }
        let rows = &self.table.data()[..len * d];
        let mut data = Vec::with_capacity(batch * len * d);
        for _ in 0..batch {
            data.extend_from_slice(rows);
        }
        Tensor::new(vec![batch * len, d], data)
    }
}

/// `softmax(q·kᵀ / √d_k)` — the attention weight matrix.
pub fn attention_weights(tape: &mut Tape, q: Var, k: Var) -> Result<Var> {
    let d_k = tape.value(q).last_dim();
    let scores = tape.matmul_nt(q, k)?;
    let scaled = tape.scale(scores, 1.0 / (d_k as f64).sqrt());
    Ok(tape.softmax_rows(scaled))
}

/// `softmax(q·kᵀ / √d_k) · v`.
pub fn scaled_dot_attention(tape: &mut Tape, q: Var, k: Var, v: Var) -> Result<Var> {
    if tape.value(k).rows() != tape.value(v).rows() {
        return Err(Error::dim(
            "scaled_dot_attention",
            tape.shape(k),
            tape.shape(v),
        ));
    }
    let w = attention_weights(tape, q, k)?;
    tape.matmul(w, v)
}

/// Self-attention over `x: [batch·seq_len × d_model]` (sample-major rows).
/// Attention never crosses sample boundaries.
pub fn multi_head_attention(
    tape: &mut Tape,
    x: Var,
    p: &MultiHeadParams<Var>,
    seq_len: usize,
) -> Result<Var> {
    let rows = tape.value(x).rows();
    if seq_len == 0 || !rows.is_multiple_of(seq_len) {
        return Err(Error::dim(
            "multi_head_attention",
            tape.shape(x),
            &[seq_len],
        ));
    }
    let batch = rows / seq_len;
    let mut projected = Vec::with_capacity(p.heads.len());
    for head in &p.heads {
        let q = tape.matmul(x, head.w_q)?;
        let k = tape.matmul(x, head.w_k)?;
        let v = tape.matmul(x, head.w_v)?;
        projected.push((q, k, v));
    }
    let mut samples = Vec::with_capacity(batch);
    for b in 0..batch {
        let start = b * seq_len;
        let mut heads = Vec::with_capacity(projected.len());
        for &(q, k, v) in &projected {
            let (q, k, v) = if batch == 1 {
                (q, k, v)
            } else {
                (
                    tape.slice_rows(q, start, seq_len)?,
                    tape.slice_rows(k, start, seq_len)?,
                    tape.slice_rows(v, start, seq_len)?,
                )
            };
            heads.push(scaled_dot_attention(tape, q, k, v)?);
        }
        samples.push(if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat_cols(&heads)?
        });
    }
    let concat = if samples.len() == 1 {
        samples[0]
    } else {
        tape.concat_rows(&samples)?
    };
    tape.matmul(concat, p.w_o)
}

/// `max(0, x·W1 + b1)·W2 + b2`, row-wise.
pub fn position_wise_ffn(tape: &mut Tape, x: Var, p: &FeedForwardParams<Var>) -> Result<Var> {
    let hidden = tape.affine(x, p.w1, p.b1)?;
    let hidden = tape.relu(hidden);
    tape.affine(hidden, p.w2, p.b2)
}

/// `LayerNorm(x + sub)`.
pub fn residual_norm(
    tape: &mut Tape,
    x: Var,
    sub: Var,
    gain: Var,
    bias: Var,
    eps: f64,
) -> Result<Var> {
    let sum = tape.add(x, sub)?;
    tape.layer_norm(sum, gain, bias, eps)
}

#[derive(Clone, Copy, Debug)]
pub struct EncoderOptions {
    pub seq_len: usize,
    pub dropout: f64,
    pub layer_norm_eps: f64,
    pub training: bool,
}

/// One post-norm encoder layer.
pub fn encoder_layer_forward(
    tape: &mut Tape,
    x: Var,
    layer: &EncoderLayerParams<Var>,
    opts: &EncoderOptions,
    rng: &mut impl Rng,
) -> Result<Var> {
    let attn = multi_head_attention(tape, x, &layer.attention, opts.seq_len)?;
    let attn = tape.dropout(attn, opts.dropout, rng, opts.training)?;
    let a = residual_norm(
        tape,
        x,
        attn,
        layer.norm1_gain,
        layer.norm1_bias,
        opts.layer_norm_eps,
    )?;
    let ff = position_wise_ffn(tape, a, &layer.ffn)?;
    let ff = tape.dropout(ff, opts.dropout, rng, opts.training)?;
    residual_norm(
        tape,
        a,
        ff,
        layer.norm2_gain,
        layer.norm2_bias,
        opts.layer_norm_eps,
    )
}

pub fn encoder_forward(
    tape: &mut Tape,
    x: Var,
    layers: &[EncoderLayerParams<Var>],
    opts: &EncoderOptions,
    rng: &mut impl Rng,
) -> Result<Var> {
    if layers.is_empty() {
        return Err(Error::Config("encoder needs at least one layer".into()));
    }
    let mut h = x;
    for layer in layers {
        h = encoder_layer_forward(tape, h, layer, opts, rng)?;
    }
    Ok(h)
}
