//! Parameterised layers built on [`Graph`] ops.
//!
//! Layers own [`ParamId`]s only; weights live in a [`ParamStore`] so a model
//! can be checkpointed, frozen or optimised as a flat set of named tensors.

use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Result};
use crate::graph::{Graph, NodeId};
use crate::params::{Init, ParamId, ParamStore};

pub const LN_EPS: f64 = 1e-5;

/// Hidden units of a two-layer MLP relative to its model width.
pub const FFN_MULT: usize = 2;

fn cols(g: &Graph, x: NodeId) -> usize {
    let v = g.value(x);
    if v.rank() == 2 {
        v.shape()[1]
    } else {
        usize::MAX
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    name: String,
    pub weight: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let weight = store.add(
            &format!("{name}.weight"),
            &[d_in, d_out],
            Init::Xavier { fan_in: d_in, fan_out: d_out },
            rng,
        );
        let bias = store.add(&format!("{name}.bias"), &[d_out], Init::Zeros, rng);
        Self {
            name: name.to_string(),
            weight,
            bias,
            d_in,
            d_out,
        }
    }

    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, x: NodeId) -> Result<NodeId> {
        check_dim(&self.name, "input features", self.d_in, cols(g, x))?;
        let w = g.param(ps, self.weight);
        let b = g.param(ps, self.bias);
        let y = g.matmul(x, w);
        Ok(g.add_row(y, b))
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    name: String,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let gamma = store.add(&format!("{name}.gamma"), &[dim], Init::Ones, rng);
        let beta = store.add(&format!("{name}.beta"), &[dim], Init::Zeros, rng);
        Self {
            name: name.to_string(),
            gamma,
            beta,
            dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, x: NodeId) -> Result<NodeId> {
        check_dim(&self.name, "features", self.dim, cols(g, x))?;
        let gamma = g.param(ps, self.gamma);
        let beta = g.param(ps, self.beta);
        let y = g.layer_norm(x, LN_EPS);
        let y = g.mul_row(y, gamma);
        Ok(g.add_row(y, beta))
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            up: Linear::new(store, &format!("{name}.up"), dim, hidden, rng),
            down: Linear::new(store, &format!("{name}.down"), hidden, dim, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, x: NodeId) -> Result<NodeId> {
        let h = self.up.forward(g, ps, x)?;
        let h = g.relu(h);
        self.down.forward(g, ps, h)
    }
}

/// Output of an attention layer. `probs` holds one `[queries, keys]`
/// softmax matrix per head when capture was requested.
#[derive(Clone, Debug)]
pub struct AttentionOutput {
    pub out: NodeId,
    pub probs: Vec<NodeId>,
}

/// Multi-head scaled dot-product attention; self-attention when queries and
/// keys come from the same rows, cross-attention otherwise. No masking.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    name: String,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut ChaCha8Rng) -> Self {
        assert!(heads > 0 && dim % heads == 0, "{name}: {dim} not divisible into {heads} heads");
        Self {
            name: name.to_string(),
            q: Linear::new(store, &format!("{name}.q"), dim, dim, rng),
            k: Linear::new(store, &format!("{name}.k"), dim, dim, rng),
            v: Linear::new(store, &format!("{name}.v"), dim, dim, rng),
            o: Linear::new(store, &format!("{name}.o"), dim, dim, rng),
            heads,
            dim,
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        ps: &ParamStore,
        query: NodeId,
        memory: NodeId,
        capture: bool,
    ) -> Result<AttentionOutput> {
        check_dim(&self.name, "query features", self.dim, cols(g, query))?;
        check_dim(&self.name, "memory features", self.dim, cols(g, memory))?;
        let q = self.q.forward(g, ps, query)?;
        let k = self.k.forward(g, ps, memory)?;
        let v = self.v.forward(g, ps, memory)?;
        let dh = self.dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut probs = Vec::new();
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (
                    g.slice_cols(q, h * dh, dh),
                    g.slice_cols(k, h * dh, dh),
                    g.slice_cols(v, h * dh, dh),
                )
            };
            let scores = g.matmul_nt(qh, kh);
            let scores = g.scale(scores, scale);
            let p = g.softmax(scores);
            if capture {
                probs.push(p);
            }
            outs.push(g.matmul(p, vh));
        }
        let joined = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs) };
        let out = self.o.forward(g, ps, joined)?;
        Ok(AttentionOutput { out, probs })
    }
}

/// DFSMN memory: a learned depthwise FIR filter over the time axis that
/// looks `kernel / 2` steps in both directions.
#[derive(Clone, Debug)]
pub struct Fsmn {
    name: String,
    pub weight: ParamId,
    pub kernel: usize,
    pub dim: usize,
}

impl Fsmn {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, kernel: usize, rng: &mut ChaCha8Rng) -> Self {
        assert!(kernel % 2 == 1, "{name}: FSMN kernel must be odd");
        let weight = store.add(
            &format!("{name}.weight"),
            &[kernel, dim],
            Init::Xavier { fan_in: kernel, fan_out: kernel },
            rng,
        );
        Self {
            name: name.to_string(),
            weight,
            kernel,
            dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, x: NodeId) -> Result<NodeId> {
        check_dim(&self.name, "features", self.dim, cols(g, x))?;
        let w = g.param(ps, self.weight);
        Ok(g.fsmn(x, w))
    }
}

/// Single-layer unidirectional LSTM with gate order (input, forget, cell, output).
#[derive(Clone, Debug)]
pub struct Lstm {
    name: String,
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let w_ih = store.add(
            &format!("{name}.w_ih"),
            &[d_in, 4 * hidden],
            Init::Xavier { fan_in: d_in, fan_out: 4 * hidden },
            rng,
        );
        let w_hh = store.add(&format!("{name}.w_hh"), &[hidden, 4 * hidden], Init::Orthogonal, rng);
        let bias = store.add(&format!("{name}.bias"), &[4 * hidden], Init::Zeros, rng);
        Self {
            name: name.to_string(),
            w_ih,
            w_hh,
            bias,
            d_in,
            hidden,
        }
    }

    /// Runs over the rows of `x: [steps, d_in]` from a zero state and
    /// returns every hidden state as `[steps, hidden]`.
    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, x: NodeId) -> Result<NodeId> {
        check_dim(&self.name, "input features", self.d_in, cols(g, x))?;
        let steps = g.value(x).rows();
        let hd = self.hidden;
        let w_ih = g.param(ps, self.w_ih);
        let w_hh = g.param(ps, self.w_hh);
        let bias = g.param(ps, self.bias);
        let xw = g.matmul(x, w_ih);
        let xw = g.add_row(xw, bias);
        let mut h = g.constant(crate::Tensor::zeros(&[1, hd]));
        let mut c = g.constant(crate::Tensor::zeros(&[1, hd]));
        let mut outs = Vec::with_capacity(steps);
        for t in 0..steps {
            let xt = g.slice_rows(xw, t, 1);
            let rec = g.matmul(h, w_hh);
            let pre = g.add(xt, rec);
            let i = g.slice_cols(pre, 0, hd);
            let i = g.sigmoid(i);
            let f = g.slice_cols(pre, hd, hd);
            let f = g.sigmoid(f);
            let cand = g.slice_cols(pre, 2 * hd, hd);
            let cand = g.tanh(cand);
            let o = g.slice_cols(pre, 3 * hd, hd);
            let o = g.sigmoid(o);
            let keep = g.mul(f, c);
            let write = g.mul(i, cand);
            c = g.add(keep, write);
            let tc = g.tanh(c);
            h = g.mul(o, tc);
            outs.push(h);
        }
        Ok(g.concat_rows(&outs))
    }
}

#[derive(Clone, Debug)]
pub struct Embedding {
    name: String,
    pub table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new(store: &mut ParamStore, name: &str, vocab: usize, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let table = store.add(
            &format!("{name}.table"),
            &[vocab, dim],
            Init::Xavier { fan_in: vocab, fan_out: dim },
            rng,
        );
        Self {
            name: name.to_string(),
            table,
            vocab,
            dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, ids: &[usize]) -> Result<NodeId> {
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.vocab) {
            return Err(crate::NumericsError::Contract(format!(
                "{}: token id {bad} outside vocabulary of {}",
                self.name, self.vocab
            )));
        }
        let t = g.param(ps, self.table);
        Ok(g.embedding(t, ids))
    }
}

/// Pre-norm transformer layer: self-attention then feed-forward.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub ln_attn: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln_ffn: LayerNorm,
    pub ffn: FeedForward,
}

impl TransformerBlock {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            ln_attn: LayerNorm::new(store, &format!("{name}.ln_attn"), dim, rng),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), dim, heads, rng),
            ln_ffn: LayerNorm::new(store, &format!("{name}.ln_ffn"), dim, rng),
            ffn: FeedForward::new(store, &format!("{name}.ffn"), dim, FFN_MULT * dim, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, x: NodeId) -> Result<NodeId> {
        let y = self.ln_attn.forward(g, ps, x)?;
        let a = self.attn.forward(g, ps, y, y, false)?;
        let x = g.add(x, a.out);
        let y = self.ln_ffn.forward(g, ps, x)?;
        let f = self.ffn.forward(g, ps, y)?;
        Ok(g.add(x, f))
    }
}

/// SAN-M encoder layer: self-attention with an additive DFSMN memory
/// branch, then feed-forward.
#[derive(Clone, Debug)]
pub struct SanmEncoderBlock {
    pub ln_attn: LayerNorm,
    pub attn: MultiHeadAttention,
    pub memory: Fsmn,
    pub ln_ffn: LayerNorm,
    pub ffn: FeedForward,
}

impl SanmEncoderBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        kernel: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            ln_attn: LayerNorm::new(store, &format!("{name}.ln_attn"), dim, rng),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), dim, heads, rng),
            memory: Fsmn::new(store, &format!("{name}.fsmn"), dim, kernel, rng),
            ln_ffn: LayerNorm::new(store, &format!("{name}.ln_ffn"), dim, rng),
            ffn: FeedForward::new(store, &format!("{name}.ffn"), dim, FFN_MULT * dim, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, x: NodeId) -> Result<NodeId> {
        let y = self.ln_attn.forward(g, ps, x)?;
        let a = self.attn.forward(g, ps, y, y, false)?;
        let m = self.memory.forward(g, ps, y)?;
        let x = g.add(x, a.out);
        let x = g.add(x, m);
        let y = self.ln_ffn.forward(g, ps, x)?;
        let f = self.ffn.forward(g, ps, y)?;
        Ok(g.add(x, f))
    }
}

/// Bidirectional SAN-M decoder layer: unmasked self-attention plus DFSMN
/// memory, cross-attention onto a memory sequence, then feed-forward.
#[derive(Clone, Debug)]
pub struct SanmDecoderBlock {
    pub ln_self: LayerNorm,
    pub self_attn: MultiHeadAttention,
    pub memory: Fsmn,
    pub ln_cross: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub ln_ffn: LayerNorm,
    pub ffn: FeedForward,
}

impl SanmDecoderBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        kernel: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            ln_self: LayerNorm::new(store, &format!("{name}.ln_self"), dim, rng),
            self_attn: MultiHeadAttention::new(store, &format!("{name}.self_attn"), dim, heads, rng),
            memory: Fsmn::new(store, &format!("{name}.fsmn"), dim, kernel, rng),
            ln_cross: LayerNorm::new(store, &format!("{name}.ln_cross"), dim, rng),
            cross_attn: MultiHeadAttention::new(store, &format!("{name}.cross_attn"), dim, heads, rng),
            ln_ffn: LayerNorm::new(store, &format!("{name}.ln_ffn"), dim, rng),
            ffn: FeedForward::new(store, &format!("{name}.ffn"), dim, FFN_MULT * dim, rng),
        }
    }

    /// Returns the block output and, when `capture` is set, the per-head
    /// cross-attention probabilities `[queries, memory rows]`.
    pub fn forward(
        &self,
        g: &mut Graph,
        ps: &ParamStore,
        x: NodeId,
        mem: NodeId,
        capture: bool,
    ) -> Result<(NodeId, Vec<NodeId>)> {
        let y = self.ln_self.forward(g, ps, x)?;
        let a = self.self_attn.forward(g, ps, y, y, false)?;
        let m = self.memory.forward(g, ps, y)?;
        let x = g.add(x, a.out);
        let x = g.add(x, m);
        let y = self.ln_cross.forward(g, ps, x)?;
        let c = self.cross_attn.forward(g, ps, y, mem, capture)?;
        let x = g.add(x, c.out);
        let y = self.ln_ffn.forward(g, ps, x)?;
        let f = self.ffn.forward(g, ps, y)?;
        Ok((g.add(x, f), c.probs))
    }
}
