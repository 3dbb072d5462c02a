//! Transformer sub-blocks shared by the relation encoder and the prototype
//! decoder, composed from graph primitives.

use rand::Rng;

use crate::autodiff::{Graph, ParamId, Var};
use crate::error::{Error, Result};
use crate::params::{fan_in_std, ParamStore};
use crate::tensor::Scalar;

/// Multi-head attention with bias-free `d×d` projections.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_o: ParamId,
    pub heads: usize,
    pub dim: usize,
}

pub struct AttentionOutput {
    pub out: Var,
    /// Head-averaged attention weights `[queries × keys]`, when requested.
    pub weights: Option<Var>,
}

impl MultiHeadAttention {
    pub fn init<F: Scalar, R: Rng>(
        store: &mut ParamStore<F>,
        prefix: &str,
        dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "dimension {dim} is not divisible by {heads} heads"
            )));
        }
        let mut proj = |name: &str| store.normal(format!("{prefix}.{name}"), &[dim, dim], fan_in_std(dim), rng);
        Ok(MultiHeadAttention {
            w_q: proj("w_q"),
            w_k: proj("w_k"),
            w_v: proj("w_v"),
            w_o: proj("w_o"),
            heads,
            dim,
        })
    }

    /// Attends from `query [n×d]` over `context [m×d]`.
    pub fn forward<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        params: &ParamStore<F>,
        query: Var,
        context: Var,
        keep_weights: bool,
    ) -> Result<AttentionOutput> {
        let w_q = g.param(self.w_q, params.get(self.w_q))?;
        let w_k = g.param(self.w_k, params.get(self.w_k))?;
        let w_v = g.param(self.w_v, params.get(self.w_v))?;
        let w_o = g.param(self.w_o, params.get(self.w_o))?;
        let q = g.matmul(query, w_q)?;
        let k = g.matmul(context, w_k)?;
        let v = g.matmul(context, w_v)?;

        let head_dim = self.dim / self.heads;
        let scale = F::one() / F::of(head_dim as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut maps = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                let start = h * head_dim;
                (
                    g.slice_cols(q, start, head_dim)?,
                    g.slice_cols(k, start, head_dim)?,
                    g.slice_cols(v, start, head_dim)?,
                )
            };
            let scores = g.matmul_nt(qh, kh)?;
            let scores = g.scale(scores, scale)?;
            let attn = g.softmax_rows(scores)?;
            outs.push(g.matmul(attn, vh)?);
            maps.push(attn);
        }
        let joined = if self.heads == 1 {
            outs[0]
        } else {
            g.concat_cols(&outs)?
        };
        let out = g.matmul(joined, w_o)?;

        let weights = if !keep_weights {
            None
        } else if self.heads == 1 {
            Some(maps[0])
        } else {
            let total = g.add_all(&maps)?;
            Some(g.scale(total, F::one() / F::of(self.heads as f64))?)
        };
        Ok(AttentionOutput { out, weights })
    }
}

/// Two-layer GELU feed-forward network.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl FeedForward {
    pub fn init<F: Scalar, R: Rng>(
        store: &mut ParamStore<F>,
        prefix: &str,
        dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        FeedForward {
            w1: store.normal(format!("{prefix}.w1"), &[dim, hidden], fan_in_std(dim), rng),
            b1: store.zeros(format!("{prefix}.b1"), &[hidden]),
            w2: store.normal(format!("{prefix}.w2"), &[hidden, dim], fan_in_std(hidden), rng),
            b2: store.zeros(format!("{prefix}.b2"), &[dim]),
        }
    }

    pub fn forward<F: Scalar>(&self, g: &mut Graph<F>, params: &ParamStore<F>, x: Var) -> Result<Var> {
        let w1 = g.param(self.w1, params.get(self.w1))?;
        let b1 = g.param(self.b1, params.get(self.b1))?;
        let w2 = g.param(self.w2, params.get(self.w2))?;
        let b2 = g.param(self.b2, params.get(self.b2))?;
        let h = g.matmul(x, w1)?;
        let h = g.add_row(h, b1)?;
        let h = g.gelu(h)?;
        let o = g.matmul(h, w2)?;
        g.add_row(o, b2)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn init<F: Scalar>(store: &mut ParamStore<F>, prefix: &str, dim: usize) -> Self {
        LayerNorm {
            gain: store.ones(format!("{prefix}.gain"), &[dim]),
            bias: store.zeros(format!("{prefix}.bias"), &[dim]),
        }
    }

    pub fn forward<F: Scalar>(&self, g: &mut Graph<F>, params: &ParamStore<F>, x: Var) -> Result<Var> {
        let gain = g.param(self.gain, params.get(self.gain))?;
        let bias = g.param(self.bias, params.get(self.bias))?;
        g.layer_norm(x, gain, bias)
    }
}

/// `LN(x + sublayer)`: the post-norm residual step.
pub fn residual_norm<F: Scalar>(
    g: &mut Graph<F>,
    params: &ParamStore<F>,
    norm: &LayerNorm,
    x: Var,
    sublayer: Var,
) -> Result<Var> {
    let sum = g.add(x, sublayer)?;
    norm.forward(g, params, sum)
}

/// One post-norm transformer block: attention, residual, norm, FFN,
/// residual, norm.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub attention: MultiHeadAttention,
    pub norm_attn: LayerNorm,
    pub ffn: FeedForward,
    pub norm_ffn: LayerNorm,
}

impl TransformerBlock {
    pub fn init<F: Scalar, R: Rng>(
        store: &mut ParamStore<F>,
        prefix: &str,
        dim: usize,
        heads: usize,
        ffn_hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(TransformerBlock {
            attention: MultiHeadAttention::init(store, &format!("{prefix}.attn"), dim, heads, rng)?,
            norm_attn: LayerNorm::init(store, &format!("{prefix}.norm_attn"), dim),
            ffn: FeedForward::init(store, &format!("{prefix}.ffn"), dim, ffn_hidden, rng),
            norm_ffn: LayerNorm::init(store, &format!("{prefix}.norm_ffn"), dim),
        })
    }

    pub fn forward<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        params: &ParamStore<F>,
        query: Var,
        context: Var,
    ) -> Result<Var> {
        let attn = self.attention.forward(g, params, query, context, false)?;
        let h = residual_norm(g, params, &self.norm_attn, query, attn.out)?;
        let f = self.ffn.forward(g, params, h)?;
        residual_norm(g, params, &self.norm_ffn, h, f)
    }
}
