//! Compound prototype decoder.
//!
//! Both token groups pass through one shared decoder layer: the tokens are
//! stacked `[T_g; T_f]` for multi-head self-attention, then cross-attend over
//! the encoded feature rows, then a feed-forward step. Each step is a
//! post-norm residual. Rows are split back into the global and focused
//! groups at the end, together with the head-averaged cross-attention maps.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamId, Var};
use crate::error::{Error, Result};
use crate::nn::{residual_norm, FeedForward, LayerNorm, MultiHeadAttention};
use crate::params::{ParamStore, INIT_STD};
use crate::relation_encoder::{EncodedVar, MultiRelationFeature};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub dim: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub global_prototypes: usize,
    pub focused_prototypes: usize,
}

#[derive(Clone, Debug)]
pub struct PrototypeDecoder {
    pub config: DecoderConfig,
    pub global_tokens: Option<ParamId>,
    pub focused_tokens: Option<ParamId>,
    pub self_attention: MultiHeadAttention,
    pub norm_self: LayerNorm,
    pub cross_attention: MultiHeadAttention,
    pub norm_cross: LayerNorm,
    pub ffn: FeedForward,
    pub norm_ffn: LayerNorm,
}

/// Prototypes of one video. An empty group is `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct CompoundPrototypes<F> {
    /// `P_g [m_g × d]`.
    pub global: Option<Tensor<F>>,
    /// `P_f [m_f × d]`.
    pub focused: Option<Tensor<F>>,
    /// `A_g [m_g × R]`, rows sum to one.
    pub global_attention: Option<Tensor<F>>,
    /// `A_f [m_f × R]`, rows sum to one.
    pub focused_attention: Option<Tensor<F>>,
}

/// Graph-side prototypes.
#[derive(Clone, Copy, Debug)]
pub struct PrototypeVars {
    pub global: Option<Var>,
    pub focused: Option<Var>,
    pub global_attention: Option<Var>,
    pub focused_attention: Option<Var>,
}

impl PrototypeVars {
    pub fn values<F: Scalar>(&self, g: &Graph<F>) -> CompoundPrototypes<F> {
        let val = |v: Option<Var>| v.map(|v| g.value(v).clone());
        CompoundPrototypes {
            global: val(self.global),
            focused: val(self.focused),
            global_attention: val(self.global_attention),
            focused_attention: val(self.focused_attention),
        }
    }
}

impl PrototypeDecoder {
    pub fn init<F: Scalar, R: Rng>(store: &mut ParamStore<F>, config: &DecoderConfig, rng: &mut R) -> Result<Self> {
        let (mg, mf, d) = (config.global_prototypes, config.focused_prototypes, config.dim);
        if mg + mf == 0 {
            return Err(Error::Config("decoder needs at least one prototype".into()));
        }
        let global_tokens = (mg > 0).then(|| store.normal("decoder.tokens_global", &[mg, d], INIT_STD, rng));
        let focused_tokens = (mf > 0).then(|| store.normal("decoder.tokens_focused", &[mf, d], INIT_STD, rng));
        Ok(PrototypeDecoder {
            global_tokens,
            focused_tokens,
            self_attention: MultiHeadAttention::init(store, "decoder.self_attn", d, config.heads, rng)?,
            norm_self: LayerNorm::init(store, "decoder.norm_self", d),
            cross_attention: MultiHeadAttention::init(store, "decoder.cross_attn", d, config.heads, rng)?,
            norm_cross: LayerNorm::init(store, "decoder.norm_cross", d),
            ffn: FeedForward::init(store, "decoder.ffn", d, config.ffn_hidden, rng),
            norm_ffn: LayerNorm::init(store, "decoder.norm_ffn", d),
            config: config.clone(),
        })
    }

    pub fn decode_var<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        params: &ParamStore<F>,
        encoded: &EncodedVar,
    ) -> Result<PrototypeVars> {
        let shape = g.shape(encoded.features).to_vec();
        if shape.len() != 2 || shape[1] != self.config.dim {
            return Err(Error::Contract(format!(
                "decoder expects [R × {}] features, got {shape:?}",
                self.config.dim
            )));
        }
        let (mg, mf) = (self.config.global_prototypes, self.config.focused_prototypes);
        let mut groups = Vec::with_capacity(2);
        for id in [self.global_tokens, self.focused_tokens].into_iter().flatten() {
            groups.push(g.param(id, params.get(id))?);
        }
        let tokens = if groups.len() == 1 {
            groups[0]
        } else {
            g.concat_rows(&groups)?
        };

        let sa = self.self_attention.forward(g, params, tokens, tokens, false)?;
        let refined = residual_norm(g, params, &self.norm_self, tokens, sa.out)?;
        let ca = self
            .cross_attention
            .forward(g, params, refined, encoded.features, true)?;
        let attended = residual_norm(g, params, &self.norm_cross, refined, ca.out)?;
        let ff = self.ffn.forward(g, params, attended)?;
        let protos = residual_norm(g, params, &self.norm_ffn, attended, ff)?;
        let attn = ca.weights.expect("weights requested");

        let mut split = |x: Var| -> Result<(Option<Var>, Option<Var>)> {
            Ok(match (mg, mf) {
                (0, _) => (None, Some(x)),
                (_, 0) => (Some(x), None),
                _ => (Some(g.slice_rows(x, 0, mg)?), Some(g.slice_rows(x, mg, mf)?)),
            })
        };
        let (global, focused) = split(protos)?;
        let (global_attention, focused_attention) = split(attn)?;
        Ok(PrototypeVars {
            global,
            focused,
            global_attention,
            focused_attention,
        })
    }

    /// Graph-free convenience wrapper around [`Self::decode_var`].
    pub fn decode<F: Scalar>(
        &self,
        params: &ParamStore<F>,
        encoded: &MultiRelationFeature<F>,
    ) -> Result<CompoundPrototypes<F>> {
        let mut g = Graph::new();
        let features = g.constant(encoded.features.clone())?;
        let vars = self.decode_var(
            &mut g,
            params,
            &EncodedVar {
                features,
                origins: encoded.origins.clone(),
            },
        )?;
        Ok(vars.values(&g))
    }
}
