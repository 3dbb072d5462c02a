//! Multi-relation encoder: three relation-encoding transformers over frame
//! and object features, concatenated row-wise into one feature matrix.

pub mod positional;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::feature_io::VideoFeatures;
use crate::nn::TransformerBlock;
use crate::params::ParamStore;
use crate::tensor::{Scalar, Tensor};

pub use positional::{positional_encoding_1d, positional_encoding_3d};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    /// Frame ↔ frame.
    Gg,
    /// Frame queries over object keys/values.
    Go,
    /// Object ↔ object.
    Oo,
}

impl Relation {
    pub const ALL: [Relation; 3] = [Relation::Gg, Relation::Go, Relation::Oo];

    pub fn tag(self) -> &'static str {
        match self {
            Relation::Gg => "gg",
            Relation::Go => "go",
            Relation::Oo => "oo",
        }
    }

    pub fn needs_objects(self) -> bool {
        !matches!(self, Relation::Gg)
    }
}

/// Which relation transformers contribute rows to the encoded feature.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationFlags {
    pub gg: bool,
    pub go: bool,
    pub oo: bool,
}

impl Default for RelationFlags {
    fn default() -> Self {
        RelationFlags {
            gg: true,
            go: true,
            oo: true,
        }
    }
}

impl RelationFlags {
    pub fn only(rel: Relation) -> Self {
        let mut f = RelationFlags {
            gg: false,
            go: false,
            oo: false,
        };
        f.set(rel, true);
        f
    }

    pub fn set(&mut self, rel: Relation, on: bool) {
        match rel {
            Relation::Gg => self.gg = on,
            Relation::Go => self.go = on,
            Relation::Oo => self.oo = on,
        }
    }

    pub fn enabled(&self, rel: Relation) -> bool {
        match rel {
            Relation::Gg => self.gg,
            Relation::Go => self.go,
            Relation::Oo => self.oo,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Relation> + '_ {
        Relation::ALL.into_iter().filter(|&r| self.enabled(r))
    }

    /// All seven nonempty subsets, ordered by bitmask (gg = 1, go = 2, oo = 4).
    pub fn all_subsets() -> Vec<RelationFlags> {
        (1u8..8)
            .map(|m| RelationFlags {
                gg: m & 1 != 0,
                go: m & 2 != 0,
                oo: m & 4 != 0,
            })
            .collect()
    }

    /// Encoded row count for `T` frames with `B` objects each.
    pub fn row_count(&self, frames: usize, boxes: usize) -> usize {
        self.iter()
            .map(|r| if r == Relation::Oo { frames * boxes } else { frames })
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub dim: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    /// Stacked blocks per relation transformer.
    pub depth: usize,
    pub relations: RelationFlags,
    pub positional_encoding: bool,
}

/// Where an encoded row came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct RowOrigin {
    pub relation: Relation,
    pub frame: usize,
    pub object: Option<usize>,
}

/// Encoded feature rows `[R × d]` and their origins.
#[derive(Clone, Debug)]
pub struct MultiRelationFeature<F> {
    pub features: Tensor<F>,
    pub origins: Vec<RowOrigin>,
}

/// Graph-side counterpart of [`MultiRelationFeature`].
#[derive(Clone, Debug)]
pub struct EncodedVar {
    pub features: Var,
    pub origins: Vec<RowOrigin>,
}

/// Encoder inputs after positional encoding: frames `[T×d]` and,
/// when present, objects `[(T·B)×d]`.
#[derive(Clone, Copy, Debug)]
pub struct EncoderInputs {
    pub frames: Var,
    pub objects: Option<Var>,
}

/// Independent weights per relation transformer; an empty stack means the
/// relation is disabled.
#[derive(Clone, Debug)]
pub struct RelationEncoder {
    pub config: EncoderConfig,
    pub gg: Vec<TransformerBlock>,
    pub go: Vec<TransformerBlock>,
    pub oo: Vec<TransformerBlock>,
}

impl RelationEncoder {
    pub fn init<F: Scalar, R: Rng>(store: &mut ParamStore<F>, config: &EncoderConfig, rng: &mut R) -> Result<Self> {
        let flags = config.relations;
        if config.depth == 0 {
            return Err(Error::Config("encoder depth must be at least 1".into()));
        }
        if !(flags.gg || flags.go || flags.oo) {
            return Err(Error::Config("at least one encoding relation must be enabled".into()));
        }
        if !config.dim.is_multiple_of(2)
            || (config.positional_encoding && (flags.go || flags.oo) && !config.dim.is_multiple_of(4))
        {
            return Err(Error::Config(format!(
                "dimension {} incompatible with positional encoding",
                config.dim
            )));
        }
        let mut block = |rel: Relation, store: &mut ParamStore<F>| -> Result<Vec<TransformerBlock>> {
            if !flags.enabled(rel) {
                return Ok(Vec::new());
            }
            (0..config.depth)
                .map(|l| {
                    let prefix = if l == 0 {
                        format!("encoder.{}", rel.tag())
                    } else {
                        format!("encoder.{}.{l}", rel.tag())
                    };
                    TransformerBlock::init(store, &prefix, config.dim, config.heads, config.ffn_hidden, rng)
                })
                .collect()
        };
        Ok(RelationEncoder {
            gg: block(Relation::Gg, store)?,
            go: block(Relation::Go, store)?,
            oo: block(Relation::Oo, store)?,
            config: config.clone(),
        })
    }

    fn blocks(&self, rel: Relation) -> &[TransformerBlock] {
        match rel {
            Relation::Gg => &self.gg,
            Relation::Go => &self.go,
            Relation::Oo => &self.oo,
        }
    }

    /// Puts a video's features on the graph, adding positional encodings
    /// when enabled.
    pub fn prepare_inputs<F: Scalar>(&self, g: &mut Graph<F>, video: &VideoFeatures) -> Result<EncoderInputs> {
        let d = self.config.dim;
        if video.dim() != d {
            return Err(Error::Contract(format!(
                "video {} has dimension {}, encoder expects {d}",
                video.id,
                video.dim()
            )));
        }
        let frames = video.frames();
        let mut xg: Tensor<F> = video.global.cast();
        if self.config.positional_encoding {
            let pe = positional_encoding_1d::<F>(frames, d)?;
            xg = add(&xg, &pe);
        }
        let frames_var = g.constant(xg)?;

        let objects = match (&video.objects, &video.boxes) {
            (Some(o), Some(b)) => {
                let mut xo: Tensor<F> = o.cast::<F>().reshape(&[o.shape()[0] * o.shape()[1], d])?;
                if self.config.positional_encoding {
                    let pe = positional_encoding_3d::<F>(b, d)?;
                    xo = add(&xo, &pe);
                }
                Some(g.constant(xo)?)
            }
            _ => None,
        };
        Ok(EncoderInputs {
            frames: frames_var,
            objects,
        })
    }

    /// Runs one relation transformer. The output has the query side's shape.
    /// Stacked blocks refine the query side; the go context stays the
    /// object inputs.
    pub fn ret_forward<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        params: &ParamStore<F>,
        rel: Relation,
        inputs: &EncoderInputs,
    ) -> Result<Var> {
        let blocks = self.blocks(rel);
        if blocks.is_empty() {
            return Err(Error::Contract(format!("relation {} is disabled", rel.tag())));
        }
        let need_objects = || {
            inputs
                .objects
                .ok_or_else(|| Error::Config(format!("relation {} needs object features (B ≥ 1)", rel.tag())))
        };
        let (mut x, context) = match rel {
            Relation::Gg => (inputs.frames, None),
            Relation::Go => (inputs.frames, Some(need_objects()?)),
            Relation::Oo => (need_objects()?, None),
        };
        for block in blocks {
            x = block.forward(g, params, x, context.unwrap_or(x))?;
        }
        Ok(x)
    }

    /// Encodes a video into `F_m`, rows ordered gg, go, oo with object rows
    /// in `t·B + b` order.
    pub fn encode_var<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        params: &ParamStore<F>,
        video: &VideoFeatures,
    ) -> Result<EncodedVar> {
        let boxes = video.boxes_per_frame();
        let flags = self.config.relations;
        if boxes == 0 && (flags.go || flags.oo) {
            return Err(Error::Config(format!(
                "video {} has no objects but go/oo relations are enabled",
                video.id
            )));
        }
        let inputs = self.prepare_inputs(g, video)?;
        let frames = video.frames();
        let mut parts = Vec::with_capacity(3);
        let mut origins = Vec::with_capacity(flags.row_count(frames, boxes));
        for rel in flags.iter() {
            parts.push(self.ret_forward(g, params, rel, &inputs)?);
            match rel {
                Relation::Oo => {
                    for t in 0..frames {
                        for b in 0..boxes {
                            origins.push(RowOrigin {
                                relation: rel,
                                frame: t,
                                object: Some(b),
                            });
                        }
                    }
                }
                _ => origins.extend((0..frames).map(|t| RowOrigin {
                    relation: rel,
                    frame: t,
                    object: None,
                })),
            }
        }
        let features = if parts.len() == 1 {
            parts[0]
        } else {
            g.concat_rows(&parts)?
        };
        Ok(EncodedVar { features, origins })
    }

    /// Graph-free convenience wrapper around [`Self::encode_var`].
    pub fn encode<F: Scalar>(&self, params: &ParamStore<F>, video: &VideoFeatures) -> Result<MultiRelationFeature<F>> {
        let mut g = Graph::new();
        let enc = self.encode_var(&mut g, params, video)?;
        Ok(MultiRelationFeature {
            features: g.value(enc.features).clone(),
            origins: enc.origins,
        })
    }
}

fn add<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Tensor::from_parts(a.shape().to_vec(), data)
}
