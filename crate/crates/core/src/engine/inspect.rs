//! Per-frame view of prototype cross-attention, and pairwise matching of
//! two videos.

use std::fmt::Write as _;

use serde::Serialize;

use super::model::Model;
use crate::error::{Error, Result};
use crate::feature_io::VideoFeatures;
use crate::matching::{video_similarity, SimilarityBreakdown};
use crate::relation_encoder::RowOrigin;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PrototypeGroup {
    Global,
    Focused,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttentionProfile {
    pub group: PrototypeGroup,
    pub prototype: usize,
    /// Sum of the raw attention row over all encoded rows.
    pub raw_sum: f64,
    /// Per-frame weight, `len = T`, summing to one.
    pub frames: Vec<f64>,
}

/// Averages each attention row over the encoded rows of every frame (one
/// per frame-level relation plus one per object with all relations on),
/// then renormalizes over frames.
pub fn frame_profile<F: Scalar>(row: &[F], origins: &[RowOrigin], frames: usize) -> Result<Vec<f64>> {
    if row.len() != origins.len() {
        return Err(Error::Contract(format!(
            "attention row of {} entries for {} encoded rows",
            row.len(),
            origins.len()
        )));
    }
    let mut sums = vec![0.0; frames];
    let mut counts = vec![0usize; frames];
    for (&w, o) in row.iter().zip(origins) {
        sums[o.frame] += w.as_f64();
        counts[o.frame] += 1;
    }
    let means: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &n)| if n == 0 { 0.0 } else { s / n as f64 })
        .collect();
    let total: f64 = means.iter().sum();
    Ok(means.iter().map(|m| m / total).collect())
}

pub fn inspect_attention<F: Scalar>(model: &Model<F>, video: &VideoFeatures) -> Result<Vec<AttentionProfile>> {
    let encoded = model.encode(video)?;
    let protos = model.decoder.decode(&model.params, &encoded)?;
    let mut out = Vec::new();
    let groups = [
        (PrototypeGroup::Global, &protos.global_attention),
        (PrototypeGroup::Focused, &protos.focused_attention),
    ];
    for (group, attn) in groups {
        let Some(attn): Option<&Tensor<F>> = attn.as_ref() else {
            continue;
        };
        for k in 0..attn.rows() {
            let row = attn.row(k);
            out.push(AttentionProfile {
                group,
                prototype: k,
                raw_sum: row.iter().map(|w| w.as_f64()).sum(),
                frames: frame_profile(row, &encoded.origins, video.frames())?,
            });
        }
    }
    Ok(out)
}

/// `group,prototype,t0,..,t{T-1}` with round-trip float formatting.
pub fn attention_csv(profiles: &[AttentionProfile]) -> String {
    let frames = profiles.first().map_or(0, |p| p.frames.len());
    let mut out = String::from("group,prototype");
    for t in 0..frames {
        let _ = write!(out, ",t{t}");
    }
    out.push('\n');
    for p in profiles {
        let tag = match p.group {
            PrototypeGroup::Global => "global",
            PrototypeGroup::Focused => "focused",
        };
        let _ = write!(out, "{tag},{}", p.prototype);
        for w in &p.frames {
            let _ = write!(out, ",{w:?}");
        }
        out.push('\n');
    }
    out
}

pub fn match_videos<F: Scalar>(model: &Model<F>, a: &VideoFeatures, b: &VideoFeatures) -> Result<SimilarityBreakdown> {
    let pa = model.prototypes(a)?;
    let pb = model.prototypes(b)?;
    video_similarity(&pa, &pb, model.config.fusion())
}
