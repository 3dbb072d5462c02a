//! Video-to-video similarity from compound prototypes.
//!
//! Global prototypes are compared index to index; focused prototypes are
//! first aligned by an optimal one-to-one assignment. The two scores are
//! fused with fixed weights. In the graph variants the assignment is a
//! constant of the forward pass: gradients reach only the matched pairs.

mod hungarian;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::prototype_decoder::{CompoundPrototypes, PrototypeVars};
use crate::tensor::kernels::{cosine, cosine_matrix};
use crate::tensor::{Scalar, Tensor};

pub use hungarian::{hungarian_max, Permutation};

/// Fusion weights `s = λ₁·s_g + λ₂·s_f`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fusion {
    pub lambda_global: f64,
    pub lambda_focused: f64,
}

impl Default for Fusion {
    fn default() -> Self {
        Fusion {
            lambda_global: 0.5,
            lambda_focused: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimilarityBreakdown {
    pub s_g: f64,
    pub s_f: f64,
    pub s: f64,
    pub sigma: Permutation,
    pub global_pairs: Vec<f64>,
    pub focused_pairs: Vec<f64>,
}

fn check_pair<F: Scalar>(what: &str, a: &Tensor<F>, b: &Tensor<F>) -> Result<()> {
    if a.rank() != 2 || a.shape() != b.shape() {
        return Err(Error::Contract(format!(
            "{what} prototype sets differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Mean cosine of index-aligned pairs, plus the per-pair values.
pub fn global_score<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Result<(f64, Vec<f64>)> {
    check_pair("global", a, b)?;
    let pairs: Vec<f64> = (0..a.rows()).map(|k| cosine(a.row(k), b.row(k)).as_f64()).collect();
    Ok((pairs.iter().sum::<f64>() / pairs.len() as f64, pairs))
}

/// Mean cosine over the optimal assignment, with the assignment and the
/// matched-pair values (`pairs[k]` is the cosine of `a_k` and `b_σ(k)`).
pub fn focused_score<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Result<(f64, Permutation, Vec<f64>)> {
    check_pair("focused", a, b)?;
    let sims = cosine_matrix(a, b)?;
    let (sigma, total) = hungarian_max(&sims)?;
    let m = a.rows();
    let pairs = (0..m).map(|k| sims.at(k, sigma.apply(k)).as_f64()).collect();
    Ok((total / m as f64, sigma, pairs))
}

fn group_mismatch(what: &str) -> Error {
    Error::Contract(format!("{what} prototypes present on one side only"))
}

/// Fused similarity. A group absent on both sides contributes zero.
pub fn video_similarity<F: Scalar>(
    a: &CompoundPrototypes<F>,
    b: &CompoundPrototypes<F>,
    fusion: Fusion,
) -> Result<SimilarityBreakdown> {
    let (s_g, global_pairs) = match (&a.global, &b.global) {
        (Some(x), Some(y)) => global_score(x, y)?,
        (None, None) => (0.0, Vec::new()),
        _ => return Err(group_mismatch("global")),
    };
    let (s_f, sigma, focused_pairs) = match (&a.focused, &b.focused) {
        (Some(x), Some(y)) => focused_score(x, y)?,
        (None, None) => (0.0, Permutation::identity(0), Vec::new()),
        _ => return Err(group_mismatch("focused")),
    };
    Ok(SimilarityBreakdown {
        s_g,
        s_f,
        s: fusion.lambda_global * s_g + fusion.lambda_focused * s_f,
        sigma,
        global_pairs,
        focused_pairs,
    })
}

/// Graph form of [`global_score`].
pub fn global_score_var<F: Scalar>(g: &mut Graph<F>, a: Var, b: Var) -> Result<Var> {
    if g.shape(a) != g.shape(b) {
        return Err(group_mismatch("global"));
    }
    let m = g.shape(a)[0];
    let sims = g.cosine_matrix(a, b)?;
    let diag: Vec<usize> = (0..m).map(|k| k * m + k).collect();
    let picked = g.pick(sims, &diag)?;
    g.mean(picked)
}

/// Graph form of [`focused_score`]; the assignment is computed from the
/// current values and held fixed.
pub fn focused_score_var<F: Scalar>(g: &mut Graph<F>, a: Var, b: Var) -> Result<(Var, Permutation)> {
    if g.shape(a) != g.shape(b) {
        return Err(group_mismatch("focused"));
    }
    let m = g.shape(a)[0];
    let sims = g.cosine_matrix(a, b)?;
    let (sigma, _) = hungarian_max(g.value(sims))?;
    let matched: Vec<usize> = (0..m).map(|k| k * m + sigma.apply(k)).collect();
    let picked = g.pick(sims, &matched)?;
    Ok((g.mean(picked)?, sigma))
}

/// Graph form of [`video_similarity`]; returns the fused scalar.
pub fn similarity_var<F: Scalar>(
    g: &mut Graph<F>,
    a: &PrototypeVars,
    b: &PrototypeVars,
    fusion: Fusion,
) -> Result<Var> {
    let mut terms = Vec::with_capacity(2);
    match (a.global, b.global) {
        (Some(x), Some(y)) => {
            let s = global_score_var(g, x, y)?;
            terms.push(g.scale(s, F::of(fusion.lambda_global))?);
        }
        (None, None) => {}
        _ => return Err(group_mismatch("global")),
    }
    match (a.focused, b.focused) {
        (Some(x), Some(y)) => {
            let (s, _) = focused_score_var(g, x, y)?;
            terms.push(g.scale(s, F::of(fusion.lambda_focused))?);
        }
        (None, None) => {}
        _ => return Err(group_mismatch("focused")),
    }
    g.add_all(&terms)
}
