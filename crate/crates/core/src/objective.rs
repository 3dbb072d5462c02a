//! Episode loss: cross-entropy over fused-similarity logits plus the two
//! prototype regularizers.
//!
//! Both regularizers sum the cosine similarity over unordered pairs `i < j`
//! (raw cosine, so anti-correlated pairs are rewarded). They are averaged
//! over every video of the episode, support and query alike.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::matching::{similarity_var, video_similarity, Fusion};
use crate::prototype_decoder::{CompoundPrototypes, PrototypeVars};
use crate::tensor::kernels::cosine_matrix;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Cross-entropy.
    pub w1: f64,
    /// Diversity of global prototypes.
    pub w2: f64,
    /// Divergence of focused attention rows.
    pub w3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w1: 1.0,
            w2: 0.1,
            w3: 0.1,
        }
    }
}

/// How the K shots of a class are reduced to one logit.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Mean,
    Max,
}

fn upper_pairs(m: usize) -> Vec<usize> {
    (0..m).flat_map(|i| (i + 1..m).map(move |j| i * m + j)).collect()
}

/// `Σ_{i<j} cos(x_i, x_j)` over the rows of `x`.
pub fn pairwise_cosine_sum<F: Scalar>(x: &Tensor<F>) -> Result<f64> {
    let sims = cosine_matrix(x, x)?;
    Ok(upper_pairs(x.rows()).iter().map(|&i| sims.data()[i].as_f64()).sum())
}

/// Diversity loss of one video's global prototypes.
pub fn diversity_loss<F: Scalar>(global: &Tensor<F>) -> Result<f64> {
    pairwise_cosine_sum(global)
}

/// Divergence loss of one video's focused attention rows.
pub fn attention_divergence_loss<F: Scalar>(focused_attention: &Tensor<F>) -> Result<f64> {
    pairwise_cosine_sum(focused_attention)
}

/// Graph form of [`pairwise_cosine_sum`]; a single row yields a constant 0.
pub fn pairwise_cosine_sum_var<F: Scalar>(g: &mut Graph<F>, x: Var) -> Result<Var> {
    let m = g.shape(x)[0];
    if m < 2 {
        return g.constant(Tensor::scalar(F::zero()));
    }
    let sims = g.cosine_matrix(x, x)?;
    let picked = g.pick(sims, &upper_pairs(m))?;
    g.sum(picked)
}

fn aggregate(scores: &[f64], agg: Aggregation) -> f64 {
    match agg {
        Aggregation::Mean => scores.iter().sum::<f64>() / scores.len() as f64,
        Aggregation::Max => scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

fn check_support<T>(support: &[Vec<T>]) -> Result<()> {
    if support.len() < 2 {
        return Err(Error::Contract(format!(
            "need at least 2 classes, got {}",
            support.len()
        )));
    }
    if let Some(c) = support.iter().position(Vec::is_empty) {
        return Err(Error::Contract(format!("support class {c} is empty")));
    }
    Ok(())
}

/// One logit per class for a query: the aggregated fused similarity to that
/// class's shots.
pub fn class_logits<F: Scalar>(
    query: &CompoundPrototypes<F>,
    support: &[Vec<CompoundPrototypes<F>>],
    fusion: Fusion,
    agg: Aggregation,
) -> Result<Vec<f64>> {
    check_support(support)?;
    support
        .iter()
        .map(|shots| {
            let scores = shots
                .iter()
                .map(|s| video_similarity(query, s, fusion).map(|b| b.s))
                .collect::<Result<Vec<_>>>()?;
            Ok(aggregate(&scores, agg))
        })
        .collect()
}

/// Graph form of [`class_logits`] for a batch of queries: `[N × C]`.
///
/// Max aggregation selects the best shot by value and routes gradient only
/// through it.
pub fn class_logits_var<F: Scalar>(
    g: &mut Graph<F>,
    queries: &[PrototypeVars],
    support: &[Vec<PrototypeVars>],
    fusion: Fusion,
    agg: Aggregation,
) -> Result<Var> {
    check_support(support)?;
    if queries.is_empty() {
        return Err(Error::Contract("episode has no queries".into()));
    }
    let mut rows = Vec::with_capacity(queries.len());
    for q in queries {
        let mut cells = Vec::with_capacity(support.len());
        for shots in support {
            let sims = shots
                .iter()
                .map(|s| similarity_var(g, q, s, fusion))
                .collect::<Result<Vec<_>>>()?;
            let logit = match agg {
                Aggregation::Mean => {
                    let total = g.add_all(&sims)?;
                    g.scale(total, F::one() / F::of(sims.len() as f64))?
                }
                Aggregation::Max => {
                    let mut best = 0;
                    for (k, &s) in sims.iter().enumerate() {
                        if g.value(s).item() > g.value(sims[best]).item() {
                            best = k;
                        }
                    }
                    sims[best]
                }
            };
            cells.push(g.reshape(logit, &[1, 1])?);
        }
        rows.push(g.concat_cols(&cells)?);
    }
    if rows.len() == 1 {
        Ok(rows[0])
    } else {
        g.concat_rows(&rows)
    }
}

/// Mean softmax cross-entropy of `logits / τ`, computed in `f64`.
pub fn cross_entropy(logits: &[Vec<f64>], labels: &[usize], temperature: f64) -> Result<f64> {
    if logits.len() != labels.len() || logits.is_empty() {
        return Err(Error::Contract(format!(
            "{} logit rows for {} labels",
            logits.len(),
            labels.len()
        )));
    }
    let mut total = 0.0;
    for (row, &l) in logits.iter().zip(labels) {
        if l >= row.len() {
            return Err(Error::Contract(format!("label {l} outside 0..{}", row.len())));
        }
        let z: Vec<f64> = row.iter().map(|v| v / temperature).collect();
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = z.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        total += lse - z[l];
    }
    Ok(total / labels.len() as f64)
}

/// `w1·CE + w2·mean L_div + w3·mean L_att` from values. Videos without the
/// corresponding prototype group are skipped by their regularizer.
pub fn total_loss<F: Scalar>(
    logits: &[Vec<f64>],
    labels: &[usize],
    videos: &[&CompoundPrototypes<F>],
    weights: LossWeights,
    temperature: f64,
) -> Result<f64> {
    let ce = cross_entropy(logits, labels, temperature)?;
    let mean_of = |vals: Vec<f64>| {
        if vals.is_empty() {
            0.0
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    };
    let div = videos
        .iter()
        .filter_map(|v| v.global.as_ref().map(diversity_loss))
        .collect::<Result<Vec<_>>>()?;
    let att = videos
        .iter()
        .filter_map(|v| v.focused_attention.as_ref().map(attention_divergence_loss))
        .collect::<Result<Vec<_>>>()?;
    Ok(weights.w1 * ce + weights.w2 * mean_of(div) + weights.w3 * mean_of(att))
}

/// Graph form of [`total_loss`]; `logits` is `[N × C]`.
pub fn total_loss_var<F: Scalar>(
    g: &mut Graph<F>,
    logits: Var,
    labels: &[usize],
    videos: &[PrototypeVars],
    weights: LossWeights,
    temperature: f64,
) -> Result<Var> {
    let scaled = g.scale(logits, F::of(1.0 / temperature))?;
    let ce = g.cross_entropy(scaled, labels)?;
    let mut terms = vec![g.scale(ce, F::of(weights.w1))?];
    let groups: [(Vec<Var>, f64); 2] = [
        (videos.iter().filter_map(|v| v.global).collect(), weights.w2),
        (videos.iter().filter_map(|v| v.focused_attention).collect(), weights.w3),
    ];
    for (xs, w) in groups {
        if xs.is_empty() || w == 0.0 {
            continue;
        }
        let per_video = xs
            .iter()
            .map(|&x| pairwise_cosine_sum_var(g, x))
            .collect::<Result<Vec<_>>>()?;
        let sum = g.add_all(&per_video)?;
        terms.push(g.scale(sum, F::of(w / xs.len() as f64))?);
    }
    g.add_all(&terms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, m: usize, d: usize) -> Tensor<f64> {
        Tensor::from_fn(&[m, d], |_| rng.random_range(-1.0..1.0))
    }

    fn direct_cos(u: &[f64], v: &[f64]) -> f64 {
        let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
        dot / (u.iter().map(|a| a * a).sum::<f64>().sqrt() * v.iter().map(|a| a * a).sum::<f64>().sqrt())
    }

    fn loop_oracle(x: &Tensor<f64>) -> f64 {
        let mut s = 0.0;
        for i in 0..x.rows() {
            for j in i + 1..x.rows() {
                s += direct_cos(x.row(i), x.row(j));
            }
        }
        s
    }

    #[test]
    fn diversity_anchors() {
        assert!(diversity_loss(&Tensor::<f64>::identity(6)).unwrap().abs() < 1e-6);
        let same = Tensor::<f64>::from_fn(&[8, 5], |i| (i % 5) as f64 + 1.0);
        assert!((diversity_loss(&same).unwrap() - 28.0).abs() < 1e-5);
        assert_eq!(diversity_loss(&Tensor::<f64>::full(&[1, 4], 1.0)).unwrap(), 0.0);
    }

    #[test]
    fn regularizers_match_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let x = random(&mut rng, 7, 10);
            assert!((diversity_loss(&x).unwrap() - loop_oracle(&x)).abs() < 1e-9);
            let raw = Tensor::<f64>::from_fn(&[5, 12], |_| rng.random_range(0.0..1.0));
            let stochastic = crate::tensor::kernels::softmax_rows(&raw).unwrap();
            assert!((attention_divergence_loss(&stochastic).unwrap() - loop_oracle(&stochastic)).abs() < 1e-9);
        }
    }

    #[test]
    fn disjoint_one_hot_attention_is_zero_identical_rows_count_pairs() {
        let a = Tensor::<f64>::from_fn(&[4, 10], |i| if i % 10 == (i / 10) * 2 { 1.0 } else { 0.0 });
        assert!(attention_divergence_loss(&a).unwrap().abs() < 1e-6);
        let same = Tensor::<f64>::full(&[4, 10], 0.1);
        assert!((attention_divergence_loss(&same).unwrap() - 6.0).abs() < 1e-5);
    }

    #[test]
    fn diversity_is_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = random(&mut rng, 6, 9);
        let scaled = x.map(|v| v * 3.7);
        assert!((diversity_loss(&x).unwrap() - diversity_loss(&scaled).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn uniform_logits_give_log_c() {
        let logits = vec![vec![0.3; 5]; 4];
        let ce = cross_entropy(&logits, &[0, 1, 2, 3], 1.0).unwrap();
        assert!((ce - 5f64.ln()).abs() < 1e-6);
        let huge = vec![vec![1e3, 0.0, 0.0]];
        assert!(cross_entropy(&huge, &[0], 1.0).unwrap() < 1e-12);
    }

    fn protos(rng: &mut ChaCha8Rng) -> CompoundPrototypes<f64> {
        let attn = Tensor::<f64>::from_fn(&[3, 12], |_| rng.random_range(0.0..1.0));
        CompoundPrototypes {
            global: Some(random(rng, 3, 8)),
            focused: Some(random(rng, 3, 8)),
            global_attention: None,
            focused_attention: Some(crate::tensor::kernels::softmax_rows(&attn).unwrap()),
        }
    }

    #[test]
    fn class_logits_mean_matches_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let q = protos(&mut rng);
        let support: Vec<Vec<_>> = (0..3).map(|_| (0..2).map(|_| protos(&mut rng)).collect()).collect();
        let logits = class_logits(&q, &support, Fusion::default(), Aggregation::Mean).unwrap();
        for (c, shots) in support.iter().enumerate() {
            let oracle = shots
                .iter()
                .map(|s| video_similarity(&q, s, Fusion::default()).unwrap().s)
                .sum::<f64>()
                / 2.0;
            assert!((logits[c] - oracle).abs() < 1e-9);
        }
        let dup: Vec<Vec<_>> = support.iter().map(|s| vec![s[0].clone(), s[0].clone()]).collect();
        let mean = class_logits(&q, &dup, Fusion::default(), Aggregation::Mean).unwrap();
        let max = class_logits(&q, &dup, Fusion::default(), Aggregation::Max).unwrap();
        for (a, b) in mean.iter().zip(&max) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn class_logits_rejects_bad_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let q = protos(&mut rng);
        let one = vec![vec![protos(&mut rng)]];
        assert!(class_logits(&q, &one, Fusion::default(), Aggregation::Mean).is_err());
        let empty = vec![vec![protos(&mut rng)], vec![]];
        assert!(class_logits(&q, &empty, Fusion::default(), Aggregation::Mean).is_err());
    }

    #[test]
    fn graph_loss_matches_composed_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let videos: Vec<_> = (0..4).map(|_| protos(&mut rng)).collect();
        let mut g = Graph::<f64>::new();
        let vars: Vec<PrototypeVars> = videos
            .iter()
            .map(|p| PrototypeVars {
                global: Some(g.input(p.global.clone().unwrap()).unwrap()),
                focused: Some(g.input(p.focused.clone().unwrap()).unwrap()),
                global_attention: None,
                focused_attention: Some(g.input(p.focused_attention.clone().unwrap()).unwrap()),
            })
            .collect();
        let support = vec![vec![vars[0]], vec![vars[1]]];
        let logits = class_logits_var(&mut g, &vars[2..], &support, Fusion::default(), Aggregation::Mean).unwrap();
        let labels = [1, 0];
        let w = LossWeights::default();
        let loss = total_loss_var(&mut g, logits, &labels, &vars, w, 0.5).unwrap();

        let sup_vals = vec![vec![videos[0].clone()], vec![videos[1].clone()]];
        let rows: Vec<Vec<f64>> = videos[2..]
            .iter()
            .map(|q| class_logits(q, &sup_vals, Fusion::default(), Aggregation::Mean).unwrap())
            .collect();
        let refs: Vec<_> = videos.iter().collect();
        let oracle = total_loss(&rows, &labels, &refs, w, 0.5).unwrap();
        assert!((g.value(loss).item() - oracle).abs() < 1e-8);
    }
}
