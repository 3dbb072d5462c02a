//! Maximum-weight perfect assignment via the O(n³) Hungarian method with
//! row/column potentials (shortest augmenting paths).

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// A bijection on `0..n`; `map[k]` is the partner of `k`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Permutation((0..n).collect())
    }

    pub fn from_vec(map: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; map.len()];
        for &j in &map {
            if j >= map.len() || std::mem::replace(&mut seen[j], true) {
                return Err(Error::Contract(format!("{map:?} is not a permutation")));
            }
        }
        Ok(Permutation(map))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn apply(&self, k: usize) -> usize {
        self.0[k]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.0.len()];
        for (k, &j) in self.0.iter().enumerate() {
            inv[j] = k;
        }
        Permutation(inv)
    }
}

/// Solves `max_σ Σ_k S[k, σ(k)]` for a square score matrix.
///
/// The solver minimizes `max(S) - S`. When several minimum-slack columns
/// compete, the lowest index wins, so results are deterministic.
pub fn hungarian_max<F: Scalar>(scores: &Tensor<F>) -> Result<(Permutation, f64)> {
    let shape = scores.shape();
    if shape.len() != 2 || shape[0] != shape[1] {
        return Err(Error::Contract(format!(
            "assignment needs a square matrix, got {shape:?}"
        )));
    }
    if !scores.is_finite() {
        return Err(Error::Contract("assignment scores must be finite".into()));
    }
    let n = shape[0];
    let s: Vec<f64> = scores.data().iter().map(|x| x.as_f64()).collect();
    let sigma = solve_min(&cost_from_scores(&s), n);
    let total = (0..n).map(|k| s[k * n + sigma[k]]).sum();
    Ok((Permutation(sigma), total))
}

fn cost_from_scores(s: &[f64]) -> Vec<f64> {
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    s.iter().map(|&v| max - v).collect()
}

/// Minimum-cost assignment on an `n×n` row-major cost matrix; returns the
/// column of each row.
fn solve_min(cost: &[f64], n: usize) -> Vec<usize> {
    // 1-based arrays; index 0 is the virtual source row/column.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut row_of_col = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of_col[0] = i;
        let mut j0 = 0usize;
        let mut min_slack = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < min_slack[j] {
                    min_slack[j] = cur;
                    way[j] = j0;
                }
                if min_slack[j] < delta {
                    delta = min_slack[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_slack[j] -= delta;
                }
            }
            j0 = j1;
            if row_of_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of_col[j0] = row_of_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of_row = vec![0usize; n];
    for j in 1..=n {
        col_of_row[row_of_col[j] - 1] = j - 1;
    }
    col_of_row
}
