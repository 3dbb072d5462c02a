//! Plain forward kernels. The autodiff graph calls these for its forward
//! pass; inference code and tests call them directly.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Layer-norm variance stabilizer.
pub const LAYER_NORM_EPS: f64 = 1e-5;
/// Cosine-similarity denominator guard.
pub const COSINE_EPS: f64 = 1e-8;

fn expect_matrix<F: Scalar>(op: &'static str, t: &Tensor<F>) -> Result<(usize, usize)> {
    if t.rank() != 2 {
        return Err(Error::shape(op, format!("expected a matrix, got {:?}", t.shape())));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

/// `out[m×n] = a[m×k] · b[k×n]`, accumulated into `out`.
pub(crate) fn gemm_nn<F: Scalar>(a: &[F], b: &[F], out: &mut [F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = a[i * k + p];
            if a_ip == F::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + a_ip * bv;
            }
        }
    }
}

/// `out[m×n] += a[m×k] · b[n×k]ᵀ`.
pub(crate) fn gemm_nt<F: Scalar>(a: &[F], b: &[F], out: &mut [F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = F::zero();
            for (&x, &y) in a_row.iter().zip(b_row) {
                acc = acc + x * y;
            }
            out[i * n + j] = out[i * n + j] + acc;
        }
    }
}

/// `out[k×n] += a[m×k]ᵀ · b[m×n]`.
pub(crate) fn gemm_tn<F: Scalar>(a: &[F], b: &[F], out: &mut [F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let b_row = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = a[i * k + p];
            if a_ip == F::zero() {
                continue;
            }
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + a_ip * bv;
            }
        }
    }
}

pub fn matmul<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    let (m, k) = expect_matrix("matmul", a)?;
    let (k2, n) = expect_matrix("matmul", b)?;
    if k != k2 {
        return Err(Error::shape(
            "matmul",
            format!("inner extents differ: {m}x{k} · {k2}x{n}"),
        ));
    }
    let mut out = vec![F::zero(); m * n];
    gemm_nn(a.data(), b.data(), &mut out, m, k, n);
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// `a · bᵀ` without materializing the transpose.
pub fn matmul_nt<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    let (m, k) = expect_matrix("matmul_nt", a)?;
    let (n, k2) = expect_matrix("matmul_nt", b)?;
    if k != k2 {
        return Err(Error::shape(
            "matmul_nt",
            format!("inner extents differ: {m}x{k} · ({n}x{k2})ᵀ"),
        ));
    }
    let mut out = vec![F::zero(); m * n];
    gemm_nt(a.data(), b.data(), &mut out, m, k, n);
    Ok(Tensor::from_parts(vec![m, n], out))
}

pub fn transpose<F: Scalar>(a: &Tensor<F>) -> Result<Tensor<F>> {
    let (m, n) = expect_matrix("transpose", a)?;
    let d = a.data();
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = d[i * n + j];
        }
    }
    Ok(Tensor::from_parts(vec![n, m], out))
}

pub(crate) fn softmax_row_in_place<F: Scalar>(row: &mut [F]) {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    let mut total = F::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total = total + *v;
    }
    for v in row.iter_mut() {
        *v = *v / total;
    }
}

/// Row-wise softmax with per-row max subtraction.
pub fn softmax_rows<F: Scalar>(x: &Tensor<F>) -> Result<Tensor<F>> {
    let (_, n) = expect_matrix("softmax_rows", x)?;
    let mut out = x.to_vec();
    for row in out.chunks_mut(n) {
        softmax_row_in_place(row);
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// Normalized rows (before the affine step) and the per-row reciprocal
/// standard deviations; both are reused by the backward pass.
pub(crate) fn normalize_rows<F: Scalar>(x: &[F], n: usize) -> (Vec<F>, Vec<F>) {
    let eps = F::of(LAYER_NORM_EPS);
    let inv_n = F::one() / F::of(n as f64);
    let mut xhat = Vec::with_capacity(x.len());
    let mut rstd = Vec::with_capacity(x.len() / n);
    for row in x.chunks(n) {
        let mean = row.iter().copied().sum::<F>() * inv_n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() * inv_n;
        let r = F::one() / (var + eps).sqrt();
        xhat.extend(row.iter().map(|&v| (v - mean) * r));
        rstd.push(r);
    }
    (xhat, rstd)
}

/// Per-row layer normalization with affine gain and bias.
pub fn layer_norm<F: Scalar>(x: &Tensor<F>, gain: &Tensor<F>, bias: &Tensor<F>) -> Result<Tensor<F>> {
    let (_, n) = expect_matrix("layer_norm", x)?;
    if n < 2 {
        return Err(Error::shape("layer_norm", "needs at least two columns"));
    }
    if gain.numel() != n || bias.numel() != n {
        return Err(Error::shape(
            "layer_norm",
            format!("gain/bias length {}/{} for width {n}", gain.numel(), bias.numel()),
        ));
    }
    let (mut out, _) = normalize_rows(x.data(), n);
    for row in out.chunks_mut(n) {
        for ((v, &g), &b) in row.iter_mut().zip(gain.data()).zip(bias.data()) {
            *v = *v * g + b;
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// `u·v / max(‖u‖‖v‖, ε)`. Zero vectors yield 0.
pub fn cosine<F: Scalar>(u: &[F], v: &[F]) -> F {
    debug_assert_eq!(u.len(), v.len());
    let (mut dot, mut uu, mut vv) = (F::zero(), F::zero(), F::zero());
    for (&a, &b) in u.iter().zip(v) {
        dot = dot + a * b;
        uu = uu + a * a;
        vv = vv + b * b;
    }
    let denom = (uu.sqrt() * vv.sqrt()).max(F::of(COSINE_EPS));
    if uu == F::zero() && vv == F::zero() {
        log::warn!("cosine similarity of two zero vectors; returning 0");
    }
    dot / denom
}

pub fn cosine_similarity<F: Scalar>(u: &Tensor<F>, v: &Tensor<F>) -> Result<F> {
    if u.numel() != v.numel() {
        return Err(Error::shape(
            "cosine_similarity",
            format!("lengths {} and {}", u.numel(), v.numel()),
        ));
    }
    Ok(cosine(u.data(), v.data()))
}

/// Pairwise row cosines: `out[i, j] = cos(a_i, b_j)`.
pub fn cosine_matrix<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    let (m, d) = expect_matrix("cosine_matrix", a)?;
    let (n, d2) = expect_matrix("cosine_matrix", b)?;
    if d != d2 {
        return Err(Error::shape("cosine_matrix", format!("row widths {d} and {d2}")));
    }
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        for j in 0..n {
            out.push(cosine(a.row(i), b.row(j)));
        }
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
#[inline]
pub fn gelu<F: Scalar>(x: F) -> F {
    let half = F::of(0.5);
    let inner = F::of(GELU_C) * (x + F::of(GELU_A) * x * x * x);
    half * x * (F::one() + inner.tanh())
}

#[inline]
pub(crate) fn gelu_grad<F: Scalar>(x: F) -> F {
    let half = F::of(0.5);
    let c = F::of(GELU_C);
    let a = F::of(GELU_A);
    let inner = c * (x + a * x * x * x);
    let t = inner.tanh();
    let dinner = c * (F::one() + F::of(3.0) * a * x * x);
    half * (F::one() + t) + half * x * (F::one() - t * t) * dinner
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(&[rows, cols], |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identity_times_m_is_m() {
        let m = Tensor::matrix(2, 2, vec![1.5, -2.0, 0.25, 4.0]).unwrap();
        assert_eq!(matmul(&Tensor::identity(2), &m).unwrap(), m);
    }

    #[test]
    fn zeros_times_m_is_zeros() {
        let m = Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let z = Tensor::<f64>::zeros(&[2, 3]);
        assert_eq!(matmul(&z, &m).unwrap(), Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(3, 3, &mut rng);
        let b = random(3, 3, &mut rng);
        let c = matmul(&a, &b).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += a.at(i, k) * b.at(k, j);
                }
                assert!((c.at(i, j) - acc).abs() < 1e-12);
            }
        }
        let nt = matmul_nt(&a, &b).unwrap();
        assert!(nt.max_abs_diff(&matmul(&a, &transpose(&b).unwrap()).unwrap()) < 1e-12);
    }

    #[test]
    fn matmul_rejects_inner_mismatch() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[2, 3]);
        assert!(matches!(matmul(&a, &b), Err(Error::Shape { .. })));
    }

    #[test]
    fn softmax_constant_row_is_uniform() {
        let x = Tensor::matrix(1, 4, vec![7.5; 4]).unwrap();
        for &p in softmax_rows(&x).unwrap().data() {
            assert!((p - 0.25f64).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let x = Tensor::matrix(1, 3, vec![1000.0f64, 0.0, 0.0]).unwrap();
        let p = softmax_rows(&x).unwrap();
        assert!(p.is_finite());
        assert!((p.data()[0] - 1.0).abs() < 1e-12);
        assert!(p.data()[1] < 1e-300);
    }

    #[test]
    fn softmax_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(4, 5, &mut rng);
        let p = softmax_rows(&x).unwrap();
        for r in 0..4 {
            let total: f64 = x.row(r).iter().map(|v| v.exp()).sum();
            let s: f64 = p.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-7);
            for c in 0..5 {
                assert!((p.at(r, c) - x.at(r, c).exp() / total).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let x = Tensor::matrix(1, 4, vec![3.0f64; 4]).unwrap();
        let out = layer_norm(&x, &Tensor::full(&[4], 1.0), &Tensor::zeros(&[4])).unwrap();
        assert!(out.data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn layer_norm_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(3, 6, &mut rng);
        let g = Tensor::from_fn(&[6], |_| rng.random_range(0.5..1.5));
        let b = Tensor::from_fn(&[6], |_| rng.random_range(-0.5..0.5));
        let out = layer_norm(&x, &g, &b).unwrap();
        for r in 0..3 {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / 6.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
            let plain: Vec<f64> = row.iter().map(|v| (v - mean) / (var + 1e-5).sqrt()).collect();
            let pm = plain.iter().sum::<f64>() / 6.0;
            let pv = plain.iter().map(|v| (v - pm).powi(2)).sum::<f64>() / 6.0;
            assert!(pm.abs() < 1e-6);
            assert!((pv - var / (var + 1e-5)).abs() < 1e-12);
            for (c, &p) in plain.iter().enumerate() {
                let expect = p * g.data()[c] + b.data()[c];
                assert!((out.at(r, c) - expect).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn cosine_anchor_cases() {
        let u = [0.3f64, -1.2, 2.0];
        let neg: Vec<f64> = u.iter().map(|v| -v).collect();
        assert!((cosine(&u, &u) - 1.0).abs() < 1e-6);
        assert!((cosine(&u, &neg) + 1.0).abs() < 1e-6);
        assert!(cosine(&[1.0f64, 0.0], &[0.0, 1.0]).abs() < 1e-6);
        assert_eq!(cosine(&[0.0f64; 3], &[0.0; 3]), 0.0);
    }

    #[test]
    fn gelu_grad_matches_central_difference() {
        for &x in &[-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }
}
