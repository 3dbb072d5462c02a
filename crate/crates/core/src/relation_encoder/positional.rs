//! Sinusoidal positional encodings.
//!
//! Channel `j` of an `n`-channel encoding of position `p` is
//! `sin(p / 10000^(2⌊j/2⌋/n))` for even `j` and the matching cosine for odd
//! `j`. The 3D variant spends half the channels on the frame index and a
//! quarter each on the box center coordinates, which are first scaled to
//! `[0, 2π]`. Box extents are not encoded.

use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

const TEMPERATURE: f64 = 10_000.0;

fn sinusoid<F: Scalar>(pos: f64, out: &mut [F]) {
    let n = out.len() as f64;
    for (j, o) in out.iter_mut().enumerate() {
        let i = (j / 2) as f64;
        let angle = pos / TEMPERATURE.powf(2.0 * i / n);
        *o = F::of(if j % 2 == 0 { angle.sin() } else { angle.cos() });
    }
}

/// `[T × d]` encoding of frame indices `0..T`.
pub fn positional_encoding_1d<F: Scalar>(frames: usize, dim: usize) -> Result<Tensor<F>> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "1D positional encoding needs an even dimension, got {dim}"
        )));
    }
    if frames == 0 {
        return Err(Error::Config("1D positional encoding needs at least one frame".into()));
    }
    let mut data = vec![F::zero(); frames * dim];
    for (t, row) in data.chunks_mut(dim).enumerate() {
        sinusoid(t as f64, row);
    }
    Tensor::matrix(frames, dim, data)
}

/// `[(T·B) × d]` encoding of `(t, cx, cy)` for boxes `[T × B × 4]`, rows in
/// `t·B + b` order.
pub fn positional_encoding_3d<F: Scalar>(boxes: &Tensor<f32>, dim: usize) -> Result<Tensor<F>> {
    if dim == 0 || !dim.is_multiple_of(4) {
        return Err(Error::Config(format!(
            "3D positional encoding needs a dimension divisible by 4, got {dim}"
        )));
    }
    let shape = boxes.shape();
    if shape.len() != 3 || shape[2] != 4 {
        return Err(Error::shape(
            "positional_encoding_3d",
            format!("boxes must be [T, B, 4], got {shape:?}"),
        ));
    }
    let (frames, per_frame) = (shape[0], shape[1]);
    let (half, quarter) = (dim / 2, dim / 4);
    let mut data = vec![F::zero(); frames * per_frame * dim];
    for (r, row) in data.chunks_mut(dim).enumerate() {
        let t = r / per_frame;
        let b = &boxes.data()[r * 4..r * 4 + 4];
        let (temporal, spatial) = row.split_at_mut(half);
        let (xs, ys) = spatial.split_at_mut(quarter);
        sinusoid(t as f64, temporal);
        sinusoid(b[0] as f64 * TAU, xs);
        sinusoid(b[1] as f64 * TAU, ys);
    }
    Tensor::matrix(frames * per_frame, dim, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l2(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    }

    #[test]
    fn first_row_alternates_zero_one() {
        let pe = positional_encoding_1d::<f64>(8, 64).unwrap();
        for (j, &v) in pe.row(0).iter().enumerate() {
            assert_eq!(v, if j % 2 == 0 { 0.0 } else { 1.0 });
        }
    }

    #[test]
    fn encoding_is_deterministic() {
        let a = positional_encoding_1d::<f32>(8, 64).unwrap();
        let b = positional_encoding_1d::<f32>(8, 64).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn odd_dimensions_are_rejected() {
        assert!(matches!(positional_encoding_1d::<f64>(8, 63), Err(Error::Config(_))));
        let boxes = Tensor::full(&[2, 1, 4], 0.5f32);
        assert!(matches!(
            positional_encoding_3d::<f64>(&boxes, 18),
            Err(Error::Config(_))
        ));
    }

    /// Oracle run for T=8, d=64: the smallest pairwise row gap is about 1.47
    /// (adjacent frames).
    #[test]
    fn frame_rows_are_pairwise_distinct() {
        let pe = positional_encoding_1d::<f64>(8, 64).unwrap();
        let mut min_gap = f64::INFINITY;
        for i in 0..8 {
            for j in i + 1..8 {
                min_gap = min_gap.min(l2(pe.row(i), pe.row(j)));
            }
        }
        assert!(min_gap > 1.4, "min gap {min_gap}");
    }

    #[test]
    fn identical_objects_share_rows_and_time_channels_match_1d() {
        let mut data = Vec::new();
        for _t in 0..3 {
            data.extend([0.3f32, 0.7, 0.1, 0.1, 0.3, 0.7, 0.2, 0.2]);
        }
        let boxes = Tensor::new(vec![3, 2, 4], data).unwrap();
        let pe = positional_encoding_3d::<f64>(&boxes, 16).unwrap();
        let pe1 = positional_encoding_1d::<f64>(3, 8).unwrap();
        for t in 0..3 {
            assert_eq!(pe.row(2 * t), pe.row(2 * t + 1));
            assert_eq!(&pe.row(2 * t)[..8], pe1.row(t));
        }
    }

    #[test]
    fn distinct_positions_never_collide() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let (t_len, b_len) = (8, 6);
        let boxes = Tensor::from_fn(&[t_len, b_len, 4], |_| rng.random_range(0.0f32..1.0));
        let pe = positional_encoding_3d::<f64>(&boxes, 64).unwrap();
        let coords = |r: usize| {
            let b = &boxes.data()[r * 4..r * 4 + 2];
            [(r / b_len) as f64, b[0] as f64, b[1] as f64]
        };
        let mut min_gap = f64::INFINITY;
        for i in 0..t_len * b_len {
            for j in i + 1..t_len * b_len {
                let (ci, cj) = (coords(i), coords(j));
                let far = ci.iter().zip(&cj).any(|(a, b)| (a - b).abs() >= 0.05);
                if far {
                    min_gap = min_gap.min(l2(pe.row(i), pe.row(j)));
                }
            }
        }
        assert!(min_gap > 1e-2, "closest distinct pair {min_gap}");
    }
}
