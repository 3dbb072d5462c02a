//! Synthetic feature sets with controllable class signal, temporal jitter
//! and nuisance structure.
//!
//! Each class owns latent signature curves: a few knot vectors in a fixed
//! "signal" subspace, linearly interpolated over normalized time. A video
//! samples its class curve at `T` warped time points (random shift and
//! speed), then adds noise scaled by `1 / separation`: a per-video nuisance
//! offset confined to a second subspace orthogonal to the signal, plus i.i.d.
//! per-frame noise. The nuisance offset is `nuisance` times larger than the
//! frame noise and shared by all frames of a video, so raw cosine
//! similarity between videos is dominated by it until a model learns to
//! project it out. Object streams may additionally carry a per-video
//! clutter offset common to all slots, which an untrained model cannot
//! separate from the frame-level streams by averaging.
//!
//! Generation uses `ChaCha8Rng` seeded from `seed`; identical specs produce
//! bit-identical sets on every platform.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{FeatureSet, VideoFeatures};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const KNOTS: usize = 4;
const SPATIAL_BIAS: f64 = 0.1;

/// Which feature stream carries class identity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalSource {
    Global,
    Objects,
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub classes: usize,
    pub videos_per_class: usize,
    pub frames: usize,
    pub boxes: usize,
    pub dim: usize,
    /// Noise scale is `1 / separation`; `f64::INFINITY` gives noise-free videos.
    pub separation: f64,
    /// Maximum shift of the warped time axis, as a fraction of the video.
    pub temporal_jitter: f64,
    /// Maximum relative deviation of playback speed from 1.
    pub speed_jitter: f64,
    /// Per-video nuisance magnitude relative to the frame noise.
    pub nuisance: f64,
    /// Per-video offset shared by every object slot, in the nuisance
    /// subspace, relative to the signal scale.
    pub object_clutter: f64,
    /// Remove each class curve's time average, so frame-pooled features
    /// carry no class identity; only the temporal profile does.
    pub centered_curves: bool,
    pub signal: SignalSource,
    /// First class number; labels are `class_{offset + c:03}`.
    pub class_offset: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            classes: 5,
            videos_per_class: 20,
            frames: 8,
            boxes: 3,
            dim: 64,
            separation: 1.0,
            temporal_jitter: 0.15,
            speed_jitter: 0.2,
            nuisance: 3.0,
            object_clutter: 0.0,
            centered_curves: false,
            signal: SignalSource::Both,
            class_offset: 0,
            seed: 0,
        }
    }
}

/// Orthonormal rows from Gram-Schmidt on a Gaussian matrix.
fn random_basis(dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while basis.len() < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    basis
}

/// Random combination of `basis` rows with per-coefficient std `std`.
fn combine(basis: &[Vec<f64>], std: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let dim = basis[0].len();
    let mut out = vec![0.0; dim];
    for b in basis {
        let c: f64 = rng.sample::<f64, _>(StandardNormal) * std;
        out.iter_mut().zip(b).for_each(|(o, x)| *o += c * x);
    }
    out
}

/// Piecewise-linear curve through knots spread evenly on `[0, 1]`.
fn curve_at(knots: &[Vec<f64>], tau: f64, out: &mut [f64]) {
    let pos = tau.clamp(0.0, 1.0) * (knots.len() - 1) as f64;
    let i = (pos.floor() as usize).min(knots.len() - 2);
    let w = pos - i as f64;
    for ((o, a), b) in out.iter_mut().zip(&knots[i]).zip(&knots[i + 1]) {
        *o = (1.0 - w) * a + w * b;
    }
}

struct Signature {
    global: Vec<Vec<f64>>,
    objects: Vec<Vec<Vec<f64>>>,
    bias: (f64, f64),
}

pub fn synth_dataset(spec: &SynthSpec) -> Result<FeatureSet> {
    if spec.classes == 0 || spec.videos_per_class == 0 || spec.frames == 0 || spec.dim < 4 {
        return Err(Error::Config(
            "classes, videos per class and frames must be positive and dim at least 4".into(),
        ));
    }
    if spec.separation <= 0.0 || spec.separation.is_nan() {
        return Err(Error::Config("class separation must be positive".into()));
    }
    let d = spec.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let basis = random_basis(d, &mut rng);
    let signal_dims = d / 2;
    let nuisance_dims = (d / 4).max(1);
    let signal_basis = &basis[..signal_dims];
    let nuisance_basis = &basis[signal_dims..signal_dims + nuisance_dims];
    // knots have per-component scale ≈ 1
    let knot_std = (d as f64 / signal_dims as f64).sqrt();
    let noise = if spec.separation.is_infinite() {
        0.0
    } else {
        1.0 / spec.separation
    };
    let nuisance_std = spec.nuisance * noise * (d as f64 / nuisance_dims as f64).sqrt();
    let clutter_std = spec.object_clutter * (d as f64 / nuisance_dims as f64).sqrt();

    let knots = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
        let mut k: Vec<Vec<f64>> = (0..KNOTS).map(|_| combine(signal_basis, knot_std, rng)).collect();
        if spec.centered_curves {
            // time average of the piecewise-linear curve (trapezoid weights)
            let w: Vec<f64> = (0..KNOTS)
                .map(|i| if i == 0 || i == KNOTS - 1 { 0.5 } else { 1.0 } / (KNOTS - 1) as f64)
                .collect();
            let mean: Vec<f64> = (0..d).map(|j| k.iter().zip(&w).map(|(r, w)| r[j] * w).sum()).collect();
            k.iter_mut()
                .for_each(|r| r.iter_mut().zip(&mean).for_each(|(x, m)| *x -= m));
        }
        k
    };
    let shared = Signature {
        global: knots(&mut rng),
        objects: (0..spec.boxes).map(|_| knots(&mut rng)).collect(),
        bias: (0.0, 0.0),
    };
    let signatures: Vec<Signature> = (0..spec.classes)
        .map(|_| Signature {
            global: knots(&mut rng),
            objects: (0..spec.boxes).map(|_| knots(&mut rng)).collect(),
            bias: (
                rng.random_range(-SPATIAL_BIAS..=SPATIAL_BIAS),
                rng.random_range(-SPATIAL_BIAS..=SPATIAL_BIAS),
            ),
        })
        .collect();

    let (t_len, b_len) = (spec.frames, spec.boxes);
    let mut set = FeatureSet::new(d, t_len, b_len);
    for (c, sig) in signatures.iter().enumerate() {
        let label = format!("class_{:03}", spec.class_offset + c);
        let global_curve = match spec.signal {
            SignalSource::Objects => &shared.global,
            _ => &sig.global,
        };
        let object_curves = match spec.signal {
            SignalSource::Global => &shared.objects,
            _ => &sig.objects,
        };
        for v in 0..spec.videos_per_class {
            let shift = if spec.temporal_jitter > 0.0 {
                rng.random_range(-spec.temporal_jitter..=spec.temporal_jitter)
            } else {
                0.0
            };
            let speed = 1.0
                + if spec.speed_jitter > 0.0 {
                    rng.random_range(-spec.speed_jitter..=spec.speed_jitter)
                } else {
                    0.0
                };
            let taus: Vec<f64> = (0..t_len)
                .map(|t| {
                    let u = if t_len > 1 { t as f64 / (t_len - 1) as f64 } else { 0.5 };
                    0.5 + shift + speed * (u - 0.5)
                })
                .collect();

            let sample_stream = |curve: &[Vec<f64>], rng: &mut ChaCha8Rng, out: &mut Vec<f32>, offset: &[f64]| {
                let mut frame = vec![0.0; d];
                for &tau in &taus {
                    curve_at(curve, tau, &mut frame);
                    for (x, o) in frame.iter().zip(offset) {
                        let e: f64 = rng.sample(StandardNormal);
                        out.push((x + o + noise * e) as f32);
                    }
                }
            };

            let mut global = Vec::with_capacity(t_len * d);
            let goff = combine(nuisance_basis, nuisance_std, &mut rng);
            sample_stream(global_curve, &mut rng, &mut global, &goff);

            let (objects, boxes) = if b_len == 0 {
                (None, None)
            } else {
                // per-slot streams, then interleave into [T, B, d]
                let mut slots = Vec::with_capacity(b_len);
                let clutter = combine(nuisance_basis, clutter_std, &mut rng);
                for curve in object_curves {
                    let mut s = Vec::with_capacity(t_len * d);
                    sample_stream(curve, &mut rng, &mut s, &clutter);
                    slots.push(s);
                }
                let mut objects = Vec::with_capacity(t_len * b_len * d);
                for t in 0..t_len {
                    for slot in &slots {
                        objects.extend_from_slice(&slot[t * d..(t + 1) * d]);
                    }
                }
                let mut boxes = Vec::with_capacity(t_len * b_len * 4);
                for _ in 0..t_len * b_len {
                    let cx = (rng.random_range(0.1..=0.9) + sig.bias.0).clamp(0.0, 1.0);
                    let cy = (rng.random_range(0.1..=0.9) + sig.bias.1).clamp(0.0, 1.0);
                    let w = rng.random_range(0.05..=0.3);
                    let h = rng.random_range(0.05..=0.3);
                    boxes.extend([cx as f32, cy as f32, w as f32, h as f32]);
                }
                (
                    Some(Tensor::new(vec![t_len, b_len, d], objects)?),
                    Some(Tensor::new(vec![t_len, b_len, 4], boxes)?),
                )
            };

            set.push(VideoFeatures {
                id: format!("{label}_v{v:03}"),
                label: label.clone(),
                global: Tensor::new(vec![t_len, d], global)?,
                objects,
                boxes,
            })?;
        }
    }
    Ok(set)
}
