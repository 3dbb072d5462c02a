//! Helpers shared by the integration tests: dense f64 reference kernels,
//! small configurations and the synthetic designs used end to end.
#![allow(dead_code)]

use protomatch::autodiff::{Graph, ParamId};
use protomatch::engine::{Model, RunConfig};
use protomatch::feature_io::{sample_episode, synth_dataset, FeatureSet, SignalSource, SynthSpec, VideoFeatures};
use protomatch::relation_encoder::RelationFlags;
use protomatch::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(t: &Tensor<f64>) -> Mat {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

pub fn from_mat(m: &Mat) -> Tensor<f64> {
    Tensor::matrix(m.len(), m[0].len(), m.concat()).unwrap()
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    (0..n)
        .map(|i| (0..m).map(|j| (0..k).map(|l| a[i][l] * b[l][j]).sum()).collect())
        .collect()
}

pub fn transpose(a: &Mat) -> Mat {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

pub fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect())
        .collect()
}

pub fn softmax_rows(a: &Mat) -> Mat {
    a.iter()
        .map(|r| {
            let e: Vec<f64> = r.iter().map(|x| x.exp()).collect();
            let s: f64 = e.iter().sum();
            e.iter().map(|x| x / s).collect()
        })
        .collect()
}

pub fn layer_norm(a: &Mat, gain: &[f64], bias: &[f64]) -> Mat {
    a.iter()
        .map(|r| {
            let n = r.len() as f64;
            let mean = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            r.iter()
                .enumerate()
                .map(|(j, x)| gain[j] * (x - mean) / (var + 1e-5).sqrt() + bias[j])
                .collect()
        })
        .collect()
}

pub fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x.powi(3))).tanh())
}

/// Single-head attention `softmax(q k^T / sqrt(d)) v`, with the weights.
pub fn attention(q: &Mat, k: &Mat, v: &Mat) -> (Mat, Mat) {
    let d = q[0].len() as f64;
    let scores: Mat = matmul(q, &transpose(k))
        .into_iter()
        .map(|r| r.into_iter().map(|x| x / d.sqrt()).collect())
        .collect();
    let a = softmax_rows(&scores);
    (matmul(&a, v), a)
}

pub fn ffn(x: &Mat, w1: &Mat, b1: &[f64], w2: &Mat, b2: &[f64]) -> Mat {
    let h: Mat = matmul(x, w1)
        .into_iter()
        .map(|r| r.iter().zip(b1).map(|(a, b)| gelu(a + b)).collect())
        .collect();
    matmul(&h, w2)
        .into_iter()
        .map(|r| r.iter().zip(b2).map(|(a, b)| a + b).collect())
        .collect()
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn random_video(
    id: &str,
    label: &str,
    frames: usize,
    boxes: usize,
    dim: usize,
    rng: &mut ChaCha8Rng,
) -> VideoFeatures {
    let mut normal = || rng.random_range(-1.0f32..1.0);
    let global = Tensor::from_fn(&[frames, dim], |_| normal());
    let objects = Tensor::from_fn(&[frames, boxes, dim], |_| normal());
    let boxes = Tensor::from_fn(&[frames, boxes, 4], |_| rng.random_range(0.0f32..1.0));
    VideoFeatures {
        id: id.into(),
        label: label.into(),
        global,
        objects: Some(objects),
        boxes: Some(boxes),
    }
}

/// The small end-to-end configuration used for finite-difference checks.
pub fn tiny_config() -> RunConfig {
    RunConfig {
        ways: 2,
        shots: 1,
        queries: 2,
        frames: 4,
        boxes: 2,
        dim: 16,
        heads: 2,
        global_prototypes: 3,
        focused_prototypes: 3,
        seed: 5,
        ..RunConfig::default()
    }
}

pub fn tiny_set(seed: u64) -> FeatureSet {
    synth_dataset(&SynthSpec {
        classes: 2,
        videos_per_class: 4,
        frames: 4,
        boxes: 2,
        dim: 16,
        seed,
        ..SynthSpec::default()
    })
    .unwrap()
}

pub struct GradCheck {
    pub max_rel_err: f64,
    pub coordinates: usize,
}

/// Compares backprop against central differences (step `h`) on `n`
/// random parameter coordinates of the full episode loss.
pub fn gradient_check(seed: u64, n: usize, h: f64) -> GradCheck {
    let config = RunConfig { seed, ..tiny_config() };
    let set = tiny_set(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let episode = sample_episode(&set, config.ways, config.shots, config.queries, &mut rng).unwrap();
    let mut model = Model::<f64>::init(&config).unwrap();
    let eg = model.episode_graph(&episode, Graph::new()).unwrap();
    let grads = eg.graph.backward(eg.loss).unwrap();

    let ids: Vec<ParamId> = model.params.ids().collect();
    let sizes: Vec<usize> = ids.iter().map(|&id| model.params.get(id).numel()).collect();
    let total: usize = sizes.iter().sum();
    let loss_at = |model: &Model<f64>| {
        let eg = model.episode_graph(&episode, Graph::new()).unwrap();
        eg.graph.value(eg.loss).item()
    };

    let mut worst: f64 = 0.0;
    for flat in rand::seq::index::sample(&mut rng, total, n) {
        let (mut p, mut off) = (0, flat);
        while off >= sizes[p] {
            off -= sizes[p];
            p += 1;
        }
        let id = ids[p];
        let original = model.params.get(id).clone();
        let shifted = |delta: f64| {
            let mut data = original.to_vec();
            data[off] += delta;
            Tensor::new(original.shape().to_vec(), data).unwrap()
        };
        model.params.set(id, shifted(h)).unwrap();
        let up = loss_at(&model);
        model.params.set(id, shifted(-h)).unwrap();
        let down = loss_at(&model);
        model.params.set(id, original).unwrap();

        let numeric = (up - down) / (2.0 * h);
        let analytic = grads.param(id).map_or(0.0, |g| g.data()[off]);
        let scale = analytic.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic - numeric).abs() / scale);
    }
    GradCheck {
        max_rel_err: worst,
        coordinates: n,
    }
}

/// Class identity lives in the temporal profile of the frame features;
/// object slots carry a per-video clutter offset.
pub fn end_to_end_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        classes: 35,
        videos_per_class: 20,
        separation: 16.0,
        temporal_jitter: 0.1,
        speed_jitter: 0.1,
        nuisance: 0.0,
        object_clutter: 16.0,
        centered_curves: true,
        signal: SignalSource::Global,
        seed,
        ..SynthSpec::default()
    }
}

/// Class identity lives only in the object features.
pub fn object_signal_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        classes: 35,
        videos_per_class: 20,
        separation: 1.0,
        nuisance: 0.0,
        signal: SignalSource::Objects,
        seed,
        ..SynthSpec::default()
    }
}

/// `[train, val, test]` with 20 / 5 / 10 classes.
pub fn splits(spec: &SynthSpec) -> Vec<FeatureSet> {
    synth_dataset(spec).unwrap().split_classes(&[20, 5, 10]).unwrap()
}

pub fn relations(gg: bool, go: bool, oo: bool) -> RelationFlags {
    RelationFlags { gg, go, oo }
}
