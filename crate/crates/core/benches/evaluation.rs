//! Sequential vs data-parallel episode evaluation, plus the per-pair
//! similarity kernel both paths share.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use protomatch::engine::{evaluate, EvalOptions, Model, RunConfig};
use protomatch::feature_io::{synth_dataset, SynthSpec};
use protomatch::matching::video_similarity;
use protomatch::parallel::Parallelism;

fn setup() -> (Model<f32>, protomatch::feature_io::FeatureSet) {
    let set = synth_dataset(&SynthSpec {
        classes: 10,
        videos_per_class: 10,
        seed: 1,
        ..SynthSpec::default()
    })
    .unwrap();
    let model = Model::init(&RunConfig::default()).unwrap();
    (model, set)
}

fn episodes(c: &mut Criterion) {
    let (model, set) = setup();
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut modes = vec![("sequential", Parallelism::Sequential)];
    if cfg!(feature = "parallel") {
        modes.push(("threads", Parallelism::Threads { workers: Some(workers) }));
    }
    let mut group = c.benchmark_group("evaluate_20_episodes");
    group.sample_size(10);
    for (name, parallelism) in modes {
        let opts = EvalOptions {
            episodes: 20,
            seed: 0,
            ways: 5,
            shots: 1,
            queries: 5,
            parallelism,
            allow_overlap: false,
            keep_episodes: false,
        };
        group.bench_with_input(BenchmarkId::from_parameter(name), &opts, |b, opts| {
            b.iter(|| evaluate(&model, &[], &set, opts).unwrap())
        });
    }
    group.finish();
}

fn similarity(c: &mut Criterion) {
    let (model, set) = setup();
    let mut videos = set.videos();
    let a = model.prototypes(videos.next().unwrap()).unwrap();
    let b = model.prototypes(videos.next().unwrap()).unwrap();
    let fusion = RunConfig::default().fusion();
    c.bench_function("video_similarity", |bench| {
        bench.iter(|| video_similarity(&a, &b, fusion).unwrap())
    });
}

criterion_group!(benches, episodes, similarity);
criterion_main!(benches);
