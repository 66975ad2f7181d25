use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion};
use csifb::channel::{generate_samples, ChannelMatrix};
use csifb::config::ExperimentConfig;
use csifb::cqi::CqiReport;
use csifb::info::{knn_entropy, KnnConfig, Points};
use csifb::model::Model;
use csifb::rng::{purpose, substream};
use csifb::train::{input_scale_for, reports_for, train_step, TrainState};
use csifb::Execution;
use rand::Rng;
use std::hint::black_box;

const POLICIES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn batch_gradients(c: &mut Criterion) {
    let cfg = ExperimentConfig::toy();
    let samples = generate_samples(&cfg.scenario, 32, Execution::Sequential).unwrap();
    let refs: Vec<&ChannelMatrix> = samples.iter().collect();
    let reports = reports_for(&refs, &cfg.cqi, cfg.model.cqi_mode).unwrap();
    let batch: Vec<(&ChannelMatrix, &CqiReport)> = refs.iter().copied().zip(&reports).collect();
    let mut model = Model::new(cfg.model.clone(), &mut substream(0, &[purpose::INIT])).unwrap();
    model.set_input_scale(input_scale_for(&refs).unwrap()).unwrap();
    let state = TrainState::new(model, &cfg.train);

    let mut group = c.benchmark_group("train_step_batch32");
    for (name, exec) in POLICIES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter_batched(
                || state.clone(),
                |mut s| black_box(train_step(&mut s, &batch, &cfg.train, exec).unwrap()),
                BatchSize::SmallInput,
            )
        });
    }
    group.finish();
}

fn knn(c: &mut Criterion) {
    let mut rng = substream(1, &[]);
    let data: Vec<f64> = (0..2000 * 4).map(|_| rng.random::<f64>()).collect();
    let points = Points::new(4, data).unwrap();
    let mut group = c.benchmark_group("knn_entropy_2000x4");
    for (name, exec) in POLICIES {
        let cfg = KnnConfig {
            exec,
            ..KnnConfig::default()
        };
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(knn_entropy(&points, &cfg).unwrap()))
        });
    }
    group.finish();
}

fn generation(c: &mut Criterion) {
    let cfg = ExperimentConfig::default();
    let mut group = c.benchmark_group("generate_256");
    group.sample_size(10);
    for (name, exec) in POLICIES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(generate_samples(&cfg.scenario, 256, exec).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, batch_gradients, knn, generation);
criterion_main!(benches);
