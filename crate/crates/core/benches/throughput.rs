//! Parallel versus single-threaded throughput. The `single` variants run
//! inside a one-thread rayon pool; building with `--no-default-features`
//! gives the sequential fallback for the whole crate.

use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rayon::ThreadPool;

use memosort::mekf::{FrameNormalizer, MemoryKalmanFilter, NoiseModel};
use memosort::metrics::prediction_rmse;
use memosort::nnet::{GateArch, GateWeights};
use memosort::pipeline::{run_sequence, Tracker, TrackerConfig};
use memosort::synthgen::{figure_spin_scenarios, generate, ScenarioConfig};
use memosort::trainer::{build_dataset, loss_and_grad, TrainConfig};

fn pools() -> Vec<(&'static str, ThreadPool)> {
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let all = rayon::ThreadPoolBuilder::new().build().unwrap();
    vec![("single", single), ("parallel", all)]
}

fn filter() -> MemoryKalmanFilter {
    MemoryKalmanFilter::new(
        Arc::new(GateWeights::init_random(GateArch::default(), 1)),
        NoiseModel::default(),
        FrameNormalizer::default(),
    )
}

fn tracking(c: &mut Criterion) {
    let cfg = ScenarioConfig {
        frames: 300,
        num_targets: 20,
        ..ScenarioConfig::default()
    };
    let frames = generate(&cfg, 4).unwrap().detection_frames();
    let f = filter();
    let mut g = c.benchmark_group("track_20_targets_300_frames");
    g.sample_size(10);
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                pool.install(|| {
                    let mut t = Tracker::new(TrackerConfig::default(), f.clone()).unwrap();
                    black_box(run_sequence(&mut t, &frames).unwrap().len())
                })
            })
        });
    }
    g.finish();
}

fn batch_gradient(c: &mut Criterion) {
    let cfg = TrainConfig::default();
    let windows = build_dataset(&figure_spin_scenarios(1, 2), &cfg);
    let batch: Vec<_> = windows.iter().take(16).collect();
    let f = filter();
    let mut g = c.benchmark_group("gradient_16_windows");
    g.sample_size(10);
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                pool.install(|| {
                    let grads = memosort::par::map(&batch, |w| loss_and_grad(&f, w, &cfg).unwrap().0);
                    black_box(grads.iter().sum::<f64>())
                })
            })
        });
    }
    g.finish();
}

fn rmse(c: &mut Criterion) {
    let scenario = &figure_spin_scenarios(1, 3)[0];
    let f = filter();
    let mut g = c.benchmark_group("prediction_rmse_5_targets");
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pool.install(|| black_box(prediction_rmse(&f, scenario, 10))))
        });
    }
    g.finish();
}

criterion_group!(benches, tracking, batch_gradient, rmse);
criterion_main!(benches);
