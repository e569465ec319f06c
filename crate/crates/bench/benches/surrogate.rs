use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use morphsim::train::{step_loss, StepSample};
use morphsim::{contiguity_pairs, simulate_oracle, GridGraph, OracleConfig};
use morphsim_bench::{model, trajectories};

fn rollouts(c: &mut Criterion) {
    let trajs = trajectories(32);
    let model = model(&trajs);
    let g0s: Vec<GridGraph> = trajs.iter().map(|t| t.initial().clone()).collect();
    c.bench_function("rollout/single", |b| b.iter(|| model.rollout(&g0s[0]).unwrap()));
    let mut group = c.benchmark_group("rollout");
    group.sample_size(20);
    group.bench_function("batch of 32", |b| b.iter(|| model.rollout_batch(&g0s).unwrap()));
    group.finish();
}

fn training_step(c: &mut Criterion) {
    let trajs = trajectories(16);
    let model = model(&trajs);
    let pairs: Vec<_> = trajs.iter().map(|t| contiguity_pairs(t.initial()).unwrap()).collect();
    let samples: Vec<StepSample> = trajs
        .iter()
        .zip(&pairs)
        .map(|(t, p)| StepSample {
            input: &t.frames[4],
            next: &t.frames[5],
            pairs: p,
        })
        .collect();
    let mut group = c.benchmark_group("train");
    group.sample_size(20);
    group.bench_function("step loss and gradient, 16 graphs", |b| {
        b.iter(|| step_loss(&model, 0, &samples, 1.0, true).unwrap())
    });
    group.finish();
}

fn oracle(c: &mut Criterion) {
    let trajs = trajectories(1);
    let design = trajs[0].design.clone();
    let config = OracleConfig::default();
    let mut group = c.benchmark_group("oracle");
    group.sample_size(10);
    group.bench_function("trajectory", |b| {
        b.iter_batched(|| design.clone(), |d| simulate_oracle(&d, &config).unwrap(), BatchSize::SmallInput)
    });
    group.finish();
}

criterion_group!(benches, rollouts, training_step, oracle);
criterion_main!(benches);
