use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use latact::codec::{self, TrainHyper, VaeConfig};
use latact::continuity::evaluate_continuity;
use latact::sim::{run, SimConfig};
use latact::synth::generate_trajectory;
use latact::{NoiseModel, Strategy, TaskKind, TaskSpec};
use latact_bench::{briefly_trained_model, chunks, specs};

fn training(c: &mut Criterion) {
    let data = chunks(128);
    let hyper = TrainHyper { epochs: 1, ..TrainHyper::default() };
    let mut g = c.benchmark_group("train");
    g.sample_size(10);
    g.bench_function("one_epoch_128_chunks", |b| b.iter(|| codec::train(&VaeConfig::default(), black_box(&data), &hyper).unwrap()));
    g.finish();
}

fn roundtrip(c: &mut Criterion) {
    let model = briefly_trained_model();
    let data = chunks(64);
    c.bench_function("roundtrip_64_chunks", |b| b.iter(|| codec::roundtrip_many(&model, black_box(&data)).unwrap()));
}

fn continuity(c: &mut Criterion) {
    let model = briefly_trained_model();
    let trajs: Vec<_> = specs(2).iter().map(|s| generate_trajectory(s).unwrap()).collect();
    let noise = NoiseModel::gaussian(0.5, 0);
    let mut g = c.benchmark_group("continuity");
    g.sample_size(10);
    for strategy in [Strategy::Naive, Strategy::Rtr] {
        g.bench_function(strategy.label(), |b| b.iter(|| evaluate_continuity(&trajs, 48, 24, &noise, strategy, Some(&model), Some(40)).unwrap()));
    }
    g.finish();
}

fn simulate(c: &mut Criterion) {
    let model = briefly_trained_model();
    let base = SimConfig { emulator: NoiseModel::gaussian(0.5, 1), task: TaskSpec::new(TaskKind::LineWrite, 10.0, 3), ..SimConfig::default() };
    let mut g = c.benchmark_group("simulate_10s");
    g.sample_size(10);
    g.bench_function("naive", |b| b.iter(|| run(black_box(&base), None).unwrap()));
    let rtr = SimConfig { strategy: Strategy::Rtr, ..base.clone() };
    g.bench_function("rtr", |b| b.iter(|| run(black_box(&rtr), Some(&model)).unwrap()));
    g.finish();
}

criterion_group!(benches, training, roundtrip, continuity, simulate);
criterion_main!(benches);
