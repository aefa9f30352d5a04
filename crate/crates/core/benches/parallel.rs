use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use passivity_cert::attack::{evaluate_dataset_with, AttackConfig};
use passivity_cert::data::synthetic_regression;
use passivity_cert::model::OutputActivation;
use passivity_cert::par::ExecMode;
use passivity_cert::passivity::{
    build_cascade_matrix, certify, diagonal_stability_oracle_with, rho_min, BoundPolicy, OracleConfig,
};
use passivity_cert::training::initialize;

const MODES: [(&str, ExecMode); 2] = [("sequential", ExecMode::Sequential), ("parallel", ExecMode::Parallel)];

fn attack(c: &mut Criterion) {
    let ds = synthetic_regression(64, 10, 1).unwrap();
    let points = ds.inputs();
    let model = initialize(&[10, 10, 10, 10, 1], 0.5, 1.0, OutputActivation::LeakyRelu, 3).unwrap();
    let cert = certify(&model, 1.0, &BoundPolicy::default()).unwrap();
    let cfg = AttackConfig::default();
    let mut group = c.benchmark_group("attack_64_points");
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| evaluate_dataset_with(&model, &cert, black_box(&points), &cfg, mode).unwrap())
        });
    }
    group.finish();
}

fn oracle(c: &mut Criterion) {
    let nus = [1.0; 5];
    let rho = rho_min(&nus).unwrap() * 1.01;
    let a = build_cascade_matrix(&nus, rho).unwrap();
    let cfg = OracleConfig {
        starts: 16,
        max_iterations: 500,
        ..Default::default()
    };
    let mut group = c.benchmark_group("oracle_6x6");
    group.sample_size(10);
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| diagonal_stability_oracle_with(black_box(&a), &cfg, mode).unwrap())
        });
    }
    group.finish();
}

fn gradients(c: &mut Criterion) {
    let ds = synthetic_regression(1024, 10, 2).unwrap();
    let rows = ds.rows();
    let model = initialize(&[10, 10, 10, 10, 1], 0.5, 1.0, OutputActivation::LeakyRelu, 4).unwrap();
    let mut group = c.benchmark_group("gradients_1024_rows");
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| model.gradients(black_box(&rows), mode).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, attack, oracle, gradients);
criterion_main!(benches);
