//! Sequential versus parallel execution of independent runs and
//! Monte-Carlo noise draws. Build with `--no-default-features` to see the
//! parallel path fall back to a loop.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gtsim::algorithms::{run, Algorithm, RunSpec, StepSchedule};
use gtsim::costs::{make_synthetic_quadratics, CostEnsemble, HeterogeneityProfile, SyntheticSpec};
use gtsim::noise::{sample_noise, OracleSpec};
use gtsim::topology::{generate_graph, metropolis_hastings, GraphKind};
use gtsim::Execution;
use nalgebra::DVector;

fn modes() -> Vec<(String, Execution)> {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get()).max(2);
    vec![
        ("sequential".into(), Execution::Sequential),
        (format!("parallel_{cores}"), Execution::Parallel { workers: cores }),
    ]
}

fn bench_runs(c: &mut Criterion) {
    let e = CostEnsemble::quadratic(
        make_synthetic_quadratics(&SyntheticSpec::new(10, 20, HeterogeneityProfile::GaussianOffsets, 1)).unwrap(),
    )
    .unwrap();
    let w = metropolis_hastings(&generate_graph(GraphKind::Ring, 10, 0).unwrap()).unwrap();
    let o = OracleSpec::gaussian(1.0);
    let spec = RunSpec::new(
        &w,
        &e,
        &o,
        StepSchedule::InverseTime {
            a: 1.0,
            mu: 1.0,
            t0: 1.0,
        },
        200,
    );
    let mut group = c.benchmark_group("runs_16x200");
    group.sample_size(10);
    for (name, exec) in modes() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, exec| {
            b.iter(|| {
                exec.map(16, |r| {
                    black_box(run(Algorithm::GtDsgd, &spec, 7, r as u64).unwrap().mse_to_opt)
                })
            })
        });
    }
    group.finish();
}

fn bench_noise(c: &mut Criterion) {
    let e = CostEnsemble::quadratic(
        make_synthetic_quadratics(&SyntheticSpec::new(4, 50, HeterogeneityProfile::GaussianOffsets, 2)).unwrap(),
    )
    .unwrap();
    let o = OracleSpec::gaussian(1.0);
    let x = DVector::zeros(50);
    let mut group = c.benchmark_group("noise_20000");
    group.sample_size(10);
    for (name, exec) in modes() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, exec| {
            b.iter(|| black_box(sample_noise(&o, &e, 0, &x, 0.0, 3, 20_000, *exec).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_runs, bench_noise);
criterion_main!(benches);
