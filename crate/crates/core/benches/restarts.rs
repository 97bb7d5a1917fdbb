use std::hint::black_box;

use btlnmf::baselines::{aggregate, mixture_btl_em_with, EmConfig};
use btlnmf::io::generate_synthetic;
use btlnmf::{multi_restart_fit_with, Execution, SolverConfig};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn modes() -> Vec<(&'static str, Execution)> {
    let mut v = vec![("sequential", Execution::Sequential)];
    if Execution::Parallel.is_parallel() {
        v.push(("parallel", Execution::Parallel));
    }
    v
}

fn bench_multi_restart(c: &mut Criterion) {
    let (data, _) = generate_synthetic(8, 12, 2, 5, 3).unwrap();
    let config = SolverConfig::default().with_epsilon(1e-6).with_tolerance(1e-5).with_max_iterations(300);
    let mut group = c.benchmark_group("btl_nmf_restarts");
    group.sample_size(10);
    for (name, exec) in modes() {
        group.bench_with_input(BenchmarkId::new(name, 8), &exec, |b, &exec| {
            b.iter(|| multi_restart_fit_with(black_box(&data), &config, 8, exec).unwrap())
        });
    }
    group.finish();
}

fn bench_mixture_em(c: &mut Criterion) {
    let (data, _) = generate_synthetic(6, 10, 2, 3, 11).unwrap();
    let agg = aggregate(&data);
    let config = EmConfig {
        num_components: 2,
        num_restarts: 8,
        seed: 5,
        tolerance: 1e-6,
        max_iterations: 200,
        ..EmConfig::default()
    };
    let mut group = c.benchmark_group("mixture_em_restarts");
    group.sample_size(10);
    for (name, exec) in modes() {
        group.bench_with_input(BenchmarkId::new(name, 8), &exec, |b, &exec| {
            b.iter(|| mixture_btl_em_with(black_box(&agg), &config, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_multi_restart, bench_mixture_em);
criterion_main!(benches);
