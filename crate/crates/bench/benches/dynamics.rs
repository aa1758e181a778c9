use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rewardlab_bench::{features, params, rewards};
use rewardlab_core::{
    build_fig2_scenario, exact_gradient, run_flow, IntegratorConfig, RewardChoice,
};

fn gradient(c: &mut Criterion) {
    let mut group = c.benchmark_group("exact_gradient");
    for (n, d) in [(5, 5), (64, 16), (512, 64)] {
        let (f, theta, r) = (features(n, d), params(d), rewards(n));
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("{n}x{d}")),
            &(),
            |b, _| {
                b.iter(|| exact_gradient(black_box(&f), black_box(&theta), black_box(&r)).unwrap())
            },
        );
    }
    group.finish();
}

fn flow(c: &mut Criterion) {
    let s = build_fig2_scenario(0.1, false).unwrap();
    let mut group = c.benchmark_group("run_flow_1000_steps");
    for cfg in [
        IntegratorConfig::euler(0.1, 1000),
        IntegratorConfig::rk4(0.1, 1000),
    ] {
        let cfg = cfg.with_record_every(1000);
        group.bench_function(cfg.descriptor(), |b| {
            b.iter(|| run_flow(black_box(&s), RewardChoice::GroundTruth, &cfg).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, gradient, flow);
criterion_main!(benches);
