use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use oddstop_core::adaptive::HealthScores;
use oddstop_core::odds::{best_order_with, odds_of, stop_index, win_probability_oracle_with};
use oddstop_core::simulator::{simulate_adaptive, simulate_known, SimConfig};
use oddstop_core::Execution;

const EXAMPLE: [f64; 7] = [0.35, 0.1, 0.05, 0.3, 0.1, 0.15, 0.25];
const MODES: [(&str, Execution); 2] = [
    ("serial", Execution::Serial),
    ("parallel", Execution::Parallel),
];

fn known_odds(c: &mut Criterion) {
    let profile = odds_of(&EXAMPLE).unwrap();
    let plan = stop_index(&profile);
    let mut group = c.benchmark_group("simulate_known");
    for (name, exec) in MODES {
        let config = SimConfig::new(200_000, 1).with_execution(exec);
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| simulate_known(&profile, &plan, &config).unwrap())
        });
    }
    group.finish();
}

fn adaptive(c: &mut Criterion) {
    let scores = HealthScores::new(vec![0.9; 100]).unwrap();
    let mut group = c.benchmark_group("simulate_adaptive_n100");
    for (name, exec) in MODES {
        let config = SimConfig::new(50_000, 1).with_execution(exec);
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| simulate_adaptive(0.1, &scores, &config).unwrap())
        });
    }
    group.finish();
}

fn enumeration(c: &mut Criterion) {
    let profile = odds_of(&[0.12; 18]).unwrap();
    let example = odds_of(&EXAMPLE).unwrap();
    let mut group = c.benchmark_group("enumeration");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::new("oracle_n18", name), |b| {
            b.iter(|| win_probability_oracle_with(&profile, 9, exec).unwrap())
        });
        group.bench_function(BenchmarkId::new("best_order_n7", name), |b| {
            b.iter(|| best_order_with(&example, 10, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10).measurement_time(Duration::from_secs(5));
    targets = known_odds, adaptive, enumeration
}
criterion_main!(benches);
