use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dobc_core::linalg::{controllability_staircase, DEFAULT_RANK_TOL};
use dobc_core::scenario::{random_feedback, random_graph, random_stable_spectrum, random_system, uniform_matrix};
use dobc_core::synth::place_spectrum;
use dobc_core::{synthesize, SynthConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn staircase(c: &mut Criterion) {
    let mut group = c.benchmark_group("staircase");
    for n in [8, 16, 32] {
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
        let a = uniform_matrix(&mut rng, n, n);
        let b = uniform_matrix(&mut rng, n, 2);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| controllability_staircase(black_box(&a), black_box(&b), DEFAULT_RANK_TOL).unwrap())
        });
    }
    group.finish();
}

fn placement(c: &mut Criterion) {
    let mut group = c.benchmark_group("place");
    for (n, inputs) in [(6, 1), (12, 2), (24, 3)] {
        let mut rng = ChaCha8Rng::seed_from_u64(7 + n as u64);
        let a = uniform_matrix(&mut rng, n, n);
        let b = uniform_matrix(&mut rng, n, inputs);
        let targets = random_stable_spectrum(&mut rng, n).unwrap();
        group.bench_with_input(BenchmarkId::new(format!("{inputs}in"), n), &n, |bench, _| {
            bench.iter(|| place_spectrum(black_box(&a), black_box(&b), &targets, 1, 1e-6).unwrap())
        });
    }
    group.finish();
}

fn synthesis(c: &mut Criterion) {
    let mut group = c.benchmark_group("synthesize");
    group.sample_size(20);
    for (n, m) in [(2, 3), (3, 4), (4, 5)] {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + (n * m) as u64);
        let sys = random_system(&mut rng, n, m).unwrap();
        let g = random_graph(&mut rng, m, 0.4).unwrap();
        let f = random_feedback(&mut rng, &sys);
        let targets = random_stable_spectrum(&mut rng, 2 * n * m).unwrap();
        let cfg = SynthConfig::default();
        group.bench_with_input(BenchmarkId::new("full", format!("n{n}m{m}")), &n, |bench, _| {
            bench.iter(|| synthesize(&sys, &g, &f, &targets, 0, &cfg).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, staircase, placement, synthesis);
criterion_main!(benches);
