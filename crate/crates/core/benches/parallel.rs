use std::hint::black_box;

use conservnet::eval::evaluate;
use conservnet::nn::{layer_dims, MlpParams};
use conservnet::systems::{generate_synthetic, simulate_kepler, KeplerOptions, S1Form, SyntheticSystem};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn pools() -> Vec<(&'static str, rayon::ThreadPool)> {
    let threads = std::thread::available_parallelism().map_or(4, |n| n.get()).max(2);
    vec![
        ("one_thread", rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap()),
        ("rayon", rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap()),
    ]
}

fn generation(c: &mut Criterion) {
    let mut g = c.benchmark_group("generate");
    g.sample_size(10);
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::new("s3_200x100", name), |b| {
            b.iter(|| pool.install(|| generate_synthetic(SyntheticSystem::S3, 200, 100, black_box(1)).unwrap()))
        });
        g.bench_function(BenchmarkId::new("kepler_8x50", name), |b| {
            b.iter(|| pool.install(|| simulate_kepler(8, 50, black_box(2), &KeplerOptions::default()).unwrap()))
        });
    }
    g.finish();
}

fn evaluation(c: &mut Criterion) {
    let ds = generate_synthetic(SyntheticSystem::S1(S1Form::Appendix), 100, 100, 3).unwrap();
    let model = MlpParams::init(&layer_dims(4, 64, 4), 4).unwrap();
    let mut g = c.benchmark_group("evaluate");
    g.sample_size(10);
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::new("s1_100x100_w64", name), |b| {
            b.iter(|| pool.install(|| evaluate(black_box(&model), &ds).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, generation, evaluation);
criterion_main!(benches);
