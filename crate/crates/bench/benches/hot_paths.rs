use std::collections::HashSet;

use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion};
use divrec_bench::engine;
use divrec_core::clustering::{kmeans, KMeansConfig};
use divrec_core::diversity::list_diversity;
use divrec_core::recsys::top_n;
use divrec_core::rerank::rerank_pages;
use divrec_core::{DiversityLevel, MovieId, UserId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn recommend(c: &mut Criterion) {
    let (engine, _) = engine(10_000, 1);
    let user = UserId(7);
    let mut group = c.benchmark_group("recommend_10k");
    for level in DiversityLevel::all() {
        group.bench_with_input(BenchmarkId::from_parameter(level.get()), &level, |b, &l| {
            b.iter(|| engine.recommend(black_box(user), l).unwrap())
        });
    }
    group.finish();

    let pool = engine.top_picks(user, engine.pool_size).unwrap().candidates;
    let mut group = c.benchmark_group("rerank_600");
    for level in DiversityLevel::all() {
        let subset = engine.plan().subset(level);
        group.bench_with_input(BenchmarkId::from_parameter(level.get()), &level, |b, &l| {
            b.iter(|| rerank_pages(black_box(&pool), &engine.clusters, &subset, l).unwrap())
        });
    }
    group.finish();

    let none = HashSet::new();
    let movies: Vec<MovieId> = engine.clusters.assignment.keys().copied().collect();
    c.bench_function("top_n_600_of_10k", |b| {
        b.iter(|| {
            top_n(
                &engine.model,
                black_box(user),
                600,
                &none,
                movies.iter().copied(),
            )
            .unwrap()
        })
    });
}

fn diversity(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let page: Vec<Vec<f64>> = (0..24)
        .map(|_| (0..1128).map(|_| rng.random()).collect())
        .collect();
    c.bench_function("list_diversity_24x1128", |b| {
        b.iter(|| list_diversity(black_box(&page)).unwrap())
    });
}

fn clustering(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let points: Vec<Vec<f64>> = (0..2000)
        .map(|_| (0..128).map(|_| rng.random()).collect())
        .collect();
    let ids: Vec<(MovieId, &[f64])> = points
        .iter()
        .enumerate()
        .map(|(i, p)| (MovieId(i as u32), p.as_slice()))
        .collect();
    let mut group = c.benchmark_group("kmeans_2000x128");
    group.sample_size(10);
    group.bench_function("k24", |b| {
        b.iter_batched(
            || KMeansConfig {
                k: 24,
                seed: 1,
                ..Default::default()
            },
            |cfg| kmeans(black_box(&ids), &cfg).unwrap(),
            BatchSize::SmallInput,
        )
    });
    group.finish();
}

criterion_group!(benches, recommend, diversity, clustering);
criterion_main!(benches);
