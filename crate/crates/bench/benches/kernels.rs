use std::hint::black_box;

use cpe_core::otmatch::{classify_ot, sinkhorn, OtParams, TransportProblem};
use cpe_core::tda::{cosine_distance_matrix, zero_dim_persistence};
use cpe_core::tgssg::ClassTextualSet;
use cpe_core::ttamatch::{classify_tta, TtaParams};
use cpe_core::{EmbeddingSet, Matrix, ViewSet};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unit_rows(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> EmbeddingSet {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    EmbeddingSet::from_rows_normalized("bench", &rows).unwrap()
}

fn classes(rng: &mut ChaCha8Rng, k: usize, prompts: usize, dim: usize) -> Vec<ClassTextualSet> {
    (0..k)
        .map(|c| ClassTextualSet {
            class_id: c as u32,
            prompt_embeddings: unit_rows(rng, prompts, dim),
            provenance: vec![("s".into(), None); prompts],
            prompts: vec!["a photo of a s".into(); prompts],
        })
        .collect()
}

fn bench_sinkhorn(c: &mut Criterion) {
    let mut g = c.benchmark_group("sinkhorn");
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for n in [16, 64, 100] {
        let cost = Matrix::from_fn(n, 18, |_, _| rng.random_range(0.0..2.0));
        let problem = TransportProblem {
            cost,
            a: vec![1.0 / n as f64; n],
            b: vec![1.0 / 18.0; 18],
            epsilon: 0.1,
            max_iters: 100,
            tol: 1e-6,
        };
        g.bench_with_input(BenchmarkId::from_parameter(n), &problem, |b, p| {
            b.iter(|| sinkhorn(black_box(p)).unwrap())
        });
    }
    g.finish();
}

fn bench_persistence(c: &mut Criterion) {
    let mut g = c.benchmark_group("persistence");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in [6, 30, 100] {
        let d = cosine_distance_matrix(&unit_rows(&mut rng, n, 512)).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(n), &d, |b, d| {
            b.iter(|| zero_dim_persistence(black_box(d)))
        });
    }
    g.finish();
}

fn bench_classify(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let views = ViewSet::from_embeddings(unit_rows(&mut rng, 101, 512));
    let sets = classes(&mut rng, 37, 18, 512);
    c.bench_function("classify_ot/101x37", |b| {
        b.iter(|| classify_ot(black_box(&views), &sets, &OtParams::default()).unwrap())
    });
    c.bench_function("classify_tta/101x37", |b| {
        b.iter(|| classify_tta(black_box(&views), &sets, &TtaParams::default()).unwrap())
    });
}

criterion_group!(benches, bench_sinkhorn, bench_persistence, bench_classify);
criterion_main!(benches);
