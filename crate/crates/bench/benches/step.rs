use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use grassmann_stream::datagen::{gen_coefficients, gen_dense_truth, trial_rng};
use grassmann_stream::grouse::random_basis;
use grassmann_stream::{least_squares, principal_angles, GrouseState, SamplingOperator};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const SIZES: [(usize, usize, usize); 2] = [(500, 10, 60), (5000, 10, 500)];

fn operator(kind: &str, n: usize, m: usize, rng: &mut ChaCha8Rng) -> SamplingOperator {
    match kind {
        "full" => SamplingOperator::make_full(n).unwrap(),
        "gaussian" => SamplingOperator::make_gaussian(m, n, rng).unwrap(),
        _ => SamplingOperator::make_entrywise(m, n, rng).unwrap(),
    }
}

fn grouse_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("grouse_step");
    for (n, d, m) in SIZES {
        for kind in ["full", "gaussian", "entrywise"] {
            if kind == "gaussian" && n > 1000 {
                continue;
            }
            let mut rng = trial_rng(1, 0);
            let truth = gen_dense_truth(n, d, &mut rng).unwrap();
            let op = operator(kind, n, m, &mut rng);
            let v = truth.basis.as_matrix() * gen_coefficients(d, &mut rng);
            let x = op.apply(&v).unwrap();
            let start = GrouseState::init_random(n, d, &mut rng).unwrap();
            group.bench_with_input(BenchmarkId::new(kind, format!("n{n}_d{d}_m{m}")), &x, |b, x| {
                b.iter_batched(
                    || start.clone(),
                    |mut s| black_box(s.step(&op, x).unwrap().theta),
                    criterion::BatchSize::SmallInput,
                )
            });
        }
    }
    group.finish();
}

fn principal_angle_profile(c: &mut Criterion) {
    let mut group = c.benchmark_group("principal_angles");
    for (n, d) in [(500, 10), (5000, 10), (5000, 50)] {
        let mut rng = trial_rng(2, 0);
        let a = random_basis(n, d, &mut rng).unwrap();
        let b = random_basis(n, d, &mut rng).unwrap();
        group.bench_function(format!("n{n}_d{d}"), |bench| {
            bench.iter(|| black_box(principal_angles(&a, &b).unwrap().log_zeta))
        });
    }
    group.finish();
}

fn restricted_least_squares(c: &mut Criterion) {
    let mut group = c.benchmark_group("least_squares");
    for (m, d) in [(60, 10), (500, 10), (500, 50)] {
        let mut rng = trial_rng(3, 0);
        let a = DMatrix::from_fn(m, d, |_, _| rng.random::<f64>() - 0.5);
        let y = DVector::from_fn(m, |_, _| rng.random::<f64>() - 0.5);
        group.bench_function(format!("m{m}_d{d}"), |bench| {
            bench.iter(|| black_box(least_squares(&a, &y).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, grouse_step, principal_angle_profile, restricted_least_squares);
criterion_main!(benches);
