use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use tbem_bench::{annulus, canonical_data, star_in_circle};
use tbem_core::potential::{adjoint_double_layer_matrix, single_layer_matrix};
use tbem_core::{assemble_ja, solve_unperturbed, InterfaceOperators, MatrixField, SolverOptions};

fn layer_matrices(c: &mut Criterion) {
    let mut group = c.benchmark_group("layer_matrices");
    for n in [64, 128, 256] {
        let (_, inner) = star_in_circle(n);
        group.bench_with_input(BenchmarkId::new("single_layer", n), &inner, |b, bd| {
            b.iter(|| single_layer_matrix(black_box(bd)))
        });
        group.bench_with_input(
            BenchmarkId::new("adjoint_double_layer", n),
            &inner,
            |b, bd| b.iter(|| adjoint_double_layer_matrix(black_box(bd))),
        );
    }
    group.finish();
}

fn block_operator(c: &mut Criterion) {
    let mut group = c.benchmark_group("block_operator");
    for n in [32, 64, 128] {
        let (outer, inner) = star_in_circle(n);
        let a = MatrixField::constant(n, [[1.0, 0.0], [0.0, -1.0]]);
        group.bench_function(BenchmarkId::new("interface_operators", n), |b| {
            b.iter(|| InterfaceOperators::new(black_box(&outer), black_box(&inner)).unwrap())
        });
        let ops = InterfaceOperators::new(&outer, &inner).unwrap();
        group.bench_function(BenchmarkId::new("assemble_from_cached", n), |b| {
            b.iter(|| ops.assemble(black_box(&a)).unwrap())
        });
        let j = assemble_ja(&outer, &inner, &a).unwrap();
        group.bench_function(BenchmarkId::new("factorize", n), |b| {
            b.iter(|| black_box(&j).factorize().unwrap())
        });
    }
    group.finish();
}

fn nonlinear_solve(c: &mut Criterion) {
    let mut group = c.benchmark_group("nonlinear_solve");
    group.sample_size(10);
    let data = canonical_data();
    for n in [32, 64] {
        let (outer, inner) = annulus(n);
        group.bench_function(BenchmarkId::new("hybrid", n), |b| {
            b.iter(|| solve_unperturbed(&data, &outer, &inner, &SolverOptions::default()).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, layer_matrices, block_operator, nonlinear_solve);
criterion_main!(benches);
