use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mselab_bench::{boundary_datum, bump_rhs, canonical_metric, linearized_matrix};
use mselab_core::linalg::{bicgstab, BandLu};
use mselab_core::mse::solve_bvp;
use mselab_core::SolverOptions;
use std::hint::black_box;

fn newton(c: &mut Criterion) {
    let mut group = c.benchmark_group("newton_solve");
    group.sample_size(10);
    for n in [33, 65] {
        let m = canonical_metric(n);
        let f = boundary_datum(*m.grid());
        let opts = SolverOptions::default();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| solve_bvp(black_box(&m), black_box(&f), &opts).unwrap())
        });
    }
    group.finish();
}

fn band_lu(c: &mut Criterion) {
    let mut group = c.benchmark_group("band_lu");
    group.sample_size(10);
    for n in [65, 129] {
        let m = canonical_metric(n);
        let a = linearized_matrix(&m);
        let rhs = bump_rhs(*m.grid());
        group.bench_with_input(BenchmarkId::new("factor", n), &n, |b, _| {
            b.iter(|| BandLu::factor(black_box(&a)).unwrap())
        });
        let lu = BandLu::factor(&a).unwrap();
        group.bench_with_input(BenchmarkId::new("solve", n), &n, |b, _| {
            b.iter(|| {
                let mut x = rhs.clone();
                lu.solve_in_place(black_box(&mut x));
                x
            })
        });
        group.bench_with_input(BenchmarkId::new("bicgstab", n), &n, |b, _| {
            b.iter(|| bicgstab(black_box(&a), black_box(&rhs), 1e-10, 10_000).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, newton, band_lu);
criterion_main!(benches);
