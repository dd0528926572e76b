use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hanner_core::hessian::{gamma_matrix, hessian_matrix};
use hanner_core::integrate::gauss_jacobi_rule;
use hanner_core::phi::{default_order, phi_projected, phi_rademacher_exact, HannerPoint};

fn rules(c: &mut Criterion) {
    let mut g = c.benchmark_group("gauss_jacobi_rule");
    for m in [12, 40, 64] {
        g.bench_with_input(BenchmarkId::from_parameter(m), &m, |b, &m| {
            b.iter(|| gauss_jacobi_rule(black_box(m), 3))
        });
    }
    g.finish();
}

fn phi(c: &mut Criterion) {
    let mut g = c.benchmark_group("phi_projected");
    for n in 2..=4 {
        let pt = HannerPoint::new(3.3, 3, (1..=n).map(|k| k as f64).collect()).unwrap();
        let rule = gauss_jacobi_rule(default_order(n), 3).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(n), &pt, |b, pt| {
            b.iter(|| phi_projected(black_box(pt), &rule))
        });
    }
    g.finish();
}

fn hessian(c: &mut Criterion) {
    let mut g = c.benchmark_group("hessian_matrix");
    for (p, n) in [(4.0, 3), (1.5, 3), (3.0, 4)] {
        let pt = HannerPoint::new(p, 2, (1..=n).map(|k| 1.0 / k as f64).collect()).unwrap();
        let rule = gauss_jacobi_rule(default_order(n), 2).unwrap();
        g.bench_with_input(BenchmarkId::new(format!("p={p}"), n), &pt, |b, pt| {
            b.iter(|| hessian_matrix(black_box(pt), &rule))
        });
    }
    let pt = HannerPoint::new(1.5, 3, vec![0.3, 0.7]).unwrap();
    let rule = gauss_jacobi_rule(64, 3).unwrap();
    g.bench_function("gamma p=1.5 n=2", |b| {
        b.iter(|| gamma_matrix(black_box(&pt), &rule))
    });
    g.finish();
}

fn enumeration(c: &mut Criterion) {
    let mut g = c.benchmark_group("rademacher_enumeration");
    g.sample_size(10);
    for n in [8, 16, 20] {
        let pt = HannerPoint::new(3.5, 1, (1..=n).map(|k| k as f64).collect()).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(n), &pt, |b, pt| {
            b.iter(|| phi_rademacher_exact(black_box(pt)))
        });
    }
    g.finish();
}

criterion_group!(benches, rules, phi, hessian, enumeration);
criterion_main!(benches);
