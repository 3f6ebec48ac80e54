use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use fkpp_core::coherent::{self, AssemblyOptions};
use fkpp_core::field::FieldGrid;
use fkpp_core::largetime::{self, LargeTimeParams};
use fkpp_core::oracle::{self, OracleOptions};
use fkpp_core::{ee, specfun, EeOptions, ModelSpec, MomentState};

fn model(d: f64) -> ModelSpec {
    ModelSpec::gaussian_competition(d, 1.0, 1.0, 1.0, 1.0).unwrap()
}

fn moments(c: &mut Criterion) {
    let m = model(0.01);
    let s0 = MomentState::gaussian(1.0, 0.0, 0.05).unwrap();
    c.bench_function("ee_order2_t5", |b| {
        b.iter(|| ee::integrate_ee(black_box(&s0), (0.0, 5.0), &m, &EeOptions::default()).unwrap())
    });
}

fn assembly(c: &mut Criterion) {
    let m = model(0.01);
    c.bench_function("assemble_state0", |b| {
        b.iter(|| coherent::assemble_solution(0, black_box(&m), (0.0, 1.0), &AssemblyOptions::default()).unwrap())
    });
    let u = coherent::assemble_solution(4, &m, (0.0, 1.0), &AssemblyOptions::default()).unwrap();
    let g = u.basis.as_ref().unwrap().grid_for(4, 0.5, 20.0).unwrap();
    c.bench_function("state4_field", |b| b.iter(|| u.field(black_box(0.5), &g).unwrap()));
}

fn direct(c: &mut Criterion) {
    let m = model(0.01);
    let g = FieldGrid::dirichlet(-3.0, 3.0, 241).unwrap();
    let u0 = g.sample(|x| (-x * x / 0.1).exp());
    let mut group = c.benchmark_group("direct");
    group.sample_size(10);
    group.bench_function("nonlinear_241_t1", |b| {
        b.iter(|| oracle::solve_nonlinear(black_box(&u0), &m, &[0.0, 1.0], &OracleOptions::default()).unwrap())
    });
    group.finish();
}

fn large_time(c: &mut Criterion) {
    let p = LargeTimeParams::default();
    let g = FieldGrid::dirichlet(-10.0, 10.0, 2001).unwrap();
    c.bench_function("u1_field_t2", |b| b.iter(|| largetime::u1_field(&g, black_box(2.0), &p).unwrap()));
    c.bench_function("coefficients_m8", |b| {
        b.iter(|| largetime::coefficients(0, black_box(&[0.5, 1.0, 2.0]), 8, &p).unwrap())
    });
}

fn special(c: &mut Criterion) {
    c.bench_function("hermite_functions_50", |b| b.iter(|| specfun::hermite_functions(50, black_box(1.3)).unwrap()));
}

criterion_group!(benches, moments, assembly, direct, large_time, special);
criterion_main!(benches);
