use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use smoothlin_bench::fixture;
use smoothlin_core::foliation::{solve_lp, LpConfig, Side};
use smoothlin_core::linearize::full_conjugacy;
use smoothlin_core::normalform::{apply_normal_form, homological_coeffs, HatSystem};
use smoothlin_core::spectrum::lyapunov_exponents;
use smoothlin_core::{catalog, Cocycle, Vector};

fn spectrum(c: &mut Criterion) {
    let det = catalog::saddle_2d().extend();
    let rnd = catalog::bernoulli_diag();
    c.bench_function("spectrum/saddle_2d/10k", |b| b.iter(|| lyapunov_exponents(&det, 10_000, 0).unwrap()));
    c.bench_function("spectrum/bernoulli_diag/10k", |b| b.iter(|| lyapunov_exponents(&rnd, 10_000, 0).unwrap()));
}

fn lyapunov_perron(c: &mut Criterion) {
    let f = fixture("bump_3d");
    let x = Vector::from_vec(vec![0.03, -0.02, 0.04]);
    for side in [Side::Stable, Side::Unstable] {
        let cfg = LpConfig::new(side);
        let y = if side == Side::Stable { Vector::from_vec(vec![0.05]) } else { Vector::from_vec(vec![0.01, 0.02]) };
        c.bench_function(&format!("lp/bump_3d/{side:?}"), |b| {
            b.iter(|| solve_lp(&f.sys, &f.spec, &f.budget, 0, black_box(&x), &y, &cfg).unwrap())
        });
    }
}

fn normal_form(c: &mut Criterion) {
    let f = fixture("bernoulli_quadratic");
    c.bench_function("normalform/bernoulli_quadratic/coeffs", |b| {
        b.iter(|| {
            let hat = HatSystem::at_fixed_point(&f.sys, 0);
            let co = homological_coeffs(&hat, &f.spec, None).unwrap();
            co.at(0).unwrap();
        })
    });
    let hat = HatSystem::at_fixed_point(&f.sys, 0);
    let co = homological_coeffs(&hat, &f.spec, None).unwrap();
    let nf = apply_normal_form(co, &[0], 0.25, f.sys.rho()).unwrap();
    let x = Vector::from_vec(vec![0.01, -0.02]);
    c.bench_function("normalform/bernoulli_quadratic/transform", |b| b.iter(|| nf.transform(0, black_box(&x)).unwrap()));
}

fn conjugacy(c: &mut Criterion) {
    let mut group = c.benchmark_group("conjugacy");
    group.sample_size(20);
    for name in ["saddle_2d", "bump_3d"] {
        let f = fixture(name);
        let conj = full_conjugacy(&f.sys, &f.spec, &f.budget).unwrap();
        let x = Vector::from_fn(f.sys.dim(), |i, _| 0.02 * (i as f64 + 1.0) * if i % 2 == 0 { 1.0 } else { -1.0 });
        group.bench_function(format!("{name}/eval"), |b| b.iter(|| conj.eval(0, black_box(&x)).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, spectrum, lyapunov_perron, normal_form, conjugacy);
criterion_main!(benches);
