use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use stresspop_core::pde::{floquet_lambda, pde_lambda, renewal_growth_rate, FloquetOptions};
use stresspop_core::sim::{estimate_extinction, replicate_rng, simulate, Founder, SimOptions};
use stresspop_core::{
    growth_sensitivity, malthusian_lambda, matrix_f, reference_params, solve_extinction, spectral_triplet, StressSignal,
};

fn analytic(c: &mut Criterion) {
    let p = reference_params(0.4, 0.4, 0.5).unwrap();
    c.bench_function("solve_extinction", |b| b.iter(|| solve_extinction(black_box(&p)).unwrap()));
    c.bench_function("matrix_f", |b| b.iter(|| matrix_f(black_box(&p), black_box(0.03)).unwrap()));
    c.bench_function("malthusian_lambda", |b| b.iter(|| malthusian_lambda(black_box(&p)).unwrap()));
    c.bench_function("growth_sensitivity", |b| b.iter(|| growth_sensitivity(black_box(&p)).unwrap()));
    let mut g = c.benchmark_group("slow");
    g.sample_size(10);
    g.bench_function("spectral_triplet", |b| b.iter(|| spectral_triplet(black_box(&p)).unwrap()));
    g.finish();
}

fn solvers(c: &mut Criterion) {
    let p = reference_params(0.4, 0.4, 0.5).unwrap();
    let wave = p.with_stress(StressSignal::square_wave(6.0, 0.25, 0.75).unwrap()).unwrap();
    let mut g = c.benchmark_group("solvers");
    g.sample_size(10);
    g.bench_function("pde_lambda", |b| b.iter(|| pde_lambda(black_box(&p), 0.05, 300.0).unwrap()));
    g.bench_function("renewal_growth_rate", |b| b.iter(|| renewal_growth_rate(black_box(&p), 0.05, 300.0).unwrap()));
    let opts = FloquetOptions { sensitivities: false, ..FloquetOptions::default() };
    g.bench_function("floquet_lambda", |b| b.iter(|| floquet_lambda(black_box(&wave), opts).unwrap()));
    g.finish();
}

fn simulation(c: &mut Criterion) {
    let p = reference_params(0.6, 0.4, 0.3).unwrap();
    let opts = SimOptions { horizon: 100.0, n_cap: 1000, ..SimOptions::default() };
    let mut k = 0;
    c.bench_function("simulate_single", |b| {
        b.iter(|| {
            k += 1;
            simulate(black_box(&p), &[Founder::newborn(0)], &opts, &mut replicate_rng(1, k))
        })
    });
    let mut g = c.benchmark_group("monte_carlo");
    g.sample_size(10);
    g.bench_function("estimate_extinction_500", |b| {
        b.iter(|| estimate_extinction(black_box(&p), 0, 500, 3000.0, 1000, 7).unwrap())
    });
    g.finish();
}

criterion_group!(benches, analytic, solvers, simulation);
criterion_main!(benches);
