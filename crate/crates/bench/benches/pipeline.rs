use criterion::{criterion_group, criterion_main, Criterion};
use ndarray::ArrayView1;
use ris_inr::baselines::{self, CsConfig};
use ris_inr::channel::ris_phase_random;
use ris_inr::experiment::Setup;
use ris_inr::forward::build_forward;
use ris_inr::metrics;
use ris_inr::train::{self, TrainConfig, TrainState};
use ris_inr::PathMask;
use ris_inr_bench::desk_fixture;
use std::hint::black_box;

fn operator(c: &mut Criterion) {
    let setup = Setup::desk();
    let system = setup.system();
    let book = ris_phase_random(setup.configurations, system.n_ris(), 7).unwrap();
    c.bench_function("build_forward desk", |b| b.iter(|| build_forward(black_box(&system), &book, PathMask::ALL).unwrap()));

    let f = desk_fixture();
    let sigma = ArrayView1::from(&f.scene.sigma);
    let y = ArrayView1::from(&f.y);
    c.bench_function("apply desk", |b| b.iter(|| f.operator.apply(black_box(sigma)).unwrap()));
    c.bench_function("adjoint desk", |b| b.iter(|| f.operator.adjoint_real(black_box(y))));
}

fn training(c: &mut Criterion) {
    let f = desk_fixture();
    let y = ndarray::Array1::from(f.y.clone());
    let problem = train::Problem { op: &f.operator, y: y.view(), grid: &f.grid, truth: None };
    let encoded = f.model.encode(&f.grid.positions);
    c.bench_function("loss and gradients desk", |b| {
        b.iter(|| train::loss_and_gradients(black_box(&f.model), &encoded, &f.operator, y.view(), 0.0).unwrap())
    });
    c.bench_function("train epoch desk", |b| {
        b.iter_batched(
            || TrainState::new(f.model.clone(), &TrainConfig::default()),
            |mut state| {
                let cfg = TrainConfig { max_epochs: 1, ..TrainConfig::default() };
                train::run(&mut state, &problem, &cfg, |_| Ok(())).unwrap();
                state
            },
            criterion::BatchSize::LargeInput,
        )
    });
}

fn baselines_and_metrics(c: &mut Criterion) {
    let f = desk_fixture();
    let y = ndarray::Array1::from(f.y.clone());
    let sigma_max = f.system.sigma_max();
    let cfg = CsConfig { beta: 1e-5, beta_relative: true, max_iters: 100, tolerance: 0.0, ..CsConfig::default() };
    let mut group = c.benchmark_group("baselines desk");
    group.sample_size(10);
    group.bench_function("fista 100 iterations", |b| {
        b.iter(|| baselines::fista(&f.operator, y.view(), &cfg, &f.grid, sigma_max).unwrap())
    });
    group.bench_function("matched filter", |b| b.iter(|| baselines::matched_filter(&f.operator, y.view(), &f.grid, sigma_max).unwrap()));
    group.finish();

    let est: Vec<f64> = f.scene.sigma.iter().map(|v| v * 0.9).collect();
    c.bench_function("ssim 32x32", |b| b.iter(|| metrics::ssim(black_box(&est), &f.scene.sigma, sigma_max).unwrap()));
}

criterion_group!(benches, operator, training, baselines_and_metrics);
criterion_main!(benches);
