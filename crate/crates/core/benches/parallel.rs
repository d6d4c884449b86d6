//! Rayon pool against a single-thread pool on the two data-parallel hot
//! paths: batched BPTT and ensemble forecasts. Build with
//! `--no-default-features` to time the sequential fallback instead.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use l96_core::dynamics::{generate_truth, L96Config, Trajectory, TruthRun, TruthState};
use l96_core::evaluation::{run_weather_eval, EnsembleSpec};
use l96_core::models::{NormStats, RnnArch, RnnModel};
use l96_core::stochastic::RngStream;
use l96_core::training::{rnn_grad, Sequence};

fn model() -> RnnModel {
    let norm = NormStats { x_mean: 2.5, x_sd: 6.0, r_mean: 0.0, r_sd: 4.0 };
    RnnModel::random(RnnArch::default(), norm, 0.005, 20.0, 1.0, 3).unwrap()
}

fn sequences(n: usize, len: usize) -> Vec<Sequence> {
    let mut rng = RngStream::new(5, 0);
    (0..n)
        .map(|_| Sequence {
            x: (0..len).map(|_| 2.5 + 6.0 * rng.gaussian()).collect(),
            r_hat: (0..len).map(|_| 4.0 * rng.gaussian()).collect(),
        })
        .collect()
}

fn truth() -> Trajectory {
    let cfg = L96Config::standard(20.0);
    let run = TruthRun { duration: 20.0, dt_inner: 0.001, dt_save: 0.005, burn_in: 5.0 };
    generate_truth(&cfg, &run, &TruthState::random(&cfg, 1), 1).unwrap()
}

#[cfg(feature = "parallel")]
fn pools() -> Vec<(String, Option<rayon::ThreadPool>)> {
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    vec![("1-thread".into(), Some(one)), (format!("global-pool-{}", rayon::current_num_threads()), None)]
}

#[cfg(not(feature = "parallel"))]
fn pools() -> Vec<(String, Option<()>)> {
    vec![("sequential".into(), None)]
}

#[cfg(feature = "parallel")]
fn run_in<R: Send>(pool: &Option<rayon::ThreadPool>, f: impl FnOnce() -> R + Send) -> R {
    match pool {
        Some(p) => p.install(f),
        None => f(),
    }
}

#[cfg(not(feature = "parallel"))]
fn run_in<R: Send>(_: &Option<()>, f: impl FnOnce() -> R + Send) -> R {
    f()
}

fn bench(c: &mut Criterion) {
    let m = model();
    let seqs = sequences(32, 200);
    let tr = truth();
    let spec = EnsembleSpec { n_init: 8, n_members: 10, horizon: 1.0, spinup: 50, seed: 2, min_separation: 1.0 };

    let mut g = c.benchmark_group("rnn_grad_batch32_len200");
    g.sample_size(10);
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::from_parameter(&name), |b| b.iter(|| run_in(&pool, || rnn_grad(&seqs, &m))));
    }
    g.finish();

    let mut g = c.benchmark_group("weather_m8_n10");
    g.sample_size(10);
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::from_parameter(&name), |b| {
            b.iter(|| run_in(&pool, || run_weather_eval(&m, &tr, &spec).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
