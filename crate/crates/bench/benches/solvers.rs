use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use safemarl::critic::{td_evaluate, TDConfig};
use safemarl::occupancy::{estimate_local_occupancy, ExactSystem};
use safemarl::primal_dual::exact_lagrangian_gradient;
use safemarl::rng::{stream, Purpose};
use safemarl::rollout::sample_batch;
use safemarl::train::train;
use safemarl::RewardSignal;
use safemarl_bench::{chain, entropy_utilities, synthetic_experiment, uniform_policy};

fn exact_solve(c: &mut Criterion) {
    let mut g = c.benchmark_group("exact_occupancy");
    for n in [2, 3, 4, 5] {
        let m = chain(n, 0.9);
        let p = uniform_policy(&m, 1);
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| ExactSystem::new(&m, &p).unwrap().occupancy().unwrap().mass())
        });
    }
    g.finish();
}

fn exact_gradient(c: &mut Criterion) {
    let m = chain(4, 0.9);
    let p = uniform_policy(&m, 1);
    let u = entropy_utilities(4, 0.9, 0.3);
    c.bench_function("exact_gradient/4", |b| b.iter(|| exact_lagrangian_gradient(&m, &p, &u, &[1.0; 4]).unwrap()));
}

fn occupancy_estimate(c: &mut Criterion) {
    let m = chain(10, 0.99);
    let p = uniform_policy(&m, 1);
    let batch = sample_batch(&m, &p, 5, 125, 0, 0);
    c.bench_function("sample_batch/10x5x125", |b| b.iter(|| sample_batch(&m, &p, 5, 125, 0, 0)));
    c.bench_function("estimate_occupancy/10", |b| {
        b.iter(|| (0..10).map(|i| estimate_local_occupancy(&batch, i, 2, 2, 0.99, 125).unwrap().mass()).sum::<f64>())
    });
}

fn td(c: &mut Criterion) {
    let mut g = c.benchmark_group("td_500_steps");
    let m = chain(10, 0.99);
    for kappa in [0, 1, 2] {
        let p = uniform_policy(&m, kappa);
        let rewards = vec![RewardSignal::Env; 10];
        let cfg = TDConfig::default_for(0.99, 500);
        g.bench_with_input(BenchmarkId::from_parameter(kappa), &kappa, |b, &k| {
            b.iter(|| {
                let mut rng = stream(0, Purpose::Td, 0, 0);
                td_evaluate(&m, &p, &rewards, k, &cfg, &mut rng).unwrap()
            })
        });
    }
    g.finish();
}

fn train_iteration(c: &mut Criterion) {
    let (m, u, cfg) = synthetic_experiment(1);
    let mut g = c.benchmark_group("train");
    g.sample_size(20);
    g.bench_function("synthetic_iteration", |b| b.iter(|| train(&m, &u, &cfg).unwrap().iter));
    g.finish();
}

criterion_group!(benches, exact_solve, exact_gradient, occupancy_estimate, td, train_iteration);
criterion_main!(benches);
