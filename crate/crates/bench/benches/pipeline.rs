use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use netmee::equilibrium::{equilibrium_state, solve_equilibrium};
use netmee::graph::{bfs_layers, rgg, ring};
use netmee::hac::{bandwidth, hac_covariance, max_lag};
use netmee::harness::{design_truth, generate_dataset};
use netmee::{estimate, GmmConfig, HacConfig, JacobianMethod, MomentProblem, SolverConfig};

fn equilibrium(c: &mut Criterion) {
    let mut group = c.benchmark_group("equilibrium");
    let truth = design_truth();
    for n in [1000, 4000] {
        let g = ring(n).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = DMatrix::from_fn(n, 2, |_, c| {
            if c == 0 {
                1.0
            } else {
                rng.random_range(-2.0..2.0)
            }
        });
        group.bench_with_input(BenchmarkId::new("solve", n), &n, |b, _| {
            b.iter(|| solve_equilibrium(&g, &z, &truth.first, SolverConfig::default()).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("state", n), &n, |b, _| {
            b.iter(|| {
                equilibrium_state(
                    &g,
                    &z,
                    &truth.first,
                    SolverConfig::default(),
                    JacobianMethod::Auto,
                )
                .unwrap()
            })
        });
    }
    group.finish();
}

fn hac(c: &mut Criterion) {
    let mut group = c.benchmark_group("hac");
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 1000;
    let rows = DMatrix::from_fn(n, 15, |_, _| rng.random_range(-1.0..1.0));
    let graphs = [
        ("ring", ring(n).unwrap()),
        ("rgg", rgg(n, 5.63, &mut rng).unwrap()),
    ];
    for (name, g) in &graphs {
        let b_n = bandwidth(n, g.average_degree(), &HacConfig::default());
        let idx = bfs_layers(g, max_lag(b_n));
        group.bench_function(BenchmarkId::new("layers", name), |b| {
            b.iter(|| bfs_layers(g, max_lag(b_n)))
        });
        group.bench_function(BenchmarkId::new("covariance", name), |b| {
            b.iter(|| hac_covariance(&rows, &idx, b_n).unwrap())
        });
    }
    group.finish();
}

fn pipeline(c: &mut Criterion) {
    let mut group = c.benchmark_group("estimate");
    group.sample_size(20);
    for n in [250, 1000] {
        let g = ring(n).unwrap();
        let data =
            generate_dataset(&g, &design_truth(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let problem = MomentProblem::new(&g, &data).unwrap();
        group.bench_with_input(BenchmarkId::new("ring", n), &n, |b, _| {
            b.iter(|| estimate(&problem, &HacConfig::default(), &GmmConfig::default()).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, equilibrium, hac, pipeline);
criterion_main!(benches);
