use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use qvelab::sampler::{self, EntryDistribution, SymmetryClass};
use qvelab::solver::{self, SolverConfig};
use qvelab::{SpectralPoint, VarianceProfile};
use qvelab_bench::gapped_profile;

fn bench_solve(c: &mut Criterion) {
    let config = SolverConfig::default();
    let mut group = c.benchmark_group("qve-solve");
    for n in [100usize, 400] {
        let profile = gapped_profile(n);
        group.bench_with_input(BenchmarkId::new("bulk", n), &n, |b, _| {
            let point = SpectralPoint { tau: 0.4, eta: 1e-2 };
            b.iter(|| solver::solve_point(&profile, point, &config, None).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("near-edge", n), &n, |b, _| {
            let point = SpectralPoint { tau: 1.95, eta: 1e-4 };
            b.iter(|| solver::solve_point(&profile, point, &config, None).unwrap())
        });
    }
    group.finish();
}

fn bench_sweep(c: &mut Criterion) {
    let config = SolverConfig::default();
    let profile = VarianceProfile::stochastic_constant(400).unwrap();
    let etas: Vec<f64> = (0..12)
        .map(|k| 1.0f64 * (1e-5f64).powf(k as f64 / 11.0))
        .collect();
    c.bench_function("eta-ladder-400", |b| {
        b.iter(|| solver::solve_sweep(&profile, 0.7, &etas, &config).unwrap())
    });
}

fn bench_sampling(c: &mut Criterion) {
    let profile = gapped_profile(200);
    c.bench_function("sample-200", |b| {
        let mut seed = 0u64;
        b.iter(|| {
            seed += 1;
            sampler::sample(
                &profile,
                SymmetryClass::RealSymmetric,
                EntryDistribution::Gaussian,
                seed,
            )
            .unwrap()
        })
    });
    c.bench_function("eigen-200", |b| {
        let sample = sampler::sample(
            &profile,
            SymmetryClass::RealSymmetric,
            EntryDistribution::Gaussian,
            7,
        )
        .unwrap();
        b.iter(|| {
            // Rebuild so the eigendecomposition cache never carries over.
            let fresh = sampler::sample(
                &profile,
                SymmetryClass::RealSymmetric,
                EntryDistribution::Gaussian,
                sample.seed(),
            )
            .unwrap();
            fresh.eigenvalues().unwrap().len()
        })
    });
}

criterion_group!(benches, bench_solve, bench_sweep, bench_sampling);
criterion_main!(benches);
