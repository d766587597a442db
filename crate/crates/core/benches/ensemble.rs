use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use glesim_core::dynamics::{PhaseState, SimParams};
use glesim_core::experiments::{wasserstein_decay, WassersteinOptions};
use glesim_core::kernels::{fluctuation_dissipation_check, FluctuationOptions, KernelSpec, Mode};
use glesim_core::model::Model;
use glesim_core::potentials::{ConfiningPotential, SingularPotential};
use glesim_core::Execution;

fn executions() -> [(&'static str, Execution); 2] {
    [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)]
}

fn gle_ensemble(c: &mut Criterion) {
    let model = Model::new(
        1,
        ConfiningPotential::quadratic(0.5, 1.0).unwrap(),
        Some(SingularPotential::coulomb(1).unwrap()),
        KernelSpec::uniform(2, &[Mode::new(1.0, 1.0)]).unwrap(),
    )
    .unwrap();
    let params = SimParams {
        dt: 0.05,
        ..SimParams::default()
    };
    let a = PhaseState::at_rest(&model, vec![-1.0, 1.0]).unwrap();
    let b = PhaseState::at_rest(&model, vec![2.0, 4.0]).unwrap();
    let mut group = c.benchmark_group("gle_ensemble");
    group.sample_size(10);
    for (name, execution) in executions() {
        let opts = WassersteinOptions {
            ensemble: 256,
            times: vec![0.0, 2.5, 5.0],
            projections: 16,
            execution,
            ..WassersteinOptions::default()
        };
        group.bench_with_input(BenchmarkId::new("wasserstein", name), &opts, |bench, opts| {
            bench.iter(|| wasserstein_decay(&model, &params, &a, &b, opts).unwrap())
        });
    }
    group.finish();
}

fn ou_paths(c: &mut Criterion) {
    let spec = KernelSpec::uniform(1, &[Mode::new(1.0, 1.0), Mode::new(2.0, 3.0)]).unwrap();
    let mut group = c.benchmark_group("ou_paths");
    group.sample_size(10);
    for (name, execution) in executions() {
        let opts = FluctuationOptions {
            lags: vec![0.0, 0.5, 1.0],
            samples: 2_000,
            window: 50.0,
            seed: 0,
            execution,
        };
        group.bench_with_input(BenchmarkId::new("fluctuation", name), &opts, |bench, opts| {
            bench.iter(|| fluctuation_dissipation_check(&spec, 0, opts).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, gle_ensemble, ou_paths);
criterion_main!(benches);
