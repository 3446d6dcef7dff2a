use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use lgbo_core::acquisition::{AcquisitionConfig, LiftedSurrogate, Surrogate};
use lgbo_core::gp::{Dataset, KernelParams, PosteriorState};
use lgbo_core::lift::{LiftSpec, UnitDirective};
use lgbo_core::par;
use lgbo_core::space::{sobol_points, SearchSpace, VariableSpec};
use lgbo_core::theory::tilt_instance;

fn surrogate_parts() -> (PosteriorState, SearchSpace) {
    let space = SearchSpace::new(
        (0..4)
            .map(|i| VariableSpec::continuous(&format!("x{i}"), 0.0, 1.0))
            .collect(),
    )
    .unwrap();
    let xs = sobol_points(4, 40, 7);
    let ys: Vec<f64> = xs.iter().map(|x| x.iter().map(|v| (6.0 * v).sin()).sum()).collect();
    let data = Dataset::standardized(xs, &ys).unwrap();
    let state = PosteriorState::fit(data, KernelParams::isotropic(4, 1.0, 0.4, 1e-3)).unwrap();
    (state, space)
}

fn candidate_scoring(c: &mut Criterion) {
    let (state, space) = surrogate_parts();
    let directive = UnitDirective::Region {
        lower: vec![0.2; 4],
        upper: vec![0.5; 4],
        confidence: 0.7,
    };
    let lift = LiftSpec::build(&state, &directive, &space, 64, 3, false);
    let surrogate = LiftedSurrogate::new(&state, Some(&lift));
    let config = AcquisitionConfig::default();
    let cands = sobol_points(4, config.candidate_count, 11);
    let score = |x: &Vec<f64>| {
        let (m, v) = surrogate.predict(x);
        config.score(m, v, 1.0)
    };
    let mut g = c.benchmark_group("candidate_scoring");
    g.bench_function(BenchmarkId::new("parallel", cands.len()), |b| {
        b.iter(|| black_box(par::map_slice(&cands, score)))
    });
    g.bench_function(BenchmarkId::new("sequential", cands.len()), |b| {
        b.iter(|| black_box(par::map_slice_sequential(&cands, score)))
    });
    g.finish();
}

fn tilt_chunks(c: &mut Criterion) {
    let inst = tilt_instance(5, 5, 0.5);
    let chunk = |i: usize| {
        lgbo_core::theory::mc_tilt_verify(&inst.mean, &inst.cov, &inst.weights, inst.lambda, 20_000, i as u64)
            .map(|t| t.delta_empirical)
            .unwrap_or(f64::NAN)
    };
    let mut g = c.benchmark_group("mc_tilt_batches");
    g.sample_size(10);
    g.bench_function("parallel", |b| b.iter(|| black_box(par::map_range(16, chunk))));
    g.bench_function("sequential", |b| b.iter(|| black_box(par::map_range_sequential(16, chunk))));
    g.finish();
}

criterion_group!(benches, candidate_scoring, tilt_chunks);
criterion_main!(benches);
