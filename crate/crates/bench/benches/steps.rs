use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use overlap_bench::fixture;
use overlap_core::algorithms::StepParams;
use overlap_core::mixing::{build_p, matrix_step, StackedState};
use overlap_core::simulator::{simulate_rounds, RoundPlan};
use overlap_core::{
    run_training, AlgorithmKind, ClusterState, HyperParams, LearningRate, NullSink, SyncStyle, TimingModel,
    TrainingOptions,
};

fn step_params() -> StepParams {
    StepParams {
        tau: 4,
        eta: 0.05,
        alpha: 0.6,
        beta: 0.7,
        mu: 0.0,
        reset_momentum_on_sync: false,
    }
}

fn cluster_advance(c: &mut Criterion) {
    let mut group = c.benchmark_group("advance");
    for d in [16, 256, 4096] {
        let (ens, init) = fixture(8, d, 0.0).unwrap();
        let grads: Vec<_> = (0..8).map(|i| ens.local_grad(i, &init).unwrap()).collect();
        for kind in [AlgorithmKind::OverlapLocal, AlgorithmKind::LocalSgd] {
            group.bench_with_input(BenchmarkId::new(kind.name(), d), &d, |b, _| {
                let mut state = ClusterState::new(8, &init).unwrap();
                b.iter(|| state.advance(&kind, &step_params(), black_box(&grads)).unwrap());
            });
        }
    }
    group.finish();
}

fn stacked_matrix_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("matrix_step");
    for d in [16, 256, 4096] {
        let (ens, init) = fixture(8, d, 0.0).unwrap();
        let grads: Vec<_> = (0..8).map(|i| ens.local_grad(i, &init).unwrap()).collect();
        let x = StackedState::from_cluster(&ClusterState::new(8, &init).unwrap()).unwrap();
        let g = StackedState::from_gradients(&grads).unwrap();
        let p = build_p(8, 0.6).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(d), &d, |b, _| {
            b.iter(|| matrix_step(black_box(&x), &g, &p, 0.05).unwrap());
        });
    }
    group.finish();
}

fn schedule(c: &mut Criterion) {
    let plan: Vec<RoundPlan> = (0..1000)
        .map(|r| RoundPlan {
            compute: (0..16).map(|i| 1.0 + ((r * 16 + i) % 7) as f64 * 0.1).collect(),
            steps: 4,
            syncs: true,
        })
        .collect();
    let mut group = c.benchmark_group("simulate_rounds");
    for style in [SyncStyle::Blocking, SyncStyle::Overlapped] {
        group.bench_function(format!("{style:?}"), |b| {
            b.iter(|| simulate_rounds(style, 0.5, black_box(&plan)).unwrap());
        });
    }
    group.finish();
}

fn training_run(c: &mut Criterion) {
    let (ens, init) = fixture(8, 64, 1.0).unwrap();
    let hp = HyperParams {
        m: 8,
        d: 64,
        tau: 4,
        alpha: 0.6,
        eta: LearningRate::Fixed(0.05),
        beta: 0.7,
        mu: 0.0,
        iterations: 1000,
        seed: 3,
    };
    let options = TrainingOptions {
        stride: 1,
        timing: Some(TimingModel::fixed(0.01, 0.005)),
        reset_momentum_on_sync: false,
    };
    c.bench_function("run_training/overlap_local/K1000", |b| {
        b.iter(|| run_training(&AlgorithmKind::OverlapLocal, &hp, &ens, &init, &options, &mut NullSink).unwrap());
    });
}

criterion_group!(benches, cluster_advance, stacked_matrix_step, schedule, training_run);
criterion_main!(benches);
