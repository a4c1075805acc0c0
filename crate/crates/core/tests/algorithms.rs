use overlap_core::algorithms::{run_training, AlgorithmKind, ClusterState, RunStatus, StepParams, TrainingOptions};
use overlap_core::objectives::{make_quadratic, QuadraticEnsemble};
use overlap_core::verify::trajectory_snapshots;
use overlap_core::{
    mean, Ensemble, HyperParams, LearningRate, MetricsRecord, NullSink, ParamVector, Purpose, RngStream, TimingModel,
};
use proptest::prelude::*;

fn ensemble(m: usize, d: usize, spread: f64, sigma: f64) -> Ensemble {
    make_quadratic(
        m,
        d,
        spread,
        10.0,
        sigma,
        &mut RngStream::shared(21, Purpose::Generator),
    )
    .unwrap()
    .into()
}

fn hp(m: usize, d: usize, tau: usize, alpha: f64, eta: f64, k: usize, seed: u64) -> HyperParams {
    HyperParams {
        m,
        d,
        tau,
        alpha,
        eta: LearningRate::Fixed(eta),
        beta: 0.7,
        mu: 0.0,
        iterations: k,
        seed,
    }
}

fn init(d: usize) -> ParamVector {
    ParamVector::new((0..d).map(|j| 1.0 + j as f64 * 0.25).collect()).unwrap()
}

fn records(kind: &AlgorithmKind, h: &HyperParams, e: &Ensemble, opts: &TrainingOptions) -> Vec<MetricsRecord> {
    let mut out = Vec::new();
    run_training(kind, h, e, &init(h.d), opts, &mut out).unwrap();
    out
}

const ALL_KINDS: [AlgorithmKind; 6] = [
    AlgorithmKind::SyncSgd,
    AlgorithmKind::LocalSgd,
    AlgorithmKind::OverlapLocal,
    AlgorithmKind::OverlapLocalMomentum,
    AlgorithmKind::CoCoD,
    AlgorithmKind::Easgd { center_step: 0.1 },
];

#[test]
fn one_round_means_one_sync() {
    let e = ensemble(3, 4, 1.0, 0.5);
    let timing = TimingModel {
        payload: 1000,
        ..TimingModel::fixed(1.0, 0.5)
    };
    let opts = TrainingOptions {
        timing: Some(timing),
        ..Default::default()
    };
    for kind in ALL_KINDS {
        let tau = if kind == AlgorithmKind::SyncSgd { 1 } else { 4 };
        let r = records(&kind, &hp(3, 4, tau, 0.5, 0.05, tau, 1), &e, &opts);
        assert_eq!(r.len(), tau);
        assert_eq!(r.last().unwrap().comm_bytes, 1000, "{kind:?}");
        assert!(r[..tau - 1].iter().all(|x| x.comm_bytes == 0));
    }
}

#[test]
fn noiseless_homogeneous_descent_is_monotone() {
    let e = ensemble(4, 6, 0.0, 0.0);
    let l = e.constants().unwrap().smoothness;
    let r = records(
        &AlgorithmKind::OverlapLocal,
        &hp(4, 6, 3, 0.6, 1.0 / l, 300, 2),
        &e,
        &TrainingOptions::default(),
    );
    for w in r.windows(2) {
        assert!(
            w[1].objective <= w[0].objective,
            "k={}: {} > {}",
            w[1].k,
            w[1].objective,
            w[0].objective
        );
    }
}

#[test]
fn identical_seeds_identical_streams() {
    let e = ensemble(4, 5, 1.0, 1.0);
    let opts = TrainingOptions {
        timing: Some(TimingModel {
            compute_jitter: 0.2,
            straggler_prob: 0.1,
            straggler_factor: 2.0,
            ..TimingModel::fixed(0.1, 0.3)
        }),
        ..Default::default()
    };
    for kind in ALL_KINDS {
        let tau = if kind == AlgorithmKind::SyncSgd { 1 } else { 3 };
        let h = hp(4, 5, tau, 0.6, 0.05, 120, 9);
        assert_eq!(records(&kind, &h, &e, &opts), records(&kind, &h, &e, &opts));
    }
}

#[test]
fn timing_never_changes_the_trajectory() {
    let e = ensemble(4, 5, 1.0, 1.0);
    let h = hp(4, 5, 3, 0.6, 0.05, 90, 4);
    let kind = AlgorithmKind::OverlapLocalMomentum;
    let a = trajectory_snapshots(&kind, &h, &e, &init(5)).unwrap();
    let strip = |opts: TrainingOptions| {
        records(&kind, &h, &e, &opts)
            .into_iter()
            .map(|r| (r.k, r.objective, r.grad_norm_sq, r.consensus_dist))
            .collect::<Vec<_>>()
    };
    let slow = TrainingOptions {
        timing: Some(TimingModel::fixed(5.0, 50.0)),
        ..Default::default()
    };
    let fast = TrainingOptions {
        timing: Some(TimingModel {
            compute_jitter: 0.5,
            ..TimingModel::fixed(0.01, 0.0)
        }),
        ..Default::default()
    };
    assert_eq!(strip(slow), strip(fast));
    assert_eq!(a.len(), 90);
}

#[test]
fn anchor_is_one_round_stale() {
    let e = ensemble(3, 4, 1.0, 0.0);
    let (tau, alpha, eta) = (2, 0.6, 0.1);
    let step = StepParams {
        tau,
        eta,
        alpha,
        beta: 0.0,
        mu: 0.0,
        reset_momentum_on_sync: false,
    };
    let mut state = ClusterState::new(3, &init(4)).unwrap();
    let mut previous_average = init(4);
    for _round in 0..3 {
        for j in 0..tau {
            let grads: Vec<ParamVector> = (0..3).map(|i| e.local_grad(i, &state.workers[i]).unwrap()).collect();
            if j + 1 == tau {
                assert_eq!(state.anchor, previous_average);
                let mut expected = state.workers.clone();
                for (x, g) in expected.iter_mut().zip(&grads) {
                    x.axpy_assign(-eta, g).unwrap();
                    x.combine_assign(1.0 - alpha, alpha, &previous_average).unwrap();
                }
                state.advance(&AlgorithmKind::OverlapLocal, &step, &grads).unwrap();
                assert_eq!(state.workers, expected);
                previous_average = mean(&expected).unwrap();
                assert_eq!(state.anchor, previous_average);
            } else {
                state.advance(&AlgorithmKind::OverlapLocal, &step, &grads).unwrap();
            }
        }
    }
}

#[test]
fn sync_sgd_keeps_consensus() {
    let e = ensemble(4, 5, 2.0, 1.0);
    let r = records(
        &AlgorithmKind::SyncSgd,
        &hp(4, 5, 1, 0.5, 0.05, 200, 3),
        &e,
        &TrainingOptions::default(),
    );
    assert!(r.iter().all(|x| x.consensus_dist == 0.0));
}

#[test]
fn unit_period_full_pullback_is_not_sync_sgd() {
    let e = ensemble(4, 5, 1.0, 0.0);
    let h = hp(4, 5, 1, 1.0, 0.05, 20, 3);
    let overlap = trajectory_snapshots(&AlgorithmKind::OverlapLocal, &h, &e, &init(5)).unwrap();
    let sync = trajectory_snapshots(&AlgorithmKind::SyncSgd, &h, &e, &init(5)).unwrap();
    assert_ne!(overlap, sync);
}

#[test]
fn cocod_matches_sync_on_identical_workers() {
    let c = ParamVector::new(vec![0.5, -1.0, 2.0]).unwrap();
    let e: Ensemble = QuadraticEnsemble::new(vec![1.0, 2.0, 3.0], vec![c; 3], 0.0)
        .unwrap()
        .into();
    let h = hp(3, 3, 1, 0.5, 0.1, 30, 1);
    let cocod = trajectory_snapshots(&AlgorithmKind::CoCoD, &h, &e, &init(3)).unwrap();
    let sync = trajectory_snapshots(&AlgorithmKind::SyncSgd, &h, &e, &init(3)).unwrap();
    for k in 2..cocod.len() {
        for i in 0..3 {
            let mut a = cocod[k].0[i].clone();
            a.axpy_assign(-1.0, &cocod[k - 1].0[i]).unwrap();
            let mut b = sync[k].0[i].clone();
            b.axpy_assign(-1.0, &sync[k - 1].0[i]).unwrap();
            assert!(a.max_abs_diff(&b).unwrap() < 1e-15);
        }
    }
}

#[test]
fn huge_step_reports_divergence() {
    let e = ensemble(2, 3, 1.0, 0.0);
    let mut sink = Vec::new();
    let s = run_training(
        &AlgorithmKind::LocalSgd,
        &hp(2, 3, 2, 0.5, 50.0, 500, 1),
        &e,
        &init(3),
        &TrainingOptions::default(),
        &mut sink,
    )
    .unwrap();
    assert!(matches!(s.status, RunStatus::Diverged { .. }));
    assert!(s.steps_completed < 500);
}

#[test]
fn mismatched_ensemble_is_rejected() {
    let e = ensemble(2, 3, 1.0, 0.0);
    let r = run_training(
        &AlgorithmKind::LocalSgd,
        &hp(3, 3, 2, 0.5, 0.1, 10, 1),
        &e,
        &init(3),
        &TrainingOptions::default(),
        &mut NullSink,
    );
    assert!(r.is_err());
}

#[test]
fn stride_thins_records() {
    let e = ensemble(2, 3, 1.0, 0.0);
    let opts = TrainingOptions {
        stride: 7,
        ..Default::default()
    };
    let r = records(&AlgorithmKind::LocalSgd, &hp(2, 3, 2, 0.5, 0.1, 50, 1), &e, &opts);
    assert_eq!(
        r.iter().map(|x| x.k).collect::<Vec<_>>(),
        (0..50).step_by(7).collect::<Vec<_>>()
    );
}

#[test]
fn momentum_buffer_reset_flag_changes_trajectory() {
    let e = ensemble(3, 3, 1.0, 0.0);
    let h = HyperParams {
        mu: 0.9,
        ..hp(3, 3, 2, 0.5, 0.01, 40, 1)
    };
    let kept = records(&AlgorithmKind::OverlapLocal, &h, &e, &TrainingOptions::default());
    let reset = records(
        &AlgorithmKind::OverlapLocal,
        &h,
        &e,
        &TrainingOptions {
            reset_momentum_on_sync: true,
            ..Default::default()
        },
    );
    assert_eq!(kept[..3], reset[..3]);
    assert_ne!(kept, reset);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn beta_zero_is_vanilla(seed in any::<u64>(), tau in 1usize..5, alpha in 0.0f64..=1.0) {
        let e = ensemble(3, 4, 1.0, 1.0);
        let h = HyperParams { beta: 0.0, ..hp(3, 4, tau, alpha, 0.05, 60, seed) };
        let a = trajectory_snapshots(&AlgorithmKind::OverlapLocal, &h, &e, &init(4)).unwrap();
        let b = trajectory_snapshots(&AlgorithmKind::OverlapLocalMomentum, &h, &e, &init(4)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn unit_period_local_is_sync(seed in any::<u64>(), m in 1usize..6) {
        let e = ensemble(m, 3, 1.0, 1.0);
        let h = hp(m, 3, 1, 0.5, 0.05, 40, seed);
        let a = trajectory_snapshots(&AlgorithmKind::LocalSgd, &h, &e, &init(3)).unwrap();
        let b = trajectory_snapshots(&AlgorithmKind::SyncSgd, &h, &e, &init(3)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn easgd_stays_finite_under_guard(seed in any::<u64>(), alpha in 0.0f64..=1.0, share in 0.0f64..=1.0) {
        let m = 4;
        let e = ensemble(m, 3, 1.0, 0.5);
        let kind = AlgorithmKind::Easgd { center_step: share / m as f64 };
        let s = run_training(&kind, &hp(m, 3, 2, alpha, 0.05, 40, seed), &e, &init(3), &TrainingOptions::default(), &mut NullSink).unwrap();
        prop_assert_eq!(s.status, RunStatus::Completed);
    }
}
