//! Self-checks of the structural identities, shared by the `verify` command
//! and the test suites.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::algorithms::{run_training, AlgorithmKind, ClusterState, TrainingOptions};
use crate::error::Result;
use crate::metrics::{MetricsRecord, StepView};
use crate::mixing::{
    build_p, fixed_vector, matrix_step, pagerank_decompose, spectral_deviation, MixingMatrix, StackedState,
};
use crate::objectives::{make_quadratic, Ensemble};
use crate::params::{HyperParams, LearningRate};
use crate::partition::{iid_partition, label_skew_partition};
use crate::rng::{split_rng, Purpose, RngStream};
use crate::simulator::{simulate_rounds, StepTrace, SyncStyle, TimingModel};
use crate::vector::{mean, ParamVector};

/// Shape of the equivalence and virtual-sequence runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LockstepConfig {
    pub m: usize,
    pub d: usize,
    pub tau: usize,
    pub alpha: f64,
    pub eta: f64,
    pub sigma: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for LockstepConfig {
    fn default() -> Self {
        Self {
            m: 4,
            d: 8,
            tau: 3,
            alpha: 0.6,
            eta: 0.05,
            sigma: 1.0,
            iterations: 200,
            seed: 17,
        }
    }
}

fn lockstep_problem(cfg: &LockstepConfig) -> Result<(Ensemble, ParamVector)> {
    let mut gen = RngStream::shared(cfg.seed, Purpose::Generator);
    let ens = make_quadratic(cfg.m, cfg.d, 1.0, 10.0, cfg.sigma, &mut gen)?;
    let init = ParamVector::new((0..cfg.d).map(|_| gen.sample::<f64, _>(StandardNormal)).collect())?;
    Ok((Ensemble::Quadratic(ens), init))
}

fn draw_noise(d: usize, sigma: f64, rng: &mut RngStream) -> Result<ParamVector> {
    let scale = sigma / (d as f64).sqrt();
    ParamVector::new((0..d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect())
}

/// Drives the per-worker rules and the matrix form side by side with shared
/// noise draws. `perturbation` is added to the pullback coefficient of the
/// per-worker path only (fault injection). Returns the largest entrywise gap
/// over all workers, the anchor and every step.
pub fn equivalence_max_diff(cfg: &LockstepConfig, perturbation: f64) -> Result<f64> {
    let (ens, init) = lockstep_problem(cfg)?;
    let root = RngStream::root(cfg.seed);
    let mut streams = (0..cfg.m)
        .map(|i| split_rng(&root, i, cfg.m, Purpose::Noise))
        .collect::<Result<Vec<_>>>()?;
    let p = build_p(cfg.m, cfg.alpha)?;
    let id = MixingMatrix::identity(cfg.m);

    let mut state = ClusterState::new(cfg.m, &init)?;
    let mut stacked = StackedState::from_cluster(&state)?;
    let mut worst = 0.0f64;
    for k in 0..cfg.iterations {
        let noise = streams
            .iter_mut()
            .map(|r| draw_noise(cfg.d, cfg.sigma, r))
            .collect::<Result<Vec<_>>>()?;
        let mut scalar_g = Vec::with_capacity(cfg.m);
        let mut matrix_g = Vec::with_capacity(cfg.m);
        for (i, n) in noise.iter().enumerate() {
            let mut g = ens.local_grad(i, &state.workers[i])?;
            g.axpy_assign(1.0, n)?;
            scalar_g.push(g);
            let mut g = ens.local_grad(i, &stacked.column(i)?)?;
            g.axpy_assign(1.0, n)?;
            matrix_g.push(g);
        }
        let sync = (k + 1) % cfg.tau == 0;
        for (i, g) in scalar_g.iter().enumerate() {
            state.local_step(i, g, cfg.eta, 0.0)?;
        }
        if sync {
            state.pullback(cfg.alpha + perturbation)?;
            state.anchor_average()?;
        }
        state.step += 1;
        let w = if sync { &p } else { &id };
        stacked = matrix_step(&stacked, &StackedState::from_gradients(&matrix_g)?, w, cfg.eta)?;
        worst = worst.max(stacked.max_abs_diff(&state)?);
    }
    Ok(worst)
}

/// Largest per-step relative error of `y_{k+1} - y_k = -(1-alpha) eta mean(g)`
/// along an overlap run.
pub fn virtual_sequence_max_rel_err(cfg: &LockstepConfig) -> Result<f64> {
    let (ens, init) = lockstep_problem(cfg)?;
    let root = RngStream::root(cfg.seed);
    let mut streams = (0..cfg.m)
        .map(|i| split_rng(&root, i, cfg.m, Purpose::Noise))
        .collect::<Result<Vec<_>>>()?;
    let kind = AlgorithmKind::OverlapLocal;
    let mut state = ClusterState::new(cfg.m, &init)?;
    let mut y = state.virtual_point(&kind, cfg.alpha)?;
    let mut worst = 0.0f64;
    for k in 0..cfg.iterations {
        let grads = (0..cfg.m)
            .map(|i| ens.stochastic_grad(i, &state.workers[i], &mut streams[i]))
            .collect::<Result<Vec<_>>>()?;
        for (i, g) in grads.iter().enumerate() {
            state.local_step(i, g, cfg.eta, 0.0)?;
        }
        if (k + 1) % cfg.tau == 0 {
            state.pullback(cfg.alpha)?;
            state.anchor_average()?;
        }
        state.step += 1;
        let next = state.virtual_point(&kind, cfg.alpha)?;
        let expected = mean(&grads)?.scaled(-(1.0 - cfg.alpha) * cfg.eta)?;
        let mut step = next.clone();
        step.axpy_assign(-1.0, &y)?;
        let scale = expected.as_slice().iter().fold(0.0f64, |a, v| a.max(v.abs()));
        worst = worst.max(step.max_abs_diff(&expected)? / scale.max(f64::MIN_POSITIVE));
        y = next;
    }
    Ok(worst)
}

/// Worst deviations over an `(m, alpha)` grid of mixing matrices.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct MixingGridReport {
    pub column_sum_err: f64,
    pub fixed_vector_err: f64,
    /// `max(zeta - (1 - alpha))`.
    pub zeta_excess: f64,
    pub reconstruction_err: f64,
}

pub fn mixing_grid(ms: &[usize], alphas: &[f64]) -> Result<MixingGridReport> {
    let mut r = MixingGridReport {
        zeta_excess: f64::NEG_INFINITY,
        ..Default::default()
    };
    for &m in ms {
        for &alpha in alphas {
            let p = build_p(m, alpha)?;
            let v = fixed_vector(m, alpha)?;
            r.column_sum_err = r.column_sum_err.max(p.column_sum_error());
            r.fixed_vector_err = r.fixed_vector_err.max((p.apply(&v) - &v).amax());
            r.zeta_excess = r.zeta_excess.max(spectral_deviation(&p, &v)? - (1.0 - alpha));
            let (a, b) = pagerank_decompose(&p, alpha)?;
            let n = m + 1;
            let rebuilt = &a * (1.0 - alpha) + &b * nalgebra::DVector::from_element(n, alpha).transpose();
            r.reconstruction_err = r.reconstruction_err.max((&rebuilt - p.entries()).amax());
        }
    }
    Ok(r)
}

/// Worker models and anchor at the start of every step of a run.
pub fn trajectory_snapshots(
    kind: &AlgorithmKind,
    hp: &HyperParams,
    ensemble: &Ensemble,
    init: &ParamVector,
) -> Result<Vec<(Vec<ParamVector>, ParamVector)>> {
    let mut snaps = Vec::with_capacity(hp.iterations);
    let mut sink = |_: &MetricsRecord, view: &StepView<'_>| {
        snaps.push((view.state.workers.clone(), view.state.anchor.clone()));
    };
    run_training(kind, hp, ensemble, init, &TrainingOptions::default(), &mut sink)?;
    Ok(snaps)
}

/// Outcome of the degenerate-parameter identities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DegenerateReport {
    pub momentum_beta_zero_matches_vanilla: bool,
    pub alpha_zero_matches_independent_sgd: bool,
    pub unit_period_local_matches_sync: bool,
    pub alpha_one_freezes_anchor: bool,
}

impl DegenerateReport {
    pub fn all(&self) -> bool {
        self.momentum_beta_zero_matches_vanilla
            && self.alpha_zero_matches_independent_sgd
            && self.unit_period_local_matches_sync
            && self.alpha_one_freezes_anchor
    }
}

pub fn degenerate_identities(iterations: usize, seed: u64) -> Result<DegenerateReport> {
    let cfg = LockstepConfig {
        iterations,
        seed,
        ..LockstepConfig::default()
    };
    let (ens, init) = lockstep_problem(&cfg)?;
    let hp = |tau: usize, alpha: f64, beta: f64| HyperParams {
        m: cfg.m,
        d: cfg.d,
        tau,
        alpha,
        eta: LearningRate::Fixed(cfg.eta),
        beta,
        mu: 0.0,
        iterations,
        seed,
    };

    let vanilla = trajectory_snapshots(&AlgorithmKind::OverlapLocal, &hp(cfg.tau, cfg.alpha, 0.0), &ens, &init)?;
    let momentum = trajectory_snapshots(
        &AlgorithmKind::OverlapLocalMomentum,
        &hp(cfg.tau, cfg.alpha, 0.0),
        &ens,
        &init,
    )?;

    let no_pull = trajectory_snapshots(&AlgorithmKind::OverlapLocal, &hp(cfg.tau, 0.0, 0.0), &ens, &init)?;
    let root = RngStream::root(seed);
    let mut alpha_zero = true;
    for i in 0..cfg.m {
        let mut rng = split_rng(&root, i, cfg.m, Purpose::Noise)?;
        let mut x = init.clone();
        for (workers, _) in &no_pull {
            alpha_zero &= workers[i] == x;
            let g = ens.stochastic_grad(i, &x, &mut rng)?;
            x.axpy_assign(-cfg.eta, &g)?;
        }
    }

    let local = trajectory_snapshots(&AlgorithmKind::LocalSgd, &hp(1, cfg.alpha, 0.0), &ens, &init)?;
    let sync = trajectory_snapshots(&AlgorithmKind::SyncSgd, &hp(1, cfg.alpha, 0.0), &ens, &init)?;

    let frozen = trajectory_snapshots(&AlgorithmKind::OverlapLocal, &hp(cfg.tau, 1.0, 0.0), &ens, &init)?;

    Ok(DegenerateReport {
        momentum_beta_zero_matches_vanilla: vanilla.len() == iterations && vanilla == momentum,
        alpha_zero_matches_independent_sgd: no_pull.len() == iterations && alpha_zero,
        unit_period_local_matches_sync: local.len() == iterations && local == sync,
        alpha_one_freezes_anchor: frozen.len() == iterations && frozen.iter().all(|(_, z)| z == &init),
    })
}

/// Simulator properties with constructed timings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimingReport {
    /// Sync-induced idle of an overlap run whose collective fits in a round.
    pub hidden_sync_idle: f64,
    /// Same, with the collective longer than a round.
    pub exposed_sync_idle: f64,
    pub wall_overlap: f64,
    pub wall_local: f64,
    pub wall_sync: f64,
    pub blocking_ratio: f64,
}

pub fn timing_properties(seed: u64) -> Result<TimingReport> {
    let (m, tau, rounds) = (8, 4, 50);
    let fixed = TimingModel::fixed(1.0, 3.5);
    let mut rng = RngStream::shared(seed, Purpose::Timing);
    let plan = StepTrace::sample(&fixed, rounds * tau, m, &mut rng).rounds(tau);
    let hidden = simulate_rounds(SyncStyle::Overlapped, fixed.comm_time(), &plan)?;
    let exposed = simulate_rounds(SyncStyle::Overlapped, 5.0, &plan)?;

    let noisy = TimingModel {
        compute_jitter: 0.3,
        straggler_prob: 0.1,
        straggler_factor: 3.0,
        ..TimingModel::fixed(1.0, 0.8)
    };
    let trace = StepTrace::sample(&noisy, rounds * tau, m, &mut rng);
    let comm = noisy.comm_time();
    let wall_overlap = simulate_rounds(SyncStyle::Overlapped, comm, &trace.rounds(tau))?.wall_clock;
    let wall_local = simulate_rounds(SyncStyle::Blocking, comm, &trace.rounds(tau))?.wall_clock;
    let wall_sync = simulate_rounds(SyncStyle::Blocking, comm, &trace.rounds(1))?.wall_clock;

    let two = TimingModel::fixed(1.0, 0.5);
    let plan = StepTrace::sample(&two, 20, 4, &mut rng).rounds(2);
    let blocking_ratio = simulate_rounds(SyncStyle::Blocking, two.comm_time(), &plan)?.comm_to_compute_ratio()?;

    Ok(TimingReport {
        hidden_sync_idle: hidden.sync_idle,
        exposed_sync_idle: exposed.sync_idle,
        wall_overlap,
        wall_local,
        wall_sync,
        blocking_ratio,
    })
}

/// Partition shape checks: balanced iid split, and exact dominant-class
/// counts under label skew.
pub fn partition_checks(seed: u64) -> Result<bool> {
    let mut rng = RngStream::shared(seed, Purpose::Partition);
    let plan = iid_partition(1003, 7, &mut rng)?;
    let sizes: Vec<usize> = plan.assignments.iter().map(Vec::len).collect();
    let mut all: Vec<usize> = plan.assignments.concat();
    all.sort_unstable();
    let iid_ok = sizes.iter().max().unwrap_or(&0) - sizes.iter().min().unwrap_or(&0) <= 1
        && all == (0..1003).collect::<Vec<_>>();

    let labels: Vec<usize> = (0..4000).map(|i| i % 10).collect();
    let (m, n_total, n_skew) = (16, 125, 80);
    let plan = label_skew_partition(&labels, m, n_total, n_skew, &mut rng)?;
    let skew_ok = plan
        .assignments
        .iter()
        .enumerate()
        .all(|(i, a)| a.len() == n_total && a.iter().filter(|&&s| labels[s] == i % 10).count() == n_skew);
    let mut all: Vec<usize> = plan.assignments.concat();
    all.sort_unstable();
    all.dedup();
    Ok(iid_ok && skew_ok && all.len() == m * n_total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Added to the pullback coefficient in the equivalence check.
    pub pullback_perturbation: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 17,
            pullback_perturbation: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &'static str, result: Result<(bool, String)>) -> CheckOutcome {
    match result {
        Ok((passed, detail)) => CheckOutcome { name, passed, detail },
        Err(e) => CheckOutcome {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

/// Runs every check; never stops at the first failure.
pub fn run_checks(opts: &VerifyOptions) -> Vec<CheckOutcome> {
    let alphas: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
    let seed = opts.seed;
    vec![
        outcome("matrix/scalar equivalence", {
            let cfg = LockstepConfig {
                seed,
                ..LockstepConfig::default()
            };
            equivalence_max_diff(&cfg, opts.pullback_perturbation).map(|d| (d <= 1e-10, format!("max diff {d:.3e}")))
        }),
        outcome("mixing grid", {
            mixing_grid(&(1..=16).collect::<Vec<_>>(), &alphas).map(|r| {
                (
                    r.column_sum_err <= 1e-15
                        && r.fixed_vector_err <= 1e-14
                        && r.zeta_excess <= 1e-12
                        && r.reconstruction_err <= 1e-15,
                    format!(
                        "colsum {:.1e}, Pv-v {:.1e}, zeta excess {:.1e}, rebuild {:.1e}",
                        r.column_sum_err, r.fixed_vector_err, r.zeta_excess, r.reconstruction_err
                    ),
                )
            })
        }),
        outcome("virtual sequence", {
            let cfg = LockstepConfig {
                iterations: 10_000,
                seed,
                ..LockstepConfig::default()
            };
            virtual_sequence_max_rel_err(&cfg).map(|e| (e <= 1e-12, format!("max rel err {e:.3e}")))
        }),
        outcome("degenerate parameters", {
            degenerate_identities(2_000, seed).map(|r| {
                (
                    r.all(),
                    format!(
                        "beta=0 {}, alpha=0 {}, tau=1 {}, alpha=1 {}",
                        r.momentum_beta_zero_matches_vanilla,
                        r.alpha_zero_matches_independent_sgd,
                        r.unit_period_local_matches_sync,
                        r.alpha_one_freezes_anchor
                    ),
                )
            })
        }),
        outcome(
            "partition",
            partition_checks(seed).map(|ok| (ok, "coverage, sizes, skew counts".to_string())),
        ),
        outcome("simulator", {
            timing_properties(seed).map(|r| {
                (
                    r.hidden_sync_idle == 0.0
                        && r.exposed_sync_idle > 0.0
                        && r.wall_overlap <= r.wall_local
                        && r.wall_local <= r.wall_sync
                        && r.blocking_ratio == 0.25,
                    format!(
                        "hidden idle {}, exposed idle {:.3}, wall {:.2} <= {:.2} <= {:.2}, ratio {}",
                        r.hidden_sync_idle,
                        r.exposed_sync_idle,
                        r.wall_overlap,
                        r.wall_local,
                        r.wall_sync,
                        r.blocking_ratio
                    ),
                )
            })
        }),
    ]
}
