//! Update rules for every scheme and the training driver.
//!
//! All schemes share one per-step skeleton: every worker draws a stochastic
//! gradient at its own model and takes a local step; when `(k + 1) % tau == 0`
//! the scheme's synchronization action runs. For Overlap-Local-SGD that action
//! is the pullback `x <- (1 - alpha) x + alpha z` toward the anchor from the
//! previous round, followed by refreshing the anchor from the pulled-back
//! models. The anchor written at sync `a` is therefore first read at sync
//! `a + 1`, which is what lets its collective run in the background.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{MetricsRecord, MetricsSink, StepView};
use crate::objectives::Ensemble;
use crate::params::{HyperParams, Mode};
use crate::rng::{split_rng, Purpose, RngStream};
use crate::simulator::{sample_round_compute, simulate_rounds, RoundPlan, Schedule, SyncStyle, TimingModel};
use crate::vector::{mean, ParamVector};

/// Objective value above which a run is declared diverged.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AlgorithmKind {
    /// Gradient averaging every step; requires `tau = 1`.
    SyncSgd,
    /// Periodic model averaging.
    LocalSgd,
    /// Overlap-Local-SGD with a plain averaged anchor.
    OverlapLocal,
    /// Overlap-Local-SGD with a momentum anchor (factor `beta`).
    OverlapLocalMomentum,
    /// Stale-average-plus-own-delta baseline.
    #[serde(rename = "cocod")]
    CoCoD,
    /// Symmetric elastic step once per round; `center_step` moves the anchor.
    Easgd { center_step: f64 },
}

impl AlgorithmKind {
    pub fn name(&self) -> &'static str {
        match self {
            AlgorithmKind::SyncSgd => "sync_sgd",
            AlgorithmKind::LocalSgd => "local_sgd",
            AlgorithmKind::OverlapLocal => "overlap_local",
            AlgorithmKind::OverlapLocalMomentum => "overlap_local_momentum",
            AlgorithmKind::CoCoD => "cocod",
            AlgorithmKind::Easgd { .. } => "easgd",
        }
    }

    pub fn sync_style(&self) -> SyncStyle {
        match self {
            AlgorithmKind::OverlapLocal | AlgorithmKind::OverlapLocalMomentum | AlgorithmKind::CoCoD => {
                SyncStyle::Overlapped
            }
            AlgorithmKind::SyncSgd | AlgorithmKind::LocalSgd | AlgorithmKind::Easgd { .. } => SyncStyle::Blocking,
        }
    }

    /// Weights `(on the worker mean, on the anchor)` of the virtual point,
    /// i.e. the fixed vector of the scheme's mixing matrix.
    pub fn virtual_weights(&self, alpha: f64) -> (f64, f64) {
        match self {
            AlgorithmKind::OverlapLocal | AlgorithmKind::OverlapLocalMomentum => (1.0 - alpha, alpha),
            AlgorithmKind::Easgd { center_step } => {
                let total = alpha + center_step;
                if total > 0.0 {
                    (center_step / total, alpha / total)
                } else {
                    (1.0, 0.0)
                }
            }
            AlgorithmKind::SyncSgd | AlgorithmKind::LocalSgd | AlgorithmKind::CoCoD => (1.0, 0.0),
        }
    }

    pub fn validate(&self, hp: &HyperParams) -> Result<()> {
        match *self {
            AlgorithmKind::SyncSgd if hp.tau != 1 => {
                Err(Error::invalid("tau", "fully synchronous SGD requires tau = 1"))
            }
            AlgorithmKind::Easgd { center_step } => check_center_step(center_step, hp.m),
            _ => Ok(()),
        }
    }
}

fn check_center_step(center_step: f64, m: usize) -> Result<()> {
    if !(center_step >= 0.0 && center_step.is_finite()) {
        return Err(Error::invalid("center_step", format!("{center_step} must be >= 0")));
    }
    if center_step * m as f64 > 1.0 {
        return Err(Error::invalid(
            "center_step",
            format!("center_step * m = {} exceeds 1", center_step * m as f64),
        ));
    }
    Ok(())
}

/// Every model copy held by the cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterState {
    pub workers: Vec<ParamVector>,
    pub anchor: ParamVector,
    pub anchor_momentum: ParamVector,
    pub local_momenta: Vec<ParamVector>,
    /// CoCoD: each worker's model at the start of the current round.
    pub round_start: Vec<ParamVector>,
    /// CoCoD: average of the previous round's end models.
    pub stale_average: ParamVector,
    pub step: usize,
}

impl ClusterState {
    /// All workers and the anchor start at `init`; momenta are zero.
    pub fn new(m: usize, init: &ParamVector) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("m", "need at least one worker"));
        }
        init.ensure_finite()?;
        let d = init.dim();
        Ok(Self {
            workers: vec![init.clone(); m],
            anchor: init.clone(),
            anchor_momentum: ParamVector::zeros(d),
            local_momenta: vec![ParamVector::zeros(d); m],
            round_start: vec![init.clone(); m],
            stale_average: init.clone(),
            step: 0,
        })
    }

    pub fn m(&self) -> usize {
        self.workers.len()
    }

    pub fn dim(&self) -> usize {
        self.anchor.dim()
    }

    fn check_worker(&self, worker: usize) -> Result<()> {
        if worker >= self.m() {
            return Err(Error::WorkerOutOfRange { worker, m: self.m() });
        }
        Ok(())
    }

    /// `x_i <- x_i - eta g`. With `mu > 0` the Nesterov form
    /// `buf <- mu buf + g; x_i <- x_i - eta (g + mu buf)` is used.
    pub fn local_step(&mut self, worker: usize, g: &ParamVector, eta: f64, mu: f64) -> Result<()> {
        self.check_worker(worker)?;
        if mu == 0.0 {
            return self.workers[worker].axpy_assign(-eta, g);
        }
        let buf = &mut self.local_momenta[worker];
        buf.combine_assign(mu, 1.0, g)?;
        let mut dir = g.clone();
        dir.axpy_assign(mu, buf)?;
        self.workers[worker].axpy_assign(-eta, &dir)
    }

    /// `x_i <- (1 - alpha) x_i + alpha z` for every worker, with the current
    /// (previous-round) anchor.
    pub fn pullback(&mut self, alpha: f64) -> Result<()> {
        for x in &mut self.workers {
            x.combine_assign(1.0 - alpha, alpha, &self.anchor)?;
        }
        Ok(())
    }

    /// `z <- (1/m) sum_i x_i`.
    pub fn anchor_average(&mut self) -> Result<()> {
        self.anchor = mean(&self.workers)?;
        Ok(())
    }

    /// `v <- beta v + (mean(x) - z); z <- z + v`.
    ///
    /// At `beta = 0` the anchor is set to the average directly, which is the
    /// same value as `z + (mean(x) - z)` without the rounding of the detour.
    pub fn anchor_momentum_update(&mut self, beta: f64) -> Result<()> {
        let avg = mean(&self.workers)?;
        let mut delta = avg.clone();
        delta.axpy_assign(-1.0, &self.anchor)?;
        self.anchor_momentum.combine_assign(beta, 1.0, &delta)?;
        if beta == 0.0 {
            self.anchor = avg;
        } else {
            self.anchor.axpy_assign(1.0, &self.anchor_momentum)?;
        }
        Ok(())
    }

    /// Fully synchronous step from a common iterate: every worker's step is
    /// averaged, so workers and anchor all land on `x - eta mean(g)`.
    pub fn sync_sgd_step(&mut self, eta: f64, mu: f64, grads: &[ParamVector]) -> Result<()> {
        if grads.len() != self.m() {
            return Err(Error::invalid("grads", "need one gradient per worker"));
        }
        if self.workers.iter().any(|x| x != &self.workers[0]) {
            return Err(Error::Consistency(
                "synchronous SGD entered with unequal worker models".into(),
            ));
        }
        for (i, g) in grads.iter().enumerate() {
            self.local_step(i, g, eta, mu)?;
        }
        self.average_workers()?;
        if mu > 0.0 {
            let buf = mean(&self.local_momenta)?;
            self.local_momenta.iter_mut().for_each(|b| *b = buf.clone());
        }
        Ok(())
    }

    /// Sets every worker, and the anchor, to the worker average.
    fn average_workers(&mut self) -> Result<()> {
        let avg = mean(&self.workers)?;
        self.workers.iter_mut().for_each(|x| *x = avg.clone());
        self.anchor = avg;
        Ok(())
    }

    /// End of a CoCoD round: each worker restarts from the stale average plus
    /// its own accumulated update, and the new starts are averaged in flight
    /// for use at the end of the next round.
    fn cocod_sync(&mut self) -> Result<()> {
        for i in 0..self.m() {
            let mut start = self.stale_average.clone();
            start.axpy_assign(1.0, &self.workers[i])?;
            start.axpy_assign(-1.0, &self.round_start[i])?;
            self.workers[i] = start;
        }
        self.round_start = self.workers.clone();
        self.stale_average = mean(&self.workers)?;
        self.anchor = self.stale_average.clone();
        Ok(())
    }

    /// Elastic step: `x_i <- x_i - alpha (x_i - z)` and
    /// `z <- z + center_step * mean_i(x_i - z)`, both from pre-step values.
    fn easgd_sync(&mut self, alpha: f64, center_step: f64) -> Result<()> {
        let mut pull = mean(&self.workers)?;
        pull.axpy_assign(-1.0, &self.anchor)?;
        self.pullback(alpha)?;
        self.anchor.axpy_assign(center_step, &pull)
    }

    /// Virtual point `y = w_mean * mean(x) + w_anchor * z`.
    pub fn virtual_point(&self, kind: &AlgorithmKind, alpha: f64) -> Result<ParamVector> {
        let (w_mean, w_anchor) = kind.virtual_weights(alpha);
        let avg = mean(&self.workers)?;
        if w_anchor == 0.0 {
            return Ok(avg);
        }
        let mut y = avg;
        y.combine_assign(w_mean, w_anchor, &self.anchor)?;
        Ok(y)
    }

    /// `(1/m) sum_i |x_i - y|^2`.
    pub fn consensus_distance(&self, y: &ParamVector) -> Result<f64> {
        let mut total = 0.0;
        for x in &self.workers {
            total += x.dist_sq(y)?;
        }
        Ok(total / self.m() as f64)
    }

    /// Applies step `k = self.step` of `kind` with the given per-worker
    /// gradients, including the synchronization action on sync steps.
    pub fn advance(&mut self, kind: &AlgorithmKind, hp: &StepParams, grads: &[ParamVector]) -> Result<()> {
        if grads.len() != self.m() {
            return Err(Error::invalid("grads", "need one gradient per worker"));
        }
        let sync = (self.step + 1).is_multiple_of(hp.tau);
        if let AlgorithmKind::SyncSgd = kind {
            self.sync_sgd_step(hp.eta, hp.mu, grads)?;
            self.step += 1;
            return Ok(());
        }
        for (i, g) in grads.iter().enumerate() {
            self.local_step(i, g, hp.eta, hp.mu)?;
        }
        if sync {
            match *kind {
                AlgorithmKind::SyncSgd => unreachable!(),
                AlgorithmKind::LocalSgd => self.average_workers()?,
                AlgorithmKind::OverlapLocal => {
                    self.pullback(hp.alpha)?;
                    self.anchor_average()?;
                }
                AlgorithmKind::OverlapLocalMomentum => {
                    self.pullback(hp.alpha)?;
                    self.anchor_momentum_update(hp.beta)?;
                }
                AlgorithmKind::CoCoD => self.cocod_sync()?,
                AlgorithmKind::Easgd { center_step } => self.easgd_sync(hp.alpha, center_step)?,
            }
            if hp.reset_momentum_on_sync {
                let d = self.dim();
                self.local_momenta.iter_mut().for_each(|b| *b = ParamVector::zeros(d));
            }
        }
        self.step += 1;
        Ok(())
    }
}

/// Resolved per-step constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepParams {
    pub tau: usize,
    pub eta: f64,
    pub alpha: f64,
    pub beta: f64,
    pub mu: f64,
    pub reset_momentum_on_sync: bool,
}

/// Runs `tau` steps of `kind` starting at the current step, pulling gradients
/// from `grad`.
fn run_round<G>(state: &mut ClusterState, kind: &AlgorithmKind, hp: &StepParams, grad: &mut G) -> Result<()>
where
    G: FnMut(usize, &ParamVector) -> Result<ParamVector>,
{
    for _ in 0..hp.tau {
        let grads = state
            .workers
            .iter()
            .enumerate()
            .map(|(i, x)| grad(i, x))
            .collect::<Result<Vec<_>>>()?;
        state.advance(kind, hp, &grads)?;
    }
    Ok(())
}

/// `tau` local steps per worker, then every worker takes the average.
pub fn local_sgd_round<G>(state: &mut ClusterState, eta: f64, tau: usize, mut grad: G) -> Result<()>
where
    G: FnMut(usize, &ParamVector) -> Result<ParamVector>,
{
    let hp = StepParams {
        tau,
        eta,
        alpha: 0.0,
        beta: 0.0,
        mu: 0.0,
        reset_momentum_on_sync: false,
    };
    align_to_round(state, tau)?;
    run_round(state, &AlgorithmKind::LocalSgd, &hp, &mut grad)
}

/// One CoCoD round: `tau` local steps, then restart from the stale average
/// plus the worker's own accumulated update.
pub fn cocod_round<G>(state: &mut ClusterState, eta: f64, tau: usize, mut grad: G) -> Result<()>
where
    G: FnMut(usize, &ParamVector) -> Result<ParamVector>,
{
    let hp = StepParams {
        tau,
        eta,
        alpha: 0.0,
        beta: 0.0,
        mu: 0.0,
        reset_momentum_on_sync: false,
    };
    align_to_round(state, tau)?;
    run_round(state, &AlgorithmKind::CoCoD, &hp, &mut grad)
}

/// One EASGD-style round: `tau` local steps, then one symmetric elastic step.
pub fn easgd_round<G>(
    state: &mut ClusterState,
    eta: f64,
    tau: usize,
    alpha: f64,
    center_step: f64,
    mut grad: G,
) -> Result<()>
where
    G: FnMut(usize, &ParamVector) -> Result<ParamVector>,
{
    check_center_step(center_step, state.m())?;
    let hp = StepParams {
        tau,
        eta,
        alpha,
        beta: 0.0,
        mu: 0.0,
        reset_momentum_on_sync: false,
    };
    align_to_round(state, tau)?;
    run_round(state, &AlgorithmKind::Easgd { center_step }, &hp, &mut grad)
}

fn align_to_round(state: &ClusterState, tau: usize) -> Result<()> {
    if tau == 0 {
        return Err(Error::invalid("tau", "must be at least 1"));
    }
    if !state.step.is_multiple_of(tau) {
        return Err(Error::Consistency(format!(
            "step {} is not at a round boundary for tau = {tau}",
            state.step
        )));
    }
    Ok(())
}

/// Driver options beyond the hyperparameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingOptions {
    /// Emit every `stride`-th step to the sink; 0 is treated as 1.
    pub stride: usize,
    /// Simulated cluster timing; without it wall-clock columns stay at zero.
    pub timing: Option<TimingModel>,
    pub reset_momentum_on_sync: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Diverged { step: usize, reason: String },
}

/// End-of-run summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub algorithm: String,
    #[serde(flatten)]
    pub status: RunStatus,
    pub steps_completed: usize,
    pub eta: f64,
    /// `(1/K) sum_k |grad F(y_k)|^2` over completed steps.
    pub avg_grad_norm_sq: f64,
    pub final_objective: f64,
    pub final_grad_norm_sq: f64,
    pub best_objective: f64,
    pub wall_clock_s: f64,
    pub comm_ratio: Option<f64>,
    pub total_idle_s: f64,
    pub final_point: ParamVector,
}

/// Per-step timestamps derived from a schedule.
struct StepClock {
    wall: Vec<f64>,
    idle: Vec<f64>,
    bytes: Vec<u64>,
}

fn step_clock(schedule: &Schedule, plan: &[RoundPlan], payload: u64) -> StepClock {
    let mut wall = Vec::new();
    let mut idle = Vec::new();
    let mut bytes = Vec::new();
    let mut idle_acc = 0.0;
    let mut bytes_acc = 0u64;
    for (rt, rp) in schedule.rounds.iter().zip(plan) {
        let m = rt.start.len() as f64;
        for j in 0..rp.steps {
            let last = j + 1 == rp.steps;
            let t = if last {
                rt.release.iter().copied().fold(0.0, f64::max)
            } else {
                let frac = (j + 1) as f64 / rp.steps as f64;
                rt.start
                    .iter()
                    .zip(&rt.compute_finish)
                    .map(|(s, f)| s + frac * (f - s))
                    .fold(0.0, f64::max)
            };
            if last {
                idle_acc += rt.sync_idle.iter().chain(&rt.straggler_idle).sum::<f64>() / m;
                if rp.syncs {
                    bytes_acc += payload;
                }
            }
            wall.push(t);
            idle.push(idle_acc);
            bytes.push(bytes_acc);
        }
    }
    StepClock { wall, idle, bytes }
}

fn build_clock(kind: &AlgorithmKind, hp: &HyperParams, timing: &TimingModel) -> Result<(StepClock, Schedule)> {
    timing.validate()?;
    let mut rng = RngStream::shared(hp.seed, Purpose::Timing);
    let k = hp.iterations;
    let plan: Vec<RoundPlan> = (0..k)
        .step_by(hp.tau)
        .map(|start| {
            let steps = (k - start).min(hp.tau);
            RoundPlan {
                compute: sample_round_compute(timing, steps, hp.m, &mut rng),
                steps,
                syncs: steps == hp.tau,
            }
        })
        .collect();
    let schedule = simulate_rounds(kind.sync_style(), timing.comm_time(), &plan)?;
    Ok((step_clock(&schedule, &plan, timing.payload), schedule))
}

/// Runs `hp.iterations` steps of `kind` on `ensemble` from the common point
/// `init`.
///
/// Worker `i` draws its gradient noise from stream `(hp.seed, i, Noise)` (or
/// `Batch` for logistic ensembles), so two runs with equal seeds see identical
/// draws regardless of the scheme. Non-finite state or an objective above
/// [`DIVERGENCE_THRESHOLD`] ends the run with a `Diverged` status rather than
/// an error.
pub fn run_training(
    kind: &AlgorithmKind,
    hp: &HyperParams,
    ensemble: &Ensemble,
    init: &ParamVector,
    options: &TrainingOptions,
    sink: &mut dyn MetricsSink,
) -> Result<TrajectorySummary> {
    hp.validate(Mode::Verification)?;
    kind.validate(hp)?;
    if ensemble.m() != hp.m || ensemble.dim() != hp.d || init.dim() != hp.d {
        return Err(Error::invalid(
            "ensemble",
            format!(
                "ensemble is {}x{} and init has dim {}, run expects m = {}, d = {}",
                ensemble.m(),
                ensemble.dim(),
                init.dim(),
                hp.m,
                hp.d
            ),
        ));
    }
    let smoothness = ensemble.constants()?;
    let eta = hp.eta.resolve(
        smoothness.smoothness_exact.then_some(smoothness.smoothness),
        hp.m,
        hp.iterations,
    )?;
    let step = StepParams {
        tau: hp.tau,
        eta,
        alpha: hp.alpha,
        beta: hp.beta,
        mu: hp.mu,
        reset_momentum_on_sync: options.reset_momentum_on_sync,
    };
    let clock = options.timing.as_ref().map(|t| build_clock(kind, hp, t)).transpose()?;

    let purpose = match ensemble {
        Ensemble::Quadratic(_) => Purpose::Noise,
        Ensemble::Logistic(_) => Purpose::Batch,
    };
    let root = RngStream::root(hp.seed);
    let mut streams = (0..hp.m)
        .map(|i| split_rng(&root, i, hp.m, purpose))
        .collect::<Result<Vec<_>>>()?;

    let stride = options.stride.max(1);
    let mut state = ClusterState::new(hp.m, init)?;
    let mut grad_sum = 0.0;
    let mut best = f64::INFINITY;
    let mut status = RunStatus::Completed;
    let mut last = None;

    for k in 0..hp.iterations {
        let outcome = (|| -> Result<(f64, f64)> {
            let y = state.virtual_point(kind, hp.alpha)?;
            let objective = ensemble.objective_value(&y)?;
            let grad_norm_sq = ensemble.global_grad(&y)?.norm_sq();
            if !(objective.abs() <= DIVERGENCE_THRESHOLD) || !grad_norm_sq.is_finite() {
                return Err(Error::Consistency(format!(
                    "objective {objective:e} exceeds the divergence threshold"
                )));
            }
            let grads = state
                .workers
                .iter()
                .zip(streams.iter_mut())
                .enumerate()
                .map(|(i, (x, rng))| ensemble.stochastic_grad(i, x, rng))
                .collect::<Result<Vec<_>>>()?;
            if k % stride == 0 {
                let (wall_time_s, idle_s, comm_bytes) = match &clock {
                    Some((c, _)) => (c.wall[k], c.idle[k], c.bytes[k]),
                    None => (0.0, 0.0, 0),
                };
                let record = MetricsRecord {
                    k,
                    wall_time_s,
                    objective,
                    grad_norm_sq,
                    consensus_dist: state.consensus_distance(&y)?,
                    comm_bytes,
                    idle_s,
                };
                sink.record(
                    &record,
                    &StepView {
                        k,
                        y: &y,
                        state: &state,
                        grads: &grads,
                    },
                );
            }
            state.advance(kind, &step, &grads)?;
            Ok((objective, grad_norm_sq))
        })();
        match outcome {
            Ok((objective, grad_norm_sq)) => {
                grad_sum += grad_norm_sq;
                best = best.min(objective);
                last = Some((objective, grad_norm_sq));
            }
            Err(e @ (Error::NonFinite { .. } | Error::Consistency(_))) => {
                status = RunStatus::Diverged {
                    step: k,
                    reason: e.to_string(),
                };
                break;
            }
            Err(e) => return Err(e),
        }
    }

    let steps_completed = state.step;
    let (final_objective, final_grad_norm_sq, final_point) = match status {
        RunStatus::Completed => {
            let y = state.virtual_point(kind, hp.alpha)?;
            (ensemble.objective_value(&y)?, ensemble.global_grad(&y)?.norm_sq(), y)
        }
        RunStatus::Diverged { .. } => {
            let (o, g) = last.unwrap_or((f64::NAN, f64::NAN));
            (
                o,
                g,
                state.virtual_point(kind, hp.alpha).unwrap_or_else(|_| init.clone()),
            )
        }
    };
    let (wall_clock_s, comm_ratio, total_idle_s) = match &clock {
        Some((_, schedule)) => (
            schedule.wall_clock,
            schedule.comm_to_compute_ratio().ok(),
            schedule.total_idle,
        ),
        None => (0.0, None, 0.0),
    };
    Ok(TrajectorySummary {
        algorithm: kind.name().to_string(),
        status,
        steps_completed,
        eta,
        avg_grad_norm_sq: if steps_completed > 0 {
            grad_sum / steps_completed as f64
        } else {
            f64::NAN
        },
        final_objective,
        final_grad_norm_sq,
        best_objective: best,
        wall_clock_s,
        comm_ratio,
        total_idle_s,
        final_point,
    })
}
