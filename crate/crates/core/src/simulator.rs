//! Logical-time model of compute and communication.
//!
//! Blocking schemes (fully synchronous SGD, Local SGD, the EASGD baseline)
//! run a round, wait for the slowest worker, then pay the collective on the
//! critical path before anyone continues. Overlapped schemes (Overlap-Local-SGD
//! and CoCoD-SGD) launch the collective of round `a` in the background and keep
//! computing; a worker only blocks at the end of round `a + 1` if that
//! collective has not finished yet.
//!
//! Collectives are serialized: the collective of round `a` starts once every
//! worker has handed in its round-`a` model and the previous collective has
//! finished. Idle time is split into a straggler part (waiting for other
//! workers to finish computing) and a sync part (waiting on the collective
//! itself).
//!
//! Nothing here touches model state: schedules depend only on the timing
//! model and its random stream.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::algorithms::AlgorithmKind;
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Lower truncation point of the relative jitter draw.
const MIN_JITTER: f64 = -0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingModel {
    /// Seconds per local step.
    pub compute_mean: f64,
    /// Relative standard deviation of a worker-round's compute time.
    #[serde(default)]
    pub compute_jitter: f64,
    #[serde(default)]
    pub straggler_prob: f64,
    #[serde(default = "one")]
    pub straggler_factor: f64,
    /// Seconds per collective.
    #[serde(default)]
    pub latency: f64,
    /// Bytes per second.
    #[serde(default = "default_bandwidth")]
    pub bandwidth: f64,
    /// Bytes per synchronization.
    #[serde(default)]
    pub payload: u64,
}

fn one() -> f64 {
    1.0
}

fn default_bandwidth() -> f64 {
    1e9
}

impl TimingModel {
    /// Deterministic compute, no stragglers, collective of `comm_time` seconds.
    pub fn fixed(compute_mean: f64, comm_time: f64) -> Self {
        Self {
            compute_mean,
            compute_jitter: 0.0,
            straggler_prob: 0.0,
            straggler_factor: 1.0,
            latency: comm_time,
            bandwidth: default_bandwidth(),
            payload: 0,
        }
    }

    pub fn comm_time(&self) -> f64 {
        if self.payload == 0 {
            self.latency
        } else {
            self.latency + self.payload as f64 / self.bandwidth
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("compute_mean", self.compute_mean),
            ("compute_jitter", self.compute_jitter),
            ("latency", self.latency),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(
                    "timing",
                    format!("{name} = {v} must be finite and >= 0"),
                ));
            }
        }
        if !(0.0..=1.0).contains(&self.straggler_prob) {
            return Err(Error::invalid("timing", "straggler_prob must lie in [0, 1]"));
        }
        if !(self.straggler_factor >= 1.0 && self.straggler_factor.is_finite()) {
            return Err(Error::invalid("timing", "straggler_factor must be >= 1"));
        }
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(Error::invalid("timing", "bandwidth must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyncStyle {
    Blocking,
    Overlapped,
}

/// Per-worker seconds for one round of `tau` local steps.
pub fn sample_round_compute(timing: &TimingModel, tau: usize, m: usize, rng: &mut RngStream) -> Vec<f64> {
    (0..m)
        .map(|_| {
            let mut t = tau as f64 * timing.compute_mean;
            if timing.compute_jitter > 0.0 {
                let z: f64 = rng.sample(StandardNormal);
                t *= 1.0 + (timing.compute_jitter * z).max(MIN_JITTER);
            }
            if timing.straggler_prob > 0.0 && rng.random_bool(timing.straggler_prob) {
                t *= timing.straggler_factor;
            }
            t
        })
        .collect()
}

/// Compute demand of one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundPlan {
    /// Seconds per worker.
    pub compute: Vec<f64>,
    /// Local steps in the round.
    pub steps: usize,
    /// Whether the round ends with a synchronization.
    pub syncs: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTiming {
    /// When each worker started computing.
    pub start: Vec<f64>,
    /// When each worker finished computing.
    pub compute_finish: Vec<f64>,
    /// When each worker resumed after its end-of-round synchronization work.
    pub release: Vec<f64>,
    pub sync_start: Option<f64>,
    pub sync_finish: Option<f64>,
    pub straggler_idle: Vec<f64>,
    pub sync_idle: Vec<f64>,
    /// Wall clock once every worker has been released.
    pub wall_clock: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub rounds: Vec<RoundTiming>,
    pub wall_clock: f64,
    /// Idle seconds summed over workers.
    pub total_idle: f64,
    pub sync_idle: f64,
    pub straggler_idle: f64,
    /// Compute seconds on the critical path.
    pub critical_compute: f64,
    /// Communication seconds on the critical path: blocking collectives, or
    /// time the critical worker spent waiting on a late anchor.
    pub critical_comm: f64,
}

impl Schedule {
    pub fn comm_to_compute_ratio(&self) -> Result<f64> {
        comm_compute_ratio(self)
    }
}

/// Critical-path communication seconds over critical-path compute seconds.
pub fn comm_compute_ratio(schedule: &Schedule) -> Result<f64> {
    if !(schedule.critical_compute > 0.0) {
        return Err(Error::invalid("schedule", "critical-path compute time is zero"));
    }
    Ok(schedule.critical_comm / schedule.critical_compute)
}

/// Samples `rounds` rounds of `tau` steps and schedules them.
pub fn simulate(
    kind: &AlgorithmKind,
    timing: &TimingModel,
    rounds: usize,
    tau: usize,
    m: usize,
    rng: &mut RngStream,
) -> Result<Schedule> {
    if rounds == 0 {
        return Err(Error::invalid("rounds", "must be at least 1"));
    }
    timing.validate()?;
    let plan: Vec<RoundPlan> = (0..rounds)
        .map(|_| RoundPlan {
            compute: sample_round_compute(timing, tau, m, rng),
            steps: tau,
            syncs: true,
        })
        .collect();
    simulate_rounds(kind.sync_style(), timing.comm_time(), &plan)
}

/// Per-worker, per-step compute times, for pairing schedules across schemes
/// with different sync periods.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTrace {
    /// `times[i][k]`: seconds worker `i` spends on step `k`.
    pub times: Vec<Vec<f64>>,
}

impl StepTrace {
    pub fn sample(timing: &TimingModel, steps: usize, m: usize, rng: &mut RngStream) -> Self {
        let mut times = vec![Vec::with_capacity(steps); m];
        for _ in 0..steps {
            for (i, t) in sample_round_compute(timing, 1, m, rng).into_iter().enumerate() {
                times[i].push(t);
            }
        }
        Self { times }
    }

    /// Groups consecutive steps into rounds of `tau`; a trailing partial round
    /// does not synchronize.
    pub fn rounds(&self, tau: usize) -> Vec<RoundPlan> {
        let steps = self.times.first().map_or(0, Vec::len);
        (0..steps)
            .step_by(tau.max(1))
            .map(|start| {
                let end = (start + tau).min(steps);
                RoundPlan {
                    compute: self.times.iter().map(|w| w[start..end].iter().sum()).collect(),
                    steps: end - start,
                    syncs: end - start == tau,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum EventKind {
    ComputeDone { worker: usize, round: usize },
    SyncDone { round: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl Eq for Event {}

impl Ord for Event {
    // Min-heap on (time, seq).
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct EventQueue {
    heap: BinaryHeap<Event>,
    seq: u64,
}

impl EventQueue {
    fn new() -> Self {
        Self {
            heap: BinaryHeap::new(),
            seq: 0,
        }
    }

    fn push(&mut self, time: f64, kind: EventKind) {
        self.heap.push(Event {
            time,
            seq: self.seq,
            kind,
        });
        self.seq += 1;
    }

    fn pop(&mut self) -> Option<Event> {
        self.heap.pop()
    }
}

/// Schedules an explicit sequence of rounds.
pub fn simulate_rounds(style: SyncStyle, comm_time: f64, plan: &[RoundPlan]) -> Result<Schedule> {
    let m = plan.first().map_or(0, |r| r.compute.len());
    if m == 0 || plan.iter().any(|r| r.compute.len() != m) {
        return Err(Error::invalid("plan", "every round needs one compute time per worker"));
    }
    let rounds = match style {
        SyncStyle::Blocking => run_blocking(comm_time, plan),
        SyncStyle::Overlapped => run_overlapped(comm_time, plan),
    };
    Ok(summarize(style, comm_time, plan, rounds))
}

fn empty_round(m: usize) -> RoundTiming {
    RoundTiming {
        start: vec![0.0; m],
        compute_finish: vec![0.0; m],
        release: vec![0.0; m],
        sync_start: None,
        sync_finish: None,
        straggler_idle: vec![0.0; m],
        sync_idle: vec![0.0; m],
        wall_clock: 0.0,
    }
}

fn run_blocking(comm_time: f64, plan: &[RoundPlan]) -> Vec<RoundTiming> {
    let m = plan[0].compute.len();
    let mut queue = EventQueue::new();
    let mut out: Vec<RoundTiming> = Vec::with_capacity(plan.len());
    let mut now = 0.0;
    for (r, round) in plan.iter().enumerate() {
        let mut rt = empty_round(m);
        for (i, &c) in round.compute.iter().enumerate() {
            rt.start[i] = now;
            queue.push(now + c, EventKind::ComputeDone { worker: i, round: r });
        }
        let mut pending = m;
        let mut barrier = now;
        while pending > 0 {
            let ev = queue.pop().expect("compute events pending");
            if let EventKind::ComputeDone { worker, .. } = ev.kind {
                rt.compute_finish[worker] = ev.time;
                barrier = ev.time;
                pending -= 1;
            }
        }
        let resume = if round.syncs {
            rt.sync_start = Some(barrier);
            queue.push(barrier + comm_time, EventKind::SyncDone { round: r });
            let ev = queue.pop().expect("sync event pending");
            rt.sync_finish = Some(ev.time);
            ev.time
        } else {
            barrier
        };
        for i in 0..m {
            rt.straggler_idle[i] = barrier - rt.compute_finish[i];
            rt.sync_idle[i] = resume - barrier;
            rt.release[i] = resume;
        }
        rt.wall_clock = resume;
        now = resume;
        out.push(rt);
    }
    out
}

struct OverlapSim<'a> {
    plan: &'a [RoundPlan],
    out: Vec<RoundTiming>,
    queue: EventQueue,
    /// Time at which the anchor produced by round r's collective is available.
    anchor_ready: Vec<Option<f64>>,
    /// `(worker, round)` pairs blocked on the anchor of round r.
    waiting: Vec<Vec<(usize, usize)>>,
    handed_in: Vec<usize>,
    last_handin: Vec<f64>,
    comm_free_at: f64,
    next_sync: usize,
}

impl OverlapSim<'_> {
    /// The round-`r` model of worker `i` is final at `t`: hand it to the
    /// collective and start the worker's next round.
    fn release(&mut self, i: usize, r: usize, t: f64) {
        self.out[r].release[i] = t;
        if self.plan[r].syncs {
            self.handed_in[r] += 1;
            self.last_handin[r] = self.last_handin[r].max(t);
        }
        if let Some(next) = self.plan.get(r + 1) {
            self.out[r + 1].start[i] = t;
            self.queue.push(
                t + next.compute[i],
                EventKind::ComputeDone {
                    worker: i,
                    round: r + 1,
                },
            );
        }
    }

    fn on_compute_done(&mut self, worker: usize, round: usize, t: f64) {
        self.out[round].compute_finish[worker] = t;
        // The pullback at the end of a synchronizing round reads the anchor of
        // the previous synchronizing round.
        let needed = if self.plan[round].syncs {
            (0..round).rev().find(|&p| self.plan[p].syncs)
        } else {
            None
        };
        match needed {
            Some(p) if self.anchor_ready[p].is_none() => self.waiting[p].push((worker, round)),
            _ => self.release(worker, round, t),
        }
    }

    fn on_sync_done(&mut self, round: usize, t: f64) {
        self.anchor_ready[round] = Some(t);
        self.out[round].sync_finish = Some(t);
        for (worker, r) in std::mem::take(&mut self.waiting[round]) {
            let finish = self.out[r].compute_finish[worker];
            let wait = t - finish;
            // Waiting for the slowest hand-in is straggler time; the remainder
            // is the collective itself.
            let straggle = (self.last_handin[round] - finish).clamp(0.0, wait);
            self.out[r].straggler_idle[worker] += straggle;
            self.out[r].sync_idle[worker] += wait - straggle;
            self.release(worker, r, t);
        }
    }

    /// Starts collectives in round order once all models are in and the
    /// channel is free.
    fn launch_ready_syncs(&mut self, comm_time: f64) {
        let m = self.plan[0].compute.len();
        while self.next_sync < self.plan.len() {
            let r = self.next_sync;
            if self.plan[r].syncs {
                if self.handed_in[r] < m {
                    break;
                }
                let start = self.last_handin[r].max(self.comm_free_at);
                self.out[r].sync_start = Some(start);
                self.comm_free_at = start + comm_time;
                self.queue.push(self.comm_free_at, EventKind::SyncDone { round: r });
            }
            self.next_sync += 1;
        }
    }
}

fn run_overlapped(comm_time: f64, plan: &[RoundPlan]) -> Vec<RoundTiming> {
    let m = plan[0].compute.len();
    let n = plan.len();
    let mut sim = OverlapSim {
        plan,
        out: (0..n).map(|_| empty_round(m)).collect(),
        queue: EventQueue::new(),
        anchor_ready: vec![None; n],
        waiting: vec![Vec::new(); n],
        handed_in: vec![0; n],
        last_handin: vec![0.0; n],
        comm_free_at: 0.0,
        next_sync: 0,
    };
    for (i, &c) in plan[0].compute.iter().enumerate() {
        sim.queue.push(c, EventKind::ComputeDone { worker: i, round: 0 });
    }
    while let Some(ev) = sim.queue.pop() {
        match ev.kind {
            EventKind::ComputeDone { worker, round } => sim.on_compute_done(worker, round, ev.time),
            EventKind::SyncDone { round } => sim.on_sync_done(round, ev.time),
        }
        sim.launch_ready_syncs(comm_time);
    }
    let mut out = sim.out;
    for rt in &mut out {
        rt.wall_clock = rt.release.iter().copied().fold(0.0, f64::max);
    }
    out
}

fn summarize(style: SyncStyle, comm_time: f64, plan: &[RoundPlan], rounds: Vec<RoundTiming>) -> Schedule {
    let m = plan[0].compute.len();
    let sum = |f: fn(&RoundTiming) -> &Vec<f64>| rounds.iter().flat_map(f).sum::<f64>();
    let sync_idle = sum(|r| &r.sync_idle);
    let straggler_idle = sum(|r| &r.straggler_idle);
    let wall_clock = rounds.iter().map(|r| r.wall_clock).fold(0.0, f64::max);
    let (critical_compute, critical_comm) = match style {
        SyncStyle::Blocking => {
            let compute = plan.iter().map(|r| r.compute.iter().copied().fold(0.0, f64::max)).sum();
            let comm = plan.iter().filter(|r| r.syncs).count() as f64 * comm_time;
            (compute, comm)
        }
        SyncStyle::Overlapped => {
            let last = rounds.last().expect("at least one round");
            let critical = (0..m)
                .max_by(|&a, &b| last.release[a].total_cmp(&last.release[b]).then(b.cmp(&a)))
                .expect("at least one worker");
            let compute = plan.iter().map(|r| r.compute[critical]).sum();
            let comm = rounds.iter().map(|r| r.sync_idle[critical]).sum();
            (compute, comm)
        }
    };
    Schedule {
        rounds,
        wall_clock,
        total_idle: sync_idle + straggler_idle,
        sync_idle,
        straggler_idle,
        critical_compute,
        critical_comm,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Purpose;

    fn plan(rows: &[&[f64]], steps: usize) -> Vec<RoundPlan> {
        rows.iter()
            .map(|c| RoundPlan {
                compute: c.to_vec(),
                steps,
                syncs: true,
            })
            .collect()
    }

    #[test]
    fn blocking_closed_form() {
        // Sync SGD: K steps of c seconds plus t_c per step.
        let k = 7;
        let p = plan(&vec![&[0.3, 0.3, 0.3][..]; k], 1);
        let s = simulate_rounds(SyncStyle::Blocking, 0.05, &p).unwrap();
        assert!((s.wall_clock - k as f64 * 0.35).abs() < 1e-12);
        assert!(s.straggler_idle == 0.0);
    }

    #[test]
    fn blocking_ratio_quarter() {
        let p = plan(&[&[2.0, 2.0][..]; 5], 2);
        let s = simulate_rounds(SyncStyle::Blocking, 0.5, &p).unwrap();
        assert_eq!(comm_compute_ratio(&s).unwrap(), 0.25);
    }

    #[test]
    fn zero_comm_blocking_is_sum_of_round_maxima() {
        let p = plan(&[&[1.0, 3.0], &[3.0, 1.0]], 1);
        let s = simulate_rounds(SyncStyle::Blocking, 0.0, &p).unwrap();
        assert_eq!(s.wall_clock, 6.0);
        assert_eq!(s.sync_idle, 0.0);
        assert_eq!(s.straggler_idle, 4.0);
    }

    #[test]
    fn overlap_lets_workers_run_ahead() {
        let p = plan(&[&[1.0, 3.0], &[3.0, 1.0]], 1);
        let s = simulate_rounds(SyncStyle::Overlapped, 0.0, &p).unwrap();
        assert_eq!(s.wall_clock, 4.0);
        assert_eq!(s.total_idle, 0.0);
    }

    #[test]
    fn overlap_hidden_comm_has_no_idle() {
        let p = plan(&[&[2.0, 2.0, 2.0][..]; 6], 2);
        let s = simulate_rounds(SyncStyle::Overlapped, 2.0, &p).unwrap();
        assert_eq!(s.sync_idle, 0.0);
        assert_eq!(s.wall_clock, 12.0);
        assert_eq!(comm_compute_ratio(&s).unwrap(), 0.0);
    }

    #[test]
    fn overlap_exposed_comm_blocks() {
        let p = plan(&[&[2.0, 2.0][..]; 3], 2);
        let s = simulate_rounds(SyncStyle::Overlapped, 3.0, &p).unwrap();
        // Round 1 ends at 4 but anchor 0 arrives at 5.
        assert_eq!(s.rounds[1].sync_idle, vec![1.0, 1.0]);
        assert!(s.sync_idle > 0.0);
    }

    #[test]
    fn trailing_partial_round_does_not_sync() {
        let trace = StepTrace {
            times: vec![vec![1.0; 5], vec![1.0; 5]],
        };
        let rounds = trace.rounds(2);
        assert_eq!(rounds.len(), 3);
        assert!(!rounds[2].syncs);
        let s = simulate_rounds(SyncStyle::Blocking, 0.5, &rounds).unwrap();
        assert_eq!(s.wall_clock, 6.0);
    }

    #[test]
    fn round_compute_special_cases() {
        let mut rng = RngStream::shared(1, Purpose::Timing);
        let t = TimingModel::fixed(0.5, 0.0);
        assert_eq!(sample_round_compute(&t, 4, 3, &mut rng), vec![2.0; 3]);
        let t = TimingModel {
            straggler_prob: 1.0,
            straggler_factor: 3.0,
            ..TimingModel::fixed(0.5, 0.0)
        };
        assert_eq!(sample_round_compute(&t, 4, 3, &mut rng), vec![6.0; 3]);
    }

    #[test]
    fn jitter_keeps_times_positive() {
        let mut rng = RngStream::shared(1, Purpose::Timing);
        let t = TimingModel {
            compute_jitter: 5.0,
            ..TimingModel::fixed(1.0, 0.0)
        };
        for _ in 0..1000 {
            assert!(sample_round_compute(&t, 1, 4, &mut rng)
                .iter()
                .all(|&c| c >= 0.1 - 1e-15));
        }
    }

    #[test]
    fn comm_time_formula() {
        let t = TimingModel {
            latency: 0.01,
            bandwidth: 1e9,
            payload: 4_000_000,
            ..TimingModel::fixed(1.0, 0.0)
        };
        assert!((t.comm_time() - 0.014).abs() < 1e-15);
    }

    #[test]
    fn invalid_timing_rejected() {
        let t = TimingModel {
            straggler_factor: 0.5,
            ..TimingModel::fixed(1.0, 0.0)
        };
        assert!(t.validate().is_err());
    }
}
