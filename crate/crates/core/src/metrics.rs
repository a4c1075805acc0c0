//! Per-step run records.

use serde::{Deserialize, Serialize};

use crate::algorithms::ClusterState;
use crate::vector::ParamVector;

/// One row of a run's metrics stream, describing the state entering step `k`
/// and the simulated clock when step `k` completes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub k: usize,
    /// Cumulative simulated seconds at the end of step `k`.
    pub wall_time_s: f64,
    /// `F(y_k)`.
    pub objective: f64,
    /// `|grad F(y_k)|^2`.
    pub grad_norm_sq: f64,
    /// `(1/m) sum_i |x_i - y_k|^2`.
    pub consensus_dist: f64,
    /// Cumulative bytes sent per worker up to and including step `k`.
    pub comm_bytes: u64,
    /// Cumulative idle seconds per worker (mean over workers) up to step `k`.
    pub idle_s: f64,
}

/// Borrowed view of the cluster at step `k`, before the update is applied.
pub struct StepView<'a> {
    pub k: usize,
    pub y: &'a ParamVector,
    pub state: &'a ClusterState,
    /// The stochastic gradients drawn for this step, one per worker.
    pub grads: &'a [ParamVector],
}

pub trait MetricsSink {
    fn record(&mut self, record: &MetricsRecord, view: &StepView<'_>);
}

impl MetricsSink for Vec<MetricsRecord> {
    fn record(&mut self, record: &MetricsRecord, _view: &StepView<'_>) {
        self.push(record.clone());
    }
}

/// Discards everything.
pub struct NullSink;

impl MetricsSink for NullSink {
    fn record(&mut self, _record: &MetricsRecord, _view: &StepView<'_>) {}
}

/// Keeps records together with the virtual point `y_k` of every step.
#[derive(Debug, Default, Clone)]
pub struct TrajectoryRecorder {
    pub records: Vec<MetricsRecord>,
    pub virtual_points: Vec<ParamVector>,
}

impl MetricsSink for TrajectoryRecorder {
    fn record(&mut self, record: &MetricsRecord, view: &StepView<'_>) {
        self.records.push(record.clone());
        self.virtual_points.push(view.y.clone());
    }
}

impl<F> MetricsSink for F
where
    F: FnMut(&MetricsRecord, &StepView<'_>),
{
    fn record(&mut self, record: &MetricsRecord, view: &StepView<'_>) {
        self(record, view)
    }
}
