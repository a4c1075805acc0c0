//! Simulation and analysis of periodic-averaging SGD with an overlapped,
//! one-round-stale anchor model.
//!
//! `m` workers each take local SGD steps; every `tau` steps they are pulled
//! toward an anchor `z` and the anchor is refreshed from the pulled-back
//! models. The refresh runs in the background during the next round, so the
//! pullback always reads the anchor from one round earlier.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algorithms;
pub mod analysis;
pub mod error;
pub mod metrics;
pub mod mixing;
pub mod objectives;
pub mod params;
pub mod partition;
pub mod rng;
pub mod simulator;
pub mod vector;
pub mod verify;

pub use algorithms::{run_training, AlgorithmKind, ClusterState, RunStatus, TrainingOptions, TrajectorySummary};
pub use error::{Error, Result};
pub use metrics::{MetricsRecord, MetricsSink, NullSink, StepView, TrajectoryRecorder};
pub use objectives::{Ensemble, LogisticEnsemble, QuadraticEnsemble};
pub use params::{HyperParams, LearningRate, Mode};
pub use rng::{split_rng, Purpose, RngStream};
pub use simulator::{Schedule, SyncStyle, TimingModel};
pub use vector::{axpy, mean, ParamVector};
