//! JSON run configuration and its defaults.

use std::fs;
use std::path::{Path, PathBuf};

use overlap_core::objectives::{make_classification, make_quadratic, LogisticEnsemble};
use overlap_core::partition::{iid_partition, label_skew_partition};
use overlap_core::{
    AlgorithmKind, Ensemble, Error, HyperParams, LearningRate, Mode, ParamVector, Purpose, RngStream, TimingModel,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Environment variable holding a comma-separated seed list that replaces the
/// configured seeds.
pub const SEED_ENV: &str = "OVERLAP_LAB_SEED";

/// Learning rate used when `eta` is omitted; scaled by 1.5 at `tau = 1`.
pub const BASE_LR: f64 = 0.1;
pub const DEFAULT_BETA: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmName {
    SyncSgd,
    LocalSgd,
    OverlapLocal,
    OverlapLocalMomentum,
    #[serde(rename = "cocod")]
    CoCoD,
    Easgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PartitionSpec {
    Iid,
    LabelSkew { n_total: usize, n_skew: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveSpec {
    Quadratic {
        spread: f64,
        #[serde(default = "default_condition")]
        condition: f64,
        sigma: f64,
        /// Generator seed; kept apart from run seeds so every seed of a run
        /// sees the same problem.
        #[serde(default)]
        seed: u64,
    },
    Logistic {
        classes: usize,
        per_class: usize,
        #[serde(default = "default_separation")]
        separation: f64,
        lambda: f64,
        batch: usize,
        partition: PartitionSpec,
        #[serde(default)]
        seed: u64,
    },
}

fn default_condition() -> f64 {
    10.0
}

fn default_separation() -> f64 {
    1.0
}

fn default_tau() -> usize {
    1
}

/// Lists to take the Cartesian product over in a sweep.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxes {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub algorithm: Option<Vec<AlgorithmName>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<f64>>,
    #[serde(default, rename = "K", skip_serializing_if = "Option::is_none")]
    pub iterations: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
}

/// A configuration file as written by the user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub algorithm: AlgorithmName,
    /// Anchor step of the elastic baseline; defaults to `alpha / m`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center_step: Option<f64>,
    pub m: usize,
    pub d: usize,
    #[serde(default = "default_tau")]
    pub tau: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<LearningRate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(rename = "K")]
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    pub objective: ObjectiveSpec,
    /// Common starting point; zeros when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<TimingModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(default)]
    pub reset_momentum: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepAxes>,
}

/// A configuration with every default filled in and every field checked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolvedConfig {
    pub name: String,
    pub algorithm: AlgorithmName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center_step: Option<f64>,
    pub m: usize,
    pub d: usize,
    pub tau: usize,
    pub alpha: f64,
    pub eta: LearningRate,
    pub beta: f64,
    pub mu: f64,
    #[serde(rename = "K")]
    pub iterations: usize,
    pub seeds: Vec<u64>,
    pub objective: ObjectiveSpec,
    pub init: Vec<f64>,
    pub timing: TimingModel,
    pub stride: usize,
    pub reset_momentum: bool,
}

impl AlgorithmName {
    pub fn as_str(self) -> &'static str {
        match self {
            AlgorithmName::SyncSgd => "sync_sgd",
            AlgorithmName::LocalSgd => "local_sgd",
            AlgorithmName::OverlapLocal => "overlap_local",
            AlgorithmName::OverlapLocalMomentum => "overlap_local_momentum",
            AlgorithmName::CoCoD => "cocod",
            AlgorithmName::Easgd => "easgd",
        }
    }
}

/// Reads and parses a configuration file. Syntax errors carry line and
/// column; unknown keys are rejected.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Seeds from [`SEED_ENV`], if set.
pub fn seeds_from_env() -> Result<Option<Vec<u64>>> {
    match std::env::var(SEED_ENV) {
        Ok(raw) => parse_seed_list(&raw).map(Some),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(CliError::Refused(format!("{SEED_ENV}: {e}"))),
    }
}

pub fn parse_seed_list(raw: &str) -> Result<Vec<u64>> {
    let seeds = raw
        .split(',')
        .map(|s| s.trim().parse::<u64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| CliError::Refused(format!("{SEED_ENV}={raw:?}: {e}")))?;
    if seeds.is_empty() {
        return Err(CliError::Refused(format!("{SEED_ENV} is empty")));
    }
    Ok(seeds)
}

fn field_error(path: &Path, field: &str, reason: impl std::fmt::Display) -> CliError {
    CliError::Config {
        path: path.to_path_buf(),
        message: format!("field `{field}`: {reason}"),
    }
}

/// Turns a core validation error into a diagnostic naming the field.
fn core_error(path: &Path, e: Error) -> CliError {
    match e {
        Error::InvalidParameter { name, reason } => field_error(path, name, reason),
        other => CliError::Config {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    }
}

impl RunConfig {
    /// Fills defaults and validates. `path` only labels diagnostics.
    pub fn resolve(&self, path: &Path, env_seeds: Option<&[u64]>) -> Result<ResolvedConfig> {
        let tau = self.tau;
        let alpha = self.alpha.unwrap_or(if tau >= 2 { 0.6 } else { 0.5 });
        let eta = self
            .eta
            .unwrap_or(LearningRate::Fixed(if tau == 1 { BASE_LR * 1.5 } else { BASE_LR }));
        let center_step = match self.algorithm {
            AlgorithmName::Easgd => Some(self.center_step.unwrap_or(alpha / self.m.max(1) as f64)),
            _ if self.center_step.is_some() => {
                return Err(field_error(path, "center_step", "only applies to easgd"));
            }
            _ => None,
        };
        let seeds = match env_seeds {
            Some(s) => s.to_vec(),
            None => self.seeds.clone().unwrap_or_else(|| vec![0]),
        };
        if seeds.is_empty() {
            return Err(field_error(path, "seeds", "must not be empty"));
        }
        let name = self.name.clone().unwrap_or_else(|| self.algorithm.as_str().to_string());
        if name.is_empty() || name.contains(|c: char| c == ',' || c == '"' || c == '/' || c.is_control()) {
            return Err(field_error(
                path,
                "name",
                "must be non-empty without commas, quotes, slashes or control characters",
            ));
        }
        let init = self.init.clone().unwrap_or_else(|| vec![0.0; self.d]);
        if init.len() != self.d {
            return Err(field_error(
                path,
                "init",
                format!("has {} entries, expected d = {}", init.len(), self.d),
            ));
        }
        if init.iter().any(|v| !v.is_finite()) {
            return Err(field_error(path, "init", "entries must be finite"));
        }
        let timing = self.timing.clone().unwrap_or_else(|| TimingModel {
            payload: 8 * self.d as u64,
            ..TimingModel::fixed(0.01, 0.005)
        });
        timing.validate().map_err(|e| core_error(path, e))?;
        let stride = self.stride.unwrap_or(1);
        if stride == 0 {
            return Err(field_error(path, "stride", "must be at least 1"));
        }

        let resolved = ResolvedConfig {
            name,
            algorithm: self.algorithm,
            center_step,
            m: self.m,
            d: self.d,
            tau,
            alpha,
            eta,
            beta: self.beta.unwrap_or(DEFAULT_BETA),
            mu: self.mu.unwrap_or(0.0),
            iterations: self.iterations,
            seeds,
            objective: self.objective.clone(),
            init,
            timing,
            stride,
            reset_momentum: self.reset_momentum,
        };
        let hp = resolved.hyper(0);
        hp.validate(Mode::Verification).map_err(|e| core_error(path, e))?;
        resolved.kind().validate(&hp).map_err(|e| core_error(path, e))?;
        resolved.build_ensemble().map_err(|e| match e {
            CliError::Core(e) => core_error(path, e),
            other => other,
        })?;
        Ok(resolved)
    }

    /// One configuration per point of the sweep grid, in a fixed order:
    /// algorithm, then tau, alpha and K.
    pub fn sweep_points(&self, path: &Path) -> Result<Vec<RunConfig>> {
        let axes = self.sweep.clone().unwrap_or_default();
        fn axis<T: Clone>(path: &Path, name: &str, values: Option<Vec<T>>, base: T) -> Result<Vec<T>> {
            match values {
                Some(v) if v.is_empty() => Err(field_error(path, &format!("sweep.{name}"), "axis is empty")),
                Some(v) => Ok(v),
                None => Ok(vec![base]),
            }
        }
        let algorithms = axis(path, "algorithm", axes.algorithm, self.algorithm)?;
        let taus = axis(path, "tau", axes.tau, self.tau)?;
        let alphas = axis(
            path,
            "alpha",
            axes.alpha.map(|v| v.into_iter().map(Some).collect()),
            self.alpha,
        )?;
        let ks = axis(path, "K", axes.iterations, self.iterations)?;
        if let Some(seeds) = &axes.seeds {
            if seeds.is_empty() {
                return Err(field_error(path, "sweep.seeds", "axis is empty"));
            }
        }
        let mut points = Vec::new();
        for &algorithm in &algorithms {
            for &tau in &taus {
                for &alpha in &alphas {
                    for &k in &ks {
                        let mut name = format!("{}-tau{tau}", algorithm.as_str());
                        if let Some(a) = alpha {
                            name.push_str(&format!("-alpha{a}"));
                        }
                        name.push_str(&format!("-K{k}"));
                        points.push(RunConfig {
                            name: Some(match &self.name {
                                Some(base) => format!("{base}-{name}"),
                                None => name,
                            }),
                            algorithm,
                            center_step: if algorithm == AlgorithmName::Easgd {
                                self.center_step
                            } else {
                                None
                            },
                            tau,
                            alpha,
                            iterations: k,
                            seeds: axes.seeds.clone().or_else(|| self.seeds.clone()),
                            sweep: None,
                            ..self.clone()
                        });
                    }
                }
            }
        }
        Ok(points)
    }
}

impl ResolvedConfig {
    pub fn kind(&self) -> AlgorithmKind {
        match self.algorithm {
            AlgorithmName::SyncSgd => AlgorithmKind::SyncSgd,
            AlgorithmName::LocalSgd => AlgorithmKind::LocalSgd,
            AlgorithmName::OverlapLocal => AlgorithmKind::OverlapLocal,
            AlgorithmName::OverlapLocalMomentum => AlgorithmKind::OverlapLocalMomentum,
            AlgorithmName::CoCoD => AlgorithmKind::CoCoD,
            AlgorithmName::Easgd => AlgorithmKind::Easgd {
                center_step: self.center_step.unwrap_or(0.0),
            },
        }
    }

    pub fn hyper(&self, seed: u64) -> HyperParams {
        HyperParams {
            m: self.m,
            d: self.d,
            tau: self.tau,
            alpha: self.alpha,
            eta: self.eta,
            beta: self.beta,
            mu: self.mu,
            iterations: self.iterations,
            seed,
        }
    }

    pub fn init_point(&self) -> Result<ParamVector> {
        Ok(ParamVector::new(self.init.clone())?)
    }

    /// Builds the objective. Deterministic in the objective's own seed.
    pub fn build_ensemble(&self) -> Result<Ensemble> {
        match &self.objective {
            ObjectiveSpec::Quadratic {
                spread,
                condition,
                sigma,
                seed,
            } => {
                let mut rng = RngStream::shared(*seed, Purpose::Generator);
                Ok(make_quadratic(self.m, self.d, *spread, *condition, *sigma, &mut rng)?.into())
            }
            ObjectiveSpec::Logistic {
                classes,
                per_class,
                separation,
                lambda,
                batch,
                partition,
                seed,
            } => {
                let mut rng = RngStream::shared(*seed, Purpose::Generator);
                let pool = make_classification(*classes, *per_class, self.d, *separation, &mut rng)?;
                let mut prng = RngStream::shared(*seed, Purpose::Partition);
                let plan = match partition {
                    PartitionSpec::Iid => iid_partition(pool.samples.len(), self.m, &mut prng)?,
                    PartitionSpec::LabelSkew { n_total, n_skew } => {
                        label_skew_partition(&pool.classes, self.m, *n_total, *n_skew, &mut prng)?
                    }
                };
                Ok(LogisticEnsemble::from_partition(&pool, &plan, *lambda, *batch)?.into())
            }
        }
    }
}
