//! The four subcommands.

use std::path::{Path, PathBuf};

use overlap_core::analysis::{min_iterations, BoundInputs, BoundReport};
use overlap_core::objectives::FInf;
use overlap_core::verify::{run_checks, CheckOutcome, VerifyOptions};
use overlap_core::{
    run_training, Ensemble, LearningRate, MetricsRecord, Mode, NullSink, RunStatus, TrainingOptions, TrajectorySummary,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{load_config, seeds_from_env, AlgorithmName, ObjectiveSpec, ResolvedConfig};
use crate::error::{CliError, Result};
use crate::output::{write_csv_with, write_json, write_metrics_csv, write_plot_csv};

/// Command-line overrides shared by the commands.
#[derive(Debug, Clone, Default)]
pub struct CommandOptions {
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub stride: Option<usize>,
    pub override_kmin: bool,
    /// Seeds replacing the configured list; `None` reads the environment.
    pub seeds: Option<Vec<u64>>,
}

impl CommandOptions {
    fn seeds(&self) -> Result<Option<Vec<u64>>> {
        match &self.seeds {
            Some(s) => Ok(Some(s.clone())),
            None => seeds_from_env(),
        }
    }

    fn out_dir(&self, configured: Option<&Path>) -> PathBuf {
        self.out
            .clone()
            .or_else(|| configured.map(Path::to_path_buf))
            .unwrap_or_else(|| PathBuf::from("out"))
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(j) = self.jobs {
            if j == 0 {
                return Err(CliError::Refused("--jobs must be at least 1".into()));
            }
            b = b.num_threads(j);
        }
        b.build().map_err(|e| CliError::Refused(format!("thread pool: {e}")))
    }
}

/// One seed of one configuration.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub summary: TrajectorySummary,
    pub records: Vec<MetricsRecord>,
}

/// Runs `cfg` for one seed, keeping every `stride`-th record.
pub fn execute(cfg: &ResolvedConfig, ensemble: &Ensemble, seed: u64, keep_records: bool) -> Result<SeedRun> {
    let options = TrainingOptions {
        stride: cfg.stride,
        timing: Some(cfg.timing.clone()),
        reset_momentum_on_sync: cfg.reset_momentum,
    };
    let mut records = Vec::new();
    let summary = if keep_records {
        run_training(
            &cfg.kind(),
            &cfg.hyper(seed),
            ensemble,
            &cfg.init_point()?,
            &options,
            &mut records,
        )?
    } else {
        run_training(
            &cfg.kind(),
            &cfg.hyper(seed),
            ensemble,
            &cfg.init_point()?,
            &options,
            &mut NullSink,
        )?
    };
    Ok(SeedRun { seed, summary, records })
}

fn load_resolved(path: &Path, opts: &CommandOptions) -> Result<(crate::config::RunConfig, ResolvedConfig)> {
    let raw = load_config(path)?;
    let mut resolved = raw.resolve(path, opts.seeds()?.as_deref())?;
    if let Some(s) = opts.stride {
        if s == 0 {
            return Err(CliError::Refused("--stride must be at least 1".into()));
        }
        resolved.stride = s;
    }
    Ok((raw, resolved))
}

fn metrics_file(run_id: &str, seed: u64) -> String {
    format!("{run_id}-seed{seed}.csv")
}

#[derive(Debug, Clone, Serialize)]
pub struct RunEntry {
    pub run_id: String,
    pub seed: u64,
    pub metrics_csv: String,
    pub summary: TrajectorySummary,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub config: ResolvedConfig,
    pub runs: Vec<RunEntry>,
}

/// Executes every seed of a configuration and writes one metrics CSV per
/// seed, `summary.json` and `plot.csv` into the output directory.
pub fn cmd_run(config_path: &Path, opts: &CommandOptions) -> Result<RunSummary> {
    let (raw, cfg) = load_resolved(config_path, opts)?;
    let out = opts.out_dir(raw.out.as_deref());
    let ensemble = cfg.build_ensemble()?;
    let pool = opts.pool()?;
    let runs: Vec<SeedRun> = pool.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| execute(&cfg, &ensemble, seed, true))
            .collect::<Result<Vec<_>>>()
    })?;

    let algorithm = cfg.algorithm.as_str();
    let mut entries = Vec::with_capacity(runs.len());
    let mut plot = Vec::new();
    for run in &runs {
        let file = metrics_file(&cfg.name, run.seed);
        write_csv_with(&out.join(&file), |w| {
            write_metrics_csv(w, &cfg.name, algorithm, run.seed, &run.records)
        })?;
        let series = format!("{}/seed{}", cfg.name, run.seed);
        plot.extend(run.records.iter().map(|r| (r.k as f64, r.grad_norm_sq, series.clone())));
        entries.push(RunEntry {
            run_id: cfg.name.clone(),
            seed: run.seed,
            metrics_csv: file,
            summary: run.summary.clone(),
        });
    }
    write_csv_with(&out.join("plot.csv"), |w| write_plot_csv(w, &plot))?;
    let summary = RunSummary {
        config: cfg,
        runs: entries,
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

/// One row of a sweep summary.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub run_id: String,
    pub algorithm: AlgorithmName,
    pub tau: usize,
    pub alpha: f64,
    #[serde(rename = "K")]
    pub iterations: usize,
    pub seed: u64,
    pub status: String,
    pub final_objective: f64,
    pub avg_grad_norm_sq: f64,
    pub wall_clock_s: f64,
    pub comm_ratio: Option<f64>,
    pub idle_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    pub points: Vec<ResolvedConfig>,
    pub rows: Vec<SweepRow>,
}

const SWEEP_HEADER: &str =
    "run_id,algorithm,tau,alpha,K,seed,status,final_objective,avg_grad_norm_sq,wall_clock_s,comm_ratio,idle_s";

/// Runs the Cartesian product of the sweep axes concurrently. Writes
/// `sweep_summary.csv` (one row per point and seed), `sweep_summary.json`,
/// per-run metrics under `runs/`, and `sweep_plot.csv` with the seed-mean
/// average gradient norm against `tau` per grid point.
pub fn cmd_sweep(config_path: &Path, opts: &CommandOptions) -> Result<SweepSummary> {
    let raw = load_config(config_path)?;
    let env_seeds = opts.seeds()?;
    let points = raw
        .sweep_points(config_path)?
        .iter()
        .map(|p| {
            let mut r = p.resolve(config_path, env_seeds.as_deref())?;
            if let Some(s) = opts.stride {
                if s == 0 {
                    return Err(CliError::Refused("--stride must be at least 1".into()));
                }
                r.stride = s;
            }
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    let out = opts.out_dir(raw.out.as_deref());
    let jobs: Vec<(usize, u64)> = points
        .iter()
        .enumerate()
        .flat_map(|(i, p)| p.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let ensembles = points
        .iter()
        .map(ResolvedConfig::build_ensemble)
        .collect::<Result<Vec<_>>>()?;

    let pool = opts.pool()?;
    let runs: Vec<SeedRun> = pool.install(|| {
        jobs.par_iter()
            .map(|&(i, seed)| {
                let run = execute(&points[i], &ensembles[i], seed, true)?;
                let p = &points[i];
                write_csv_with(&out.join("runs").join(metrics_file(&p.name, seed)), |w| {
                    write_metrics_csv(w, &p.name, p.algorithm.as_str(), seed, &run.records)
                })?;
                Ok(SeedRun {
                    records: Vec::new(),
                    ..run
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let rows: Vec<SweepRow> = jobs
        .iter()
        .zip(&runs)
        .map(|(&(i, seed), run)| {
            let p = &points[i];
            let s = &run.summary;
            SweepRow {
                run_id: p.name.clone(),
                algorithm: p.algorithm,
                tau: p.tau,
                alpha: p.alpha,
                iterations: p.iterations,
                seed,
                status: match &s.status {
                    RunStatus::Completed => "completed".into(),
                    RunStatus::Diverged { .. } => "diverged".into(),
                },
                final_objective: s.final_objective,
                avg_grad_norm_sq: s.avg_grad_norm_sq,
                wall_clock_s: s.wall_clock_s,
                comm_ratio: s.comm_ratio,
                idle_s: s.total_idle_s,
            }
        })
        .collect();

    write_csv_with(&out.join("sweep_summary.csv"), |w| {
        use crate::output::fmt_f64;
        use std::io::Write;
        writeln!(w, "{SWEEP_HEADER}")?;
        for r in &rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.run_id,
                r.algorithm.as_str(),
                r.tau,
                fmt_f64(r.alpha),
                r.iterations,
                r.seed,
                r.status,
                fmt_f64(r.final_objective),
                fmt_f64(r.avg_grad_norm_sq),
                fmt_f64(r.wall_clock_s),
                r.comm_ratio.map(fmt_f64).unwrap_or_default(),
                fmt_f64(r.idle_s),
            )?;
        }
        Ok(())
    })?;

    let mut plot = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let vals: Vec<f64> = jobs
            .iter()
            .zip(&rows)
            .filter(|((j, _), _)| *j == i)
            .map(|(_, r)| r.avg_grad_norm_sq)
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        // One series per grid line along tau.
        let tag = format!("-tau{}", p.tau);
        let series = match p.name.rfind(&tag) {
            Some(at) => format!("{}{}", &p.name[..at], &p.name[at + tag.len()..]),
            None => p.name.clone(),
        };
        plot.push((p.tau as f64, mean, series));
    }
    write_csv_with(&out.join("sweep_plot.csv"), |w| write_plot_csv(w, &plot))?;

    let summary = SweepSummary { points, rows };
    write_json(&out.join("sweep_summary.json"), &summary)?;
    Ok(summary)
}

/// Runs the self-check suite.
pub fn cmd_verify(opts: &VerifyOptions) -> Vec<CheckOutcome> {
    run_checks(opts)
}

pub fn format_checks(outcomes: &[CheckOutcome]) -> String {
    let width = outcomes.iter().map(|c| c.name.len()).max().unwrap_or(0);
    let mut s = String::new();
    for c in outcomes {
        s.push_str(&format!(
            "{:<width$}  {}  {}\n",
            c.name,
            if c.passed { "PASS" } else { "FAIL" },
            c.detail
        ));
    }
    s
}

/// Checks a resolved configuration against the bound's preconditions.
pub fn bound_preconditions(cfg: &ResolvedConfig, override_kmin: bool) -> Result<()> {
    if !matches!(cfg.objective, ObjectiveSpec::Quadratic { .. }) {
        return Err(CliError::Refused(
            "bound checks need a quadratic objective: logistic ensembles have no certified uniform heterogeneity bound"
                .into(),
        ));
    }
    if cfg.algorithm != AlgorithmName::OverlapLocal {
        return Err(CliError::Refused(format!(
            "the bound is stated for overlap_local, not {}",
            cfg.algorithm.as_str()
        )));
    }
    if cfg.eta != LearningRate::THEOREM {
        return Err(CliError::Refused("bound checks need \"eta\": \"theorem\"".into()));
    }
    if cfg.mu != 0.0 {
        return Err(CliError::Refused("bound checks need mu = 0 (plain local steps)".into()));
    }
    cfg.hyper(0).validate(Mode::BoundCheck)?;
    let k_min = min_iterations(cfg.m, cfg.tau, cfg.alpha)?;
    if cfg.iterations < k_min && !override_kmin {
        return Err(CliError::Refused(format!(
            "K = {} is below min_iterations = {k_min}; pass --override-kmin to run anyway",
            cfg.iterations
        )));
    }
    Ok(())
}

/// Runs every seed and compares the seed-mean of `(1/K) sum_k |grad F(y_k)|^2`
/// with the bound's right-hand side.
pub fn bound_check(cfg: &ResolvedConfig, override_kmin: bool, pool: &rayon::ThreadPool) -> Result<BoundReport> {
    bound_preconditions(cfg, override_kmin)?;
    let ensemble = cfg.build_ensemble()?;
    let constants = ensemble.constants()?;
    let f_inf = match constants.f_inf {
        FInf::Exact(v) => v,
        FInf::Estimate(_) => return Err(CliError::Refused("lower bound is not exact".into())),
    };
    let init = cfg.init_point()?;
    let inputs = BoundInputs {
        smoothness: constants.smoothness,
        gap: ensemble.objective_value(&init)? - f_inf,
        sigma2: constants.sigma2.unwrap_or(0.0),
        kappa2: constants.kappa2.unwrap_or(0.0),
        m: cfg.m,
        tau: cfg.tau,
        alpha: cfg.alpha,
        iterations: cfg.iterations,
    };
    let runs: Vec<SeedRun> = pool.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| execute(cfg, &ensemble, seed, false))
            .collect::<Result<Vec<_>>>()
    })?;
    let lhs = runs
        .iter()
        .map(|r| match r.summary.status {
            RunStatus::Completed => r.summary.avg_grad_norm_sq,
            RunStatus::Diverged { .. } => f64::INFINITY,
        })
        .collect();
    let eta = runs.first().map_or(f64::NAN, |r| r.summary.eta);
    Ok(BoundReport::new(inputs, eta, cfg.seeds.clone(), lhs)?)
}

/// Writes `bound_report.json` and returns the report; the caller maps a
/// violated bound to a nonzero exit.
pub fn cmd_bound(config_path: &Path, opts: &CommandOptions) -> Result<BoundReport> {
    let (raw, cfg) = load_resolved(config_path, opts)?;
    let pool = opts.pool()?;
    let report = bound_check(&cfg, opts.override_kmin, &pool)?;
    let out = opts.out_dir(raw.out.as_deref());
    #[derive(Serialize)]
    struct Document<'a> {
        config: &'a ResolvedConfig,
        #[serde(flatten)]
        report: &'a BoundReport,
    }
    write_json(
        &out.join("bound_report.json"),
        &Document {
            config: &cfg,
            report: &report,
        },
    )?;
    Ok(report)
}
