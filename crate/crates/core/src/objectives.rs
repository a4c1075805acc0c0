//! Synthetic local objectives with known constants.
//!
//! [`QuadraticEnsemble`] gives every worker `F_i(x) = 1/2 (x - c_i)^T A (x - c_i)`
//! with one shared diagonal `A`. Sharing the Hessian makes the gradient
//! deviation `(1/m) sum_i |grad F_i(x) - grad F(x)|^2` independent of `x`, so
//! the smoothness constant, heterogeneity and lower bound are all exact.
//! Gradient noise is Gaussian with per-coordinate variance `sigma^2 / d`,
//! which makes `E|g - grad F_i|^2 = sigma^2` hold with equality.
//!
//! [`LogisticEnsemble`] is regularized logistic regression over per-worker
//! datasets, used for the label-skew experiments. Its smoothness constant is
//! an upper bound and it has no certified heterogeneity bound.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::PartitionPlan;
use crate::rng::RngStream;
use crate::vector::{mean, ParamVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticEnsemble {
    hessian: Vec<f64>,
    centers: Vec<ParamVector>,
    sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    generator_seed: Option<u64>,
}

/// Closed-form constants of a quadratic ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactConstants {
    pub smoothness: f64,
    pub kappa2: f64,
    pub sigma2: f64,
    pub f_inf: f64,
}

impl QuadraticEnsemble {
    pub fn new(hessian: Vec<f64>, centers: Vec<ParamVector>, sigma: f64) -> Result<Self> {
        if hessian.is_empty() {
            return Err(Error::invalid("hessian", "must have at least one entry"));
        }
        if let Some(a) = hessian.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
            return Err(Error::invalid("hessian", format!("entry {a} is not strictly positive")));
        }
        if centers.is_empty() {
            return Err(Error::invalid("centers", "need at least one worker"));
        }
        for c in &centers {
            if c.dim() != hessian.len() {
                return Err(Error::DimensionMismatch {
                    expected: hessian.len(),
                    actual: c.dim(),
                });
            }
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::invalid("sigma", format!("{sigma} is not a nonnegative number")));
        }
        Ok(Self {
            hessian,
            centers,
            sigma,
            generator_seed: None,
        })
    }

    pub fn hessian(&self) -> &[f64] {
        &self.hessian
    }

    pub fn centers(&self) -> &[ParamVector] {
        &self.centers
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn generator_seed(&self) -> Option<u64> {
        self.generator_seed
    }

    pub fn m(&self) -> usize {
        self.centers.len()
    }

    pub fn dim(&self) -> usize {
        self.hessian.len()
    }

    /// Mean of the worker centers; the minimizer of `F`.
    pub fn global_minimizer(&self) -> ParamVector {
        mean(&self.centers).expect("ensemble has at least one worker")
    }

    fn center(&self, worker: usize) -> Result<&ParamVector> {
        self.centers
            .get(worker)
            .ok_or(Error::WorkerOutOfRange { worker, m: self.m() })
    }

    fn grad_at(&self, c: &ParamVector, x: &ParamVector) -> Result<ParamVector> {
        c.check_dim(x)?;
        let g = self
            .hessian
            .iter()
            .zip(x.as_slice().iter().zip(c.as_slice()))
            .map(|(a, (xv, cv))| a * (xv - cv))
            .collect();
        ParamVector::new(g)
    }

    fn value_at(&self, c: &ParamVector, x: &ParamVector) -> Result<f64> {
        c.check_dim(x)?;
        Ok(0.5
            * self
                .hessian
                .iter()
                .zip(x.as_slice().iter().zip(c.as_slice()))
                .map(|(a, (xv, cv))| a * (xv - cv) * (xv - cv))
                .sum::<f64>())
    }
}

/// Builds a random quadratic ensemble.
///
/// Hessian entries are log-uniform in `[1, condition]`; centers are i.i.d.
/// Gaussian with standard deviation `spread`. The Hessian is drawn first and
/// each center is `spread` times a standard normal draw, so ensembles from
/// the same stream differ across `spread` only by scaling of the centers.
pub fn make_quadratic(
    m: usize,
    d: usize,
    spread: f64,
    condition: f64,
    sigma: f64,
    rng: &mut RngStream,
) -> Result<QuadraticEnsemble> {
    if m == 0 || d == 0 {
        return Err(Error::invalid("m/d", "worker count and dimension must be positive"));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::invalid("spread", format!("{spread} must be >= 0")));
    }
    if !(condition >= 1.0 && condition.is_finite()) {
        return Err(Error::invalid("condition", format!("{condition} must be >= 1")));
    }
    let hessian: Vec<f64> = (0..d).map(|_| condition.powf(rng.random::<f64>())).collect();
    let centers = (0..m)
        .map(|_| {
            let c = (0..d).map(|_| spread * rng.sample::<f64, _>(StandardNormal)).collect();
            ParamVector::new(c)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut ens = QuadraticEnsemble::new(hessian, centers, sigma)?;
    ens.generator_seed = Some(rng.seed());
    Ok(ens)
}

/// Smoothness, heterogeneity, noise and lower bound in closed form.
pub fn exact_constants(ens: &QuadraticEnsemble) -> ExactConstants {
    let smoothness = ens.hessian.iter().copied().fold(0.0, f64::max);
    let cbar = ens.global_minimizer();
    let kappa2 = ens
        .centers
        .iter()
        .map(|c| {
            ens.hessian
                .iter()
                .zip(c.as_slice().iter().zip(cbar.as_slice()))
                .map(|(a, (ci, cb))| (a * (ci - cb)).powi(2))
                .sum::<f64>()
        })
        .sum::<f64>()
        / ens.m() as f64;
    let f_inf = ens
        .centers
        .iter()
        .map(|c| ens.value_at(c, &cbar).expect("dims checked at construction"))
        .sum::<f64>()
        / ens.m() as f64;
    ExactConstants {
        smoothness,
        kappa2,
        sigma2: ens.sigma * ens.sigma,
        f_inf,
    }
}

/// One labelled sample; `features` already carries the intercept column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    /// +1 or -1.
    pub label: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticEnsemble {
    datasets: Vec<Vec<Sample>>,
    lambda: f64,
    batch: usize,
}

impl LogisticEnsemble {
    pub fn new(datasets: Vec<Vec<Sample>>, lambda: f64, batch: usize) -> Result<Self> {
        if datasets.is_empty() || datasets.iter().any(Vec::is_empty) {
            return Err(Error::invalid("datasets", "every worker needs at least one sample"));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::invalid("lambda", "regularization must be positive"));
        }
        if batch == 0 {
            return Err(Error::invalid("batch", "must be at least 1"));
        }
        let d = datasets[0][0].features.len();
        for s in datasets.iter().flatten() {
            if s.features.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: s.features.len(),
                });
            }
            if s.label != 1.0 && s.label != -1.0 {
                return Err(Error::invalid("label", format!("{} is not +1 or -1", s.label)));
            }
        }
        Ok(Self {
            datasets,
            lambda,
            batch,
        })
    }

    /// Splits a labelled pool across workers according to `plan`.
    pub fn from_partition(pool: &ClassificationPool, plan: &PartitionPlan, lambda: f64, batch: usize) -> Result<Self> {
        let datasets = plan
            .assignments
            .iter()
            .map(|idx| idx.iter().map(|&i| pool.samples[i].clone()).collect())
            .collect();
        Self::new(datasets, lambda, batch)
    }

    pub fn m(&self) -> usize {
        self.datasets.len()
    }

    pub fn dim(&self) -> usize {
        self.datasets[0][0].features.len()
    }

    pub fn datasets(&self) -> &[Vec<Sample>] {
        &self.datasets
    }

    /// `lambda + max |a|^2 / 4`; an upper bound, not tight.
    pub fn smoothness_bound(&self) -> f64 {
        let max_sq = self
            .datasets
            .iter()
            .flatten()
            .map(|s| s.features.iter().map(|v| v * v).sum::<f64>())
            .fold(0.0, f64::max);
        self.lambda + max_sq / 4.0
    }

    fn data(&self, worker: usize) -> Result<&[Sample]> {
        self.datasets
            .get(worker)
            .map(Vec::as_slice)
            .ok_or(Error::WorkerOutOfRange { worker, m: self.m() })
    }

    fn check_x(&self, x: &ParamVector) -> Result<()> {
        if x.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.dim(),
            });
        }
        Ok(())
    }

    fn mean_grad<'a>(
        &self,
        samples: impl ExactSizeIterator<Item = &'a Sample>,
        x: &ParamVector,
    ) -> Result<ParamVector> {
        let n = samples.len() as f64;
        let w = x.as_slice();
        let mut g = vec![0.0; w.len()];
        for s in samples {
            let margin = s.label * dot(w, &s.features);
            // d/dw log(1 + exp(-margin)) = -label * sigmoid(-margin) * a
            let coef = -s.label * sigmoid(-margin);
            for (gj, aj) in g.iter_mut().zip(&s.features) {
                *gj += coef * aj;
            }
        }
        for (gj, wj) in g.iter_mut().zip(w) {
            *gj = *gj / n + self.lambda * wj;
        }
        ParamVector::new(g)
    }

    fn local_value(&self, worker: usize, x: &ParamVector) -> Result<f64> {
        self.check_x(x)?;
        let data = self.data(worker)?;
        let w = x.as_slice();
        let loss = data
            .iter()
            .map(|s| softplus(-s.label * dot(w, &s.features)))
            .sum::<f64>()
            / data.len() as f64;
        Ok(loss + 0.5 * self.lambda * x.norm_sq())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

/// Labelled synthetic classification data before partitioning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationPool {
    pub samples: Vec<Sample>,
    /// Class id of each sample, in `0..num_classes`.
    pub classes: Vec<usize>,
    pub num_classes: usize,
}

/// Gaussian class clusters in `d - 1` dimensions plus an intercept column.
/// Even class ids get label +1, odd ones -1.
pub fn make_classification(
    num_classes: usize,
    per_class: usize,
    d: usize,
    separation: f64,
    rng: &mut RngStream,
) -> Result<ClassificationPool> {
    if num_classes < 2 || per_class == 0 || d < 2 {
        return Err(Error::invalid(
            "classification",
            "need >= 2 classes, >= 1 sample per class and d >= 2",
        ));
    }
    let means: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| {
            (0..d - 1)
                .map(|_| separation * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    let mut samples = Vec::with_capacity(num_classes * per_class);
    let mut classes = Vec::with_capacity(num_classes * per_class);
    for _ in 0..per_class {
        for (class, mu) in means.iter().enumerate() {
            let mut features: Vec<f64> = mu.iter().map(|m| m + rng.sample::<f64, _>(StandardNormal)).collect();
            features.push(1.0);
            samples.push(Sample {
                features,
                label: if class % 2 == 0 { 1.0 } else { -1.0 },
            });
            classes.push(class);
        }
    }
    Ok(ClassificationPool {
        samples,
        classes,
        num_classes,
    })
}

/// Constants as far as they are known for an ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConstants {
    pub smoothness: f64,
    /// False when `smoothness` is only an upper bound.
    pub smoothness_exact: bool,
    pub kappa2: Option<f64>,
    pub sigma2: Option<f64>,
    pub f_inf: FInf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum FInf {
    Exact(f64),
    /// Best value observed by a deterministic full-batch descent probe.
    Estimate(f64),
}

impl FInf {
    pub fn value(self) -> f64 {
        match self {
            FInf::Exact(v) | FInf::Estimate(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Ensemble {
    Quadratic(QuadraticEnsemble),
    Logistic(LogisticEnsemble),
}

impl From<QuadraticEnsemble> for Ensemble {
    fn from(q: QuadraticEnsemble) -> Self {
        Ensemble::Quadratic(q)
    }
}

impl From<LogisticEnsemble> for Ensemble {
    fn from(l: LogisticEnsemble) -> Self {
        Ensemble::Logistic(l)
    }
}

const F_INF_PROBE_STEPS: usize = 500;

impl Ensemble {
    pub fn m(&self) -> usize {
        match self {
            Ensemble::Quadratic(q) => q.m(),
            Ensemble::Logistic(l) => l.m(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Ensemble::Quadratic(q) => q.dim(),
            Ensemble::Logistic(l) => l.dim(),
        }
    }

    pub fn as_quadratic(&self) -> Option<&QuadraticEnsemble> {
        match self {
            Ensemble::Quadratic(q) => Some(q),
            Ensemble::Logistic(_) => None,
        }
    }

    /// Noiseless `grad F_i(x)`.
    pub fn local_grad(&self, worker: usize, x: &ParamVector) -> Result<ParamVector> {
        match self {
            Ensemble::Quadratic(q) => q.grad_at(q.center(worker)?, x),
            Ensemble::Logistic(l) => {
                l.check_x(x)?;
                l.mean_grad(l.data(worker)?.iter(), x)
            }
        }
    }

    /// Unbiased stochastic gradient of `F_i` at `x`.
    pub fn stochastic_grad(&self, worker: usize, x: &ParamVector, rng: &mut RngStream) -> Result<ParamVector> {
        match self {
            Ensemble::Quadratic(q) => {
                let mut g = q.grad_at(q.center(worker)?, x)?;
                if q.sigma > 0.0 {
                    let scale = q.sigma / (q.dim() as f64).sqrt();
                    for gj in g.values_mut() {
                        *gj += scale * rng.sample::<f64, _>(StandardNormal);
                    }
                    g.ensure_finite()?;
                }
                Ok(g)
            }
            Ensemble::Logistic(l) => {
                l.check_x(x)?;
                let data = l.data(worker)?;
                let picks: Vec<&Sample> = (0..l.batch).map(|_| &data[rng.random_range(0..data.len())]).collect();
                l.mean_grad(picks.into_iter(), x)
            }
        }
    }

    pub fn local_value(&self, worker: usize, x: &ParamVector) -> Result<f64> {
        match self {
            Ensemble::Quadratic(q) => q.value_at(q.center(worker)?, x),
            Ensemble::Logistic(l) => l.local_value(worker, x),
        }
    }

    /// `grad F = (1/m) sum_i grad F_i`.
    pub fn global_grad(&self, x: &ParamVector) -> Result<ParamVector> {
        let grads = (0..self.m())
            .map(|i| self.local_grad(i, x))
            .collect::<Result<Vec<_>>>()?;
        mean(&grads)
    }

    /// `F = (1/m) sum_i F_i`.
    pub fn objective_value(&self, x: &ParamVector) -> Result<f64> {
        let mut total = 0.0;
        for i in 0..self.m() {
            total += self.local_value(i, x)?;
        }
        Ok(total / self.m() as f64)
    }

    pub fn constants(&self) -> Result<ObjectiveConstants> {
        match self {
            Ensemble::Quadratic(q) => {
                let c = exact_constants(q);
                Ok(ObjectiveConstants {
                    smoothness: c.smoothness,
                    smoothness_exact: true,
                    kappa2: Some(c.kappa2),
                    sigma2: Some(c.sigma2),
                    f_inf: FInf::Exact(c.f_inf),
                })
            }
            Ensemble::Logistic(l) => {
                let smoothness = l.smoothness_bound();
                let mut x = ParamVector::zeros(l.dim());
                let mut best = self.objective_value(&x)?;
                for _ in 0..F_INF_PROBE_STEPS {
                    let g = self.global_grad(&x)?;
                    x.axpy_assign(-1.0 / smoothness, &g)?;
                    best = best.min(self.objective_value(&x)?);
                }
                Ok(ObjectiveConstants {
                    smoothness,
                    smoothness_exact: false,
                    kappa2: None,
                    sigma2: None,
                    f_inf: FInf::Estimate(best),
                })
            }
        }
    }
}
