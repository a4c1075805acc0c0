//! Matrix form of the overlap update.
//!
//! The cluster is stacked as a `d x (m+1)` matrix `X = [x_1 ... x_m, z]` and
//! one step is `X <- (X - eta G) W`, with `W = P` at sync steps and `W = I`
//! otherwise. `G` carries the worker gradients and a zero anchor column.

use nalgebra::{DMatrix, DVector};

use crate::algorithms::ClusterState;
use crate::error::{Error, Result};
use crate::vector::ParamVector;

/// Largest order for which the spectral norm goes through a full SVD.
pub const SVD_MAX_ORDER: usize = 64;
const POWER_TOL: f64 = 1e-12;
const POWER_MAX_ITERS: usize = 10_000;

/// A square `(m+1) x (m+1)` mixing matrix acting on stacked states from the
/// right.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    entries: DMatrix<f64>,
    m: usize,
    alpha: f64,
}

impl MixingMatrix {
    pub fn identity(m: usize) -> Self {
        Self {
            entries: DMatrix::identity(m + 1, m + 1),
            m,
            alpha: 0.0,
        }
    }

    /// Wraps an arbitrary column-stochastic matrix.
    pub fn from_matrix(entries: DMatrix<f64>, alpha: f64) -> Result<Self> {
        if !entries.is_square() || entries.nrows() < 2 {
            return Err(Error::invalid("mixing", "need a square matrix of order >= 2"));
        }
        let m = entries.nrows() - 1;
        let w = Self { entries, m, alpha };
        let dev = w.column_sum_error();
        if dev > 1e-12 {
            return Err(Error::Consistency(format!("column sums deviate from 1 by {dev:e}")));
        }
        Ok(w)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[(row, col)]
    }

    /// Largest `|sum_r W[r][c] - 1|` over columns.
    pub fn column_sum_error(&self) -> f64 {
        self.entries
            .column_iter()
            .map(|c| (c.sum() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn mul(&self, other: &MixingMatrix) -> MixingMatrix {
        MixingMatrix {
            entries: &self.entries * &other.entries,
            m: self.m,
            alpha: self.alpha,
        }
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.entries * v
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid("alpha", format!("{alpha} is outside [0, 1]")));
    }
    Ok(())
}

fn check_m(m: usize) -> Result<()> {
    if m == 0 {
        return Err(Error::invalid("m", "need at least one worker"));
    }
    Ok(())
}

/// `P = [[(1-alpha) I, (1-alpha) 1/m], [alpha 1^T, alpha]]`.
pub fn build_p(m: usize, alpha: f64) -> Result<MixingMatrix> {
    check_m(m)?;
    check_alpha(alpha)?;
    let n = m + 1;
    let keep = 1.0 - alpha;
    let share = keep / m as f64;
    let entries = DMatrix::from_fn(n, n, |r, c| match (r < m, c < m) {
        (true, true) if r == c => keep,
        (true, true) => 0.0,
        (true, false) => share,
        (false, _) => alpha,
    });
    MixingMatrix::from_matrix(entries, alpha)
}

/// Right eigenvector of `P` for eigenvalue 1, normalized to `1^T v = 1`:
/// `[(1-alpha)/m, ..., (1-alpha)/m, alpha]`.
pub fn fixed_vector(m: usize, alpha: f64) -> Result<DVector<f64>> {
    check_m(m)?;
    check_alpha(alpha)?;
    let share = (1.0 - alpha) / m as f64;
    Ok(DVector::from_fn(m + 1, |r, _| if r < m { share } else { alpha }))
}

/// Operator 2-norm of `W - v 1^T`.
pub fn spectral_deviation(w: &MixingMatrix, v: &DVector<f64>) -> Result<f64> {
    let n = w.entries.nrows();
    if v.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: v.len(),
        });
    }
    let dev = &w.entries - v * DVector::from_element(n, 1.0).transpose();
    if n <= SVD_MAX_ORDER {
        Ok(dev.singular_values().max())
    } else {
        spectral_norm_power(&dev)
    }
}

/// `sqrt(lambda_max(M^T M))` by power iteration.
pub fn spectral_norm_power(mat: &DMatrix<f64>) -> Result<f64> {
    let gram = mat.transpose() * mat;
    let n = gram.nrows();
    // Deterministic start with no special alignment to any structured
    // eigenvector.
    let mut x = DVector::from_fn(n, |i, _| 1.0 + (i as f64 * 0.618_033_988_749_895).fract());
    x /= x.norm();
    let mut lambda = 0.0;
    let mut residual = f64::INFINITY;
    for _ in 0..POWER_MAX_ITERS {
        let y = &gram * &x;
        let norm = y.norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        let next = y / norm;
        residual = (&next - &x).norm();
        x = next;
        let updated = x.dot(&(&gram * &x));
        let settled = (updated - lambda).abs() <= POWER_TOL * updated.abs().max(1.0);
        lambda = updated;
        if residual <= POWER_TOL || settled {
            return Ok(lambda.max(0.0).sqrt());
        }
    }
    Err(Error::NoConvergence {
        iterations: POWER_MAX_ITERS,
        residual,
    })
}

/// Splits `P` as `(1-alpha) A + alpha b 1^T` with `A = [[I, 1/m], [0, 0]]`
/// and `b = e_{m+1}`. Fails if the pieces do not reproduce `P` to 1e-15.
pub fn pagerank_decompose(p: &MixingMatrix, alpha: f64) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let m = p.m;
    let n = m + 1;
    let inv_m = 1.0 / m as f64;
    let a = DMatrix::from_fn(n, n, |r, c| match (r < m, c < m) {
        (true, true) if r == c => 1.0,
        (true, true) => 0.0,
        (true, false) => inv_m,
        (false, _) => 0.0,
    });
    let b = DVector::from_fn(n, |r, _| if r == m { 1.0 } else { 0.0 });
    let rebuilt = &a * (1.0 - alpha) + &b * DVector::from_element(n, alpha).transpose();
    let err = (&rebuilt - &p.entries).amax();
    if err > 1e-15 {
        return Err(Error::Consistency(format!("decomposition differs from P by {err:e}")));
    }
    Ok((a, b))
}

/// Mixing matrix of the elastic baseline:
/// `x_i <- (1-alpha) x_i + alpha z`, `z <- (1-center_step) z + center_step mean(x)`.
pub fn build_easgd(m: usize, alpha: f64, center_step: f64) -> Result<MixingMatrix> {
    check_m(m)?;
    check_alpha(alpha)?;
    check_alpha(center_step)?;
    let n = m + 1;
    let share = center_step / m as f64;
    let entries = DMatrix::from_fn(n, n, |r, c| match (r < m, c < m) {
        (true, true) if r == c => 1.0 - alpha,
        (true, true) => 0.0,
        (false, true) => alpha,
        (true, false) => share,
        (false, false) => 1.0 - center_step,
    });
    MixingMatrix::from_matrix(entries, alpha)
}

/// Fixed vector of [`build_easgd`]; requires `alpha + center_step > 0`.
pub fn easgd_fixed_vector(m: usize, alpha: f64, center_step: f64) -> Result<DVector<f64>> {
    check_m(m)?;
    let total = alpha + center_step;
    if !(total > 0.0) {
        return Err(Error::invalid("alpha", "alpha + center_step must be positive"));
    }
    let worker = center_step / total / m as f64;
    Ok(DVector::from_fn(
        m + 1,
        |r, _| if r < m { worker } else { alpha / total },
    ))
}

/// Largest asymmetry of `W diag(v)`; zero when the chain is reversible.
pub fn detailed_balance_error(w: &MixingMatrix, v: &DVector<f64>) -> f64 {
    let scaled = &w.entries * DMatrix::from_diagonal(v);
    (&scaled - scaled.transpose()).amax()
}

/// `[x_1 ... x_m, z]` as columns of a `d x (m+1)` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedState {
    columns: DMatrix<f64>,
}

impl StackedState {
    pub fn from_columns(cols: &[ParamVector]) -> Result<Self> {
        if cols.len() < 2 {
            return Err(Error::invalid("columns", "need at least one worker and the anchor"));
        }
        let d = cols[0].dim();
        for c in cols {
            if c.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: c.dim(),
                });
            }
        }
        Ok(Self {
            columns: DMatrix::from_fn(d, cols.len(), |r, c| cols[c][r]),
        })
    }

    /// Workers then anchor.
    pub fn from_cluster(state: &ClusterState) -> Result<Self> {
        let mut cols = state.workers.clone();
        cols.push(state.anchor.clone());
        Self::from_columns(&cols)
    }

    /// Worker gradients with a zero anchor column.
    pub fn from_gradients(grads: &[ParamVector]) -> Result<Self> {
        let d = grads.first().map_or(0, ParamVector::dim);
        let mut cols = grads.to_vec();
        cols.push(ParamVector::zeros(d));
        Self::from_columns(&cols)
    }

    pub fn m(&self) -> usize {
        self.columns.ncols() - 1
    }

    pub fn dim(&self) -> usize {
        self.columns.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.columns
    }

    pub fn column(&self, c: usize) -> Result<ParamVector> {
        ParamVector::new(self.columns.column(c).iter().copied().collect())
    }

    pub fn anchor(&self) -> Result<ParamVector> {
        self.column(self.m())
    }

    /// Largest entrywise difference against a cluster state.
    pub fn max_abs_diff(&self, state: &ClusterState) -> Result<f64> {
        let other = Self::from_cluster(state)?;
        if other.columns.shape() != self.columns.shape() {
            return Err(Error::invalid("state", "shapes differ"));
        }
        Ok((&self.columns - &other.columns).amax())
    }
}

/// `X_{k+1} = (X - eta G) W`.
pub fn matrix_step(x: &StackedState, g: &StackedState, w: &MixingMatrix, eta: f64) -> Result<StackedState> {
    if x.columns.shape() != g.columns.shape() {
        return Err(Error::invalid("gradients", "stacked shapes differ"));
    }
    if w.entries.nrows() != x.columns.ncols() {
        return Err(Error::DimensionMismatch {
            expected: x.columns.ncols(),
            actual: w.entries.nrows(),
        });
    }
    if g.columns.column(g.m()).iter().any(|&v| v != 0.0) {
        return Err(Error::invalid("gradients", "the anchor column of G must be zero"));
    }
    let moved = &x.columns - &g.columns * eta;
    Ok(StackedState {
        columns: moved * &w.entries,
    })
}

/// `y = X v`.
pub fn virtual_point(x: &StackedState, v: &DVector<f64>) -> Result<ParamVector> {
    if v.len() != x.columns.ncols() {
        return Err(Error::DimensionMismatch {
            expected: x.columns.ncols(),
            actual: v.len(),
        });
    }
    ParamVector::new((&x.columns * v).iter().copied().collect())
}
