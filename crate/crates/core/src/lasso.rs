//! Lagrangian lasso by warm-started cyclic coordinate descent.
//!
//! Solves, for each penalty on a log-spaced grid,
//!
//! ```text
//! min_{b0, b}  (1/2n) ||y - b0 - X b||^2 + lambda ||b||_1
//! ```
//!
//! with an unpenalized intercept. Columns are centred but never rescaled, so
//! `||b||_1` is measured in the units of the raw columns. Exact duplicate
//! training columns are collapsed before solving; the whole weight goes to the
//! first copy.

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::fs::File;
use std::hash::{Hash, Hasher};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dataset::{format_float, mse, Dataset};
use crate::error::{Error, Result};

/// Column-major design with stable identifiers for each column.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    n_rows: usize,
    columns: Vec<Vec<f64>>,
    column_ids: Vec<usize>,
}

impl DesignMatrix {
    pub fn new(n_rows: usize, columns: Vec<Vec<f64>>, column_ids: Vec<usize>) -> Result<Self> {
        if column_ids.len() != columns.len() {
            return Err(Error::DimensionMismatch {
                expected: columns.len(),
                found: column_ids.len(),
            });
        }
        for col in &columns {
            if col.len() != n_rows {
                return Err(Error::DimensionMismatch {
                    expected: n_rows,
                    found: col.len(),
                });
            }
            if col.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("design matrix"));
            }
        }
        Ok(DesignMatrix {
            n_rows,
            columns,
            column_ids,
        })
    }

    pub fn from_columns(n_rows: usize, columns: Vec<Vec<f64>>) -> Result<Self> {
        let ids = (0..columns.len()).collect();
        Self::new(n_rows, columns, ids)
    }

    pub fn from_array(x: ArrayView2<f64>) -> Result<Self> {
        let columns = x.columns().into_iter().map(|c| c.to_vec()).collect();
        Self::from_columns(x.nrows(), columns)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn column_ids(&self) -> &[usize] {
        &self.column_ids
    }

    pub fn to_array(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.n_rows, self.n_cols()), |(i, j)| self.columns[j][i])
    }

    /// `X b`, skipping zero coefficients.
    pub fn matvec(&self, coefficients: &[f64]) -> Array1<f64> {
        let mut out = Array1::zeros(self.n_rows);
        for (col, &b) in self.columns.iter().zip(coefficients) {
            if b != 0.0 {
                out.scaled_add(b, &ArrayView1::from(col.as_slice()));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LassoSettings {
    pub n_lambdas: usize,
    pub lambda_min_ratio: f64,
    /// A solve stops once every coordinate update satisfies
    /// `s_j * delta_j^2 < tol * var(y)`, with `s_j` the column's variance.
    pub tol: f64,
    /// Cap on coordinate sweeps per penalty value.
    pub max_sweeps: usize,
}

impl Default for LassoSettings {
    fn default() -> Self {
        LassoSettings {
            n_lambdas: 100,
            lambda_min_ratio: 1e-3,
            tol: 1e-7,
            max_sweeps: 100_000,
        }
    }
}

impl LassoSettings {
    pub fn validate(&self) -> Result<()> {
        if self.n_lambdas < 2 {
            return Err(Error::Config("n_lambdas must be at least 2".into()));
        }
        if !(self.lambda_min_ratio > 0.0 && self.lambda_min_ratio < 1.0) {
            return Err(Error::Config(format!(
                "lambda_min_ratio must lie in (0, 1), got {}",
                self.lambda_min_ratio
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if self.max_sweeps == 0 {
            return Err(Error::Config("max_sweeps must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoSolution {
    pub lambda: f64,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub l1_norm: f64,
    pub train_loss: f64,
    pub validation_loss: f64,
    pub n_nonzero: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoPath {
    pub lambdas: Vec<f64>,
    pub solutions: Vec<LassoSolution>,
}

impl LassoPath {
    pub fn len(&self) -> usize {
        self.solutions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.solutions.is_empty()
    }

    pub fn best_by_validation(&self) -> (usize, &LassoSolution) {
        best_by_validation(&self.solutions).expect("paths are never empty")
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record([
            "lambda",
            "l1_norm",
            "train_loss",
            "validation_loss",
            "nonzero",
        ])?;
        for s in &self.solutions {
            w.write_record([
                format_float(s.lambda),
                format_float(s.l1_norm),
                format_float(s.train_loss),
                format_float(s.validation_loss),
                s.n_nonzero.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Index of the lowest validation loss; ties go to the earlier (larger-penalty) entry.
pub fn best_by_validation(solutions: &[LassoSolution]) -> Option<(usize, &LassoSolution)> {
    let mut best: Option<(usize, &LassoSolution)> = None;
    for (i, s) in solutions.iter().enumerate() {
        if best.is_none_or(|(_, b)| s.validation_loss < b.validation_loss) {
            best = Some((i, s));
        }
    }
    best
}

fn soft_threshold(z: f64, lambda: f64) -> f64 {
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        0.0
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SolveStats {
    pub sweeps: usize,
    pub converged: bool,
}

/// A centred, deduplicated least-squares problem ready for repeated solves.
#[derive(Debug, Clone)]
pub struct LassoProblem {
    n: usize,
    n_cols: usize,
    /// Original column index for each unique column.
    representative: Vec<usize>,
    centered: Vec<Vec<f64>>,
    means: Vec<f64>,
    /// `(1/n) ||x_c||^2`, zero for constant columns.
    scale: Vec<f64>,
    y_mean: f64,
    y_centered: Vec<f64>,
    y_sd: f64,
}

impl LassoProblem {
    pub fn new(design: &DesignMatrix, outcome: ArrayView1<f64>) -> Result<Self> {
        let n = design.n_rows();
        if outcome.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: outcome.len(),
            });
        }
        if n == 0 {
            return Err(Error::Empty("lasso needs at least one row"));
        }
        if outcome.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("lasso outcome"));
        }
        let representative = unique_columns(design);
        let mut centered = Vec::with_capacity(representative.len());
        let mut means = Vec::with_capacity(representative.len());
        let mut scale = Vec::with_capacity(representative.len());
        for &j in &representative {
            let col = design.column(j);
            let mean = col.iter().sum::<f64>() / n as f64;
            let c: Vec<f64> = col.iter().map(|v| v - mean).collect();
            let raw_sq = col.iter().map(|v| v * v).sum::<f64>();
            let s = dot(&c, &c) / n as f64;
            // constant up to rounding: indistinguishable from the intercept
            let s = if s <= 1e-13 * raw_sq / n as f64 {
                0.0
            } else {
                s
            };
            centered.push(c);
            means.push(mean);
            scale.push(s);
        }
        let y_mean = outcome.sum() / n as f64;
        let y_centered: Vec<f64> = outcome.iter().map(|v| v - y_mean).collect();
        let y_sd = (dot(&y_centered, &y_centered) / n as f64).sqrt();
        Ok(LassoProblem {
            n,
            n_cols: design.n_cols(),
            representative,
            centered,
            means,
            scale,
            y_mean,
            y_centered,
            y_sd,
        })
    }

    pub fn n_unique(&self) -> usize {
        self.representative.len()
    }

    pub fn outcome_sd(&self) -> f64 {
        self.y_sd
    }

    /// Smallest penalty at which every coefficient is zero.
    pub fn lambda_max(&self) -> f64 {
        self.centered
            .iter()
            .zip(&self.scale)
            .filter(|(_, &s)| s > 0.0)
            .map(|(c, _)| (dot(c, &self.y_centered) / self.n as f64).abs())
            .fold(0.0, f64::max)
    }

    /// Centred residual for coefficients over unique columns.
    pub fn residual(&self, beta: &[f64]) -> Vec<f64> {
        let mut r = self.y_centered.clone();
        for (c, &b) in self.centered.iter().zip(beta) {
            if b != 0.0 {
                axpy(-b, c, &mut r);
            }
        }
        r
    }

    /// Runs coordinate descent at `lambda` from the given warm start.
    /// `residual` must equal `self.residual(beta)` on entry and is kept in sync.
    pub fn solve(
        &self,
        lambda: f64,
        beta: &mut [f64],
        residual: &mut [f64],
        settings: &LassoSettings,
    ) -> SolveStats {
        let thr = settings.tol * if self.y_sd > 0.0 { self.y_sd * self.y_sd } else { 1.0 };
        let all: Vec<usize> = (0..self.n_unique())
            .filter(|&u| self.scale[u] > 0.0)
            .collect();
        let mut sweeps = 0;
        loop {
            let change = self.sweep(&all, lambda, beta, residual);
            sweeps += 1;
            if change < thr {
                return SolveStats {
                    sweeps,
                    converged: true,
                };
            }
            if sweeps >= settings.max_sweeps {
                break;
            }
            let active: Vec<usize> = all.iter().copied().filter(|&u| beta[u] != 0.0).collect();
            loop {
                let change = self.sweep(&active, lambda, beta, residual);
                sweeps += 1;
                if change < thr {
                    break;
                }
                if sweeps >= settings.max_sweeps {
                    return SolveStats {
                        sweeps,
                        converged: false,
                    };
                }
            }
        }
        SolveStats {
            sweeps,
            converged: false,
        }
    }

    fn sweep(&self, coords: &[usize], lambda: f64, beta: &mut [f64], r: &mut [f64]) -> f64 {
        let inv_n = 1.0 / self.n as f64;
        let mut max_change: f64 = 0.0;
        for &u in coords {
            let s = self.scale[u];
            let x = &self.centered[u];
            let old = beta[u];
            let z = dot(x, r) * inv_n + s * old;
            let new = soft_threshold(z, lambda) / s;
            if new != old {
                let d = new - old;
                axpy(-d, x, r);
                beta[u] = new;
                max_change = max_change.max(d * d * s);
            }
        }
        max_change
    }

    /// Coefficients over the original columns plus the intercept.
    pub fn expand(&self, beta: &[f64]) -> (Vec<f64>, f64) {
        let mut full = vec![0.0; self.n_cols];
        let mut intercept = self.y_mean;
        for ((&j, &b), &m) in self.representative.iter().zip(beta).zip(&self.means) {
            full[j] = b;
            intercept -= m * b;
        }
        (full, intercept)
    }

    /// `(1/2n)||r||^2 + lambda ||beta||_1` over unique columns.
    pub fn objective(&self, beta: &[f64], lambda: f64) -> f64 {
        let r = self.residual(beta);
        0.5 * dot(&r, &r) / self.n as f64 + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
    }
}

/// Indices of the first occurrence of each distinct (bitwise) column.
fn unique_columns(design: &DesignMatrix) -> Vec<usize> {
    let mut buckets: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    let mut reps = Vec::new();
    for j in 0..design.n_cols() {
        let col = design.column(j);
        let mut h = DefaultHasher::new();
        for v in col {
            // +0.0 and -0.0 are the same column
            (v + 0.0).to_bits().hash(&mut h);
        }
        let bucket = buckets.entry(h.finish()).or_default();
        if bucket.iter().any(|&k| design.column(k) == col) {
            continue;
        }
        bucket.push(j);
        reps.push(j);
    }
    reps
}

/// Full regularization path with training and validation bookkeeping.
pub fn solve_path(
    design: &DesignMatrix,
    outcome: ArrayView1<f64>,
    validation_design: &DesignMatrix,
    validation_outcome: ArrayView1<f64>,
    settings: &LassoSettings,
) -> Result<LassoPath> {
    settings.validate()?;
    if validation_design.n_cols() != design.n_cols() {
        return Err(Error::DimensionMismatch {
            expected: design.n_cols(),
            found: validation_design.n_cols(),
        });
    }
    if validation_design.n_rows() != validation_outcome.len() {
        return Err(Error::DimensionMismatch {
            expected: validation_design.n_rows(),
            found: validation_outcome.len(),
        });
    }
    if validation_outcome.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("validation outcome"));
    }
    let problem = LassoProblem::new(design, outcome)?;
    let lambda_max = problem.lambda_max();

    let record =
        |lambda: f64, beta: &[f64], residual: &[f64], converged: bool| -> Result<LassoSolution> {
            let (coefficients, intercept) = problem.expand(beta);
            let val_pred = validation_design.matvec(&coefficients) + intercept;
            Ok(LassoSolution {
                lambda,
                l1_norm: coefficients.iter().map(|b| b.abs()).sum(),
                n_nonzero: coefficients.iter().filter(|&&b| b != 0.0).count(),
                train_loss: dot(residual, residual) / problem.n as f64,
                validation_loss: mse(val_pred.view(), validation_outcome)?,
                coefficients,
                intercept,
                converged,
            })
        };

    let mut beta = vec![0.0; problem.n_unique()];
    let mut residual = problem.residual(&beta);
    if problem.y_sd == 0.0 || lambda_max <= 0.0 {
        let only = record(0.0, &beta, &residual, true)?;
        return Ok(LassoPath {
            lambdas: vec![0.0],
            solutions: vec![only],
        });
    }

    let last = (settings.n_lambdas - 1) as f64;
    let lambdas: Vec<f64> = (0..settings.n_lambdas)
        .map(|k| {
            if k == 0 {
                lambda_max
            } else {
                lambda_max * settings.lambda_min_ratio.powf(k as f64 / last)
            }
        })
        .collect();
    let mut solutions = Vec::with_capacity(lambdas.len());
    for &lambda in &lambdas {
        let stats = problem.solve(lambda, &mut beta, &mut residual, settings);
        if !stats.converged {
            log::warn!(
                "lasso did not converge at lambda {lambda:.3e} after {} sweeps",
                stats.sweeps
            );
        }
        solutions.push(record(lambda, &beta, &residual, stats.converged)?);
    }
    Ok(LassoPath { lambdas, solutions })
}

/// Single-penalty solve, optionally warm-started from full-length coefficients.
pub fn solve_at(
    design: &DesignMatrix,
    outcome: ArrayView1<f64>,
    lambda: f64,
    warm_start: Option<&[f64]>,
    settings: &LassoSettings,
) -> Result<(Vec<f64>, f64)> {
    settings.validate()?;
    let problem = LassoProblem::new(design, outcome)?;
    let mut beta: Vec<f64> = match warm_start {
        Some(w) => problem.representative.iter().map(|&j| w[j]).collect(),
        None => vec![0.0; problem.n_unique()],
    };
    let mut residual = problem.residual(&beta);
    problem.solve(lambda, &mut beta, &mut residual, settings);
    Ok(problem.expand(&beta))
}

/// `(1/2n)||y - b0 - X b||^2 + lambda ||b||_1` on the raw design.
pub fn objective(
    design: &DesignMatrix,
    outcome: ArrayView1<f64>,
    coefficients: &[f64],
    intercept: f64,
    lambda: f64,
) -> f64 {
    let fitted = design.matvec(coefficients) + intercept;
    let n = outcome.len() as f64;
    let rss: f64 = fitted
        .iter()
        .zip(outcome)
        .map(|(f, y)| (y - f) * (y - f))
        .sum();
    0.5 * rss / n + lambda * coefficients.iter().map(|b| b.abs()).sum::<f64>()
}

/// Largest violation of the lasso optimality conditions.
///
/// With `g_j = (1/n) x_j' (y - b0 - X b)`: zero coefficients need `|g_j| <= lambda`,
/// nonzero ones need `g_j = lambda * sign(b_j)`.
pub fn kkt_violation(
    design: &DesignMatrix,
    outcome: ArrayView1<f64>,
    coefficients: &[f64],
    intercept: f64,
    lambda: f64,
) -> f64 {
    let n = outcome.len() as f64;
    let fitted = design.matvec(coefficients) + intercept;
    let r: Vec<f64> = outcome
        .iter()
        .zip(fitted.iter())
        .map(|(y, f)| y - f)
        .collect();
    let r_mean = r.iter().sum::<f64>() / n;
    let mut worst: f64 = r_mean.abs();
    for (j, &b) in coefficients.iter().enumerate() {
        let col = design.column(j);
        let mean = col.iter().sum::<f64>() / n;
        let g = col.iter().zip(&r).map(|(x, r)| (x - mean) * r).sum::<f64>() / n;
        let v = if b == 0.0 {
            (g.abs() - lambda).max(0.0)
        } else {
            (g - lambda * b.signum()).abs()
        };
        worst = worst.max(v);
    }
    worst
}

/// Lasso on the original covariates, penalty chosen on validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
}

impl LinearModel {
    pub fn predict(&self, features: ArrayView2<f64>) -> Result<Array1<f64>> {
        if features.ncols() != self.coefficients.len() {
            return Err(Error::DimensionMismatch {
                expected: self.coefficients.len(),
                found: features.ncols(),
            });
        }
        Ok(features.dot(&ArrayView1::from(&self.coefficients)) + self.intercept)
    }
}

pub fn fit_linear_lasso(
    train: &Dataset,
    validation: &Dataset,
    settings: &LassoSettings,
) -> Result<LinearModel> {
    let design = DesignMatrix::from_array(train.features().view())?;
    let val_design = DesignMatrix::from_array(validation.features().view())?;
    let path = solve_path(
        &design,
        train.outcome().view(),
        &val_design,
        validation.outcome().view(),
        settings,
    )?;
    let (_, best) = path.best_by_validation();
    Ok(LinearModel {
        coefficients: best.coefficients.clone(),
        intercept: best.intercept,
        lambda: best.lambda,
    })
}
