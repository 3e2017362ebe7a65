//! Highly adaptive lasso over step indicators `1(c <= x)` on the knot lattice.
//!
//! The lattice is the Cartesian product of each feature's distinct observed
//! values, so its size is the product of per-feature cardinalities. That grows
//! like `n^p`, and anything beyond the configured cap is refused with
//! [`Error::LatticeCap`].
//!
//! Also here: rewriting a half-open rectangle indicator `1(a <= x < b)` as a
//! signed sum of corner steps. The sign of corner `c` is `(-1)^k`, where `k`
//! is the number of coordinates taken from the upper bound `b`. In one
//! dimension that is `1(a <= x) - 1(b <= x)`.

use ndarray::{Array1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::cart::Rectangle;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::lasso::{best_by_validation, solve_path, DesignMatrix, LassoSettings};

pub const DEFAULT_LATTICE_CAP: usize = 200_000;

#[derive(Debug, Clone, PartialEq)]
pub struct KnotLattice {
    values: Vec<Vec<f64>>,
}

fn sorted_unique(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.map(|x| x + 0.0).collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// `|C_n|` without materializing anything; saturates instead of overflowing.
pub fn lattice_size(features: ArrayView2<f64>) -> u128 {
    features
        .columns()
        .into_iter()
        .map(|c| sorted_unique(c.iter().copied()).len() as u128)
        .fold(1u128, |acc, k| acc.saturating_mul(k))
}

pub fn build_lattice(features: ArrayView2<f64>, cap: usize) -> Result<KnotLattice> {
    if features.nrows() == 0 {
        return Err(Error::Empty("lattice of zero rows"));
    }
    let values: Vec<Vec<f64>> = features
        .columns()
        .into_iter()
        .map(|c| sorted_unique(c.iter().copied()))
        .collect();
    let lattice = KnotLattice { values };
    let size = lattice.size();
    if size > cap as u128 {
        return Err(Error::LatticeCap { size, cap });
    }
    Ok(lattice)
}

impl KnotLattice {
    pub fn n_dims(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self, dim: usize) -> &[f64] {
        &self.values[dim]
    }

    pub fn size(&self) -> u128 {
        self.values
            .iter()
            .fold(1u128, |acc, v| acc.saturating_mul(v.len() as u128))
    }

    /// Knot at a lexicographic position; the last dimension varies fastest.
    pub fn knot(&self, mut index: usize) -> Vec<f64> {
        let mut knot = vec![0.0; self.n_dims()];
        for (slot, vals) in knot.iter_mut().zip(&self.values).rev() {
            *slot = vals[index % vals.len()];
            index /= vals.len();
        }
        knot
    }

    pub fn knots(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.size() as usize).map(move |i| self.knot(i))
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point
            .iter()
            .zip(&self.values)
            .all(|(x, vals)| vals.binary_search_by(|v| v.total_cmp(&(x + 0.0))).is_ok())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepBasis {
    pub knot: Vec<f64>,
}

impl StepBasis {
    pub fn new(knot: Vec<f64>) -> Self {
        StepBasis { knot }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        if self.knot.iter().zip(x).all(|(c, v)| c <= v) {
            1.0
        } else {
            0.0
        }
    }
}

/// Binary design whose column for knot `c` is `1(c <= x_i)`.
pub fn step_design(
    lattice: &KnotLattice,
    features: ArrayView2<f64>,
    cap: usize,
) -> Result<DesignMatrix> {
    let size = lattice.size();
    if size > cap as u128 {
        return Err(Error::LatticeCap { size, cap });
    }
    if features.ncols() != lattice.n_dims() {
        return Err(Error::DimensionMismatch {
            expected: lattice.n_dims(),
            found: features.ncols(),
        });
    }
    let m = features.nrows();
    let p = lattice.n_dims();
    // rank[i][j] = number of lattice values in dim j that are <= x_ij
    let ranks: Vec<Vec<usize>> = features
        .rows()
        .into_iter()
        .map(|row| {
            row.iter()
                .zip(&lattice.values)
                .map(|(x, vals)| vals.partition_point(|v| v <= x))
                .collect()
        })
        .collect();
    let size = size as usize;
    let mut columns = Vec::with_capacity(size);
    let mut digits = vec![0usize; p];
    for _ in 0..size {
        let col: Vec<f64> = ranks
            .iter()
            .map(|r| {
                if digits.iter().zip(r).all(|(k, rank)| k < rank) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        columns.push(col);
        for j in (0..p).rev() {
            digits[j] += 1;
            if digits[j] < lattice.values[j].len() {
                break;
            }
            digits[j] = 0;
        }
    }
    DesignMatrix::from_columns(m, columns)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalConfig {
    pub lasso: LassoSettings,
    pub lattice_cap: usize,
    /// Optional bound on the variation norm of the selected fit.
    pub variation_bound: Option<f64>,
}

impl Default for HalConfig {
    fn default() -> Self {
        HalConfig {
            lasso: LassoSettings::default(),
            lattice_cap: DEFAULT_LATTICE_CAP,
            variation_bound: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalModel {
    pub bases: Vec<(StepBasis, f64)>,
    pub intercept: f64,
    pub variation_norm: f64,
    pub selected_lambda: f64,
    pub n_features: usize,
    pub n_knots: usize,
    pub validation_loss: f64,
}

impl HalModel {
    pub fn predict(&self, features: ArrayView2<f64>) -> Result<Array1<f64>> {
        if features.ncols() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                found: features.ncols(),
            });
        }
        Ok(features
            .rows()
            .into_iter()
            .map(|row| {
                let x = row.to_vec();
                self.intercept
                    + self
                        .bases
                        .iter()
                        .map(|(b, coef)| coef * b.eval(&x))
                        .sum::<f64>()
            })
            .collect())
    }
}

pub fn fit_hal(train: &Dataset, validation: &Dataset, config: &HalConfig) -> Result<HalModel> {
    let lattice = build_lattice(train.features().view(), config.lattice_cap)?;
    let full = step_design(&lattice, train.features().view(), config.lattice_cap)?;
    let full_val = step_design(&lattice, validation.features().view(), config.lattice_cap)?;

    // columns constant on the training rows duplicate the intercept
    let keep: Vec<usize> = (0..full.n_cols())
        .filter(|&j| {
            let c = full.column(j);
            c.iter().any(|&v| v != c[0])
        })
        .collect();
    let pick = |d: &DesignMatrix| {
        DesignMatrix::new(
            d.n_rows(),
            keep.iter().map(|&j| d.column(j).to_vec()).collect(),
            keep.clone(),
        )
    };
    let design = pick(&full)?;
    let val_design = pick(&full_val)?;
    drop((full, full_val));

    let mut path = solve_path(
        &design,
        train.outcome().view(),
        &val_design,
        validation.outcome().view(),
        &config.lasso,
    )?;
    if let Some(bound) = config.variation_bound {
        path.solutions.retain(|s| s.l1_norm <= bound);
    }
    let (_, best) = best_by_validation(&path.solutions)
        .ok_or_else(|| Error::Config("no path solution within the variation bound".into()))?;
    let bases = best
        .coefficients
        .iter()
        .zip(design.column_ids())
        .filter(|(&b, _)| b != 0.0)
        .map(|(&b, &knot)| (StepBasis::new(lattice.knot(knot)), b))
        .collect();
    Ok(HalModel {
        bases,
        intercept: best.intercept,
        variation_norm: best.l1_norm,
        selected_lambda: best.lambda,
        n_features: train.n_features(),
        n_knots: lattice.size() as usize,
        validation_loss: best.validation_loss,
    })
}

/// Signed corner steps summing pointwise to the rectangle's indicator.
///
/// Corners with a `+inf` coordinate are dropped since `1(inf <= x)` is zero;
/// a `-inf` lower bound stays as a knot coordinate, where `1(-inf <= x)` is one.
pub fn rectangle_to_steps(rect: &Rectangle) -> Result<Vec<(StepBasis, f64)>> {
    let p = rect.dim();
    for j in 0..p {
        if !(rect.lower[j] < rect.upper[j]) {
            return Err(Error::DegenerateRectangle(j));
        }
    }
    let mut out = Vec::with_capacity(1 << p);
    for mask in 0usize..(1 << p) {
        let mut knot = Vec::with_capacity(p);
        let mut zero = false;
        for j in 0..p {
            let c = if mask >> j & 1 == 1 {
                rect.upper[j]
            } else {
                rect.lower[j]
            };
            if c == f64::INFINITY {
                zero = true;
                break;
            }
            knot.push(c);
        }
        if zero {
            continue;
        }
        let sign = if mask.count_ones() % 2 == 0 {
            1.0
        } else {
            -1.0
        };
        out.push((StepBasis::new(knot), sign));
    }
    Ok(out)
}

/// Step-basis coefficients of `sum_k coefficient_k * 1(lower_k <= x < upper_k)`,
/// with coefficients on a shared knot merged.
pub fn rectangles_to_step_coefficients(rects: &[Rectangle]) -> Result<Vec<(StepBasis, f64)>> {
    let mut merged: Vec<(StepBasis, f64)> = Vec::new();
    let mut index: std::collections::BTreeMap<Vec<u64>, usize> = Default::default();
    for rect in rects {
        for (basis, sign) in rectangle_to_steps(rect)? {
            let key: Vec<u64> = basis.knot.iter().map(|c| (c + 0.0).to_bits()).collect();
            match index.get(&key) {
                Some(&i) => merged[i].1 += sign * rect.coefficient,
                None => {
                    index.insert(key, merged.len());
                    merged.push((basis, sign * rect.coefficient));
                }
            }
        }
    }
    Ok(merged)
}
