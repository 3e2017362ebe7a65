//! Lassoed tree boosting.
//!
//! Boosting supplies the trees; a lasso path over the trees' prediction
//! columns supplies their weights. After every path solve the current best
//! solution is checked against all path solutions from earlier rounds. If one
//! with a smaller L1 norm validated better, the search stops and the best of
//! those earlier solutions is returned. Otherwise the ensemble grows by a few
//! trees and the path is solved again over every tree so far.

use std::path::Path;

use ndarray::{Array1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::cart::RegressionTree;
use crate::dataset::{format_float, write_atomic, Dataset};
use crate::error::{Error, Result};
use crate::gbt::{fit_gbt_tuned, BoostedEnsemble, GbtConfig};
use crate::lasso::{best_by_validation, solve_path, DesignMatrix, LassoSettings, LassoSolution};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LtbConfig {
    pub gbt: GbtConfig,
    pub lasso: LassoSettings,
    pub trees_per_iteration: usize,
    /// Defaults to `10 * learning_rate * sum_k max|leaf_k|` of the initial ensemble.
    pub l1_upper_bound: Option<f64>,
    #[serde(with = "crate::serde_float")]
    pub epsilon: f64,
    /// Stop once this many consecutive rounds reproduce the previous candidate
    /// exactly; 0 disables. Ignored when `epsilon` is infinite.
    pub stall_rounds: usize,
}

impl Default for LtbConfig {
    fn default() -> Self {
        LtbConfig {
            gbt: GbtConfig::default(),
            lasso: LassoSettings::default(),
            trees_per_iteration: 10,
            l1_upper_bound: None,
            epsilon: 0.0,
            stall_rounds: 3,
        }
    }
}

impl LtbConfig {
    pub fn validate(&self) -> Result<()> {
        self.gbt.validate()?;
        self.lasso.validate()?;
        if self.trees_per_iteration == 0 {
            return Err(Error::Config(
                "trees_per_iteration must be at least 1".into(),
            ));
        }
        if self.epsilon.is_nan() || self.epsilon < 0.0 {
            return Err(Error::Config(format!(
                "epsilon must be nonnegative, got {}",
                self.epsilon
            )));
        }
        if let Some(b) = self.l1_upper_bound {
            if b.is_nan() || b <= 0.0 {
                return Err(Error::Config(format!(
                    "l1_upper_bound must be positive, got {b}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub iteration: usize,
    pub lambda: f64,
    pub l1_norm: f64,
    pub validation_loss: f64,
}

/// Every path solution seen, in the order the rounds produced them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolutionLedger {
    pub entries: Vec<LedgerEntry>,
}

impl SolutionLedger {
    pub fn push_path(&mut self, iteration: usize, solutions: &[LassoSolution]) {
        if let Some(last) = self.entries.last() {
            assert!(
                last.iteration <= iteration,
                "ledger iterations must not decrease"
            );
        }
        self.entries.extend(solutions.iter().map(|s| LedgerEntry {
            iteration,
            lambda: s.lambda,
            l1_norm: s.l1_norm,
            validation_loss: s.validation_loss,
        }));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["iteration", "lambda", "l1_norm", "validation_loss"])?;
        for e in &self.entries {
            w.write_record([
                e.iteration.to_string(),
                format_float(e.lambda),
                format_float(e.l1_norm),
                format_float(e.validation_loss),
            ])?;
        }
        w.into_inner().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_csv()?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Outcome constant on the training split; nothing to boost.
    InterceptOnly,
    /// An earlier, smaller solution validated better.
    LookBack,
    MaxTrees,
    /// The weak learner could no longer split.
    Exhausted,
    /// New trees stopped changing the selected solution.
    Stalled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LtbModel {
    /// Trees with a nonzero weight, in boosting order.
    pub trees: Vec<RegressionTree>,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub selected_lambda: f64,
    pub ledger: SolutionLedger,
    pub depth: usize,
    pub learning_rate: f64,
    pub l1_norm: f64,
    pub l1_upper_bound: f64,
    pub validation_loss: f64,
    /// Round that produced the returned solution, starting at 1.
    pub selected_iteration: usize,
    pub iterations: usize,
    /// Tree count of the round that produced the returned solution.
    pub selected_tree_count: usize,
    pub initial_trees: usize,
    pub total_trees: usize,
    pub stop_reason: StopReason,
    pub config: LtbConfig,
    pub n_features: usize,
}

impl LtbModel {
    pub fn predict(&self, features: ArrayView2<f64>) -> Result<Array1<f64>> {
        if features.ncols() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                found: features.ncols(),
            });
        }
        let mut out = Array1::from_elem(features.nrows(), self.intercept);
        for (tree, &c) in self.trees.iter().zip(&self.coefficients) {
            out.scaled_add(c, &tree.predict(features)?);
        }
        Ok(out)
    }

    /// Ledger entries from rounds before the selected one that have a smaller
    /// L1 norm and validate better than the returned solution by more than `epsilon`.
    pub fn dominance_violations(&self, epsilon: f64) -> Vec<LedgerEntry> {
        self.ledger
            .entries
            .iter()
            .filter(|e| {
                e.iteration < self.selected_iteration
                    && e.l1_norm < self.l1_norm
                    && e.validation_loss + epsilon < self.validation_loss
            })
            .copied()
            .collect()
    }
}

pub fn predict_ltb(model: &LtbModel, features: ArrayView2<f64>) -> Result<Array1<f64>> {
    model.predict(features)
}

/// Column `k` holds tree `k`'s predictions.
pub fn build_design(trees: &[RegressionTree], features: ArrayView2<f64>) -> Result<DesignMatrix> {
    if trees.is_empty() {
        return Err(Error::Empty("tree list"));
    }
    let columns = trees
        .iter()
        .map(|t| t.predict(features).map(|v| v.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    DesignMatrix::from_columns(features.nrows(), columns)
}

#[derive(Debug, Clone)]
struct Snapshot {
    ledger_index: usize,
    iteration: usize,
    lambda: f64,
    l1_norm: f64,
    validation_loss: f64,
    coefficients: Vec<f64>,
    intercept: f64,
}

impl Snapshot {
    fn new(ledger_index: usize, iteration: usize, s: &LassoSolution) -> Self {
        Snapshot {
            ledger_index,
            iteration,
            lambda: s.lambda,
            l1_norm: s.l1_norm,
            validation_loss: s.validation_loss,
            coefficients: s.coefficients.clone(),
            intercept: s.intercept,
        }
    }
}

/// Keeps only entries that can still be the lowest-loss solution under some
/// L1 cutoff; ties are broken by smaller norm, then by earlier ledger position.
fn prune_front(front: &mut Vec<Snapshot>) {
    front.sort_by(|a, b| {
        a.l1_norm
            .total_cmp(&b.l1_norm)
            .then(a.validation_loss.total_cmp(&b.validation_loss))
            .then(a.ledger_index.cmp(&b.ledger_index))
    });
    let mut best = f64::INFINITY;
    front.retain(|s| {
        if s.validation_loss < best {
            best = s.validation_loss;
            true
        } else {
            false
        }
    });
}

fn default_l1_bound(ensemble: &BoostedEnsemble) -> f64 {
    10.0 * ensemble.learning_rate * ensemble.trees.iter().map(|t| t.max_leaf_abs()).sum::<f64>()
}

pub fn fit_ltb(train: &Dataset, validation: &Dataset, config: &LtbConfig) -> Result<LtbModel> {
    config.validate()?;
    let initial = fit_gbt_tuned(train, validation, &config.gbt)?;
    fit_ltb_from_ensemble(train, validation, initial, config)
}

/// Continues from an already tuned ensemble, which becomes the boosting state.
pub fn fit_ltb_from_ensemble(
    train: &Dataset,
    validation: &Dataset,
    mut ensemble: BoostedEnsemble,
    config: &LtbConfig,
) -> Result<LtbModel> {
    config.validate()?;
    let initial_trees = ensemble.n_trees();
    let (base, depth, learning_rate, base_loss) = (
        ensemble.base_prediction,
        ensemble.depth,
        ensemble.learning_rate,
        ensemble.base_validation_loss,
    );
    let template = |stop_reason| LtbModel {
        trees: Vec::new(),
        coefficients: Vec::new(),
        intercept: base,
        selected_lambda: 0.0,
        ledger: SolutionLedger::default(),
        depth,
        learning_rate,
        l1_norm: 0.0,
        l1_upper_bound: 0.0,
        validation_loss: base_loss,
        selected_iteration: 1,
        iterations: 1,
        selected_tree_count: 0,
        initial_trees,
        total_trees: 0,
        stop_reason,
        config: *config,
        n_features: train.n_features(),
    };
    if initial_trees == 0 {
        if !train.outcome_is_constant() {
            return Err(Error::NoTrees);
        }
        let mut model = template(StopReason::InterceptOnly);
        model.ledger.entries.push(LedgerEntry {
            iteration: 1,
            lambda: 0.0,
            l1_norm: 0.0,
            validation_loss: model.validation_loss,
        });
        return Ok(model);
    }

    let bound = config
        .l1_upper_bound
        .unwrap_or_else(|| default_l1_bound(&ensemble));
    let max_trees = config.gbt.early_stop.max_trees;
    let mut train_cols: Vec<Vec<f64>> = Vec::new();
    let mut val_cols: Vec<Vec<f64>> = Vec::new();
    let mut ledger = SolutionLedger::default();
    let mut front: Vec<Snapshot> = Vec::new();
    let mut iteration = 0;
    let mut previous: Option<(f64, f64)> = None;
    let mut stalled = 0;
    let (chosen, stop_reason) = loop {
        iteration += 1;
        for tree in &ensemble.trees[train_cols.len()..] {
            train_cols.push(tree.predict(train.features().view())?.to_vec());
            val_cols.push(tree.predict(validation.features().view())?.to_vec());
        }
        let design = DesignMatrix::from_columns(train.n_rows(), train_cols.clone())?;
        let val_design = DesignMatrix::from_columns(validation.n_rows(), val_cols.clone())?;
        let path = solve_path(
            &design,
            train.outcome().view(),
            &val_design,
            validation.outcome().view(),
            &config.lasso,
        )?;
        let offset = ledger.len();
        ledger.push_path(iteration, &path.solutions);

        let admissible: Vec<(usize, &LassoSolution)> = path
            .solutions
            .iter()
            .enumerate()
            .filter(|(_, s)| s.l1_norm <= bound)
            .collect();
        let pool: Vec<LassoSolution> = admissible.iter().map(|(_, s)| (*s).clone()).collect();
        let (pick, _) = best_by_validation(&pool)
            .ok_or_else(|| Error::Config("no path solution within the L1 bound".into()))?;
        let (path_index, candidate) = admissible[pick];
        let candidate = Snapshot::new(offset + path_index, iteration, candidate);

        // `front` only holds earlier rounds at this point
        let beaten = ledger.entries[..offset].iter().any(|e| {
            e.l1_norm < candidate.l1_norm
                && e.validation_loss + config.epsilon < candidate.validation_loss
        });
        log::debug!(
            "round {iteration}: {} trees, candidate l1 {:.4} val {:.6}{}",
            ensemble.n_trees(),
            candidate.l1_norm,
            candidate.validation_loss,
            if beaten { " (beaten)" } else { "" }
        );
        if beaten {
            let best = front
                .iter()
                .filter(|s| s.l1_norm < candidate.l1_norm)
                .min_by(|a, b| {
                    a.validation_loss
                        .total_cmp(&b.validation_loss)
                        .then(a.l1_norm.total_cmp(&b.l1_norm))
                        .then(a.ledger_index.cmp(&b.ledger_index))
                })
                .cloned()
                .expect("a beaten candidate has a smaller earlier solution");
            break (best, StopReason::LookBack);
        }

        front.extend(
            path.solutions
                .iter()
                .enumerate()
                .map(|(i, s)| Snapshot::new(offset + i, iteration, s)),
        );
        prune_front(&mut front);

        let key = (candidate.l1_norm, candidate.validation_loss);
        stalled = if previous == Some(key) {
            stalled + 1
        } else {
            0
        };
        previous = Some(key);
        if config.stall_rounds > 0 && config.epsilon.is_finite() && stalled >= config.stall_rounds {
            break (candidate, StopReason::Stalled);
        }

        if ensemble.n_trees() >= max_trees {
            break (candidate, StopReason::MaxTrees);
        }
        let room = config
            .trees_per_iteration
            .min(max_trees - ensemble.n_trees());
        if ensemble.extend(train, validation, room, config.gbt.min_leaf)? == 0 {
            break (candidate, StopReason::Exhausted);
        }
    };

    let mut trees = Vec::new();
    let mut coefficients = Vec::new();
    for (tree, &c) in ensemble.trees.iter().zip(&chosen.coefficients) {
        if c != 0.0 {
            trees.push(tree.clone());
            coefficients.push(c);
        }
    }
    log::debug!(
        "ltb: {:?} after {iteration} rounds, returning round {} ({} active trees)",
        stop_reason,
        chosen.iteration,
        trees.len()
    );
    let mut model = template(stop_reason);
    model.trees = trees;
    model.coefficients = coefficients;
    model.intercept = chosen.intercept;
    model.selected_lambda = chosen.lambda;
    model.ledger = ledger;
    model.l1_norm = chosen.l1_norm;
    model.l1_upper_bound = bound;
    model.validation_loss = chosen.validation_loss;
    model.selected_iteration = chosen.iteration;
    model.iterations = iteration;
    model.selected_tree_count = chosen.coefficients.len();
    model.total_trees = ensemble.n_trees();
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{mse, split_train_validation};
    use crate::gbt::{fit_gbt, EarlyStopConfig};
    use crate::lasso::{solve_at, LassoProblem};
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn noisy(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, 3), |_| rng.random_range(-1.0f64..1.0));
        let y = Array1::from_shape_fn(n, |i| {
            (3.0 * x[[i, 0]]).sin()
                + x[[i, 1]] * x[[i, 2]]
                + 0.3 * rng.sample::<f64, _>(StandardNormal)
        });
        Dataset::new(x, y).unwrap()
    }

    fn fast() -> LtbConfig {
        LtbConfig {
            gbt: GbtConfig {
                learning_rate: 0.1,
                max_depth: 3,
                ..Default::default()
            },
            lasso: LassoSettings {
                n_lambdas: 40,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn design_columns_are_tree_predictions() {
        let data = noisy(80, 1);
        let (train, val) = split_train_validation(&data, 0.2, 1).unwrap();
        let ens = fit_gbt(&train, &val, 2, &fast().gbt).unwrap();
        assert!(ens.n_trees() > 1);
        let design = build_design(&ens.trees, data.features().view()).unwrap();
        for (k, tree) in ens.trees.iter().enumerate() {
            let col = tree.predict(data.features().view()).unwrap();
            assert_eq!(design.column(k), col.as_slice().unwrap());
        }
        let weights = vec![ens.learning_rate; ens.n_trees()];
        let via_design = design.matvec(&weights) + ens.base_prediction;
        let direct = ens.predict(data.features().view()).unwrap();
        for (a, b) in via_design.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(matches!(
            build_design(&[], data.features().view()),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn constant_outcome_is_intercept_only() {
        let x = Array2::from_shape_fn((40, 2), |(i, j)| (i * (j + 1)) as f64);
        let data = Dataset::new(x, Array1::from_elem(40, 4.5)).unwrap();
        let (train, val) = split_train_validation(&data, 0.2, 0).unwrap();
        let model = fit_ltb(&train, &val, &fast()).unwrap();
        assert!(model.trees.is_empty());
        assert_eq!(model.intercept, 4.5);
        assert_eq!(model.iterations, 1);
        assert_eq!(model.stop_reason, StopReason::InterceptOnly);
        let pred = model.predict(data.features().view()).unwrap();
        assert!(pred.iter().all(|&v| v == 4.5));
    }

    #[test]
    fn returned_solution_is_not_dominated() {
        for seed in 0..4 {
            let data = noisy(150, seed);
            let (train, val) = split_train_validation(&data, 0.2, seed).unwrap();
            let model = fit_ltb(&train, &val, &fast()).unwrap();
            assert!(model.dominance_violations(0.0).is_empty(), "seed {seed}");
            assert!(model.l1_norm <= model.l1_upper_bound);
            let sum: f64 = model.coefficients.iter().map(|c| c.abs()).sum();
            assert!((sum - model.l1_norm).abs() < 1e-9 * (1.0 + sum));
            let mut last = 0;
            for e in &model.ledger.entries {
                assert!(e.iteration >= last);
                last = e.iteration;
            }
        }
    }

    #[test]
    fn prediction_matches_design_oracle() {
        let data = noisy(120, 9);
        let (train, val) = split_train_validation(&data, 0.2, 9).unwrap();
        let model = fit_ltb(&train, &val, &fast()).unwrap();
        let pred = model.predict(data.features().view()).unwrap();
        let oracle: Vec<f64> = (0..data.n_rows())
            .map(|i| {
                let row = data.features().row(i);
                model.intercept
                    + model
                        .trees
                        .iter()
                        .zip(&model.coefficients)
                        .map(|(t, c)| c * t.predict_row(row))
                        .sum::<f64>()
            })
            .collect();
        for (a, b) in pred.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
        let val_pred = model.predict(val.features().view()).unwrap();
        let val_loss = mse(val_pred.view(), val.outcome().view()).unwrap();
        assert!((val_loss - model.validation_loss).abs() < 1e-9);
        assert!(model.predict(Array2::zeros((2, 5)).view()).is_err());
    }

    #[test]
    fn infinite_epsilon_runs_to_max_trees() {
        let data = noisy(100, 3);
        let (train, val) = split_train_validation(&data, 0.2, 3).unwrap();
        let mut config = fast();
        config.epsilon = f64::INFINITY;
        config.gbt.early_stop = EarlyStopConfig {
            max_trees: 200,
            ..Default::default()
        };
        let initial = fit_gbt_tuned(&train, &val, &config.gbt).unwrap();
        let k0 = initial.n_trees();
        let model = fit_ltb_from_ensemble(&train, &val, initial, &config).unwrap();
        assert_eq!(model.stop_reason, StopReason::MaxTrees);
        assert_eq!(model.total_trees, 200);
        assert_eq!(model.selected_iteration, model.iterations);
        assert_eq!(model.iterations, 1 + (200 - k0).div_ceil(10));
        assert_eq!(model.selected_tree_count, 200);
    }

    #[test]
    fn repeated_candidates_stop_the_search() {
        let data = noisy(150, 1);
        let (train, val) = split_train_validation(&data, 0.2, 1).unwrap();
        let mut config = fast();
        let model = fit_ltb(&train, &val, &config).unwrap();
        assert!(model.total_trees < 10_000);
        config.stall_rounds = 0;
        config.gbt.early_stop.max_trees = 300;
        let unguarded = fit_ltb(&train, &val, &config).unwrap();
        if model.stop_reason == StopReason::Stalled {
            assert!(unguarded.iterations > model.iterations);
        }
        assert!(unguarded.dominance_violations(0.0).is_empty());
    }

    #[test]
    fn tree_columns_are_nested_across_rounds() {
        let data = noisy(100, 4);
        let (train, val) = split_train_validation(&data, 0.2, 4).unwrap();
        let config = fast();
        let base = fit_gbt_tuned(&train, &val, &config.gbt).unwrap();
        let mut grown = base.clone();
        grown.extend(&train, &val, 10, config.gbt.min_leaf).unwrap();
        assert_eq!(&grown.trees[..base.n_trees()], &base.trees[..]);
        let mut twice = base.clone();
        twice.extend(&train, &val, 5, config.gbt.min_leaf).unwrap();
        twice.extend(&train, &val, 5, config.gbt.min_leaf).unwrap();
        assert_eq!(twice.trees, grown.trees);
    }

    #[test]
    fn joint_refit_differs_from_stagewise() {
        let data = noisy(120, 5);
        let (train, val) = split_train_validation(&data, 0.2, 5).unwrap();
        let ens = fit_gbt(&train, &val, 2, &fast().gbt).unwrap();
        let design = build_design(&ens.trees, train.features().view()).unwrap();
        let y = train.outcome().view();
        let settings = LassoSettings {
            tol: 1e-24,
            ..Default::default()
        };
        let lambda = 0.05 * LassoProblem::new(&design, y).unwrap().lambda_max();
        let (joint, _) = solve_at(&design, y, lambda, None, &settings).unwrap();
        assert!(joint.iter().filter(|&&b| b != 0.0).count() >= 2);

        // one forward pass of univariate soft-thresholded fits
        let n = y.len() as f64;
        let mut r: Vec<f64> = y.iter().map(|v| v - y.mean().unwrap()).collect();
        let mut stagewise = vec![0.0; design.n_cols()];
        for (j, w) in stagewise.iter_mut().enumerate() {
            let col = design.column(j);
            let m = col.iter().sum::<f64>() / n;
            let xc: Vec<f64> = col.iter().map(|v| v - m).collect();
            let s = xc.iter().map(|v| v * v).sum::<f64>() / n;
            if s == 0.0 {
                continue;
            }
            let g = xc.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / n;
            *w = g.signum() * (g.abs() - lambda).max(0.0) / s;
            for (ri, xi) in r.iter_mut().zip(&xc) {
                *ri -= *w * xi;
            }
        }
        let gap: f64 = joint
            .iter()
            .zip(&stagewise)
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(gap > 1e-6, "joint and stagewise agree ({gap})");

        // dropping an active tree moves the remaining weights
        let k = joint.iter().position(|&b| b != 0.0).unwrap();
        let kept: Vec<usize> = (0..design.n_cols()).filter(|&j| j != k).collect();
        let reduced = DesignMatrix::from_columns(
            design.n_rows(),
            kept.iter().map(|&j| design.column(j).to_vec()).collect(),
        )
        .unwrap();
        let (refit, _) = solve_at(&reduced, y, lambda, None, &settings).unwrap();
        let moved: f64 = kept
            .iter()
            .zip(&refit)
            .map(|(&j, b)| (joint[j] - b).abs())
            .sum();
        assert!(moved > 1e-6);
    }

    #[test]
    fn extension_adds_nothing_when_learner_is_exhausted() {
        let x = Array2::from_shape_fn((30, 1), |(i, _)| (i % 2) as f64);
        let y = x.column(0).mapv(|v| 2.0 * v);
        let data = Dataset::new(x, y).unwrap();
        let model = fit_ltb(&data, &data, &fast()).unwrap();
        let pred = model.predict(data.features().view()).unwrap();
        assert!(mse(pred.view(), data.outcome().view()).unwrap() < 1e-3);
    }

    #[test]
    fn deterministic() {
        let data = noisy(100, 6);
        let (train, val) = split_train_validation(&data, 0.2, 6).unwrap();
        let a = fit_ltb(&train, &val, &fast()).unwrap();
        let b = fit_ltb(&train, &val, &fast()).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn ledger_csv_has_one_row_per_entry() {
        let data = noisy(80, 7);
        let (train, val) = split_train_validation(&data, 0.2, 7).unwrap();
        let model = fit_ltb(&train, &val, &fast()).unwrap();
        let text = String::from_utf8(model.ledger.to_csv().unwrap()).unwrap();
        assert_eq!(text.lines().count(), model.ledger.len() + 1);
        assert!(text.starts_with("iteration,lambda,l1_norm,validation_loss"));
    }

    #[test]
    fn config_validation() {
        let mut c = LtbConfig::default();
        c.trees_per_iteration = 0;
        assert!(c.validate().is_err());
        let mut c = LtbConfig::default();
        c.epsilon = -1.0;
        assert!(c.validate().is_err());
        let mut c = LtbConfig::default();
        c.l1_upper_bound = Some(0.0);
        assert!(c.validate().is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(8))]

        #[test]
        fn returned_fit_is_undominated_and_reproducible(seed in proptest::prelude::any::<u64>(), n in 40usize..120) {
            let data = noisy(n, seed);
            let (train, val) = split_train_validation(&data, 0.2, seed).unwrap();
            let a = fit_ltb(&train, &val, &fast()).unwrap();
            proptest::prop_assert!(a.dominance_violations(0.0).is_empty());
            let b = fit_ltb(&train, &val, &fast()).unwrap();
            proptest::prop_assert_eq!(a, b);
        }
    }
}
