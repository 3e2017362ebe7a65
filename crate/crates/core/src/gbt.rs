//! Squared-error gradient boosting over [`RegressionTree`]s.
//!
//! Trees are fit to the current residual `y - f(x)` and added with a fixed
//! learning rate. Boosting stops once validation loss has exceeded the best
//! value seen so far by more than `epsilon` on `patience` consecutive rounds,
//! and the ensemble is truncated back to its best round.

use ndarray::{Array1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::cart::{fit_presorted, RegressionTree, SortedColumns, TreeParams};
use crate::dataset::{mse, Dataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopConfig {
    pub patience: usize,
    #[serde(with = "crate::serde_float")]
    pub epsilon: f64,
    pub max_trees: usize,
}

impl Default for EarlyStopConfig {
    fn default() -> Self {
        EarlyStopConfig {
            patience: 3,
            epsilon: 0.0,
            max_trees: 10_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbtConfig {
    pub learning_rate: f64,
    pub min_leaf: usize,
    /// Deepest tree the outer depth loop will try.
    pub max_depth: usize,
    pub early_stop: EarlyStopConfig,
}

impl Default for GbtConfig {
    fn default() -> Self {
        GbtConfig {
            learning_rate: 0.05,
            min_leaf: 1,
            max_depth: 10,
            early_stop: EarlyStopConfig::default(),
        }
    }
}

impl GbtConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::Config(format!(
                "learning_rate must lie in (0, 1], got {}",
                self.learning_rate
            )));
        }
        if self.min_leaf == 0 {
            return Err(Error::Config("min_leaf must be at least 1".into()));
        }
        if self.max_depth == 0 {
            return Err(Error::Config("max_depth must be at least 1".into()));
        }
        let es = &self.early_stop;
        if es.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if es.epsilon.is_nan() || es.epsilon < 0.0 {
            return Err(Error::Config(format!(
                "epsilon must be nonnegative, got {}",
                es.epsilon
            )));
        }
        if es.max_trees == 0 {
            return Err(Error::Config("max_trees must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedEnsemble {
    pub trees: Vec<RegressionTree>,
    pub learning_rate: f64,
    pub base_prediction: f64,
    pub depth: usize,
    pub n_features: usize,
    /// Validation loss of the constant `base_prediction` model.
    pub base_validation_loss: f64,
    /// Validation loss after each tree.
    pub validation_curve: Vec<f64>,
    /// Training loss after each tree.
    pub train_curve: Vec<f64>,
    /// Trees fit before truncation, counting extensions.
    pub iterations_run: usize,
}

impl BoostedEnsemble {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    /// Validation loss of the ensemble as returned.
    pub fn validation_loss(&self) -> f64 {
        self.validation_curve
            .last()
            .copied()
            .unwrap_or(self.base_validation_loss)
    }

    pub fn predict(&self, features: ArrayView2<f64>) -> Result<Array1<f64>> {
        if features.ncols() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                found: features.ncols(),
            });
        }
        let mut sum = Array1::zeros(features.nrows());
        for tree in &self.trees {
            sum += &tree.predict(features)?;
        }
        Ok(sum.mapv(|s| self.base_prediction + self.learning_rate * s))
    }

    /// Keeps the first `k` trees.
    pub fn truncate(&mut self, k: usize) {
        self.trees.truncate(k);
        self.validation_curve.truncate(k);
        self.train_curve.truncate(k);
    }

    /// Continues residual fitting at the ensemble's depth for up to `n_trees`
    /// rounds without early stopping. Returns how many trees were added; fewer
    /// than requested only when the learner can no longer split.
    pub fn extend(
        &mut self,
        train: &Dataset,
        validation: &Dataset,
        n_trees: usize,
        min_leaf: usize,
    ) -> Result<usize> {
        let mut state = BoostState::resume(self, train, validation)?;
        let params = TreeParams {
            max_depth: self.depth,
            min_leaf,
        };
        let mut added = 0;
        while added < n_trees {
            match state.step(self, params)? {
                Some(_) => added += 1,
                None => break,
            }
        }
        Ok(added)
    }
}

/// Cached predictions that let boosting continue without refitting history.
struct BoostState<'a> {
    train: &'a Dataset,
    validation: &'a Dataset,
    sorted: SortedColumns,
    train_pred: Vec<f64>,
    val_pred: Array1<f64>,
}

impl<'a> BoostState<'a> {
    fn resume(
        model: &BoostedEnsemble,
        train: &'a Dataset,
        validation: &'a Dataset,
    ) -> Result<Self> {
        if validation.n_features() != train.n_features() {
            return Err(Error::DimensionMismatch {
                expected: train.n_features(),
                found: validation.n_features(),
            });
        }
        // same accumulation order as `step`, so resuming is bit-identical
        let mut train_pred = vec![model.base_prediction; train.n_rows()];
        let mut val_pred = Array1::from_elem(validation.n_rows(), model.base_prediction);
        for tree in &model.trees {
            accumulate(
                &mut train_pred,
                model.learning_rate,
                tree.predict(train.features().view())?.as_slice().unwrap(),
            );
            accumulate(
                val_pred.as_slice_mut().unwrap(),
                model.learning_rate,
                tree.predict(validation.features().view())?
                    .as_slice()
                    .unwrap(),
            );
        }
        Ok(BoostState {
            train,
            validation,
            sorted: SortedColumns::new(train.features().view()),
            train_pred,
            val_pred,
        })
    }

    /// Fits and appends one tree; `None` when the tree would be a bare leaf.
    fn step(&mut self, model: &mut BoostedEnsemble, params: TreeParams) -> Result<Option<f64>> {
        let y = self.train.outcome();
        let residual: Vec<f64> = y.iter().zip(&self.train_pred).map(|(y, f)| y - f).collect();
        let (tree, fitted) = fit_presorted(
            self.train.features().view(),
            &self.sorted,
            &residual,
            params,
        );
        // a single leaf predicts the mean residual, which is already ~0
        if tree.is_leaf() {
            return Ok(None);
        }
        let lr = model.learning_rate;
        accumulate(&mut self.train_pred, lr, &fitted);
        let h_val = tree.predict(self.validation.features().view())?;
        accumulate(
            self.val_pred.as_slice_mut().unwrap(),
            lr,
            h_val.as_slice().unwrap(),
        );

        let train_loss = mse(Array1::from(self.train_pred.clone()).view(), y.view())?;
        let val_loss = mse(self.val_pred.view(), self.validation.outcome().view())?;
        model.trees.push(tree);
        model.train_curve.push(train_loss);
        model.validation_curve.push(val_loss);
        model.iterations_run += 1;
        Ok(Some(val_loss))
    }
}

fn accumulate(pred: &mut [f64], lr: f64, h: &[f64]) {
    for (f, h) in pred.iter_mut().zip(h) {
        *f += lr * h;
    }
}

fn check_pair(train: &Dataset, validation: &Dataset) -> Result<()> {
    if validation.n_features() != train.n_features() {
        return Err(Error::DimensionMismatch {
            expected: train.n_features(),
            found: validation.n_features(),
        });
    }
    Ok(())
}

/// Boosts trees of a fixed depth with validation early stopping.
pub fn fit_gbt(
    train: &Dataset,
    validation: &Dataset,
    depth: usize,
    config: &GbtConfig,
) -> Result<BoostedEnsemble> {
    config.validate()?;
    check_pair(train, validation)?;
    if depth == 0 {
        return Err(Error::Config("tree depth must be at least 1".into()));
    }
    let y = train.outcome();
    let base = y.sum() / y.len() as f64;
    let base_validation_loss = mse(
        Array1::from_elem(validation.n_rows(), base).view(),
        validation.outcome().view(),
    )?;
    let mut model = BoostedEnsemble {
        trees: Vec::new(),
        learning_rate: config.learning_rate,
        base_prediction: base,
        depth,
        n_features: train.n_features(),
        base_validation_loss,
        validation_curve: Vec::new(),
        train_curve: Vec::new(),
        iterations_run: 0,
    };
    let params = TreeParams {
        max_depth: depth,
        min_leaf: config.min_leaf,
    };
    let es = config.early_stop;
    let mut state = BoostState::resume(&model, train, validation)?;
    let mut best = base_validation_loss;
    let mut best_k = 0;
    let mut streak = 0;
    while model.trees.len() < es.max_trees {
        let Some(loss) = state.step(&mut model, params)? else {
            break;
        };
        if loss < best {
            best = loss;
            best_k = model.trees.len();
            streak = 0;
        } else if loss - best > es.epsilon {
            streak += 1;
            if streak >= es.patience {
                break;
            }
        } else {
            streak = 0;
        }
    }
    log::debug!(
        "depth {depth}: ran {} trees, best at {best_k} (val {best:.6})",
        model.iterations_run
    );
    model.truncate(best_k);
    Ok(model)
}

/// Outer depth loop: depth 1, 2, ... until the best validation loss rises.
pub fn fit_gbt_tuned(
    train: &Dataset,
    validation: &Dataset,
    config: &GbtConfig,
) -> Result<BoostedEnsemble> {
    let mut best = fit_gbt(train, validation, 1, config)?;
    for depth in 2..=config.max_depth {
        let candidate = fit_gbt(train, validation, depth, config)?;
        if candidate.validation_loss() > best.validation_loss() {
            break;
        }
        best = candidate;
    }
    log::debug!(
        "tuned depth {} with {} trees (val {:.6})",
        best.depth,
        best.n_trees(),
        best.validation_loss()
    );
    Ok(best)
}

pub fn predict_ensemble(model: &BoostedEnsemble, features: ArrayView2<f64>) -> Result<Array1<f64>> {
    model.predict(features)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn step_data(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, 1), |_| rng.random_range(-1.0..1.0));
        let y = x.column(0).mapv(|v| if v >= 0.0 { 1.0 } else { 0.0 })
            + Array1::from_shape_fn(n, |_| 0.1 * rng.sample::<f64, _>(StandardNormal));
        Dataset::new(x, y).unwrap()
    }

    fn noisy_2d(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, 2), |_| rng.random_range(-1.0f64..1.0));
        let y = Array1::from_shape_fn(n, |i| {
            x[[i, 0]].sin() + x[[i, 0]] * x[[i, 1]] + 0.3 * rng.sample::<f64, _>(StandardNormal)
        });
        Dataset::new(x, y).unwrap()
    }

    #[test]
    fn protocol_defaults() {
        let c = GbtConfig::default();
        assert_eq!(c.learning_rate, 0.05);
        assert_eq!(c.early_stop.patience, 3);
        assert_eq!(c.early_stop.epsilon, 0.0);
        assert_eq!(c.early_stop.max_trees, 10_000);
    }

    #[test]
    fn constant_outcome_yields_no_trees() {
        let x = Array2::from_shape_fn((20, 2), |(i, j)| (i * (j + 1)) as f64);
        let train = Dataset::new(x.clone(), Array1::from_elem(20, 3.0)).unwrap();
        let mut y_val = Array1::from_elem(20, 3.0);
        y_val[0] = 5.0;
        let val = Dataset::new(x, y_val.clone()).unwrap();
        let model = fit_gbt(&train, &val, 2, &GbtConfig::default()).unwrap();
        assert_eq!(model.n_trees(), 0);
        let expected = y_val.iter().map(|v| (v - 3.0) * (v - 3.0)).sum::<f64>() / 20.0;
        assert!((model.validation_loss() - expected).abs() < 1e-12);
        let tuned = fit_gbt_tuned(&train, &val, &GbtConfig::default()).unwrap();
        assert_eq!(tuned.n_trees(), 0);
    }

    #[test]
    fn step_function_training_loss_decreases() {
        let train = step_data(200, 1);
        let val = step_data(60, 2);
        let model = fit_gbt(&train, &val, 1, &GbtConfig::default()).unwrap();
        assert!(model.n_trees() >= 10);
        for w in model.train_curve[..10].windows(2) {
            assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn returned_ensemble_is_validation_argmin() {
        let train = noisy_2d(300, 3);
        let val = noisy_2d(100, 4);
        let model = fit_gbt(&train, &val, 2, &GbtConfig::default()).unwrap();
        let last = model.validation_loss();
        assert!(model.validation_curve.iter().all(|&v| v >= last));
        assert!(last <= model.base_validation_loss);
        assert!(model.iterations_run >= model.n_trees() + 3);
        assert_eq!(model.validation_curve.len(), model.n_trees());
    }

    #[test]
    fn infinite_epsilon_runs_to_max_trees() {
        let train = noisy_2d(120, 5);
        let val = noisy_2d(40, 6);
        let config = GbtConfig {
            early_stop: EarlyStopConfig {
                patience: 1,
                epsilon: f64::INFINITY,
                max_trees: 250,
            },
            ..Default::default()
        };
        let model = fit_gbt(&train, &val, 3, &config).unwrap();
        assert_eq!(model.iterations_run, 250);
    }

    #[test]
    fn prediction_matches_loop_oracle() {
        let train = noisy_2d(150, 7);
        let val = noisy_2d(50, 8);
        let model = fit_gbt(&train, &val, 2, &GbtConfig::default()).unwrap();
        assert!(model.n_trees() > 3);
        let x = val.features();
        let pred = predict_ensemble(&model, x.view()).unwrap();
        for i in 0..x.nrows() {
            let mut acc = 0.0;
            for tree in &model.trees {
                acc += tree.predict_row(x.row(i));
            }
            let oracle = model.base_prediction + model.learning_rate * acc;
            assert!((pred[i] - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_and_single_tree_predictions() {
        let train = noisy_2d(80, 9);
        let val = noisy_2d(30, 10);
        let mut model = fit_gbt(&train, &val, 1, &GbtConfig::default()).unwrap();
        let x = val.features().view();
        let first = model.trees[0].clone();

        let single = BoostedEnsemble {
            trees: vec![first.clone()],
            learning_rate: 1.0,
            base_prediction: 0.0,
            ..model.clone()
        };
        assert_eq!(single.predict(x).unwrap(), first.predict(x).unwrap());

        model.truncate(0);
        assert!(model
            .predict(x)
            .unwrap()
            .iter()
            .all(|&v| v == model.base_prediction));
    }

    #[test]
    fn dropping_last_tree_is_linear() {
        let train = noisy_2d(150, 11);
        let val = noisy_2d(50, 12);
        let model = fit_gbt(&train, &val, 2, &GbtConfig::default()).unwrap();
        let x = val.features().view();
        let full = model.predict(x).unwrap();
        let mut shorter = model.clone();
        let k = shorter.n_trees();
        shorter.truncate(k - 1);
        let last = model.trees[k - 1].predict(x).unwrap();
        let diff = &full - &shorter.predict(x).unwrap();
        for (d, h) in diff.iter().zip(last.iter()) {
            assert!((d - model.learning_rate * h).abs() < 1e-12);
        }
    }

    #[test]
    fn extension_continues_residual_fit() {
        let train = noisy_2d(150, 13);
        let val = noisy_2d(50, 14);
        let mut model = fit_gbt(&train, &val, 2, &GbtConfig::default()).unwrap();
        let before = model.clone();
        let added = model.extend(&train, &val, 10, 1).unwrap();
        assert_eq!(added, 10);
        assert_eq!(model.n_trees(), before.n_trees() + 10);
        assert_eq!(&model.trees[..before.n_trees()], &before.trees[..]);
        assert_eq!(model.validation_curve.len(), model.n_trees());
        assert!(model.trees.iter().all(|t| t.depth() <= 2));
    }

    #[test]
    fn tuned_depth_is_deterministic() {
        let train = noisy_2d(200, 15);
        let val = noisy_2d(60, 16);
        let a = fit_gbt_tuned(&train, &val, &GbtConfig::default()).unwrap();
        let b = fit_gbt_tuned(&train, &val, &GbtConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_config() {
        let train = noisy_2d(20, 1);
        let bad = GbtConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        assert!(matches!(
            fit_gbt(&train, &train, 1, &bad),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            fit_gbt(&train, &train, 0, &GbtConfig::default()),
            Err(Error::Config(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn training_loss_never_increases(seed in any::<u64>(), depth in 1usize..4) {
            let train = noisy_2d(80, seed);
            let val = noisy_2d(30, seed.wrapping_add(1));
            let config = GbtConfig {
                early_stop: EarlyStopConfig { patience: 1, epsilon: f64::INFINITY, max_trees: 60 },
                ..Default::default()
            };
            let model = fit_gbt(&train, &val, depth, &config).unwrap();
            for w in model.train_curve.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-12);
            }
        }
    }
}
