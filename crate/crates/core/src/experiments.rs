//! Simulation and benchmark harnesses.
//!
//! The rate study draws samples of increasing size from a known regression
//! function and measures L2 error against the noiseless mean on a fresh
//! holdout. The benchmark fits each estimator to repeated random splits of
//! CSV datasets and reports test RMSE and fitting time.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    format_float, load_csv, mse, split, split_train_validation, write_atomic, Dataset,
    OutcomeColumn, SplitSpec,
};
use crate::error::{Error, Result};
use crate::gbt::{fit_gbt_tuned, BoostedEnsemble};
use crate::hal::{fit_hal, lattice_size, HalConfig, HalModel};
use crate::lasso::{fit_linear_lasso, LinearModel};
use crate::ltb::{fit_ltb_from_ensemble, LtbConfig, LtbModel, StopReason};

/// Noiseless regression function of the simulation.
pub fn dgp_mean(x1: f64, x2: f64) -> f64 {
    -0.5 * x1 + x2 * x1 * x1 / 2.75 + x2
}

#[derive(Debug, Clone)]
pub struct DgpSample {
    pub data: Dataset,
    /// `dgp_mean` at each row.
    pub mean: Array1<f64>,
    pub seed: u64,
}

/// `x1 ~ U(-4, 4)`, `x2 ~ Bernoulli(1/2)`, `y = dgp_mean(x1, x2) + N(0, 1)`.
pub fn generate_dgp(n: usize, seed: u64) -> Result<DgpSample> {
    if n == 0 {
        return Err(Error::Empty("simulated sample of size zero"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Array2::zeros((n, 2));
    let mut mean = Array1::zeros(n);
    let mut outcome = Array1::zeros(n);
    for i in 0..n {
        let x1 = rng.random_range(-4.0..4.0);
        let x2 = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
        let noise: f64 = rng.sample(StandardNormal);
        features[[i, 0]] = x1;
        features[[i, 1]] = x2;
        mean[i] = dgp_mean(x1, x2);
        outcome[i] = mean[i] + noise;
    }
    let data =
        Dataset::new(features, outcome)?.with_names(vec!["x1".into(), "x2".into()], "y".into())?;
    Ok(DgpSample { data, mean, seed })
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for a path of integer labels under `base`.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix(base), |acc, &p| splitmix(acc ^ splitmix(p)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Ltb,
    Gbt,
    Hal,
    Lasso,
    Mean,
}

impl Estimator {
    pub const ALL: [Estimator; 5] = [
        Estimator::Ltb,
        Estimator::Gbt,
        Estimator::Hal,
        Estimator::Lasso,
        Estimator::Mean,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Ltb => "ltb",
            Estimator::Gbt => "gbt",
            Estimator::Hal => "hal",
            Estimator::Lasso => "lasso",
            Estimator::Mean => "mean",
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ltb" => Ok(Estimator::Ltb),
            "gbt" => Ok(Estimator::Gbt),
            "hal" => Ok(Estimator::Hal),
            "lasso" => Ok(Estimator::Lasso),
            "mean" | "mean-only" | "intercept" => Ok(Estimator::Mean),
            other => Err(Error::Config(format!(
                "unknown estimator {other:?} (expected ltb, gbt, hal, lasso or mean)"
            ))),
        }
    }
}

/// Hyperparameters for every estimator; GBT uses `ltb.gbt`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub ltb: LtbConfig,
    pub hal: HalConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.ltb.validate()?;
        self.hal.lasso.validate()?;
        if self.hal.lattice_cap == 0 {
            return Err(Error::Config("lattice cap must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "estimator", rename_all = "lowercase")]
pub enum FittedModel {
    Ltb(LtbModel),
    Gbt(BoostedEnsemble),
    Hal(HalModel),
    Lasso(LinearModel),
    Mean { value: f64, n_features: usize },
}

impl FittedModel {
    pub fn estimator(&self) -> Estimator {
        match self {
            FittedModel::Ltb(_) => Estimator::Ltb,
            FittedModel::Gbt(_) => Estimator::Gbt,
            FittedModel::Hal(_) => Estimator::Hal,
            FittedModel::Lasso(_) => Estimator::Lasso,
            FittedModel::Mean { .. } => Estimator::Mean,
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            FittedModel::Ltb(m) => m.n_features,
            FittedModel::Gbt(m) => m.n_features,
            FittedModel::Hal(m) => m.n_features,
            FittedModel::Lasso(m) => m.coefficients.len(),
            FittedModel::Mean { n_features, .. } => *n_features,
        }
    }

    pub fn predict(&self, features: ArrayView2<f64>) -> Result<Array1<f64>> {
        match self {
            FittedModel::Ltb(m) => m.predict(features),
            FittedModel::Gbt(m) => m.predict(features),
            FittedModel::Hal(m) => m.predict(features),
            FittedModel::Lasso(m) => m.predict(features),
            FittedModel::Mean { value, n_features } => {
                if features.ncols() != *n_features {
                    return Err(Error::DimensionMismatch {
                        expected: *n_features,
                        found: features.ncols(),
                    });
                }
                Ok(Array1::from_elem(features.nrows(), *value))
            }
        }
    }

    pub fn depth(&self) -> Option<usize> {
        match self {
            FittedModel::Ltb(m) => Some(m.depth),
            FittedModel::Gbt(m) => Some(m.depth),
            _ => None,
        }
    }

    pub fn n_trees(&self) -> Option<usize> {
        match self {
            FittedModel::Ltb(m) => Some(m.trees.len()),
            FittedModel::Gbt(m) => Some(m.n_trees()),
            _ => None,
        }
    }

    pub fn lambda(&self) -> Option<f64> {
        match self {
            FittedModel::Ltb(m) => Some(m.selected_lambda),
            FittedModel::Hal(m) => Some(m.selected_lambda),
            FittedModel::Lasso(m) => Some(m.lambda),
            _ => None,
        }
    }
}

/// Outcome of fitting one estimator on one split.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub estimator: Estimator,
    pub result: std::result::Result<FittedModel, String>,
    pub infeasible: bool,
    /// Wall-clock seconds spent fitting and tuning.
    pub seconds: f64,
}

pub fn fit_estimator(
    estimator: Estimator,
    train: &Dataset,
    validation: &Dataset,
    config: &ModelConfig,
) -> Result<FittedModel> {
    match estimator {
        Estimator::Ltb => {
            let ens = fit_gbt_tuned(train, validation, &config.ltb.gbt)?;
            Ok(FittedModel::Ltb(fit_ltb_from_ensemble(
                train,
                validation,
                ens,
                &config.ltb,
            )?))
        }
        Estimator::Gbt => Ok(FittedModel::Gbt(fit_gbt_tuned(
            train,
            validation,
            &config.ltb.gbt,
        )?)),
        Estimator::Hal => Ok(FittedModel::Hal(fit_hal(train, validation, &config.hal)?)),
        Estimator::Lasso => Ok(FittedModel::Lasso(fit_linear_lasso(
            train,
            validation,
            &config.hal.lasso,
        )?)),
        Estimator::Mean => {
            let y = train.outcome();
            Ok(FittedModel::Mean {
                value: y.sum() / y.len() as f64,
                n_features: train.n_features(),
            })
        }
    }
}

type Boosted = (std::result::Result<BoostedEnsemble, String>, f64);

/// Fits each requested estimator. When both GBT and LTB are requested the
/// tuned ensemble is shared, and LTB's time includes the boosting time.
pub fn fit_estimators(
    estimators: &[Estimator],
    train: &Dataset,
    validation: &Dataset,
    config: &ModelConfig,
) -> Vec<FitOutcome> {
    let mut shared: Option<Boosted> = None;
    let boosted = |shared: &mut Option<Boosted>| -> Boosted {
        shared
            .get_or_insert_with(|| {
                let t = Instant::now();
                let r =
                    fit_gbt_tuned(train, validation, &config.ltb.gbt).map_err(|e| e.to_string());
                (r, t.elapsed().as_secs_f64())
            })
            .clone()
    };
    let share = estimators.contains(&Estimator::Ltb) && estimators.contains(&Estimator::Gbt);
    estimators
        .iter()
        .map(|&estimator| {
            let mut infeasible = false;
            let t = Instant::now();
            let (result, seconds) = match estimator {
                Estimator::Gbt if share => {
                    let (r, s) = boosted(&mut shared);
                    (r.map(FittedModel::Gbt), s)
                }
                Estimator::Ltb if share => {
                    let (r, s) = boosted(&mut shared);
                    let t = Instant::now();
                    let r = r.and_then(|ens| {
                        fit_ltb_from_ensemble(train, validation, ens, &config.ltb)
                            .map(FittedModel::Ltb)
                            .map_err(|e| e.to_string())
                    });
                    (r, s + t.elapsed().as_secs_f64())
                }
                Estimator::Hal => {
                    let size = lattice_size(train.features().view());
                    if size > config.hal.lattice_cap as u128 {
                        infeasible = true;
                        let e = Error::LatticeCap {
                            size,
                            cap: config.hal.lattice_cap,
                        };
                        (Err(e.to_string()), 0.0)
                    } else {
                        let r = fit_estimator(estimator, train, validation, config);
                        infeasible = matches!(r, Err(Error::LatticeCap { .. }));
                        (r.map_err(|e| e.to_string()), t.elapsed().as_secs_f64())
                    }
                }
                _ => {
                    let r = fit_estimator(estimator, train, validation, config)
                        .map_err(|e| e.to_string());
                    (r, t.elapsed().as_secs_f64())
                }
            };
            FitOutcome {
                estimator,
                result,
                infeasible,
                seconds,
            }
        })
        .collect()
}

/// Per-fit summary of an LTB run, kept for stopping-rule checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LtbRun {
    pub iterations: usize,
    pub selected_iteration: usize,
    pub initial_trees: usize,
    pub total_trees: usize,
    pub active_trees: usize,
    pub stop_reason: StopReason,
    pub dominance_violations: usize,
}

impl LtbRun {
    fn from_model(m: &LtbModel) -> Self {
        LtbRun {
            iterations: m.iterations,
            selected_iteration: m.selected_iteration,
            initial_trees: m.initial_trees,
            total_trees: m.total_trees,
            active_trees: m.trees.len(),
            stop_reason: m.stop_reason,
            dominance_violations: m.dominance_violations(m.config.epsilon).len(),
        }
    }
}

fn ltb_run(outcome: &FitOutcome) -> Option<LtbRun> {
    match &outcome.result {
        Ok(FittedModel::Ltb(m)) => Some(LtbRun::from_model(m)),
        _ => None,
    }
}

fn run_pool<T: Send>(jobs: usize, work: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(work))
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| Error::Config(e.to_string()))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    })
}

/// Ordinary least squares `y = a + b x`, returned as `(b, a)`.
pub fn ols_slope(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    if points.len() < 2 {
        return None;
    }
    let k = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / k;
    let my = points.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let b = sxy / sxx;
    Some((b, my - b * mx))
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let pts: Vec<(f64, f64)> = rx.into_iter().zip(ry).collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateConfig {
    pub ns: Vec<usize>,
    pub reps: usize,
    pub estimators: Vec<Estimator>,
    pub holdout_n: usize,
    pub seed: u64,
    /// HAL is skipped at larger sample sizes.
    pub hal_max_n: usize,
    pub validation_fraction: f64,
    pub jobs: usize,
    pub models: ModelConfig,
}

impl Default for RateConfig {
    fn default() -> Self {
        RateConfig {
            ns: vec![250, 500, 1000, 2000, 4000],
            reps: 20,
            estimators: vec![Estimator::Ltb, Estimator::Gbt, Estimator::Mean],
            holdout_n: 20_000,
            seed: 0,
            hal_max_n: 1000,
            validation_fraction: 0.2,
            jobs: 1,
            models: ModelConfig::default(),
        }
    }
}

impl RateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ns.is_empty() {
            return Err(Error::Config("at least one sample size is required".into()));
        }
        if self.ns.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "sample sizes must be strictly increasing".into(),
            ));
        }
        if self.ns[0] < 5 {
            return Err(Error::Config("sample sizes must be at least 5".into()));
        }
        if self.reps == 0 || self.holdout_n == 0 || self.jobs == 0 {
            return Err(Error::Config(
                "reps, holdout size and jobs must be positive".into(),
            ));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("at least one estimator is required".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config(
                "validation fraction must lie in (0, 1)".into(),
            ));
        }
        self.models.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRecord {
    pub estimator: Estimator,
    pub n: usize,
    pub rep: usize,
    pub l2_error: Option<f64>,
    pub error: Option<String>,
    pub seconds: f64,
    pub ltb: Option<LtbRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeRecord {
    pub estimator: Estimator,
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub n_points: usize,
    pub max_n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateResult {
    pub config: RateConfig,
    pub records: Vec<RateRecord>,
    pub slopes: Vec<SlopeRecord>,
}

impl RateResult {
    pub fn median_errors(&self, estimator: Estimator) -> Vec<(usize, f64)> {
        let mut by_n: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for r in self.records.iter().filter(|r| r.estimator == estimator) {
            if let Some(e) = r.l2_error {
                by_n.entry(r.n).or_default().push(e);
            }
        }
        by_n.into_iter()
            .filter_map(|(n, v)| median(&v).map(|m| (n, m)))
            .collect()
    }

    /// Log-log OLS slope of median error on `n`, using sizes up to `max_n`.
    pub fn slope(&self, estimator: Estimator, max_n: usize) -> SlopeRecord {
        let points: Vec<(f64, f64)> = self
            .median_errors(estimator)
            .into_iter()
            .filter(|&(n, m)| n <= max_n && m > 0.0)
            .map(|(n, m)| ((n as f64).ln(), m.ln()))
            .collect();
        let fit = ols_slope(&points);
        SlopeRecord {
            estimator,
            slope: fit.map(|f| f.0),
            intercept: fit.map(|f| f.1),
            n_points: points.len(),
            max_n,
        }
    }

    /// Median selected LTB round per sample size.
    pub fn ltb_median_stop(&self) -> Vec<(usize, f64)> {
        let mut by_n: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for r in &self.records {
            if let Some(run) = &r.ltb {
                by_n.entry(r.n)
                    .or_default()
                    .push(run.selected_iteration as f64);
            }
        }
        by_n.into_iter()
            .filter_map(|(n, v)| median(&v).map(|m| (n, m)))
            .collect()
    }

    pub fn rates_csv(&self) -> Result<Vec<u8>> {
        csv_bytes(
            &["estimator", "n", "rep", "l2_error", "status"],
            self.records.iter().map(|r| {
                vec![
                    r.estimator.to_string(),
                    r.n.to_string(),
                    r.rep.to_string(),
                    r.l2_error.map(format_float).unwrap_or_default(),
                    r.error.clone().unwrap_or_else(|| "ok".into()),
                ]
            }),
        )
    }

    pub fn slopes_csv(&self) -> Result<Vec<u8>> {
        let opt = |v: Option<f64>| v.map(format_float).unwrap_or_default();
        csv_bytes(
            &["estimator", "slope", "intercept", "n_points", "max_n"],
            self.slopes.iter().map(|s| {
                vec![
                    s.estimator.to_string(),
                    opt(s.slope),
                    opt(s.intercept),
                    s.n_points.to_string(),
                    s.max_n.to_string(),
                ]
            }),
        )
    }

    pub fn ltb_runs_csv(&self) -> Result<Vec<u8>> {
        csv_bytes(
            &run_header(&["n", "rep"]),
            self.records.iter().filter_map(|r| {
                r.ltb
                    .as_ref()
                    .map(|run| run_row(vec![r.n.to_string(), r.rep.to_string()], run))
            }),
        )
    }

    /// Writes `rates.csv`, `slopes.csv`, `ltb_runs.csv` and `rates_meta.json`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        ensure_dir(dir)?;
        write_atomic(dir.join("rates.csv"), &self.rates_csv()?)?;
        write_atomic(dir.join("slopes.csv"), &self.slopes_csv()?)?;
        write_atomic(dir.join("ltb_runs.csv"), &self.ltb_runs_csv()?)?;
        let meta = serde_json::json!({
            "l2_error": "mean over the holdout of (f(x) - prediction)^2, f the noiseless mean",
            "slope": "OLS of log median l2_error on log n",
            "config": self.config,
        });
        write_atomic(
            dir.join("rates_meta.json"),
            serde_json::to_string_pretty(&meta)?.as_bytes(),
        )
    }
}

fn run_header(prefix: &[&'static str]) -> Vec<&'static str> {
    let mut h = prefix.to_vec();
    h.extend([
        "iterations",
        "selected_iteration",
        "initial_trees",
        "total_trees",
        "active_trees",
        "stop_reason",
        "dominance_violations",
    ]);
    h
}

fn run_row(mut prefix: Vec<String>, run: &LtbRun) -> Vec<String> {
    prefix.extend([
        run.iterations.to_string(),
        run.selected_iteration.to_string(),
        run.initial_trees.to_string(),
        run.total_trees.to_string(),
        run.active_trees.to_string(),
        serde_json::to_value(run.stop_reason)
            .ok()
            .and_then(|v| v.as_str().map(String::from))
            .unwrap_or_default(),
        run.dominance_violations.to_string(),
    ]);
    prefix
}

fn rate_cell(config: &RateConfig, n: usize, rep: usize) -> Vec<RateRecord> {
    let sample_seed = derive_seed(config.seed, &[n as u64, rep as u64, 0]);
    let holdout_seed = derive_seed(config.seed, &[n as u64, rep as u64, 1]);
    let split_seed = derive_seed(config.seed, &[n as u64, rep as u64, 2]);
    let estimators: Vec<Estimator> = config
        .estimators
        .iter()
        .copied()
        .filter(|&e| e != Estimator::Hal || n <= config.hal_max_n)
        .collect();
    let fail = |msg: String| -> Vec<RateRecord> {
        estimators
            .iter()
            .map(|&estimator| RateRecord {
                estimator,
                n,
                rep,
                l2_error: None,
                error: Some(msg.clone()),
                seconds: 0.0,
                ltb: None,
            })
            .collect()
    };
    let prepared = generate_dgp(n, sample_seed).and_then(|s| {
        let (train, val) = split_train_validation(&s.data, config.validation_fraction, split_seed)?;
        Ok((train, val, generate_dgp(config.holdout_n, holdout_seed)?))
    });
    let (train, val, holdout) = match prepared {
        Ok(p) => p,
        Err(e) => return fail(e.to_string()),
    };
    fit_estimators(&estimators, &train, &val, &config.models)
        .into_iter()
        .map(|out| {
            let ltb = ltb_run(&out);
            let scored = out.result.and_then(|m| {
                let pred = m
                    .predict(holdout.data.features().view())
                    .map_err(|e| e.to_string())?;
                mse(pred.view(), holdout.mean.view()).map_err(|e| e.to_string())
            });
            log::info!(
                "rates {} n={n} rep={rep}: {:?} in {:.2}s",
                out.estimator,
                scored,
                out.seconds
            );
            RateRecord {
                estimator: out.estimator,
                n,
                rep,
                l2_error: scored.as_ref().ok().copied(),
                error: scored.err(),
                seconds: out.seconds,
                ltb,
            }
        })
        .collect()
}

pub fn run_rate_study(config: &RateConfig) -> Result<RateResult> {
    config.validate()?;
    let cells: Vec<(usize, usize)> = config
        .ns
        .iter()
        .flat_map(|&n| (0..config.reps).map(move |rep| (n, rep)))
        .collect();
    let nested: Vec<Vec<RateRecord>> = run_pool(config.jobs, || {
        cells
            .par_iter()
            .map(|&(n, rep)| rate_cell(config, n, rep))
            .collect()
    })?;
    let mut records: Vec<RateRecord> = nested.into_iter().flatten().collect();
    records.sort_by(|a, b| (a.estimator, a.n, a.rep).cmp(&(b.estimator, b.n, b.rep)));
    let mut result = RateResult {
        config: config.clone(),
        records,
        slopes: Vec::new(),
    };
    let mut estimators = config.estimators.clone();
    estimators.sort();
    estimators.dedup();
    let max_n = *config.ns.last().expect("validated nonempty");
    result.slopes = estimators
        .iter()
        .map(|&e| {
            result.slope(
                e,
                if e == Estimator::Hal {
                    config.hal_max_n
                } else {
                    max_n
                },
            )
        })
        .collect();
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub datasets: Vec<PathBuf>,
    pub estimators: Vec<Estimator>,
    pub reps: usize,
    pub seed: u64,
    pub jobs: usize,
    pub test_fraction: f64,
    pub validation_fraction: f64,
    pub models: ModelConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        let split = SplitSpec::default();
        BenchConfig {
            datasets: Vec::new(),
            estimators: Estimator::ALL.to_vec(),
            reps: 10,
            seed: 0,
            jobs: 1,
            test_fraction: split.test_fraction,
            validation_fraction: split.validation_fraction,
            models: ModelConfig::default(),
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() {
            return Err(Error::Config("at least one dataset is required".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("at least one estimator is required".into()));
        }
        if self.reps == 0 || self.jobs == 0 {
            return Err(Error::Config("reps and jobs must be positive".into()));
        }
        for f in [self.test_fraction, self.validation_fraction] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::Config(format!(
                    "split fractions must lie in (0, 1), got {f}"
                )));
            }
        }
        self.models.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "status", content = "message")]
pub enum CellStatus {
    Ok,
    Infeasible(String),
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub dataset: String,
    pub estimator: Estimator,
    pub rep: usize,
    pub rmse: Option<f64>,
    pub seconds: f64,
    pub status: CellStatus,
    pub ltb: Option<LtbRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub dataset: String,
    pub estimator: Estimator,
    pub mean_rmse: Option<f64>,
    pub mean_seconds: Option<f64>,
    /// Repetitions that produced a score.
    pub reps: usize,
    pub status: CellStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub name: String,
    pub n: usize,
    pub p: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub config: BenchConfig,
    /// Ordered by `p * n`; unreadable files last.
    pub datasets: Vec<DatasetInfo>,
    pub records: Vec<BenchRecord>,
    pub rows: Vec<BenchRow>,
}

fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("dataset")
        .to_string()
}

fn bench_cell(
    config: &BenchConfig,
    name: &str,
    index: usize,
    data: &Dataset,
    rep: usize,
) -> Vec<BenchRecord> {
    let spec = SplitSpec {
        test_fraction: config.test_fraction,
        validation_fraction: config.validation_fraction,
        seed: derive_seed(config.seed, &[index as u64, rep as u64]),
    };
    let record = |estimator, rmse, seconds, status, ltb| BenchRecord {
        dataset: name.to_string(),
        estimator,
        rep,
        rmse,
        seconds,
        status,
        ltb,
    };
    let (train, val, test) = match split(data, &spec) {
        Ok(s) => s,
        Err(e) => {
            return config
                .estimators
                .iter()
                .map(|&est| record(est, None, 0.0, CellStatus::Failed(e.to_string()), None))
                .collect()
        }
    };
    fit_estimators(&config.estimators, &train, &val, &config.models)
        .into_iter()
        .map(|out| {
            let ltb = ltb_run(&out);
            let scored = out.result.and_then(|m| {
                let pred = m
                    .predict(test.features().view())
                    .map_err(|e| e.to_string())?;
                mse(pred.view(), test.outcome().view())
                    .map(f64::sqrt)
                    .map_err(|e| e.to_string())
            });
            log::info!(
                "bench {name} {} rep={rep}: {:?} in {:.2}s",
                out.estimator,
                scored,
                out.seconds
            );
            match scored {
                Ok(rmse) => record(out.estimator, Some(rmse), out.seconds, CellStatus::Ok, ltb),
                Err(msg) if out.infeasible => record(
                    out.estimator,
                    None,
                    out.seconds,
                    CellStatus::Infeasible(msg),
                    ltb,
                ),
                Err(msg) => record(
                    out.estimator,
                    None,
                    out.seconds,
                    CellStatus::Failed(msg),
                    ltb,
                ),
            }
        })
        .collect()
}

pub fn run_benchmark(config: &BenchConfig) -> Result<BenchResult> {
    config.validate()?;
    let mut loaded: Vec<(DatasetInfo, Option<Dataset>)> = config
        .datasets
        .iter()
        .map(|path| {
            let name = dataset_name(path);
            match load_csv(path, OutcomeColumn::Last) {
                Ok(d) => (
                    DatasetInfo {
                        name,
                        n: d.n_rows(),
                        p: d.n_features(),
                        error: None,
                    },
                    Some(d),
                ),
                Err(e) => (
                    DatasetInfo {
                        name,
                        n: 0,
                        p: 0,
                        error: Some(e.to_string()),
                    },
                    None,
                ),
            }
        })
        .collect();
    loaded.sort_by_key(|(info, d)| (d.is_none(), info.n * info.p));

    let cells: Vec<(usize, usize)> = loaded
        .iter()
        .enumerate()
        .filter(|(_, (_, d))| d.is_some())
        .flat_map(|(i, _)| (0..config.reps).map(move |rep| (i, rep)))
        .collect();
    let nested: Vec<Vec<BenchRecord>> = run_pool(config.jobs, || {
        cells
            .par_iter()
            .map(|&(i, rep)| {
                let (info, data) = &loaded[i];
                let index = config
                    .datasets
                    .iter()
                    .position(|p| dataset_name(p) == info.name)
                    .unwrap_or(i);
                bench_cell(
                    config,
                    &info.name,
                    index,
                    data.as_ref().expect("filtered"),
                    rep,
                )
            })
            .collect()
    })?;
    let records: Vec<BenchRecord> = nested.into_iter().flatten().collect();

    let mut rows = Vec::new();
    for (info, _) in &loaded {
        for &estimator in &config.estimators {
            if let Some(err) = &info.error {
                rows.push(BenchRow {
                    dataset: info.name.clone(),
                    estimator,
                    mean_rmse: None,
                    mean_seconds: None,
                    reps: 0,
                    status: CellStatus::Failed(err.clone()),
                });
                continue;
            }
            let cell: Vec<&BenchRecord> = records
                .iter()
                .filter(|r| r.dataset == info.name && r.estimator == estimator)
                .collect();
            let ok: Vec<&BenchRecord> = cell.iter().copied().filter(|r| r.rmse.is_some()).collect();
            let status = if !ok.is_empty() {
                CellStatus::Ok
            } else {
                cell.iter()
                    .map(|r| r.status.clone())
                    .find(|s| matches!(s, CellStatus::Infeasible(_)))
                    .or_else(|| cell.first().map(|r| r.status.clone()))
                    .unwrap_or(CellStatus::Failed("no repetitions".into()))
            };
            let mean = |f: &dyn Fn(&BenchRecord) -> f64| {
                (!ok.is_empty()).then(|| ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64)
            };
            rows.push(BenchRow {
                dataset: info.name.clone(),
                estimator,
                mean_rmse: mean(&|r| r.rmse.unwrap()),
                mean_seconds: mean(&|r| r.seconds),
                reps: ok.len(),
                status,
            });
        }
    }
    Ok(BenchResult {
        config: config.clone(),
        datasets: loaded.into_iter().map(|(info, _)| info).collect(),
        records,
        rows,
    })
}

fn cell_text(v: Option<f64>, status: &CellStatus) -> String {
    match (v, status) {
        (Some(v), _) => format_float(v),
        (None, CellStatus::Infeasible(_)) => "--".into(),
        (None, _) => "NA".into(),
    }
}

impl BenchResult {
    pub fn row(&self, dataset: &str, estimator: Estimator) -> Option<&BenchRow> {
        self.rows
            .iter()
            .find(|r| r.dataset == dataset && r.estimator == estimator)
    }

    /// Long table; `with_timing = false` drops the seconds column.
    pub fn bench_csv(&self, with_timing: bool) -> Result<Vec<u8>> {
        let mut header = vec!["dataset", "estimator", "mean_rmse"];
        if with_timing {
            header.push("mean_seconds");
        }
        header.push("reps");
        csv_bytes(
            &header,
            self.rows.iter().map(|r| {
                let mut row = vec![
                    r.dataset.clone(),
                    r.estimator.to_string(),
                    cell_text(r.mean_rmse, &r.status),
                ];
                if with_timing {
                    row.push(cell_text(r.mean_seconds, &r.status));
                }
                row.push(r.reps.to_string());
                row
            }),
        )
    }

    /// Wide table: one row per dataset, `rmse (seconds)` per estimator.
    pub fn table_csv(&self) -> Result<Vec<u8>> {
        let mut header = vec!["dataset".to_string(), "p".into(), "n".into()];
        header.extend(self.config.estimators.iter().map(|e| e.to_string()));
        let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
        csv_bytes(
            &header_refs,
            self.datasets.iter().map(|info| {
                let mut row = vec![info.name.clone(), info.p.to_string(), info.n.to_string()];
                for &e in &self.config.estimators {
                    row.push(match self.row(&info.name, e) {
                        Some(r) => match (r.mean_rmse, r.mean_seconds) {
                            (Some(m), Some(s)) => format!("{m:.2} ({s:.2})"),
                            _ => cell_text(None, &r.status),
                        },
                        None => "NA".into(),
                    });
                }
                row
            }),
        )
    }

    pub fn runs_csv(&self) -> Result<Vec<u8>> {
        csv_bytes(
            &["dataset", "estimator", "rep", "rmse", "seconds", "status"],
            self.records.iter().map(|r| {
                vec![
                    r.dataset.clone(),
                    r.estimator.to_string(),
                    r.rep.to_string(),
                    cell_text(r.rmse, &r.status),
                    format_float(r.seconds),
                    match &r.status {
                        CellStatus::Ok => "ok".into(),
                        CellStatus::Infeasible(m) => format!("infeasible: {m}"),
                        CellStatus::Failed(m) => format!("failed: {m}"),
                    },
                ]
            }),
        )
    }

    pub fn ltb_runs_csv(&self) -> Result<Vec<u8>> {
        csv_bytes(
            &run_header(&["dataset", "rep"]),
            self.records.iter().filter_map(|r| {
                r.ltb
                    .as_ref()
                    .map(|run| run_row(vec![r.dataset.clone(), r.rep.to_string()], run))
            }),
        )
    }

    /// Writes `bench.csv`, `table.csv`, `bench_runs.csv` and `ltb_runs.csv`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        ensure_dir(dir)?;
        write_atomic(dir.join("bench.csv"), &self.bench_csv(true)?)?;
        write_atomic(dir.join("table.csv"), &self.table_csv()?)?;
        write_atomic(dir.join("bench_runs.csv"), &self.runs_csv()?)?;
        write_atomic(dir.join("ltb_runs.csv"), &self.ltb_runs_csv()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_function_values() {
        assert_eq!(dgp_mean(0.0, 0.0), 0.0);
        assert!((dgp_mean(2.0, 1.0) - (-1.0 + 4.0 / 2.75 + 1.0)).abs() < 1e-15);
        assert!((dgp_mean(2.0, 1.0) - 1.454_545_454_545_454_5).abs() < 1e-12);
    }

    #[test]
    fn generator_marginals() {
        let s = generate_dgp(100_000, 11).unwrap();
        let x = s.data.features();
        let x2 = x.column(1).mean().unwrap();
        assert!((x2 - 0.5).abs() < 0.01, "{x2}");
        assert!(x.column(1).iter().all(|&v| v == 0.0 || v == 1.0));
        assert!(x.column(0).iter().all(|&v| (-4.0..4.0).contains(&v)));
        let resid: Vec<f64> = s
            .data
            .outcome()
            .iter()
            .zip(&s.mean)
            .map(|(y, m)| y - m)
            .collect();
        let mean = resid.iter().sum::<f64>() / resid.len() as f64;
        let var = resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / resid.len() as f64;
        assert!(
            mean.abs() < 0.02 && (var - 1.0).abs() < 0.03,
            "{mean} {var}"
        );
        for (i, row) in x.rows().into_iter().enumerate().take(100) {
            assert_eq!(s.mean[i], dgp_mean(row[0], row[1]));
        }
    }

    #[test]
    fn generator_is_seeded() {
        let a = generate_dgp(50, 3).unwrap();
        let b = generate_dgp(50, 3).unwrap();
        let c = generate_dgp(50, 4).unwrap();
        assert_eq!(a.data, b.data);
        assert_ne!(a.data, c.data);
        assert!(generate_dgp(0, 1).is_err());
    }

    #[test]
    fn exact_mean_has_zero_error() {
        let s = generate_dgp(1000, 5).unwrap();
        let pred = s
            .data
            .features()
            .rows()
            .into_iter()
            .map(|r| dgp_mean(r[0], r[1]))
            .collect::<Array1<f64>>();
        assert_eq!(mse(pred.view(), s.mean.view()).unwrap(), 0.0);
    }

    #[test]
    fn seeds_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        for a in 0..20u64 {
            for b in 0..20u64 {
                assert!(seen.insert(derive_seed(7, &[a, b])));
            }
        }
        assert_eq!(derive_seed(1, &[2, 3]), derive_seed(1, &[2, 3]));
    }

    #[test]
    fn slope_and_rank_helpers() {
        let pts: Vec<(f64, f64)> = (1..6).map(|k| (k as f64, 3.0 - 0.5 * k as f64)).collect();
        let (b, a) = ols_slope(&pts).unwrap();
        assert!((b + 0.5).abs() < 1e-12 && (a - 3.0).abs() < 1e-12);
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert!(spearman(&[1.0, 2.0], &[1.0, 1.0]).is_none());
    }

    #[test]
    fn estimator_names_round_trip() {
        for e in Estimator::ALL {
            assert_eq!(e.name().parse::<Estimator>().unwrap(), e);
        }
        assert_eq!("mean-only".parse::<Estimator>().unwrap(), Estimator::Mean);
        assert!("xgboost".parse::<Estimator>().is_err());
    }

    #[test]
    fn ltb_is_close_to_gbt_on_the_simulation() {
        let s = generate_dgp(1000, 21).unwrap();
        let holdout = generate_dgp(20_000, 22).unwrap();
        let (train, val) = split_train_validation(&s.data, 0.2, 23).unwrap();
        let fits = fit_estimators(
            &[Estimator::Ltb, Estimator::Gbt],
            &train,
            &val,
            &ModelConfig::default(),
        );
        let err: Vec<f64> = fits
            .iter()
            .map(|f| {
                let m = f.result.as_ref().unwrap();
                mse(
                    m.predict(holdout.data.features().view()).unwrap().view(),
                    holdout.mean.view(),
                )
                .unwrap()
            })
            .collect();
        let ratio = err[0] / err[1];
        assert!(
            (0.5..=2.0).contains(&ratio),
            "ltb {} gbt {} ratio {ratio}",
            err[0],
            err[1]
        );
    }

    #[test]
    fn tiny_rate_study_is_deterministic() {
        let config = RateConfig {
            ns: vec![60, 120],
            reps: 2,
            estimators: vec![Estimator::Mean, Estimator::Lasso, Estimator::Hal],
            holdout_n: 500,
            seed: 9,
            ..Default::default()
        };
        let a = run_rate_study(&config).unwrap();
        let b = run_rate_study(&config).unwrap();
        assert_eq!(a.rates_csv().unwrap(), b.rates_csv().unwrap());
        assert_eq!(a.records.len(), 2 * 2 * 3);
        assert!(a
            .records
            .iter()
            .all(|r| r.l2_error.is_some_and(|e| e >= 0.0)));
        assert_eq!(a.slopes.len(), 3);
    }

    #[test]
    fn hal_is_skipped_above_its_size_limit() {
        let config = RateConfig {
            ns: vec![40, 80],
            reps: 1,
            estimators: vec![Estimator::Hal, Estimator::Mean],
            holdout_n: 100,
            hal_max_n: 40,
            ..Default::default()
        };
        let r = run_rate_study(&config).unwrap();
        let hal: Vec<usize> = r
            .records
            .iter()
            .filter(|r| r.estimator == Estimator::Hal)
            .map(|r| r.n)
            .collect();
        assert_eq!(hal, vec![40]);
    }

    #[test]
    fn rate_config_rejects_bad_grids() {
        let mut c = RateConfig::default();
        c.ns = vec![500, 250];
        assert!(c.validate().is_err());
        c.ns = vec![];
        assert!(c.validate().is_err());
        let mut c = RateConfig::default();
        c.reps = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn benchmark_marks_infeasible_hal_and_bad_files() {
        let dir = tempfile::tempdir().unwrap();
        let s = generate_dgp(120, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let wide = Array2::from_shape_fn((60, 5), |_| rng.random_range(0.0..1.0));
        let wide_y = wide.column(0).to_owned();
        let good = dir.path().join("sim.csv");
        let big = dir.path().join("wide.csv");
        let tiny = dir.path().join("tiny.csv");
        s.data.write_csv(&good).unwrap();
        Dataset::new(wide, wide_y).unwrap().write_csv(&big).unwrap();
        Dataset::new(Array2::zeros((3, 1)), Array1::zeros(3))
            .unwrap()
            .write_csv(&tiny)
            .unwrap();
        let config = BenchConfig {
            datasets: vec![good.clone(), big, tiny, dir.path().join("missing.csv")],
            estimators: vec![Estimator::Hal, Estimator::Mean],
            reps: 2,
            models: ModelConfig {
                hal: HalConfig {
                    lattice_cap: 5000,
                    ..Default::default()
                },
                ..Default::default()
            },
            ..Default::default()
        };
        let r = run_benchmark(&config).unwrap();
        assert_eq!(r.row("sim", Estimator::Hal).unwrap().status, CellStatus::Ok);
        assert!(matches!(
            r.row("wide", Estimator::Hal).unwrap().status,
            CellStatus::Infeasible(_)
        ));
        assert_eq!(r.row("wide", Estimator::Mean).unwrap().reps, 2);
        assert!(matches!(
            r.row("tiny", Estimator::Mean).unwrap().status,
            CellStatus::Failed(_)
        ));
        assert!(matches!(
            r.row("missing", Estimator::Mean).unwrap().status,
            CellStatus::Failed(_)
        ));
        let names: Vec<&str> = r.datasets.iter().map(|d| d.name.as_str()).collect();
        assert_eq!(names, ["tiny", "sim", "wide", "missing"]);
        let table = String::from_utf8(r.table_csv().unwrap()).unwrap();
        assert!(table.lines().any(|l| l.starts_with("wide,5,60,--,")));
        let again = run_benchmark(&config).unwrap();
        assert_eq!(r.bench_csv(false).unwrap(), again.bench_csv(false).unwrap());
        r.write(dir.path().join("out")).unwrap();
        assert!(dir.path().join("out/bench.csv").exists());
    }

    #[test]
    fn fitted_models_serialize() {
        let s = generate_dgp(80, 3).unwrap();
        let (train, val) = split_train_validation(&s.data, 0.2, 3).unwrap();
        for e in Estimator::ALL {
            let m = fit_estimator(e, &train, &val, &ModelConfig::default()).unwrap();
            let json = serde_json::to_string(&m).unwrap();
            let back: FittedModel = serde_json::from_str(&json).unwrap();
            assert_eq!(back.estimator(), e);
            let p1 = m.predict(val.features().view()).unwrap();
            let p2 = back.predict(val.features().view()).unwrap();
            assert_eq!(p1, p2);
        }
    }
}
