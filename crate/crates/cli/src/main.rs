use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ltb_core::dataset::{format_float, load_csv, mse, read_table, split_train_validation, write_atomic, OutcomeColumn};
use ltb_core::experiments::{
    fit_estimator, run_benchmark, run_rate_study, BenchConfig, Estimator, FittedModel, ModelConfig, RateConfig,
};
use ltb_core::Error;
use ndarray::Axis;
use serde::{Deserialize, Serialize};

/// Lassoed tree boosting: fit and apply models, run the rate study and the benchmark.
#[derive(Debug, Parser)]
#[command(name = "ltb", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a model on a CSV and save it as JSON.
    Fit(FitArgs),
    /// Apply a saved model to a CSV.
    Predict(PredictArgs),
    /// Convergence-rate study on the simulated design.
    SimulateRates(RateArgs),
    /// RMSE and timing benchmark over dataset CSVs (outcome in the last column).
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Training CSV with a header row.
    #[arg(long)]
    train: PathBuf,
    /// Outcome column name; defaults to the last column.
    #[arg(long)]
    outcome: Option<String>,
    /// Where to write the model.
    #[arg(long)]
    model: PathBuf,
    /// One of ltb, gbt, hal, lasso, mean.
    #[arg(long, default_value = "ltb")]
    estimator: String,
    /// Seed for the train/validation split.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Share of rows held out for validation.
    #[arg(long, default_value_t = 0.2)]
    validation_fraction: f64,
    #[command(flatten)]
    hyper: ModelArgs,
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// Model written by `ltb fit`.
    #[arg(long)]
    model: PathBuf,
    /// CSV whose headers include every feature the model was fit on.
    #[arg(long)]
    data: PathBuf,
    /// Prediction CSV to write.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct RateArgs {
    /// Comma-separated, strictly increasing sample sizes.
    #[arg(long, value_delimiter = ',', default_values_t = [250, 500, 1000, 2000, 4000])]
    ns: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    reps: usize,
    /// Comma-separated estimator names.
    #[arg(long, value_delimiter = ',', default_values_t = ["ltb".to_string(), "gbt".to_string(), "mean".to_string()])]
    estimators: Vec<String>,
    /// Size of the fresh evaluation sample.
    #[arg(long, default_value_t = 20_000)]
    holdout_n: usize,
    /// HAL is skipped above this sample size.
    #[arg(long, default_value_t = 1000)]
    hal_max_n: usize,
    #[arg(long, default_value_t = 0.2)]
    validation_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Output directory.
    #[arg(long, default_value = "rates")]
    out: PathBuf,
    #[command(flatten)]
    hyper: ModelArgs,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Dataset CSVs; the file stem names the dataset.
    datasets: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = Estimator::ALL.iter().map(|e| e.to_string()))]
    estimators: Vec<String>,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    #[arg(long, default_value_t = 0.1)]
    test_fraction: f64,
    #[arg(long, default_value_t = 0.2)]
    validation_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, default_value = "bench")]
    out: PathBuf,
    #[command(flatten)]
    hyper: ModelArgs,
}

/// Hyperparameters shared by every estimator.
#[derive(Debug, Args)]
struct ModelArgs {
    #[arg(long, default_value_t = 0.05)]
    learning_rate: f64,
    /// Rounds without validation improvement before boosting stops.
    #[arg(long, default_value_t = 3)]
    patience: usize,
    #[arg(long, default_value_t = 10_000)]
    max_trees: usize,
    #[arg(long, default_value_t = 10)]
    max_depth: usize,
    #[arg(long, default_value_t = 1)]
    min_leaf: usize,
    /// Trees added per lassoed round.
    #[arg(long, default_value_t = 10)]
    trees_per_iteration: usize,
    /// Validation slack for the lassoed look-back; accepts `inf`.
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
    /// L1 bound on tree coefficients; defaults to a multiple of the initial ensemble's leaf scale.
    #[arg(long)]
    l1_bound: Option<f64>,
    /// Identical consecutive candidates before the lassoed search stops (0 disables).
    #[arg(long, default_value_t = 3)]
    stall_rounds: usize,
    #[arg(long, default_value_t = 100)]
    n_lambdas: usize,
    #[arg(long, default_value_t = 1e-3)]
    lambda_min_ratio: f64,
    /// Coordinate-descent convergence tolerance.
    #[arg(long, default_value_t = 1e-7)]
    lasso_tol: f64,
    /// Largest knot lattice HAL will build.
    #[arg(long, default_value_t = ltb_core::hal::DEFAULT_LATTICE_CAP)]
    lattice_cap: usize,
}

impl ModelArgs {
    fn config(&self) -> ltb_core::Result<ModelConfig> {
        let mut c = ModelConfig::default();
        let gbt = &mut c.ltb.gbt;
        gbt.learning_rate = self.learning_rate;
        gbt.min_leaf = self.min_leaf;
        gbt.max_depth = self.max_depth;
        gbt.early_stop.patience = self.patience;
        gbt.early_stop.max_trees = self.max_trees;
        c.ltb.trees_per_iteration = self.trees_per_iteration;
        c.ltb.epsilon = self.epsilon;
        c.ltb.l1_upper_bound = self.l1_bound;
        c.ltb.stall_rounds = self.stall_rounds;
        c.ltb.lasso.n_lambdas = self.n_lambdas;
        c.ltb.lasso.lambda_min_ratio = self.lambda_min_ratio;
        c.ltb.lasso.tol = self.lasso_tol;
        c.hal.lasso = c.ltb.lasso;
        c.hal.lattice_cap = self.lattice_cap;
        c.validate()?;
        Ok(c)
    }
}

/// On-disk model: the fitted estimator plus the schema it expects.
#[derive(Debug, Serialize, Deserialize)]
struct SavedModel {
    feature_names: Vec<String>,
    outcome_name: String,
    model: FittedModel,
}

enum Failure {
    Usage(String),
    Data(String),
    Infeasible(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Infeasible(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Infeasible(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e.to_string()),
            Error::LatticeCap { .. } => Failure::Infeasible(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn parse_estimators(names: &[String]) -> Result<Vec<Estimator>, Failure> {
    let mut out = Vec::new();
    for name in names {
        let e: Estimator = name.parse()?;
        if !out.contains(&e) {
            out.push(e);
        }
    }
    Ok(out)
}

fn rmse(predictions: ndarray::ArrayView1<f64>, outcome: ndarray::ArrayView1<f64>) -> ltb_core::Result<f64> {
    Ok(mse(predictions, outcome)?.sqrt())
}

fn cmd_fit(args: &FitArgs) -> CmdResult {
    let config = args.hyper.config()?;
    let estimator: Estimator = args.estimator.parse()?;
    if !(args.validation_fraction > 0.0 && args.validation_fraction < 1.0) {
        return Err(Failure::Usage("--validation-fraction must lie in (0, 1)".into()));
    }
    let outcome = args.outcome.as_deref().map_or(OutcomeColumn::Last, OutcomeColumn::from);
    let data = load_csv(&args.train, outcome)?;
    let (train, validation) = split_train_validation(&data, args.validation_fraction, args.seed)?;
    log::info!(
        "fitting {estimator} on {} rows ({} train, {} validation), {} features",
        data.n_rows(),
        train.n_rows(),
        validation.n_rows(),
        data.n_features()
    );
    let model = fit_estimator(estimator, &train, &validation, &config)?;
    let val_loss = mse(model.predict(validation.features().view())?.view(), validation.outcome().view())?;
    let train_rmse = rmse(model.predict(data.features().view())?.view(), data.outcome().view())?;

    let saved = SavedModel {
        feature_names: data.feature_names().map(<[String]>::to_vec).unwrap_or_default(),
        outcome_name: data.outcome_name().unwrap_or_default().to_string(),
        model,
    };
    let bytes = serde_json::to_vec_pretty(&saved).map_err(Error::from)?;
    write_atomic(&args.model, &bytes)?;

    let m = &saved.model;
    println!("estimator: {estimator}");
    println!("depth: {}", m.depth().map_or("-".into(), |d| d.to_string()));
    println!("trees: {}", m.n_trees().map_or("-".into(), |t| t.to_string()));
    println!("lambda: {}", m.lambda().map_or("-".into(), format_float));
    println!("validation mse: {}", format_float(val_loss));
    println!("training rmse: {}", format_float(train_rmse));
    Ok(())
}

fn load_model(path: &Path) -> Result<SavedModel, Failure> {
    let text = std::fs::read(path).map_err(|e| Failure::Data(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_slice(&text).map_err(|e| Failure::Data(format!("{} is not a saved model: {e}", path.display())))
}

fn cmd_predict(args: &PredictArgs) -> CmdResult {
    let saved = load_model(&args.model)?;
    let table = read_table(&args.data)?;
    let p = saved.model.n_features();
    if saved.feature_names.len() != p {
        return Err(Failure::Data(format!(
            "model lists {} feature names but expects {p} features",
            saved.feature_names.len()
        )));
    }
    let mut cols = Vec::with_capacity(p);
    for name in &saved.feature_names {
        let j = table
            .column_index(name)
            .ok_or_else(|| Failure::Data(format!("feature column {name:?} missing from {}", args.data.display())))?;
        cols.push(j);
    }
    let features = table.values.select(Axis(1), &cols);
    let predictions = saved.model.predict(features.view())?;

    let mut out = String::from("prediction\n");
    for v in &predictions {
        out.push_str(&format_float(*v));
        out.push('\n');
    }
    write_atomic(&args.output, out.as_bytes())?;
    println!("predictions: {} rows written to {}", predictions.len(), args.output.display());
    if let Some(j) = table.column_index(&saved.outcome_name) {
        let e = rmse(predictions.view(), table.values.column(j))?;
        println!("rmse: {}", format_float(e));
    }
    Ok(())
}

fn cmd_simulate_rates(args: &RateArgs) -> CmdResult {
    let config = RateConfig {
        ns: args.ns.clone(),
        reps: args.reps,
        estimators: parse_estimators(&args.estimators)?,
        holdout_n: args.holdout_n,
        seed: args.seed,
        hal_max_n: args.hal_max_n,
        validation_fraction: args.validation_fraction,
        jobs: args.jobs,
        models: args.hyper.config()?,
    };
    config.validate()?;
    let result = run_rate_study(&config)?;
    result.write(&args.out)?;
    for s in &result.slopes {
        println!(
            "{} slope (n <= {}): {}",
            s.estimator,
            s.max_n,
            s.slope.map_or("-".into(), format_float)
        );
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_bench(args: &BenchArgs) -> CmdResult {
    let config = BenchConfig {
        datasets: args.datasets.clone(),
        estimators: parse_estimators(&args.estimators)?,
        reps: args.reps,
        seed: args.seed,
        jobs: args.jobs,
        test_fraction: args.test_fraction,
        validation_fraction: args.validation_fraction,
        models: args.hyper.config()?,
    };
    config.validate()?;
    let result = run_benchmark(&config)?;
    result.write(&args.out)?;
    for d in &result.datasets {
        if let Some(e) = &d.error {
            eprintln!("warning: dataset {} skipped: {e}", d.name);
        }
    }
    for r in &result.rows {
        println!(
            "{} {}: {}",
            r.dataset,
            r.estimator,
            r.mean_rmse.map_or_else(|| format!("{:?}", r.status), format_float)
        );
    }
    if result.datasets.iter().all(|d| d.error.is_some()) {
        return Err(Failure::Data("no dataset could be benchmarked".into()));
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Predict(a) => cmd_predict(a),
        Command::SimulateRates(a) => cmd_simulate_rates(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
