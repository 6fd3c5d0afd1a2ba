//! Command-line front end: accounting queries, σ calibration, norm-estimation
//! sweeps, and end-to-end training runs.
//!
//! Exit codes: 0 success, 2 usage or domain errors, 3 infeasible privacy
//! parameters, 4 data errors. A `train` run resolves its configuration from
//! CLI flags, then an optional flat `key = value` config file, then
//! documented defaults — flags win over the file — and echoes the fully
//! resolved spec into the JSON summary.

use crate::accountant::{
    auto_sigma_h, calibrate_sigma, epsilon_for, lt_tuning_cost, split_noise, AccountantError,
    PrivacyBudget,
};
use crate::data::{gen_blobs, gen_norms, load_csv, DataError, Dataset, NormDistribution};
use crate::histogram::build_histogram;
use crate::strategy::{expected_squared_error, percentile_threshold, ClipState, ThresholdStrategy};
use crate::trainer::{train, Optimizer, TrainConfig, TrainError};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use std::collections::HashMap;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Infeasible(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Infeasible(_) => 3,
            CliError::Data(_) => 4,
            CliError::Other(_) => 1,
        }
    }
}

impl From<AccountantError> for CliError {
    fn from(e: AccountantError) -> Self {
        match e {
            AccountantError::Domain(_) => CliError::Usage(e.to_string()),
            AccountantError::Unsatisfiable { .. } => CliError::Infeasible(e.to_string()),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => CliError::Usage(e.to_string()),
            TrainError::Accountant(inner) => inner.into(),
            other => CliError::Other(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "dcsgd",
    version,
    about = "Differentially private training with dynamic clipping thresholds"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Privacy accounting: epsilon of a DP-SGD run, or tuning cost with --lt
    Account(AccountArgs),
    /// Calibrate the noise multipliers for a target (epsilon, delta)
    Calibrate(CalibrateArgs),
    /// Sweep histogram-based norm estimation against exact oracles
    SimulateNorms(SimulateArgs),
    /// Run DC-SGD training end to end
    Train(TrainArgs),
}

#[derive(Debug, Args)]
pub struct AccountArgs {
    /// Poisson sampling rate
    #[arg(long, required_unless_present = "lt")]
    pub q: Option<f64>,
    /// Total noise multiplier
    #[arg(long, required_unless_present = "lt")]
    pub sigma: Option<f64>,
    /// Number of iterations
    #[arg(long, required_unless_present = "lt")]
    pub steps: Option<u64>,
    /// Failure probability delta
    #[arg(long, required_unless_present = "lt")]
    pub delta: Option<f64>,
    /// Compute the hyperparameter-tuning cost instead
    #[arg(long, requires_all = ["eps1", "delta1", "gamma", "delta2"])]
    pub lt: bool,
    /// Per-run epsilon for --lt
    #[arg(long)]
    pub eps1: Option<f64>,
    /// Per-run delta for --lt
    #[arg(long)]
    pub delta1: Option<f64>,
    /// Per-trial stopping probability for --lt
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Truncation failure probability for --lt
    #[arg(long)]
    pub delta2: Option<f64>,
}

pub fn cmd_account(args: &AccountArgs) -> Result<String, CliError> {
    if args.lt {
        let cost = lt_tuning_cost(
            args.eps1.unwrap(),
            args.delta1.unwrap(),
            args.gamma.unwrap(),
            args.delta2.unwrap(),
        )?;
        return Ok(format!(
            "eps_prime = {}\ndelta_prime = {}\ntrials = {}",
            cost.epsilon, cost.delta, cost.trial_bound
        ));
    }
    let (eps, alpha) = epsilon_for(
        args.q.unwrap(),
        args.sigma.unwrap(),
        args.steps.unwrap(),
        args.delta.unwrap(),
    )?;
    Ok(format!("epsilon = {eps}\nalpha_star = {alpha}"))
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Target epsilon
    #[arg(long)]
    pub epsilon: f64,
    /// Target delta; defaults to 1/N when --n is given
    #[arg(long)]
    pub delta: Option<f64>,
    /// Sampling rate; alternative to --batch plus --n
    #[arg(long)]
    pub q: Option<f64>,
    /// Expected batch size
    #[arg(long)]
    pub batch: Option<usize>,
    /// Dataset size
    #[arg(long)]
    pub n: Option<usize>,
    /// Iteration count; alternative to --epochs
    #[arg(long)]
    pub steps: Option<u64>,
    /// Epochs (needs --batch and --n to derive steps)
    #[arg(long)]
    pub epochs: Option<u64>,
    /// Histogram noise multiplier; defaults to the built-in rule
    #[arg(long = "sigma-h")]
    pub sigma_h: Option<f64>,
}

pub fn cmd_calibrate(args: &CalibrateArgs) -> Result<String, CliError> {
    let q = match (args.q, args.batch, args.n) {
        (Some(q), _, _) => q,
        (None, Some(b), Some(n)) if n > 0 => b as f64 / n as f64,
        _ => {
            return Err(CliError::Usage(
                "need --q, or --batch together with --n".into(),
            ))
        }
    };
    let steps = match (args.steps, args.epochs, args.batch, args.n) {
        (Some(t), _, _, _) => t,
        (None, Some(e), Some(b), Some(n)) if b > 0 => e * n.div_ceil(b) as u64,
        _ => {
            return Err(CliError::Usage(
                "need --steps, or --epochs together with --batch and --n".into(),
            ))
        }
    };
    let delta = match (args.delta, args.n) {
        (Some(d), _) => d,
        (None, Some(n)) if n > 0 => 1.0 / n as f64,
        _ => {
            return Err(CliError::Usage(
                "need --delta, or --n for its 1/N default".into(),
            ))
        }
    };

    let sigma = calibrate_sigma(args.epsilon, delta, q, steps)?;
    let sigma_h = args.sigma_h.unwrap_or_else(|| auto_sigma_h(sigma));
    let sigma_t = split_noise(sigma, sigma_h).map_err(|e| CliError::Infeasible(e.to_string()))?;
    Ok(format!(
        "sigma = {sigma}\nsigma_H = {sigma_h}\nsigma_T = {sigma_t}"
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum)]
pub enum SimulateMode {
    /// Percentile estimation against the sort-order quantile
    Percentile,
    /// Expected-squared-error curves against the exact raw-norm curve
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum)]
pub enum DistKind {
    Gaussian,
    Lognormal,
    Constant,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value_t = SimulateMode::Percentile)]
    pub mode: SimulateMode,
    #[arg(long, value_enum, default_value_t = DistKind::Gaussian)]
    pub dist: DistKind,
    /// Mean (gaussian), log-mean (lognormal), or the value (constant)
    #[arg(long, default_value_t = 100.0)]
    pub mean: f64,
    /// Std (gaussian) or log-std (lognormal)
    #[arg(long, default_value_t = 20.0)]
    pub std: f64,
    /// Population size
    #[arg(long, default_value_t = 256)]
    pub count: usize,
    /// Histogram range; defaults to 150 (percentile) or 120 (error)
    #[arg(long)]
    pub range: Option<f64>,
    /// Bin counts to sweep
    #[arg(long, value_delimiter = ',', default_values_t = vec![10, 20, 50])]
    pub bins: Vec<usize>,
    /// Histogram noise multipliers to sweep
    #[arg(long = "sigma-h", value_delimiter = ',', default_values_t = vec![1.0, 5.0, 10.0])]
    pub sigma_h: Vec<f64>,
    /// Percentiles for percentile mode
    #[arg(long, value_delimiter = ',')]
    pub percentiles: Option<Vec<f64>>,
    /// Gradient noise multiplier for the variance term (error mode)
    #[arg(long, default_value_t = 1.0)]
    pub sigma_t: f64,
    /// Expected batch size for the variance term (error mode)
    #[arg(long, default_value_t = 256.0)]
    pub batch: f64,
    /// Model dimension for the variance term (error mode)
    #[arg(long, default_value_t = 100_000)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write each cell's noisy histogram as bin_lo,bin_hi,count
    #[arg(long)]
    pub dump_histograms: bool,
    /// Directory receiving one CSV per (bins, sigma_h) cell
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// k-th smallest with k = ceil(p*n): the sort-order quantile the running-sum
/// rule targets.
fn sort_quantile(norms: &[f64], p: f64) -> f64 {
    let mut sorted = norms.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = (p * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[k.min(sorted.len()) - 1]
}

pub fn cmd_simulate_norms(args: &SimulateArgs) -> Result<Vec<PathBuf>, CliError> {
    if args.bins.iter().any(|&b| b < 2) {
        return Err(CliError::Usage("bin counts must be >= 2".into()));
    }
    if args.sigma_h.iter().any(|&s| s < 0.0) {
        return Err(CliError::Usage(
            "sigma-h values must be non-negative".into(),
        ));
    }
    let dist = match args.dist {
        DistKind::Gaussian => NormDistribution::Gaussian {
            mean: args.mean,
            std: args.std,
        },
        DistKind::Lognormal => NormDistribution::LogNormal {
            mu: args.mean,
            sigma: args.std,
        },
        DistKind::Constant => NormDistribution::Constant { value: args.mean },
    };
    let range = args.range.unwrap_or(match args.mode {
        SimulateMode::Percentile => 150.0,
        SimulateMode::Error => 120.0,
    });
    if range <= 0.0 {
        return Err(CliError::Usage("range must be positive".into()));
    }
    let percentiles = args
        .percentiles
        .clone()
        .unwrap_or_else(|| (1..=9).map(|i| i as f64 / 10.0).collect());
    if percentiles.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
        return Err(CliError::Usage("percentiles must lie in (0, 1)".into()));
    }

    std::fs::create_dir_all(&args.out_dir).map_err(|e| CliError::Data(e.to_string()))?;
    let mut written = Vec::new();
    for (bi, &bins) in args.bins.iter().enumerate() {
        for (si, &sigma_h) in args.sigma_h.iter().enumerate() {
            let cell_seed = args
                .seed
                .wrapping_add((bi * args.sigma_h.len() + si) as u64 + 1);
            let population = gen_norms(dist, args.count, cell_seed)?;
            let mut noise_rng = ChaCha20Rng::seed_from_u64(cell_seed ^ 0x9E37_79B9_7F4A_7C15);
            let hist = build_histogram(&population.values, range, bins, sigma_h, &mut noise_rng)
                .map_err(|e| CliError::Usage(e.to_string()))?;

            let name = match args.mode {
                SimulateMode::Percentile => format!("percentile_b{bins}_sh{sigma_h}.csv"),
                SimulateMode::Error => format!("error_b{bins}_sh{sigma_h}.csv"),
            };
            let path = args.out_dir.join(name);
            let file = std::fs::File::create(&path).map_err(|e| CliError::Data(e.to_string()))?;
            let mut w = csv::Writer::from_writer(file);

            match args.mode {
                SimulateMode::Percentile => {
                    w.write_record(["p", "estimated", "exact"])
                        .map_err(|e| CliError::Data(e.to_string()))?;
                    let state = ClipState {
                        c: 1.0,
                        r: range,
                        strategy: ThresholdStrategy::Percentile { p: 0.5 },
                    };
                    for &p in &percentiles {
                        let estimated = percentile_threshold(&hist, p, &state)
                            .map_err(|e| CliError::Usage(e.to_string()))?
                            .c;
                        let exact = sort_quantile(&population.values, p);
                        w.write_record(&[
                            format!("{p}"),
                            format!("{estimated}"),
                            format!("{exact}"),
                        ])
                        .map_err(|e| CliError::Data(e.to_string()))?;
                    }
                }
                SimulateMode::Error => {
                    w.write_record(["c", "variance", "bias", "estimated", "exact"])
                        .map_err(|e| CliError::Data(e.to_string()))?;
                    let c_max = 1.25 * range;
                    for j in 1..=60 {
                        let c = j as f64 * c_max / 60.0;
                        let est =
                            expected_squared_error(&hist, c, args.sigma_t, args.batch, args.dim)
                                .map_err(|e| CliError::Usage(e.to_string()))?;
                        let exact_bias = population
                            .values
                            .iter()
                            .map(|&g| (g - c).max(0.0).powi(2))
                            .sum::<f64>()
                            / population.values.len() as f64;
                        let exact = args.sigma_t * args.sigma_t * c * c * args.dim as f64
                            / (args.batch * args.batch)
                            + exact_bias;
                        w.write_record(&[
                            format!("{c}"),
                            format!("{}", est.variance),
                            format!("{}", est.bias),
                            format!("{}", est.total),
                            format!("{exact}"),
                        ])
                        .map_err(|e| CliError::Data(e.to_string()))?;
                    }
                }
            }
            w.flush().map_err(|e| CliError::Data(e.to_string()))?;
            written.push(path);
        }
    }
    Ok(written)
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Flat key = value config file; CLI flags override its entries
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// static | percentile | expected-error
    #[arg(long)]
    pub strategy: Option<String>,
    /// Target percentile for the percentile strategy
    #[arg(long)]
    pub p: Option<f64>,
    /// Initial clipping threshold
    #[arg(long, alias = "C")]
    pub c0: Option<f64>,
    /// Initial histogram range
    #[arg(long)]
    pub r0: Option<f64>,
    /// Histogram bin count
    #[arg(long)]
    pub bins: Option<usize>,
    /// blobs | csv
    #[arg(long)]
    pub data: Option<String>,
    /// CSV path for --data csv
    #[arg(long)]
    pub path: Option<PathBuf>,
    /// Label column name for --data csv
    #[arg(long)]
    pub label_col: Option<String>,
    /// Standardize CSV features on load
    #[arg(long)]
    pub standardize: Option<bool>,
    /// Blob dataset size
    #[arg(long)]
    pub n: Option<usize>,
    /// Blob feature dimension
    #[arg(long)]
    pub dim: Option<usize>,
    /// Blob class count
    #[arg(long)]
    pub classes: Option<usize>,
    /// Blob center separation
    #[arg(long)]
    pub separation: Option<f64>,
    /// Target epsilon
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Target delta; defaults to 1/(train-split size)
    #[arg(long)]
    pub delta: Option<f64>,
    /// Expected batch size
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// adam | sgd-momentum
    #[arg(long)]
    pub optimizer: Option<String>,
    /// Learning rate
    #[arg(long)]
    pub lr: Option<f64>,
    /// Momentum for sgd-momentum
    #[arg(long)]
    pub momentum: Option<f64>,
    /// Hidden-layer width; omitted trains logistic regression
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Histogram noise multiplier; defaults to the built-in rule
    #[arg(long = "sigma-h")]
    pub sigma_h: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Metrics CSV output path
    #[arg(long)]
    pub metrics_out: Option<PathBuf>,
    /// JSON summary output path
    #[arg(long)]
    pub summary_out: Option<PathBuf>,
}

/// Where the training examples come from.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "source")]
pub enum DataSource {
    Blobs {
        n: usize,
        dim: usize,
        classes: usize,
        separation: f64,
    },
    Csv {
        path: PathBuf,
        label_col: String,
        standardize: bool,
    },
}

/// Fully resolved training run: every field carries its final value, and
/// the provenance block records where the configuration came from.
#[derive(Debug, Clone, Serialize)]
pub struct RunSpec {
    pub strategy: String,
    pub p: Option<f64>,
    pub c0: f64,
    pub r0: f64,
    pub bins: usize,
    pub data: DataSource,
    pub epsilon: f64,
    pub delta: Option<f64>,
    pub batch: usize,
    pub epochs: usize,
    pub optimizer: String,
    pub lr: f64,
    pub momentum: f64,
    pub hidden: Option<usize>,
    pub sigma_h: Option<f64>,
    pub seed: u64,
    pub metrics_out: PathBuf,
    pub summary_out: PathBuf,
    pub config_file: Option<PathBuf>,
    pub cli_overrides: Vec<String>,
    pub version: String,
}

/// Parse a flat `key = value` file; `#` starts a comment.
fn parse_config_file(path: &Path) -> Result<HashMap<String, String>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config file {}: {e}", path.display())))?;
    let mut map = HashMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Usage(format!(
                "config line {}: expected 'key = value', got '{raw}'",
                lineno + 1
            )));
        };
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

/// Flag > file > default resolution, tracking which keys the CLI overrode.
struct Resolver {
    file: HashMap<String, String>,
    overrides: Vec<String>,
}

impl Resolver {
    fn get<T: std::str::FromStr + Clone>(
        &mut self,
        key: &str,
        flag: Option<T>,
        default: Option<T>,
    ) -> Result<T, CliError> {
        if let Some(v) = flag {
            if self.file.contains_key(key) {
                self.overrides.push(key.to_string());
            }
            return Ok(v);
        }
        if let Some(raw) = self.file.get(key) {
            return raw
                .parse::<T>()
                .map_err(|_| CliError::Usage(format!("config key '{key}': cannot parse '{raw}'")));
        }
        default.ok_or_else(|| CliError::Usage(format!("missing required setting '{key}'")))
    }

    fn get_opt<T: std::str::FromStr + Clone>(
        &mut self,
        key: &str,
        flag: Option<T>,
    ) -> Result<Option<T>, CliError> {
        if flag.is_some() {
            if self.file.contains_key(key) {
                self.overrides.push(key.to_string());
            }
            return Ok(flag);
        }
        match self.file.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|_| CliError::Usage(format!("config key '{key}': cannot parse '{raw}'"))),
        }
    }
}

pub fn resolve_run_spec(args: &TrainArgs) -> Result<RunSpec, CliError> {
    let file = match &args.config {
        Some(path) => parse_config_file(path)?,
        None => HashMap::new(),
    };
    let mut r = Resolver {
        file,
        overrides: Vec::new(),
    };

    let strategy: String = r.get("strategy", args.strategy.clone(), None)?;
    if !["static", "percentile", "expected-error"].contains(&strategy.as_str()) {
        return Err(CliError::Usage(format!(
            "unknown strategy '{strategy}'; valid strategies: static, percentile, expected-error"
        )));
    }
    let p = r.get_opt("p", args.p)?;
    if strategy == "percentile" && p.is_none() {
        return Err(CliError::Usage("the percentile strategy needs --p".into()));
    }

    let bins = r.get("bins", args.bins, Some(20))?;
    let c0 = r.get("c0", args.c0, Some(1.0))?;
    let default_r0 = match strategy.as_str() {
        "percentile" => 1.0,
        "expected-error" => bins as f64,
        _ => 2.0 * c0,
    };
    let r0 = r.get("r0", args.r0, Some(default_r0))?;

    let data_kind: String = r.get("data", args.data.clone(), Some("blobs".into()))?;
    let data = match data_kind.as_str() {
        "blobs" => DataSource::Blobs {
            n: r.get("n", args.n, Some(10_000))?,
            dim: r.get("dim", args.dim, Some(20))?,
            classes: r.get("classes", args.classes, Some(2))?,
            separation: r.get("separation", args.separation, Some(10.0))?,
        },
        "csv" => DataSource::Csv {
            path: r.get("path", args.path.clone(), None)?,
            label_col: r.get("label-col", args.label_col.clone(), Some("label".into()))?,
            standardize: r.get("standardize", args.standardize, Some(true))?,
        },
        other => {
            return Err(CliError::Usage(format!(
                "unknown data source '{other}'; valid sources: blobs, csv"
            )))
        }
    };

    let optimizer: String = r.get("optimizer", args.optimizer.clone(), Some("adam".into()))?;
    if !["adam", "sgd-momentum"].contains(&optimizer.as_str()) {
        return Err(CliError::Usage(format!(
            "unknown optimizer '{optimizer}'; valid optimizers: adam, sgd-momentum"
        )));
    }
    let default_lr = if optimizer == "adam" { 0.001 } else { 0.1 };

    Ok(RunSpec {
        strategy,
        p,
        c0,
        r0,
        bins,
        data,
        epsilon: r.get("epsilon", args.epsilon, None)?,
        delta: r.get_opt("delta", args.delta)?,
        batch: r.get("batch", args.batch, Some(256))?,
        epochs: r.get("epochs", args.epochs, Some(10))?,
        lr: r.get("lr", args.lr, Some(default_lr))?,
        momentum: r.get("momentum", args.momentum, Some(0.9))?,
        optimizer,
        hidden: r.get_opt("hidden", args.hidden)?,
        sigma_h: r.get_opt("sigma-h", args.sigma_h)?,
        seed: r.get("seed", args.seed, Some(0))?,
        metrics_out: r.get(
            "metrics-out",
            args.metrics_out.clone(),
            Some("metrics.csv".into()),
        )?,
        summary_out: r.get(
            "summary-out",
            args.summary_out.clone(),
            Some("summary.json".into()),
        )?,
        config_file: args.config.clone(),
        cli_overrides: r.overrides,
        version: env!("CARGO_PKG_VERSION").to_string(),
    })
}

#[derive(Serialize)]
struct Summary<'a> {
    strategy: &'a str,
    seed: u64,
    final_accuracy: f64,
    epsilon: f64,
    delta: f64,
    sigma: f64,
    #[serde(rename = "sigma_H")]
    sigma_h: Option<f64>,
    #[serde(rename = "sigma_T")]
    sigma_t: f64,
    config_echo: &'a RunSpec,
}

pub fn cmd_train(args: &TrainArgs) -> Result<String, CliError> {
    let mut spec = resolve_run_spec(args)?;

    let dataset: Dataset = match &spec.data {
        DataSource::Blobs {
            n,
            dim,
            classes,
            separation,
        } => gen_blobs(*n, *dim, *classes, *separation, spec.seed)?,
        DataSource::Csv {
            path,
            label_col,
            standardize,
        } => load_csv(path, label_col, *standardize)?,
    };
    let n_train = dataset.train_idx.len();
    if spec.batch == 0 || spec.batch > n_train {
        return Err(CliError::Usage(format!(
            "batch size {} must lie in [1, {n_train}]",
            spec.batch
        )));
    }
    let q = spec.batch as f64 / n_train as f64;
    let steps = spec.epochs as u64 * n_train.div_ceil(spec.batch) as u64;
    let delta = spec.delta.unwrap_or(1.0 / n_train as f64);
    spec.delta = Some(delta);

    let sigma = calibrate_sigma(spec.epsilon, delta, q, steps)?;
    let strategy = match spec.strategy.as_str() {
        "static" => ThresholdStrategy::Static,
        "percentile" => ThresholdStrategy::Percentile { p: spec.p.unwrap() },
        _ => ThresholdStrategy::ExpectedError,
    };
    let budget = if strategy == ThresholdStrategy::Static {
        PrivacyBudget::without_split(spec.epsilon, delta, q, steps, sigma)
    } else {
        let sigma_h = spec.sigma_h.unwrap_or_else(|| auto_sigma_h(sigma));
        spec.sigma_h = Some(sigma_h);
        PrivacyBudget::with_split(spec.epsilon, delta, q, steps, sigma, sigma_h)
            .map_err(|e| CliError::Infeasible(e.to_string()))?
    };

    let optimizer = match spec.optimizer.as_str() {
        "adam" => Optimizer::adam_default(),
        _ => Optimizer::SgdMomentum {
            momentum: spec.momentum,
        },
    };
    let config = TrainConfig {
        batch_size: spec.batch,
        epochs: spec.epochs,
        learning_rate: spec.lr,
        optimizer,
        budget: budget.clone(),
        clip: ClipState {
            c: spec.c0,
            r: spec.r0,
            strategy,
        },
        bins: spec.bins,
        hidden_dim: spec.hidden,
        seed: spec.seed,
    };

    let (_params, metrics) = train(&dataset, &config)?;

    let metrics_file = std::fs::File::create(&spec.metrics_out)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", spec.metrics_out.display())))?;
    metrics
        .write_csv(metrics_file)
        .map_err(|e| CliError::Data(e.to_string()))?;

    let summary = Summary {
        strategy: &spec.strategy,
        seed: spec.seed,
        final_accuracy: metrics.final_accuracy,
        epsilon: metrics.realized_epsilon,
        delta,
        sigma: budget.sigma,
        sigma_h: budget.sigma_h.is_finite().then_some(budget.sigma_h),
        sigma_t: budget.sigma_t,
        config_echo: &spec,
    };
    let json =
        serde_json::to_string_pretty(&summary).map_err(|e| CliError::Other(e.to_string()))?;
    std::fs::write(&spec.summary_out, &json)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", spec.summary_out.display())))?;

    Ok(format!(
        "final_accuracy = {}\nepsilon = {}",
        metrics.final_accuracy, metrics.realized_epsilon
    ))
}

/// Dispatch a parsed command line; the returned string is the report for
/// stdout.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    match &cli.command {
        Command::Account(args) => cmd_account(args),
        Command::Calibrate(args) => cmd_calibrate(args),
        Command::SimulateNorms(args) => {
            let written = cmd_simulate_norms(args)?;
            Ok(written
                .iter()
                .map(|p| p.display().to_string())
                .collect::<Vec<_>>()
                .join("\n"))
        }
        Command::Train(args) => cmd_train(args),
    }
}
