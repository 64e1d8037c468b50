//! Command-line front end. The `uhwt` binary forwards to [`main_with_args`].

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::bayes::{backfit, posterior_summary, run_chain, BackfitParams, ChainParams, CoefficientModel, RuhwtPrior, Target};
use crate::ensemble::{boost_grid, boost_sphere, rre_fit, weighted_quantile, BoostParams};
use crate::error::{Result, UhwtError};
use crate::experiments::{image_boost, quantile_coverage, resolve_signal, sphere_bench, ImageBoostConfig, QuantileConfig, SphereBenchConfig};
use crate::grid::{denoise, GridFitParams};
use crate::io::{self, Metrics, ResultRecord, SummaryGrid, Tensor};
use crate::partition::{Coefficients, Dataset};
use crate::sphere::fitter::{fit_sphere, SphereFitParams};
use crate::sphere::geometry::{SplitRule, Vec3};
use crate::stats;
use crate::synth::{sphere_sample, sphere_test_set, SphereSignal};

#[derive(Debug, Parser)]
#[command(name = "uhwt", version, about = "Unbalanced Haar wavelet tree regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Full-depth unshrunk fit on a grid or the sphere.
    Fit(FitArgs),
    /// Wavelet-shrinkage denoising with early stopping and soft thresholding.
    Denoise(FitArgs),
    /// Stagewise boosting, with random rotations on the sphere.
    Boost(BoostArgs),
    /// Random-rotation forest with mean aggregation.
    Rre(ForestArgs),
    /// Metropolis-Hastings over single trees.
    Mcmc(McmcArgs),
    /// Bayesian backfitting of a sum of trees.
    Backfit(BackfitArgs),
    /// Forest quantile intervals.
    Quantiles(QuantileArgs),
    /// Run the oracle checks.
    Verify(VerifyArgs),
    /// Benchmark tables on synthetic data.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct InputArgs {
    /// Grid input: PGM (P2/P5) or UHWT tensor file.
    #[arg(long, group = "source")]
    pub input: Option<PathBuf>,
    /// Sphere input: CSV with x,y,z,value columns.
    #[arg(long, group = "source")]
    pub sphere_csv: Option<PathBuf>,
    /// Sphere input: CSV with lon,lat,value columns in degrees.
    #[arg(long, group = "source")]
    pub lonlat_csv: Option<PathBuf>,
    /// Synthetic sphere signal id (fig5, planes, irregular).
    #[arg(long, group = "source")]
    pub signal: Option<String>,
    /// x,y,z,f samples defining the synthetic signal.
    #[arg(long)]
    pub signal_file: Option<PathBuf>,
    #[arg(long, default_value_t = 300)]
    pub n: usize,
    /// Noise sd as a fraction of the signal's sd.
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    /// Noiseless test points for synthetic signals (0 skips).
    #[arg(long, default_value_t = 0)]
    pub test_n: usize,
    /// Noiseless grid of the same shape, for test MSE on grid inputs.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TreeArgs {
    #[arg(long, default_value_t = 64)]
    pub max_depth: usize,
    #[arg(long, default_value_t = 1)]
    pub min_leaf: usize,
    /// Sphere split rule: balance, balance4, adapt, adapt_vertex.
    #[arg(long, default_value = "adapt")]
    pub rule: String,
    /// Grid only: consider median thresholds only.
    #[arg(long)]
    pub median_splits: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OutputArgs {
    /// Write the JSON result record here instead of stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Prediction dump: tensor file for grids, CSV for the sphere.
    #[arg(long)]
    pub pred_out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub tree: TreeArgs,
    /// Soft-threshold multiplier a.
    #[arg(long, default_value_t = 0.0)]
    pub a: f64,
    /// Early-stop multiplier b.
    #[arg(long, default_value_t = 0.0)]
    pub b: f64,
    /// Known noise sd; estimated when absent.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Write the fitted tree(s) as JSON.
    #[arg(long)]
    pub model_out: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BoostArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub tree: TreeArgs,
    #[arg(long, default_value_t = 500)]
    pub stages: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    /// Use the identity rotation at every stage.
    #[arg(long)]
    pub no_rotate: bool,
    #[arg(long, default_value_t = 0.0)]
    pub soft_c: f64,
    #[arg(long, default_value_t = 0.0)]
    pub b: f64,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ForestArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub tree: TreeArgs,
    #[arg(long, default_value_t = 500)]
    pub members: usize,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct QuantileArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub tree: TreeArgs,
    #[arg(long, default_value_t = 500)]
    pub members: usize,
    /// Quantile levels, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.05, 0.95])]
    pub q: Vec<f64>,
    /// Fresh noisy points for interval coverage (synthetic signals only).
    #[arg(long, default_value_t = 0)]
    pub holdout: usize,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PriorArgs {
    #[arg(long, default_value_t = 0.99)]
    pub split_base: f64,
    #[arg(long, default_value_t = 0.499)]
    pub split_decay: f64,
    #[arg(long, default_value_t = 32)]
    pub prior_depth: usize,
    /// Noise sd.
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
}

impl PriorArgs {
    fn prior(&self) -> RuhwtPrior {
        RuhwtPrior { split_base: self.split_base, split_decay: self.split_decay, max_depth: self.prior_depth, ..Default::default() }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct McmcArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub prior: PriorArgs,
    /// Marginal sd of a coefficient under the prior.
    #[arg(long, default_value_t = 1.0)]
    pub sigma_w: f64,
    #[arg(long, default_value_t = 10_000)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 0.0)]
    pub swap_prob: f64,
    /// Write the final tree as JSON.
    #[arg(long)]
    pub tree_out: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BackfitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub prior: PriorArgs,
    #[arg(long, default_value_t = 20)]
    pub trees: usize,
    #[arg(long, default_value_t = 200)]
    pub sweeps: usize,
    #[arg(long, default_value_t = 50)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 1)]
    pub store_every: usize,
    #[arg(long, default_value_t = 1.0)]
    pub tau: f64,
    #[arg(long, default_value_t = 1)]
    pub n_inner: usize,
    #[arg(long, default_value_t = 0.0)]
    pub swap_prob: f64,
    /// Stored draws as JSON lines.
    #[arg(long)]
    pub draws_out: Option<PathBuf>,
    /// Posterior mean, sd and 95% width as a UHWS summary file.
    #[arg(long)]
    pub summary_out: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct VerifyArgs {
    /// reconstruction, orthonormality, cart, lemma, bounds, enumeration or all.
    #[arg(long, value_delimiter = ',', default_values_t = vec!["all".to_string()])]
    pub check: Vec<String>,
    /// Random instances per check.
    #[arg(long, default_value_t = 20)]
    pub instances: usize,
    /// Monte Carlo replicates for the bound check.
    #[arg(long, default_value_t = 200)]
    pub replicates: usize,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BenchArgs {
    /// sphere or image.
    #[arg(long, default_value = "sphere")]
    pub task: String,
    #[arg(long, default_value = "fig5")]
    pub signal: String,
    #[arg(long)]
    pub signal_file: Option<PathBuf>,
    #[arg(long, default_value_t = 300)]
    pub n: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    /// Stage counts to report, comma separated; the largest is fit.
    #[arg(long, value_delimiter = ',', default_values_t = vec![500])]
    pub stages: Vec<usize>,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 15300)]
    pub test_n: usize,
    #[arg(long, default_value_t = 0.0)]
    pub soft_c: f64,
    #[arg(long, default_value = "adapt")]
    pub rule: String,
    #[arg(long, default_value_t = 64)]
    pub max_depth: usize,
    #[arg(long, default_value_t = 5)]
    pub min_leaf: usize,
    /// Also report identity-rotation boosting.
    #[arg(long)]
    pub identity: bool,
    /// Also report a mean-aggregated forest of this size.
    #[arg(long, default_value_t = 0)]
    pub forest: usize,
    /// Image task: side length.
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    /// Image task: early-stop multipliers, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.1, 0.2, 0.25, 0.3, 0.4, 0.5])]
    pub b: Vec<f64>,
    /// Image task: median thresholds only.
    #[arg(long)]
    pub median_splits: bool,
    #[command(flatten)]
    pub out: OutputArgs,
}

/// Failure classes with distinct exit codes.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(UhwtError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Runtime(e) => write!(f, "error: {e}"),
        }
    }
}

impl From<UhwtError> for CliError {
    fn from(e: UhwtError) -> Self {
        match e {
            UhwtError::PreconditionViolated(_) | UhwtError::InvalidQuantile(_) | UhwtError::UnknownSignal(_) => CliError::Config(e.to_string()),
            e => CliError::Runtime(e),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn config<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Config(msg.into()))
}

fn need_seed(out: &OutputArgs) -> CliResult<u64> {
    out.seed.ok_or_else(|| CliError::Config("--seed is required for this command".into()))
}

fn parse_rule(s: &str) -> CliResult<SplitRule> {
    s.parse().map_err(CliError::Config)
}

/// Loaded training data.
enum Source {
    Grid { data: Dataset, shape: Vec<usize>, truth: Option<Vec<f64>> },
    Sphere { data: Dataset, points: Vec<Vec3>, test: Option<(Vec<Vec3>, Vec<f64>)>, signal: Option<SphereSignal>, noise_sd: f64 },
}

fn load_samples(path: &Path) -> Result<Vec<(Vec3, f64)>> {
    let (p, v) = io::load_sphere_csv(path)?;
    Ok(p.into_iter().zip(v).collect())
}

fn load_source(a: &InputArgs, seed: Option<u64>) -> CliResult<Source> {
    if let Some(path) = &a.input {
        let t = io::load_grid_tensor(path)?;
        let truth = match &a.truth {
            Some(p) => {
                let tt = io::load_grid_tensor(p)?;
                if tt.shape != t.shape {
                    return config("--truth shape differs from --input");
                }
                Some(tt.values)
            }
            None => None,
        };
        return Ok(Source::Grid { data: t.to_dataset()?, shape: t.shape, truth });
    }
    let file = a.sphere_csv.as_ref().map(|p| io::load_sphere_csv(p)).or_else(|| a.lonlat_csv.as_ref().map(|p| io::load_lonlat_csv(p)));
    if let Some(r) = file {
        let (points, v) = r?;
        return Ok(Source::Sphere { data: Dataset::sphere(&points, v)?, points, test: None, signal: None, noise_sd: 0.0 });
    }
    if let Some(id) = &a.signal {
        let seed = seed.ok_or_else(|| CliError::Config("--seed is required for synthetic data".into()))?;
        let samples = a.signal_file.as_deref().map(load_samples).transpose()?;
        let signal = resolve_signal(id, samples)?;
        let s = sphere_sample(&signal, a.n, a.noise, seed, "train")?;
        let test = (a.test_n > 0).then(|| sphere_test_set(&signal, a.test_n, seed));
        return Ok(Source::Sphere { data: s.data, points: s.points, test, signal: Some(signal), noise_sd: s.noise_sd });
    }
    config("one of --input, --sphere-csv, --lonlat-csv or --signal is required")
}

fn finish(command: &str, args: &impl Serialize, metrics: Metrics, start: Instant) -> CliResult<ResultRecord> {
    let mut metrics = metrics;
    metrics.runtime_s = start.elapsed().as_secs_f64();
    let config = serde_json::to_value(args).map_err(UhwtError::from)?;
    Ok(ResultRecord { command: command.into(), config, metrics })
}

fn extra(pairs: Vec<(&str, Value)>) -> std::collections::BTreeMap<String, Value> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn save_grid(path: &Path, shape: &[usize], values: Vec<f64>) -> Result<()> {
    io::save_tensor(path, &Tensor::new(shape.to_vec(), values)?)
}

fn grid_params(t: &TreeArgs, a: f64, b: f64, sigma: Option<f64>) -> GridFitParams {
    GridFitParams { max_depth: t.max_depth, min_leaf: t.min_leaf, early_stop_b: b, soft_a: a, sigma, median_splits_only: t.median_splits }
}

fn sphere_params(t: &TreeArgs, a: f64, b: f64, sigma: Option<f64>) -> CliResult<SphereFitParams> {
    Ok(SphereFitParams { rule: parse_rule(&t.rule)?, max_depth: t.max_depth, min_leaf: t.min_leaf, early_stop_b: b, soft_a: a, sigma })
}

fn validate_shrinkage(a: f64, b: f64, sigma: Option<f64>) -> CliResult<()> {
    if !(a >= 0.0 && b >= 0.0) {
        return config("--a and --b must be nonnegative");
    }
    if matches!(sigma, Some(s) if !(s >= 0.0)) {
        return config("--sigma must be nonnegative");
    }
    Ok(())
}

fn cmd_fit(args: &FitArgs, name: &str) -> CliResult<ResultRecord> {
    let start = Instant::now();
    let (a, b) = if name == "fit" { (0.0, 0.0) } else { (args.a, args.b) };
    validate_shrinkage(a, b, args.sigma)?;
    let mut m = Metrics::default();
    match load_source(&args.input, args.out.seed)? {
        Source::Grid { data, shape, truth } => {
            let y = data.responses().to_vec();
            let model = denoise(&data, &y, &grid_params(&args.tree, a, b, args.sigma));
            let fit = model.fitted(&data);
            m.train_mse = Some(stats::mse(&fit, &y));
            m.test_mse = truth.map(|t| stats::mse(&fit, &t));
            m.extra = extra(vec![
                ("internal_nodes", json!(model.tree.internal_count())),
                ("depth", json!(model.tree.max_depth())),
                ("sigma_hat", json!(model.sigma_hat)),
                ("tau", json!(model.tau)),
            ]);
            if let Some(p) = &args.model_out {
                std::fs::write(p, model.tree.to_json()?).map_err(UhwtError::from)?;
            }
            if let Some(p) = &args.out.pred_out {
                save_grid(p, &shape, fit)?;
            }
        }
        Source::Sphere { data, points, test, .. } => {
            let y = data.responses().to_vec();
            let model = fit_sphere(&data, &y, &sphere_params(&args.tree, a, b, args.sigma)?, None)?;
            let fit = model.fitted(data.n(), Coefficients::Shrunk);
            m.train_mse = Some(stats::mse(&fit, &y));
            if let Some((tp, tt)) = &test {
                let pred: Vec<f64> = tp.iter().map(|p| model.predict(p, Coefficients::Shrunk)).collect();
                m.test_mse = Some(stats::mse(&pred, tt));
            }
            let internal: usize = model.faces.iter().flatten().map(|t| t.internal_count()).sum();
            m.extra = extra(vec![("internal_nodes", json!(internal)), ("sigma_hat", json!(model.sigma_hat)), ("tau", json!(model.tau))]);
            if let Some(p) = &args.model_out {
                let faces: Vec<Option<_>> = model.faces.iter().map(|f| f.as_ref().map(|t| t.to_record())).collect();
                let doc = json!({ "rotation": model.rotation, "global_mean": model.global_mean, "faces": faces });
                std::fs::write(p, serde_json::to_string_pretty(&doc).map_err(UhwtError::from)?).map_err(UhwtError::from)?;
            }
            if let Some(p) = &args.out.pred_out {
                io::save_sphere_predictions(p, &points, &fit)?;
            }
        }
    }
    finish(name, args, m, start)
}

fn cmd_boost(args: &BoostArgs) -> CliResult<ResultRecord> {
    let start = Instant::now();
    if args.stages == 0 {
        return config("--stages must be positive");
    }
    validate_shrinkage(args.soft_c, args.b, None)?;
    let seed = need_seed(&args.out)?;
    let bp = BoostParams { stages: args.stages, learning_rate: args.lr, rotate: !args.no_rotate, soft_c: args.soft_c, seed };
    let mut m = Metrics::default();
    match load_source(&args.input, Some(seed))? {
        Source::Grid { data, shape, truth } => {
            let y = data.responses().to_vec();
            let e = boost_grid(&data, &y, &bp, &grid_params(&args.tree, 0.0, args.b, None))?;
            let fit: Vec<f64> = (0..data.n()).map(|i| e.predict(data.point(i))).collect();
            m.train_mse = Some(stats::mse(&fit, &y));
            m.test_mse = truth.map(|t| stats::mse(&fit, &t));
            if let Some(p) = &args.out.pred_out {
                save_grid(p, &shape, fit)?;
            }
        }
        Source::Sphere { data, points, test, .. } => {
            let y = data.responses().to_vec();
            let e = boost_sphere(&data, &y, &bp, &sphere_params(&args.tree, 0.0, args.b, None)?)?;
            let fit: Vec<f64> = points.iter().map(|p| e.predict(p)).collect();
            m.train_mse = Some(stats::mse(&fit, &y));
            if let Some((tp, tt)) = &test {
                let pred: Vec<f64> = tp.iter().map(|p| e.predict(p)).collect();
                m.test_mse = Some(stats::mse(&pred, tt));
            }
            if let Some(p) = &args.out.pred_out {
                io::save_sphere_predictions(p, &points, &fit)?;
            }
        }
    }
    finish("boost", args, m, start)
}

fn sphere_only(src: Source) -> CliResult<(Dataset, Vec<Vec3>, Option<(Vec<Vec3>, Vec<f64>)>, Option<SphereSignal>, f64)> {
    match src {
        Source::Sphere { data, points, test, signal, noise_sd } => Ok((data, points, test, signal, noise_sd)),
        Source::Grid { .. } => config("this command needs sphere data"),
    }
}

fn cmd_rre(args: &ForestArgs) -> CliResult<ResultRecord> {
    let start = Instant::now();
    let seed = need_seed(&args.out)?;
    let (data, points, test, _, _) = sphere_only(load_source(&args.input, Some(seed))?)?;
    let y = data.responses().to_vec();
    let f = rre_fit(&data, &y, args.members, &sphere_params(&args.tree, 0.0, 0.0, None)?, seed)?;
    let fit: Vec<f64> = points.iter().map(|p| f.predict(p)).collect();
    let mut m = Metrics { train_mse: Some(stats::mse(&fit, &y)), ..Default::default() };
    if let Some((tp, tt)) = &test {
        let pred: Vec<f64> = tp.iter().map(|p| f.predict(p)).collect();
        m.test_mse = Some(stats::mse(&pred, tt));
    }
    if let Some(p) = &args.out.pred_out {
        io::save_sphere_predictions(p, &points, &fit)?;
    }
    finish("rre", args, m, start)
}

fn cmd_quantiles(args: &QuantileArgs) -> CliResult<ResultRecord> {
    let start = Instant::now();
    let seed = need_seed(&args.out)?;
    for &q in &args.q {
        if !(q > 0.0 && q < 1.0) {
            return Err(UhwtError::InvalidQuantile(q).into());
        }
    }
    let (data, points, test, signal, _) = sphere_only(load_source(&args.input, Some(seed))?)?;
    let base = sphere_params(&args.tree, 0.0, 0.0, None)?;
    let y = data.responses().to_vec();
    let mut m = Metrics::default();
    let mut pairs = Vec::new();
    if args.holdout > 0 {
        let Some(sig) = signal.as_ref() else { return config("--holdout needs a synthetic --signal") };
        let (&lo, &hi) = (args.q.iter().min_by(|a, b| a.total_cmp(b)).unwrap(), args.q.iter().max_by(|a, b| a.total_cmp(b)).unwrap());
        let cfg = QuantileConfig {
            signal: args.input.signal.clone().unwrap_or_default(),
            n: args.input.n,
            noise_frac: args.input.noise,
            members: args.members,
            holdout: args.holdout,
            lower: lo,
            upper: hi,
            base: base.clone(),
            seed,
        };
        let r = quantile_coverage(&cfg, sig)?;
        pairs.push(("coverage", json!(r.coverage)));
        pairs.push(("mean_width", json!(r.mean_width)));
    }
    let forest = rre_fit(&data, &y, args.members, &base, seed)?;
    let query: &[Vec3] = test.as_ref().map_or(&points, |t| &t.0);
    let table: Vec<Vec<f64>> = query
        .iter()
        .map(|p| {
            let w = forest.quantile_weights(p);
            args.q.iter().map(|&q| weighted_quantile(&y, &w, q)).collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let median_pred: Vec<f64> = query.iter().map(|p| forest.predict(p)).collect();
    if let Some((_, tt)) = &test {
        m.test_mse = Some(stats::mse(&median_pred, tt));
    }
    if let Some(p) = &args.out.pred_out {
        let mut w = csv::Writer::from_path(p).map_err(|e| UhwtError::Parse(e.to_string()))?;
        let mut head = vec!["x".to_string(), "y".into(), "z".into()];
        head.extend(args.q.iter().map(|q| format!("q{q}")));
        w.write_record(&head).map_err(|e| UhwtError::Parse(e.to_string()))?;
        for (pt, row) in query.iter().zip(&table) {
            let rec: Vec<String> = pt.iter().chain(row).map(|v| v.to_string()).collect();
            w.write_record(&rec).map_err(|e| UhwtError::Parse(e.to_string()))?;
        }
        w.flush().map_err(UhwtError::from)?;
    }
    pairs.push(("points", json!(query.len())));
    m.extra = extra(pairs);
    finish("quantiles", args, m, start)
}

fn grid_only(src: Source) -> CliResult<(Dataset, Vec<usize>, Option<Vec<f64>>)> {
    match src {
        Source::Grid { data, shape, truth } => Ok((data, shape, truth)),
        Source::Sphere { .. } => config("Bayesian trees need grid data (--input)"),
    }
}

fn cmd_mcmc(args: &McmcArgs) -> CliResult<ResultRecord> {
    let start = Instant::now();
    let seed = need_seed(&args.out)?;
    let (data, _, _) = grid_only(load_source(&args.input, Some(seed))?)?;
    let y = data.responses().to_vec();
    let prior = args.prior.prior();
    let model = CoefficientModel::gaussian(args.sigma_w, args.prior.sigma);
    let target = Target { data: &data, y: &y, prior: &prior, model: &model };
    let r = run_chain(&target, &ChainParams { steps: args.steps, burn_in: args.burn_in, swap_prob: args.swap_prob, seed })?;
    let mut top: Vec<(&String, &usize)> = r.visits.iter().collect();
    top.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
    let top: Vec<Value> = top.iter().take(5).map(|(k, c)| json!({ "tree": k, "visits": c })).collect();
    let m = Metrics {
        extra: extra(vec![
            ("acceptance_rate", json!(r.accepted as f64 / args.steps.max(1) as f64)),
            ("final_leaves", json!(r.tree.leaves().len())),
            ("distinct_trees", json!(r.visits.len())),
            ("top_trees", Value::Array(top)),
        ]),
        ..Default::default()
    };
    if let Some(p) = &args.tree_out {
        std::fs::write(p, serde_json::to_string_pretty(&r.tree.to_record()).map_err(UhwtError::from)?).map_err(UhwtError::from)?;
    }
    finish("mcmc", args, m, start)
}

fn cmd_backfit(args: &BackfitArgs) -> CliResult<ResultRecord> {
    let start = Instant::now();
    let seed = need_seed(&args.out)?;
    let (data, shape, truth) = grid_only(load_source(&args.input, Some(seed))?)?;
    let y = data.responses().to_vec();
    let params = BackfitParams {
        m: args.trees,
        sweeps: args.sweeps,
        burn_in: args.burn_in,
        store_every: args.store_every,
        tau: args.tau,
        sigma: args.prior.sigma,
        n_inner: args.n_inner,
        swap_prob: args.swap_prob,
        prior: args.prior.prior(),
        seed,
    };
    let draws = backfit(&data, &y, &params)?;
    let s = posterior_summary(&draws.fits)?;
    let mut m = Metrics { train_mse: Some(stats::mse(&s.mean, &y)), ..Default::default() };
    m.test_mse = truth.map(|t| stats::mse(&s.mean, &t));
    m.extra = extra(vec![("draws", json!(draws.fits.len())), ("mean_sd", json!(stats::mean(&s.sd))), ("mean_width95", json!(stats::mean(&s.width95)))]);
    if let Some(p) = &args.draws_out {
        io::write_json_lines(p, &draws.records)?;
    }
    if let Some(p) = &args.summary_out {
        let g = SummaryGrid { shape: shape.clone(), mean: s.mean.clone(), sd: s.sd.clone(), width: s.width95.clone() };
        std::fs::write(p, io::encode_summary(&g)).map_err(UhwtError::from)?;
    }
    if let Some(p) = &args.out.pred_out {
        save_grid(p, &shape, s.mean)?;
    }
    finish("backfit", args, m, start)
}

const CHECKS: [&str; 6] = ["reconstruction", "orthonormality", "cart", "lemma", "bounds", "enumeration"];

fn cmd_verify(args: &VerifyArgs) -> CliResult<ResultRecord> {
    let start = Instant::now();
    let seed = need_seed(&args.out)?;
    let mut checks: Vec<&str> = Vec::new();
    for c in &args.check {
        if c == "all" {
            checks.extend(CHECKS);
        } else if let Some(k) = CHECKS.iter().find(|k| **k == c.as_str()) {
            checks.push(k);
        } else {
            return config(format!("unknown check `{c}`"));
        }
    }
    checks.dedup();
    let mut results = serde_json::Map::new();
    let mut all_pass = true;
    for c in checks {
        let (pass, detail) = crate::verify::run_check(c, args.instances, args.replicates, seed)?;
        all_pass &= pass;
        results.insert(c.to_string(), json!({ "pass": pass, "detail": detail }));
    }
    let m = Metrics { extra: extra(vec![("checks", Value::Object(results)), ("all_pass", json!(all_pass))]), ..Default::default() };
    finish("verify", args, m, start)
}

fn cmd_bench(args: &BenchArgs) -> CliResult<ResultRecord> {
    let start = Instant::now();
    let seed = need_seed(&args.out)?;
    let mut m = Metrics::default();
    match args.task.as_str() {
        "sphere" => {
            let samples = args.signal_file.as_deref().map(load_samples).transpose()?;
            let signal = resolve_signal(&args.signal, samples)?;
            let cfg = SphereBenchConfig {
                signal: args.signal.clone(),
                n: args.n,
                noise_frac: args.noise,
                test_n: args.test_n,
                learning_rate: args.lr,
                checkpoints: args.stages.clone(),
                soft_c: args.soft_c,
                base: SphereFitParams { rule: parse_rule(&args.rule)?, max_depth: args.max_depth, min_leaf: args.min_leaf, ..Default::default() },
                identity: args.identity,
                forest_members: args.forest,
                seed,
            };
            validate_shrinkage(args.soft_c, 0.0, None)?;
            let r = sphere_bench(&cfg, &signal)?;
            m.train_mse = Some(r.train_mse);
            m.test_mse = r.rr_boost.last().copied();
            let table: Vec<Value> = r.checkpoints.iter().zip(&r.rr_boost).map(|(g, v)| json!({ "stages": g, "rr_boost": v })).collect();
            let mut pairs = vec![("rr_boost", Value::Array(table))];
            if let Some(id) = &r.identity_boost {
                pairs.push(("identity_boost", json!(r.checkpoints.iter().zip(id).map(|(g, v)| json!({ "stages": g, "mse": v })).collect::<Vec<_>>())));
            }
            if let Some(f) = r.forest {
                pairs.push(("forest", json!(f)));
            }
            m.extra = extra(pairs);
        }
        "image" => {
            let stages = *args.stages.iter().max().unwrap_or(&100);
            let cfg = ImageBoostConfig { size: args.size, b_values: args.b.clone(), median_splits_only: args.median_splits, stages, learning_rate: args.lr, checkpoint_every: 10, seed };
            let rows = image_boost(&cfg)?;
            let best_single = rows.iter().map(|r| r.single_mse).fold(f64::INFINITY, f64::min);
            let best_boost = rows.iter().map(|r| r.best_boost()).fold(f64::INFINITY, f64::min);
            m.test_mse = Some(best_boost);
            m.extra = extra(vec![("rows", serde_json::to_value(&rows).map_err(UhwtError::from)?), ("best_single", json!(best_single)), ("best_boost", json!(best_boost))]);
        }
        other => return config(format!("unknown bench task `{other}`")),
    }
    finish("bench", args, m, start)
}

/// Parse and run without writing output.
pub fn execute<I, T>(args: I) -> CliResult<ResultRecord>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Config(e.to_string()))?;
    dispatch(&cli.command)
}

pub fn dispatch(cmd: &Command) -> CliResult<ResultRecord> {
    match cmd {
        Command::Fit(a) => cmd_fit(a, "fit"),
        Command::Denoise(a) => cmd_fit(a, "denoise"),
        Command::Boost(a) => cmd_boost(a),
        Command::Rre(a) => cmd_rre(a),
        Command::Mcmc(a) => cmd_mcmc(a),
        Command::Backfit(a) => cmd_backfit(a),
        Command::Quantiles(a) => cmd_quantiles(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

fn output_of(cmd: &Command) -> Option<&Path> {
    let out = match cmd {
        Command::Fit(a) | Command::Denoise(a) => &a.out,
        Command::Boost(a) => &a.out,
        Command::Rre(a) => &a.out,
        Command::Mcmc(a) => &a.out,
        Command::Backfit(a) => &a.out,
        Command::Quantiles(a) => &a.out,
        Command::Verify(a) => &a.out,
        Command::Bench(a) => &a.out,
    };
    out.output.as_deref()
}

fn init_threads() {
    if let Ok(v) = std::env::var("UHWT_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            // 0 lets rayon pick; a second init in the same process is ignored.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

/// Entry point returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    init_threads();
    let rec = match dispatch(&cli.command) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("{e}");
            return e.exit_code();
        }
    };
    let text = match rec.to_json() {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    match output_of(&cli.command) {
        Some(p) => {
            if let Err(e) = std::fs::write(p, text + "\n") {
                eprintln!("error: {e}");
                return 1;
            }
        }
        None => {
            use std::io::Write;
            // A closed pipe (e.g. `| head`) is not an error worth reporting.
            if let Err(e) = writeln!(std::io::stdout().lock(), "{text}") {
                if e.kind() != std::io::ErrorKind::BrokenPipe {
                    eprintln!("error: {e}");
                    return 1;
                }
            }
        }
    }
    let failed_verify = rec.command == "verify" && rec.metrics.extra.get("all_pass") == Some(&json!(false));
    i32::from(failed_verify)
}
