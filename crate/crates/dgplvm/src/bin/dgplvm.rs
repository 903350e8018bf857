use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dgplvm::diagnostics::{bulk_ess, split_rhat, tail_ess, ScalarDrawSet};
use dgplvm::harness::io::{
    load_case_study, read_dataset_csv, read_draws_csv, read_result_rows, write_dataset_csv,
    write_json, GroundTruthJson,
};
use dgplvm::harness::{
    fit_single, read_prior_csv, summarize_results, write_summary_csv, ExperimentPlan,
    VariantFlags,
};
use dgplvm::kernels::KernelFamily;
use dgplvm::model::{ModelConfig, PriorSpec, DEFAULT_JITTER};
use dgplvm::sampler::SamplerConfig;
use dgplvm::simgen::{simulate, Scenario, ScenarioConfig};

/// Derivative Gaussian process latent variable models: simulation,
/// fitting, the simulation-study experiment and MCMC diagnostics.
#[derive(Parser)]
#[command(name = "dgplvm", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a simulated dataset (CSV) and its ground truth (JSON).
    Simulate(SimulateArgs),
    /// Fit one model to a dataset and persist draws and summaries.
    Fit(FitArgs),
    /// Run the model-variant crossing over simulated datasets.
    Experiment(ExperimentArgs),
    /// Group experiment results into a plot-ready summary table.
    Summarize(SummarizeArgs),
    /// Convergence diagnostics for an existing draws CSV.
    Diagnose(DiagnoseArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// gp or periodic
    #[arg(long, default_value = "gp")]
    scenario: String,
    #[arg(long, default_value_t = 20)]
    n_obs: usize,
    #[arg(long, default_value_t = 5)]
    n_dims: usize,
    /// se, matern32 or matern52
    #[arg(long, default_value = "se")]
    family: String,
    #[arg(long, default_value_t = 3.0)]
    lambda: f64,
    #[arg(long, default_value_t = 0.5)]
    corr: f64,
    #[arg(long, default_value_t = 0.3)]
    x_obs_sd: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth JSON path (defaults to <out>.truth.json).
    #[arg(long)]
    truth_out: Option<PathBuf>,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    use_derivatives: bool,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    scaled_derivatives: bool,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    varying_hyperparams: bool,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    correlated_outputs: bool,
    /// se, matern32 or matern52
    #[arg(long, default_value = "se")]
    family: String,
    #[arg(long, default_value_t = DEFAULT_JITTER)]
    jitter: f64,
    /// Inverse-gamma shape of the length-scale prior.
    #[arg(long)]
    rho_shape: Option<f64>,
    /// Inverse-gamma scale of the length-scale prior.
    #[arg(long)]
    rho_scale: Option<f64>,
    #[arg(long, default_value_t = 3.0)]
    lkj_eta: f64,
    /// Measurement SD of the observed inputs.
    #[arg(long)]
    x_obs_sd: Option<f64>,
}

#[derive(Args)]
struct SamplerArgs {
    #[arg(long, default_value_t = 3000)]
    iterations: usize,
    #[arg(long, default_value_t = 1000)]
    warmup: usize,
    #[arg(long, default_value_t = 0.8)]
    target_accept: f64,
    #[arg(long, default_value_t = 10)]
    max_tree_depth: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.1)]
    init_jitter: f64,
    #[arg(long, default_value_t = 1)]
    chains: usize,
}

impl SamplerArgs {
    fn to_config(&self) -> SamplerConfig {
        SamplerConfig {
            n_iterations: self.iterations,
            n_warmup: self.warmup,
            target_accept: self.target_accept,
            max_tree_depth: self.max_tree_depth,
            seed: self.seed,
            init_jitter: self.init_jitter,
        }
    }
}

#[derive(Args)]
struct FitArgs {
    /// Dataset CSV path.
    #[arg(long)]
    data: PathBuf,
    /// Treat the file as case-study data: accept a cell_hours column and
    /// apply the case-study prior defaults (s = 0.03, family-specific
    /// length-scale prior).
    #[arg(long)]
    case_study: bool,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    sampler: SamplerArgs,
    /// Output directory for draws.csv, summary.json and shift.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    /// gp or periodic
    #[arg(long, default_value = "gp")]
    scenario: String,
    /// Comma-separated output dimension counts.
    #[arg(long, default_value = "5,10,20", value_delimiter = ',')]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    /// "all" or comma-separated variant labels like d1s1v1c1.
    #[arg(long, default_value = "all", value_delimiter = ',')]
    variants: Vec<String>,
    #[arg(long, default_value_t = 20)]
    n_obs: usize,
    #[arg(long, default_value_t = 3.0)]
    lambda: f64,
    #[arg(long, default_value_t = 0.5)]
    corr: f64,
    #[arg(long, default_value_t = 0.3)]
    x_obs_sd: f64,
    #[arg(long, default_value_t = 5.0)]
    rho_shape: f64,
    #[arg(long, default_value_t = 5.0)]
    rho_scale: f64,
    #[command(flatten)]
    sampler: SamplerArgs,
    /// Quickstart profile: 10 trials, D=5 only, the three headline
    /// variants. Explicit flags still override.
    #[arg(long)]
    quickstart: bool,
    #[arg(long, default_value_t = 1)]
    base_seed: u64,
    /// Worker threads for concurrent fits (0 = all cores).
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SummarizeArgs {
    /// results.csv produced by the experiment.
    #[arg(long)]
    results: PathBuf,
    /// prior_rmse.csv produced by the experiment.
    #[arg(long)]
    prior: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DiagnoseArgs {
    /// draws.csv (one column per parameter, one row per iteration).
    #[arg(long)]
    draws: PathBuf,
    /// Number of chains stacked in the file.
    #[arg(long, default_value_t = 1)]
    chains: usize,
    /// Output JSON path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn output_dir_override(requested: PathBuf) -> PathBuf {
    match std::env::var("DGPLVM_OUTPUT_DIR") {
        Ok(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => requested,
    }
}

fn run() -> dgplvm::Result<u8> {
    match Cli::parse().command {
        Command::Simulate(args) => {
            let cfg = ScenarioConfig {
                scenario: Scenario::parse(&args.scenario)?,
                n_obs: args.n_obs,
                n_dims: args.n_dims,
                family: KernelFamily::parse(&args.family)?,
                lambda: args.lambda,
                corr: args.corr,
                x_obs_sd: args.x_obs_sd,
                seed: args.seed,
            };
            let trial = simulate(&cfg)?;
            write_dataset_csv(&args.out, &trial.dataset)?;
            let truth_path = args
                .truth_out
                .unwrap_or_else(|| args.out.with_extension("truth.json"));
            write_json(&truth_path, &GroundTruthJson::from(&trial.truth))?;
            eprintln!(
                "wrote {} ({} observations, {} dimensions) and {}",
                args.out.display(),
                cfg.n_obs,
                cfg.n_dims,
                truth_path.display()
            );
            Ok(0)
        }
        Command::Fit(args) => {
            let family = KernelFamily::parse(&args.model.family)?;
            let x_obs_sd = args
                .model
                .x_obs_sd
                .unwrap_or(if args.case_study { 0.03 } else { 0.3 });
            let (data, warnings) = if args.case_study {
                load_case_study(&args.data, x_obs_sd)?
            } else {
                (read_dataset_csv(&args.data)?, Vec::new())
            };
            for w in &warnings {
                eprintln!("warning: {w}");
            }
            // case-study length-scale priors account for the functional
            // smoothness of the chosen covariance function
            let (default_shape, default_scale) = if args.case_study {
                match family {
                    KernelFamily::SquaredExponential => (5.0, 0.5),
                    KernelFamily::Matern32 => (5.0, 14.0),
                    KernelFamily::Matern52 => (5.0, 5.0),
                }
            } else {
                (5.0, 5.0)
            };
            let priors = PriorSpec {
                rho_shape: args.model.rho_shape.unwrap_or(default_shape),
                rho_scale: args.model.rho_scale.unwrap_or(default_scale),
                sd_scale_y: 1.0,
                sd_scale_yprime: 1.0,
                lkj_eta: args.model.lkj_eta,
                x_obs_sd,
            };
            let use_derivatives = args.model.use_derivatives && data.y_prime.is_some();
            let config = ModelConfig::new(
                use_derivatives,
                args.model.scaled_derivatives && use_derivatives,
                args.model.varying_hyperparams,
                args.model.correlated_outputs && data.n_dims() > 1,
                family,
                data.n_obs(),
                data.n_dims(),
                args.model.jitter,
                priors,
            )?;
            let out = output_dir_override(args.out);
            let fit = fit_single(
                &config,
                &data,
                &args.sampler.to_config(),
                args.sampler.chains,
                Some(&out),
            )?;
            eprintln!(
                "fit {} ({} draws, {} divergences) -> {}",
                config.variant_label(),
                fit.chains.iter().map(|c| c.n_draws()).sum::<usize>(),
                fit.summary.divergences,
                out.display()
            );
            if fit.summary.rhat_flagged || fit.summary.ess_flagged {
                eprintln!(
                    "warning: convergence flags raised for {:?}",
                    fit.summary.flagged_params
                );
            }
            Ok(0)
        }
        Command::Experiment(args) => {
            let scenario = Scenario::parse(&args.scenario)?;
            let out = output_dir_override(args.out);
            let mut plan = ExperimentPlan::new(scenario, out);
            plan.n_obs = args.n_obs;
            plan.lambda = args.lambda;
            plan.corr = args.corr;
            plan.x_obs_sd = args.x_obs_sd;
            plan.rho_shape = args.rho_shape;
            plan.rho_scale = args.rho_scale;
            plan.sampler = args.sampler.to_config();
            plan.base_seed = args.base_seed;
            plan.workers = args.workers;
            plan.dims_list = args.dims.clone();
            plan.n_trials = args.trials;
            if args.quickstart {
                plan.n_trials = 10;
                plan.dims_list = vec![5];
                plan.model_variants = vec![
                    VariantFlags::full(),
                    VariantFlags::new(false, false, true, true)?,
                    VariantFlags::new(true, false, true, true)?,
                ];
            }
            if !(args.variants.len() == 1 && args.variants[0] == "all") {
                plan.model_variants = args
                    .variants
                    .iter()
                    .map(|s| VariantFlags::parse(s))
                    .collect::<dgplvm::Result<Vec<_>>>()?;
            } else if !args.quickstart {
                plan.model_variants = VariantFlags::all_table_variants();
            }
            let outcome = dgplvm::harness::run_experiment(&plan)?;
            eprintln!(
                "experiment complete: {} cells, {} failed fits, results at {}",
                outcome.n_cells,
                outcome.n_failed_fits,
                outcome.results_path.display()
            );
            Ok(if outcome.n_failed_fits > 0 { 2 } else { 0 })
        }
        Command::Summarize(args) => {
            let rows = read_result_rows(&args.results)?;
            let prior = match &args.prior {
                Some(p) => read_prior_csv(p)?,
                None => Vec::new(),
            };
            let groups = summarize_results(&rows, &prior)?;
            write_summary_csv(&args.out, &groups)?;
            eprintln!("wrote {} groups to {}", groups.len(), args.out.display());
            Ok(0)
        }
        Command::Diagnose(args) => {
            let (names, draws) = read_draws_csv(&args.draws)?;
            let n = draws.nrows();
            if args.chains == 0 || n % args.chains != 0 {
                return Err(dgplvm::Error::InvalidArgument(format!(
                    "{n} rows cannot be split into {} chains",
                    args.chains
                )));
            }
            let per = n / args.chains;
            let mut report = Vec::new();
            for (j, name) in names.iter().enumerate() {
                let vals = ndarray::Array2::from_shape_fn((args.chains, per), |(c, i)| {
                    draws[[c * per + i, j]]
                });
                let entry = match ScalarDrawSet::new(vals) {
                    Ok(d) => serde_json::json!({
                        "name": name,
                        "rhat": split_rhat(&d).ok(),
                        "bulk_ess": bulk_ess(&d).ok(),
                        "tail_ess": tail_ess(&d).ok(),
                    }),
                    Err(e) => serde_json::json!({
                        "name": name,
                        "error": e.to_string(),
                    }),
                };
                report.push(entry);
            }
            let doc = serde_json::json!({
                "chains": args.chains,
                "draws_per_chain": per,
                "params": report,
            });
            match args.out {
                Some(path) => write_json(&path, &doc)?,
                None => println!("{}", serde_json::to_string_pretty(&doc)?),
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
