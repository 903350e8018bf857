//! The experiment harness behind the CLI: single fits with persisted
//! draws and summaries, the Table-1 experiment crossing over simulated
//! data with idempotent resume, the prior-RMSE benchmark and plot-ready
//! grouped summaries.

pub mod io;

use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{bulk_ess, rmse_latent, split_rhat, tail_ess, ConvergenceFlags,
    ScalarDrawSet};
use crate::error::{Error, Result};
use crate::kernels::KernelFamily;
use crate::model::{empirical_prior_scales, Dataset, ModelConfig, PriorSpec, DEFAULT_JITTER};
use crate::sampler::{sample, ChainDraws, GpPosterior, SamplerConfig};
use crate::simgen::{simulate, Scenario, ScenarioConfig};

use io::{FitSummary, Manifest, ParamSummary, ResultRow};

/// The four Table-1 switches of one model variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantFlags {
    pub use_derivatives: bool,
    pub scaled_derivatives: bool,
    pub varying_hyperparams: bool,
    pub correlated_outputs: bool,
}

impl VariantFlags {
    pub fn new(deriv: bool, scaled: bool, varying: bool, corr: bool) -> Result<Self> {
        if scaled && !deriv {
            return Err(Error::InvalidArgument(
                "scaled derivatives require derivative information".into(),
            ));
        }
        Ok(Self {
            use_derivatives: deriv,
            scaled_derivatives: scaled,
            varying_hyperparams: varying,
            correlated_outputs: corr,
        })
    }

    /// The full DGP-LVM: all four components on.
    pub fn full() -> Self {
        Self::new(true, true, true, true).unwrap()
    }

    /// All 12 sensible switch combinations.
    pub fn all_table_variants() -> Vec<Self> {
        let mut out = Vec::with_capacity(12);
        for deriv in [true, false] {
            for scaled in [true, false] {
                if scaled && !deriv {
                    continue;
                }
                for varying in [true, false] {
                    for corr in [true, false] {
                        out.push(Self::new(deriv, scaled, varying, corr).unwrap());
                    }
                }
            }
        }
        out
    }

    pub fn label(&self) -> String {
        format!(
            "d{}s{}v{}c{}",
            self.use_derivatives as u8,
            self.scaled_derivatives as u8,
            self.varying_hyperparams as u8,
            self.correlated_outputs as u8
        )
    }

    pub fn parse(s: &str) -> Result<Self> {
        let bytes: Vec<char> = s.chars().collect();
        let flag = |tag: char, ix: usize| -> Result<bool> {
            if bytes.len() != 8 || bytes[ix] != tag {
                return Err(Error::InvalidArgument(format!(
                    "bad variant label '{s}' (expected e.g. d1s1v0c1)"
                )));
            }
            match bytes[ix + 1] {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(Error::InvalidArgument(format!("bad variant label '{s}'"))),
            }
        };
        Self::new(flag('d', 0)?, flag('s', 2)?, flag('v', 4)?, flag('c', 6)?)
    }

    /// Scaled-derivative level used for grouping results: none (no
    /// derivative information), unscaled, or scaled.
    pub fn scaled_level(&self) -> &'static str {
        if !self.use_derivatives {
            "none"
        } else if self.scaled_derivatives {
            "scaled"
        } else {
            "unscaled"
        }
    }

    pub fn to_model_config(
        &self,
        family: KernelFamily,
        n_obs: usize,
        n_dims: usize,
        priors: PriorSpec,
    ) -> Result<ModelConfig> {
        ModelConfig::new(
            self.use_derivatives,
            self.scaled_derivatives,
            self.varying_hyperparams,
            self.correlated_outputs,
            family,
            n_obs,
            n_dims,
            DEFAULT_JITTER,
            priors,
        )
    }
}

/// Monte-Carlo RMSE attainable from the measurement model alone: draw
/// noisy inputs around the truth, then posterior-equivalent draws around
/// those, and score per input.
pub fn prior_rmse_benchmark(
    x_true: &[f64],
    x_obs_sd: f64,
    n_mc: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if n_mc < 1000 {
        return Err(Error::InvalidArgument(format!(
            "prior benchmark needs at least 1000 Monte Carlo draws, got {n_mc}"
        )));
    }
    if !(x_obs_sd >= 0.0) {
        return Err(Error::InvalidArgument("x_obs_sd must be nonnegative".into()));
    }
    let n = x_true.len();
    let mut acc = vec![0.0; n];
    for _ in 0..n_mc {
        for (i, t) in x_true.iter().enumerate() {
            let z1: f64 = StandardNormal.sample(rng);
            let z2: f64 = StandardNormal.sample(rng);
            let x_obs = t + x_obs_sd * z1;
            let x = x_obs + x_obs_sd * z2;
            acc[i] += (x - t) * (x - t);
        }
    }
    let mean_rmse = acc
        .iter()
        .map(|a| (a / n_mc as f64).sqrt())
        .sum::<f64>()
        / n as f64;
    Ok(mean_rmse)
}

/// Result of one model fit.
pub struct FitResult {
    pub chains: Vec<ChainDraws>,
    pub summary: FitSummary,
}

impl FitResult {
    /// All post-warmup draws stacked over chains, (C*S) x P.
    pub fn stacked_draws(&self) -> Array2<f64> {
        let p = self.chains[0].param_names.len();
        let total: usize = self.chains.iter().map(|c| c.n_draws()).sum();
        let mut out = Array2::<f64>::zeros((total, p));
        let mut row = 0;
        for c in &self.chains {
            for r in c.draws.rows() {
                for j in 0..p {
                    out[[row, j]] = r[j];
                }
                row += 1;
            }
        }
        out
    }

    pub fn param_names(&self) -> &[String] {
        &self.chains[0].param_names
    }

    /// Draw set for one parameter, chains as rows.
    pub fn draw_set(&self, name: &str) -> Option<ScalarDrawSet> {
        let ix = self.param_names().iter().position(|n| n == name)?;
        let s = self.chains[0].n_draws();
        let vals =
            Array2::from_shape_fn((self.chains.len(), s), |(c, i)| self.chains[c].draws[[i, ix]]);
        ScalarDrawSet::new(vals).ok()
    }
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let h = (n as f64 - 1.0) * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn summarize_chains(chains: &[ChainDraws], runtime_seconds: f64, variant: String) -> FitSummary {
    let names = chains[0].param_names.clone();
    let n_chains = chains.len();
    let s = chains[0].n_draws();
    let mut params = Vec::with_capacity(names.len());
    let mut flagged = Vec::new();
    for (ix, name) in names.iter().enumerate() {
        let vals = Array2::from_shape_fn((n_chains, s), |(c, i)| chains[c].draws[[i, ix]]);
        let flat: Vec<f64> = vals.iter().copied().collect();
        let mean = flat.iter().sum::<f64>() / flat.len() as f64;
        let var = flat.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (flat.len() as f64 - 1.0);
        let mut sorted = flat.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite draws"));
        let dset = ScalarDrawSet::new(vals).ok();
        let (rhat, bulk, tail) = match &dset {
            Some(d) => (
                split_rhat(d).ok(),
                bulk_ess(d).ok(),
                tail_ess(d).ok(),
            ),
            None => (None, None, None),
        };
        let flags = ConvergenceFlags::check(
            rhat.unwrap_or(f64::INFINITY),
            bulk.unwrap_or(0.0),
            tail.unwrap_or(0.0),
            n_chains,
        );
        if !flags.all_ok() {
            flagged.push(name.clone());
        }
        params.push(ParamSummary {
            name: name.clone(),
            mean,
            sd: var.sqrt(),
            q5: quantile_sorted(&sorted, 0.05),
            q95: quantile_sorted(&sorted, 0.95),
            rhat,
            bulk_ess: bulk,
            tail_ess: tail,
            flags,
        });
    }
    let rhat_flagged = params.iter().any(|p| !p.flags.rhat_ok);
    let ess_flagged = params
        .iter()
        .any(|p| !p.flags.bulk_ess_ok || !p.flags.tail_ess_ok);
    FitSummary {
        params,
        n_chains,
        n_iterations: 0,
        n_warmup: 0,
        seed: chains[0].seed,
        divergences: chains.iter().map(|c| c.divergences).sum(),
        rhat_flagged,
        ess_flagged,
        flagged_params: flagged,
        runtime_seconds,
        variant,
    }
}

/// Fit one model. Centers the outputs, scales the half-normal priors by
/// the empirical SDs of the (centered) data, runs `n_chains` chains with
/// consecutive seeds, and persists draws, summary and the prior/posterior
/// shift table under `out`.
pub fn fit_single(
    config: &ModelConfig,
    data: &Dataset,
    sampler_config: &SamplerConfig,
    n_chains: usize,
    out: Option<&Path>,
) -> Result<FitResult> {
    let started = Instant::now();
    let (centered, _means) = data.center_outputs();
    let (s_y, s_yp) = empirical_prior_scales(&centered)?;
    let mut config = config.clone();
    config.priors.sd_scale_y = s_y;
    config.priors.sd_scale_yprime = s_yp;
    config.priors.validate()?;

    let posterior = GpPosterior::new(config.clone(), centered);
    let dim = posterior.dim();
    let mut chains = Vec::with_capacity(n_chains.max(1));
    for c in 0..n_chains.max(1) {
        let sc = SamplerConfig {
            seed: sampler_config.seed.wrapping_add(c as u64),
            ..*sampler_config
        };
        chains.push(sample(&posterior, dim, &sc)?);
    }
    let mut summary = summarize_chains(
        &chains,
        started.elapsed().as_secs_f64(),
        config.variant_label(),
    );
    summary.n_iterations = sampler_config.n_iterations;
    summary.n_warmup = sampler_config.n_warmup;
    summary.seed = sampler_config.seed;

    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        io::write_draws_csv(&dir.join("draws.csv"), &chains)?;
        io::write_json(&dir.join("summary.json"), &summary)?;
        write_shift_table(&dir.join("shift.csv"), &chains, data)?;
    }
    Ok(FitResult { chains, summary })
}

/// Prior/posterior shift per cell: posterior mean of x minus the observed
/// input, with a 95% interval from the draw quantiles.
fn write_shift_table(path: &Path, chains: &[ChainDraws], data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "x_obs", "x_post_mean", "shift", "shift_q2_5", "shift_q97_5"])?;
    for i in 0..data.n_obs() {
        let name = format!("x[{}]", i + 1);
        let mut draws = Vec::new();
        for c in chains {
            if let Some(col) = c.column(&name) {
                draws.extend(col);
            }
        }
        if draws.is_empty() {
            continue;
        }
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        draws.sort_by(|a, b| a.partial_cmp(b).expect("finite draws"));
        let q_lo = quantile_sorted(&draws, 0.025) - data.x_obs[i];
        let q_hi = quantile_sorted(&draws, 0.975) - data.x_obs[i];
        w.write_record(&[
            (i + 1).to_string(),
            format!("{:.17e}", data.x_obs[i]),
            format!("{mean:.17e}"),
            format!("{:.17e}", mean - data.x_obs[i]),
            format!("{q_lo:.17e}"),
            format!("{q_hi:.17e}"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Experiment over trials, output dimensions and model variants.
#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub scenario: Scenario,
    pub dims_list: Vec<usize>,
    pub n_trials: usize,
    pub model_variants: Vec<VariantFlags>,
    pub family: KernelFamily,
    pub n_obs: usize,
    pub lambda: f64,
    pub corr: f64,
    pub x_obs_sd: f64,
    pub rho_shape: f64,
    pub rho_scale: f64,
    pub lkj_eta: f64,
    pub sampler: SamplerConfig,
    pub output_dir: PathBuf,
    pub base_seed: u64,
    pub workers: usize,
    pub prior_rmse_mc: usize,
}

impl ExperimentPlan {
    pub fn new(scenario: Scenario, output_dir: PathBuf) -> Self {
        Self {
            scenario,
            dims_list: vec![5, 10, 20],
            n_trials: 50,
            model_variants: VariantFlags::all_table_variants(),
            family: KernelFamily::SquaredExponential,
            n_obs: 20,
            lambda: 3.0,
            corr: 0.5,
            x_obs_sd: 0.3,
            rho_shape: 5.0,
            rho_scale: 5.0,
            lkj_eta: 3.0,
            sampler: SamplerConfig::default(),
            output_dir,
            base_seed: 1,
            workers: 0,
            prior_rmse_mc: 10_000,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_trials == 0 || self.dims_list.is_empty() || self.model_variants.is_empty() {
            return Err(Error::InvalidArgument(
                "experiment needs trials, dims and variants".into(),
            ));
        }
        for v in &self.model_variants {
            if v.scaled_derivatives && !v.use_derivatives {
                return Err(Error::InvalidArgument(format!(
                    "non-sensible variant {}",
                    v.label()
                )));
            }
        }
        self.sampler.validate()
    }

    fn cell_key(&self, trial: usize, dims: usize, variant: &VariantFlags) -> String {
        format!("t{trial}_D{dims}_{}", variant.label())
    }
}

fn mix_seed(base: u64, trial: usize, dims: usize, variant_ix: usize) -> u64 {
    // splitmix64 over a packed key
    let mut z = base
        .wrapping_add(0x9e3779b97f4a7c15u64.wrapping_mul(
            1 + trial as u64 + ((dims as u64) << 24) + ((variant_ix as u64) << 48),
        ));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

pub struct ExperimentOutcome {
    pub results_path: PathBuf,
    pub prior_path: PathBuf,
    pub n_cells: usize,
    pub n_failed_fits: usize,
}

/// Run (or resume) an experiment. Every variant within a (trial, dims)
/// cell fits the identical dataset. Completed cells are recorded in the
/// manifest and skipped on rerun; finalization rewrites the merged
/// results deterministically, so a rerun of a completed plan leaves
/// every output byte unchanged.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<ExperimentOutcome> {
    plan.validate()?;
    std::fs::create_dir_all(&plan.output_dir)?;
    let cells_dir = plan.output_dir.join("cells");
    std::fs::create_dir_all(&cells_dir)?;
    let manifest_path = plan.output_dir.join("manifest.json");
    let mut manifest: Manifest = if manifest_path.exists() {
        io::read_json(&manifest_path)?
    } else {
        Manifest::default()
    };

    // datasets per (trial, dims): identical across variants by construction
    let mut work = Vec::new();
    let mut prior_rows: Vec<(usize, usize, f64)> = Vec::new();
    for trial in 0..plan.n_trials {
        for &dims in &plan.dims_list {
            let cfg = ScenarioConfig {
                scenario: plan.scenario,
                n_obs: plan.n_obs,
                n_dims: dims,
                family: KernelFamily::SquaredExponential,
                lambda: plan.lambda,
                corr: plan.corr,
                x_obs_sd: plan.x_obs_sd,
                seed: plan.base_seed + trial as u64,
            };
            let trial_data = simulate(&cfg)?;
            let mut bench_rng =
                ChaCha8Rng::seed_from_u64(mix_seed(plan.base_seed, trial, dims, usize::MAX));
            let bench = prior_rmse_benchmark(
                trial_data.truth.x_true.as_slice(),
                plan.x_obs_sd,
                plan.prior_rmse_mc,
                &mut bench_rng,
            )?;
            prior_rows.push((trial, dims, bench));
            for (v_ix, variant) in plan.model_variants.iter().enumerate() {
                let key = plan.cell_key(trial, dims, variant);
                if manifest.completed.contains_key(&key) {
                    continue;
                }
                work.push((trial, dims, v_ix, *variant, trial_data.dataset.clone(), key));
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let cell_results: Vec<(String, PathBuf)> = pool.install(|| {
        work.par_iter()
            .map(|(trial, dims, v_ix, variant, dataset, key)| {
                let rows = run_cell(plan, *trial, *dims, *v_ix, variant, dataset);
                let cell_path = cells_dir.join(format!("{key}.csv"));
                io::write_result_rows(&cell_path, &rows)?;
                Ok((key.clone(), cell_path))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    for (key, path) in cell_results {
        manifest
            .completed
            .insert(key, path.file_name().unwrap().to_string_lossy().into_owned());
        io::write_json(&manifest_path, &manifest)?;
    }

    // deterministic merge, sorted by (trial, dims, variant, input)
    let mut all_rows = Vec::new();
    for file in manifest.completed.values() {
        all_rows.extend(io::read_result_rows(&cells_dir.join(file))?);
    }
    all_rows.sort_by(|a, b| {
        (a.trial, a.dims, variant_sort_key(a), a.input_index).cmp(&(
            b.trial,
            b.dims,
            variant_sort_key(b),
            b.input_index,
        ))
    });
    let results_path = plan.output_dir.join("results.csv");
    io::write_result_rows(&results_path, &all_rows)?;

    prior_rows.sort_by_key(|(t, d, _)| (*t, *d));
    let prior_path = plan.output_dir.join("prior_rmse.csv");
    let mut w = csv::Writer::from_path(&prior_path)?;
    w.write_record(["trial", "dims", "prior_rmse"])?;
    for (t, d, v) in &prior_rows {
        w.write_record(&[t.to_string(), d.to_string(), format!("{v:.17e}")])?;
    }
    w.flush()?;

    let n_failed = all_rows.iter().filter(|r| r.failed).count();
    Ok(ExperimentOutcome {
        results_path,
        prior_path,
        n_cells: manifest.completed.len(),
        n_failed_fits: n_failed,
    })
}

fn variant_sort_key(r: &ResultRow) -> (u8, u8, u8, u8) {
    (
        r.use_derivatives as u8,
        r.scaled_derivatives as u8,
        r.varying_hyperparams as u8,
        r.correlated_outputs as u8,
    )
}

/// Fit one (trial, dims, variant) cell; failures become flagged rows.
fn run_cell(
    plan: &ExperimentPlan,
    trial: usize,
    dims: usize,
    v_ix: usize,
    variant: &VariantFlags,
    dataset: &Dataset,
) -> Vec<ResultRow> {
    let started = Instant::now();
    let priors = PriorSpec {
        rho_shape: plan.rho_shape,
        rho_scale: plan.rho_scale,
        sd_scale_y: 1.0,
        sd_scale_yprime: 1.0,
        lkj_eta: plan.lkj_eta,
        x_obs_sd: plan.x_obs_sd,
    };
    let base_row = |input_index: usize| ResultRow {
        trial,
        scenario: plan.scenario.label().to_string(),
        dims,
        use_derivatives: variant.use_derivatives,
        scaled_derivatives: variant.scaled_derivatives,
        varying_hyperparams: variant.varying_hyperparams,
        correlated_outputs: variant.correlated_outputs,
        input_index,
        rmse: None,
        bias: None,
        sd: None,
        rhat_x: None,
        bulk_ess_x: None,
        tail_ess_x: None,
        runtime_seconds: 0.0,
        failed: true,
    };
    let fit = (|| -> Result<Vec<ResultRow>> {
        let config = variant.to_model_config(plan.family, plan.n_obs, dims, priors)?;
        let sc = SamplerConfig {
            seed: mix_seed(plan.base_seed, trial, dims, v_ix),
            ..plan.sampler
        };
        let result = fit_single(&config, dataset, &sc, 1, None)?;
        let x_true = dataset
            .x_true
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("simulated data lost its truth".into()))?;
        let n = dataset.n_obs();
        let stacked = result.stacked_draws();
        let x_cols: Vec<usize> = (1..=n)
            .map(|i| {
                result
                    .param_names()
                    .iter()
                    .position(|p| p == &format!("x[{i}]"))
                    .expect("latent input columns present")
            })
            .collect();
        let x_draws = Array2::from_shape_fn((stacked.nrows(), n), |(s, i)| {
            stacked[[s, x_cols[i]]]
        });
        let report = rmse_latent(&x_draws, x_true)?;
        let runtime = started.elapsed().as_secs_f64();
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            let summary = &result.summary.params[x_cols[i]];
            rows.push(ResultRow {
                rmse: Some(report.per_input[i].rmse),
                bias: Some(report.per_input[i].bias),
                sd: Some(report.per_input[i].sd),
                rhat_x: summary.rhat,
                bulk_ess_x: summary.bulk_ess,
                tail_ess_x: summary.tail_ess,
                runtime_seconds: runtime,
                failed: false,
                ..base_row(i + 1)
            });
        }
        Ok(rows)
    })();
    match fit {
        Ok(rows) => rows,
        Err(_) => {
            let runtime = started.elapsed().as_secs_f64();
            (1..=plan.n_obs)
                .map(|i| ResultRow {
                    runtime_seconds: runtime,
                    ..base_row(i)
                })
                .collect()
        }
    }
}

/// One group of the summary table.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryGroup {
    pub scenario: String,
    pub dims: usize,
    pub scaled_level: String,
    pub varying_hyperparams: bool,
    pub correlated_outputs: bool,
    pub n_rows: usize,
    pub mean_rmse: f64,
    pub rmse_q5: f64,
    pub rmse_q95: f64,
    pub prior_rmse: Option<f64>,
}

/// Group completed rows by (scaled level, dims, remaining flags) and
/// attach the prior benchmark; the output mirrors the axes of the
/// simulation-study figures.
pub fn summarize_results(
    rows: &[ResultRow],
    prior: &[(usize, usize, f64)],
) -> Result<Vec<SummaryGroup>> {
    let completed: Vec<&ResultRow> = rows.iter().filter(|r| !r.failed).collect();
    if completed.is_empty() {
        return Err(Error::EmptyInput("no completed result rows".into()));
    }
    use std::collections::BTreeMap;
    let mut groups: BTreeMap<(String, usize, String, bool, bool), Vec<f64>> = BTreeMap::new();
    for r in &completed {
        let level = if !r.use_derivatives {
            "none"
        } else if r.scaled_derivatives {
            "scaled"
        } else {
            "unscaled"
        };
        groups
            .entry((
                r.scenario.clone(),
                r.dims,
                level.to_string(),
                r.varying_hyperparams,
                r.correlated_outputs,
            ))
            .or_default()
            .push(r.rmse.expect("completed row has rmse"));
    }
    let mut prior_by_dims: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (_, dims, v) in prior {
        prior_by_dims.entry(*dims).or_default().push(*v);
    }
    let mut out = Vec::with_capacity(groups.len());
    for ((scenario, dims, level, varying, corr), mut vals) in groups {
        vals.sort_by(|a, b| a.partial_cmp(b).expect("finite rmse"));
        let n = vals.len();
        let mean = vals.iter().sum::<f64>() / n as f64;
        out.push(SummaryGroup {
            scenario,
            dims,
            scaled_level: level,
            varying_hyperparams: varying,
            correlated_outputs: corr,
            n_rows: n,
            mean_rmse: mean,
            rmse_q5: quantile_sorted(&vals, 0.05),
            rmse_q95: quantile_sorted(&vals, 0.95),
            prior_rmse: prior_by_dims
                .get(&dims)
                .map(|v| v.iter().sum::<f64>() / v.len() as f64),
        });
    }
    Ok(out)
}

pub fn write_summary_csv(path: &Path, groups: &[SummaryGroup]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "scenario",
        "dims",
        "scaled_level",
        "varying_hyperparams",
        "correlated_outputs",
        "n_rows",
        "mean_rmse",
        "rmse_q5",
        "rmse_q95",
        "prior_rmse",
    ])?;
    for g in groups {
        w.write_record(&[
            g.scenario.clone(),
            g.dims.to_string(),
            g.scaled_level.clone(),
            (g.varying_hyperparams as u8).to_string(),
            (g.correlated_outputs as u8).to_string(),
            g.n_rows.to_string(),
            format!("{:.17e}", g.mean_rmse),
            format!("{:.17e}", g.rmse_q5),
            format!("{:.17e}", g.rmse_q95),
            g.prior_rmse.map(|v| format!("{v:.17e}")).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_prior_csv(path: &Path) -> Result<Vec<(usize, usize, f64)>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        out.push((
            record[0].parse().unwrap_or(0),
            record[1].parse().unwrap_or(0),
            record[2].parse().unwrap_or(f64::NAN),
        ));
    }
    Ok(out)
}
