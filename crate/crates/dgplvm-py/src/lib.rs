//! Python bindings for the dgplvm crate: kernel evaluation, scenario
//! simulation, model fitting and MCMC diagnostics on plain lists.

use ndarray::Array2;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dgplvm::diagnostics;
use dgplvm::harness;
use dgplvm::kernels::{self, BlockSelector, KernelFamily, KernelSpec};
use dgplvm::model::{Dataset, ModelConfig, PriorSpec, DEFAULT_JITTER};
use dgplvm::sampler::SamplerConfig;
use dgplvm::simgen::{self, Scenario, ScenarioConfig};

fn err(e: dgplvm::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_block(s: &str) -> PyResult<BlockSelector> {
    match s {
        "k00" | "K00" => Ok(BlockSelector::K00),
        "k01" | "K01" => Ok(BlockSelector::K01),
        "k10" | "K10" => Ok(BlockSelector::K10),
        "k11" | "K11" => Ok(BlockSelector::K11),
        other => Err(PyValueError::new_err(format!("unknown block '{other}'"))),
    }
}

fn rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn matrix(rows: Vec<Vec<f64>>, what: &str) -> PyResult<Array2<f64>> {
    let n = rows.len();
    if n == 0 {
        return Err(PyValueError::new_err(format!("{what} is empty")));
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err(format!("{what} rows are ragged")));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((n, d), flat)
        .map_err(|e| PyValueError::new_err(format!("{what}: {e}")))
}

/// One block of the scaled derivative covariance function.
#[pyfunction]
#[pyo3(signature = (family, rho, alpha, alpha_prime, xi, xj, block))]
fn kernel_block(
    family: &str,
    rho: f64,
    alpha: f64,
    alpha_prime: f64,
    xi: f64,
    xj: f64,
    block: &str,
) -> PyResult<f64> {
    let spec = KernelSpec::new(KernelFamily::parse(family).map_err(err)?, rho, alpha, alpha_prime)
        .map_err(err)?;
    kernels::kernel_block(&spec, xi, xj, parse_block(block)?).map_err(err)
}

/// Joint covariance matrix over a grid, as nested lists.
#[pyfunction]
#[pyo3(signature = (family, rho, alpha, alpha_prime, x, include_derivatives=true, jitter=DEFAULT_JITTER))]
fn build_joint_cov(
    family: &str,
    rho: f64,
    alpha: f64,
    alpha_prime: f64,
    x: Vec<f64>,
    include_derivatives: bool,
    jitter: f64,
) -> PyResult<Vec<Vec<f64>>> {
    let spec = KernelSpec::new(KernelFamily::parse(family).map_err(err)?, rho, alpha, alpha_prime)
        .map_err(err)?;
    let cov = kernels::build_joint_cov(&spec, &x, include_derivatives, jitter).map_err(err)?;
    Ok(rows(&cov.entries))
}

/// A simulated trial: data, noisy inputs and the generating truth.
#[pyclass(get_all, skip_from_py_object)]
#[derive(Clone)]
struct SimulatedTrial {
    x_obs: Vec<f64>,
    x_true: Vec<f64>,
    y: Vec<Vec<f64>>,
    y_prime: Vec<Vec<f64>>,
    rho: Vec<f64>,
    alpha: Vec<f64>,
    alpha_prime: Vec<f64>,
    sigma: Vec<f64>,
    sigma_prime: Vec<f64>,
}

/// Generate one dataset from the gp or periodic scenario.
#[pyfunction]
#[pyo3(signature = (scenario="gp", n_obs=20, n_dims=5, family="se", lambda_=3.0, corr=0.5, x_obs_sd=0.3, seed=0))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    scenario: &str,
    n_obs: usize,
    n_dims: usize,
    family: &str,
    lambda_: f64,
    corr: f64,
    x_obs_sd: f64,
    seed: u64,
) -> PyResult<SimulatedTrial> {
    let cfg = ScenarioConfig {
        scenario: Scenario::parse(scenario).map_err(err)?,
        n_obs,
        n_dims,
        family: KernelFamily::parse(family).map_err(err)?,
        lambda: lambda_,
        corr,
        x_obs_sd,
        seed,
    };
    let trial = simgen::simulate(&cfg).map_err(err)?;
    Ok(SimulatedTrial {
        x_obs: trial.dataset.x_obs.clone(),
        x_true: trial.truth.x_true.clone(),
        y: rows(&trial.dataset.y),
        y_prime: rows(trial.dataset.y_prime.as_ref().expect("scenarios emit derivatives")),
        rho: trial.truth.rho.clone(),
        alpha: trial.truth.alpha.clone(),
        alpha_prime: trial.truth.alpha_prime.clone(),
        sigma: trial.truth.sigma.clone(),
        sigma_prime: trial.truth.sigma_prime.clone(),
    })
}

/// Posterior draws and per-parameter summaries of one fit.
#[pyclass(get_all)]
struct FitResult {
    param_names: Vec<String>,
    /// draws[iteration][parameter]
    draws: Vec<Vec<f64>>,
    mean: Vec<f64>,
    sd: Vec<f64>,
    rhat: Vec<Option<f64>>,
    bulk_ess: Vec<Option<f64>>,
    tail_ess: Vec<Option<f64>>,
    divergences: usize,
    rhat_flagged: bool,
    ess_flagged: bool,
}

/// Fit a DGP-LVM and return draws of the constrained parameters.
#[pyfunction]
#[pyo3(signature = (x_obs, y, y_prime=None, use_derivatives=true, scaled_derivatives=true,
    varying_hyperparams=true, correlated_outputs=true, family="se", x_obs_sd=0.3,
    rho_shape=5.0, rho_scale=5.0, lkj_eta=3.0, iterations=3000, warmup=1000, seed=0))]
#[allow(clippy::too_many_arguments)]
fn fit(
    x_obs: Vec<f64>,
    y: Vec<Vec<f64>>,
    y_prime: Option<Vec<Vec<f64>>>,
    use_derivatives: bool,
    scaled_derivatives: bool,
    varying_hyperparams: bool,
    correlated_outputs: bool,
    family: &str,
    x_obs_sd: f64,
    rho_shape: f64,
    rho_scale: f64,
    lkj_eta: f64,
    iterations: usize,
    warmup: usize,
    seed: u64,
) -> PyResult<FitResult> {
    let y = matrix(y, "y")?;
    let y_prime = y_prime.map(|m| matrix(m, "y_prime")).transpose()?;
    let d = y.ncols();
    let names = (1..=d).map(|i| format!("d{i}")).collect();
    let data = Dataset::new(x_obs, y, y_prime, None, names).map_err(err)?;
    let use_deriv = use_derivatives && data.y_prime.is_some();
    let config = ModelConfig::new(
        use_deriv,
        scaled_derivatives && use_deriv,
        varying_hyperparams,
        correlated_outputs && d > 1,
        KernelFamily::parse(family).map_err(err)?,
        data.n_obs(),
        d,
        DEFAULT_JITTER,
        PriorSpec {
            rho_shape,
            rho_scale,
            sd_scale_y: 1.0,
            sd_scale_yprime: 1.0,
            lkj_eta,
            x_obs_sd,
        },
    )
    .map_err(err)?;
    let sc = SamplerConfig {
        n_iterations: iterations,
        n_warmup: warmup,
        seed,
        ..Default::default()
    };
    let result = harness::fit_single(&config, &data, &sc, 1, None).map_err(err)?;
    let stacked = result.stacked_draws();
    Ok(FitResult {
        param_names: result.param_names().to_vec(),
        draws: rows(&stacked),
        mean: result.summary.params.iter().map(|p| p.mean).collect(),
        sd: result.summary.params.iter().map(|p| p.sd).collect(),
        rhat: result.summary.params.iter().map(|p| p.rhat).collect(),
        bulk_ess: result.summary.params.iter().map(|p| p.bulk_ess).collect(),
        tail_ess: result.summary.params.iter().map(|p| p.tail_ess).collect(),
        divergences: result.summary.divergences,
        rhat_flagged: result.summary.rhat_flagged,
        ess_flagged: result.summary.ess_flagged,
    })
}

fn draw_set(chains: Vec<Vec<f64>>) -> PyResult<diagnostics::ScalarDrawSet> {
    diagnostics::ScalarDrawSet::new(matrix(chains, "chains")?).map_err(err)
}

/// Rank-normalized split R-hat over chains (rows).
#[pyfunction]
fn split_rhat(chains: Vec<Vec<f64>>) -> PyResult<f64> {
    diagnostics::split_rhat(&draw_set(chains)?).map_err(err)
}

#[pyfunction]
fn bulk_ess(chains: Vec<Vec<f64>>) -> PyResult<f64> {
    diagnostics::bulk_ess(&draw_set(chains)?).map_err(err)
}

#[pyfunction]
fn tail_ess(chains: Vec<Vec<f64>>) -> PyResult<f64> {
    diagnostics::tail_ess(&draw_set(chains)?).map_err(err)
}

/// Per-input RMSE of latent-input draws against the truth, decomposed
/// into bias and spread. Returns ([[rmse, bias, sd], ...], mean_rmse).
#[pyfunction]
fn rmse_latent(draws: Vec<Vec<f64>>, x_true: Vec<f64>) -> PyResult<(Vec<Vec<f64>>, f64)> {
    let report = diagnostics::rmse_latent(&matrix(draws, "draws")?, &x_true).map_err(err)?;
    Ok((
        report
            .per_input
            .iter()
            .map(|r| vec![r.rmse, r.bias, r.sd])
            .collect(),
        report.mean_rmse,
    ))
}

/// Monte-Carlo RMSE of the measurement model alone.
#[pyfunction]
#[pyo3(signature = (x_true, x_obs_sd, n_mc=10_000, seed=0))]
fn prior_rmse_benchmark(x_true: Vec<f64>, x_obs_sd: f64, n_mc: usize, seed: u64) -> PyResult<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    harness::prior_rmse_benchmark(&x_true, x_obs_sd, n_mc, &mut rng).map_err(err)
}

#[pymodule]
fn dgplvm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(kernel_block, m)?)?;
    m.add_function(wrap_pyfunction!(build_joint_cov, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(split_rhat, m)?)?;
    m.add_function(wrap_pyfunction!(bulk_ess, m)?)?;
    m.add_function(wrap_pyfunction!(tail_ess, m)?)?;
    m.add_function(wrap_pyfunction!(rmse_latent, m)?)?;
    m.add_function(wrap_pyfunction!(prior_rmse_benchmark, m)?)?;
    m.add_class::<SimulatedTrial>()?;
    m.add_class::<FitResult>()?;
    Ok(())
}
