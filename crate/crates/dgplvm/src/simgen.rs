//! Simulation scenarios: multi-output derivative GP data and derivative
//! periodic data, with ground-truth latent inputs and lambda-scaled
//! derivative observations.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{build_joint_cov, KernelFamily, KernelSpec};
use crate::linalg::{cholesky_lower, tri_lower_matvec};
use crate::model::{Dataset, DEFAULT_JITTER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    Gp,
    Periodic,
}

impl Scenario {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gp" => Ok(Self::Gp),
            "periodic" => Ok(Self::Periodic),
            other => Err(Error::InvalidArgument(format!(
                "unknown scenario '{other}' (expected gp or periodic)"
            ))),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::Gp => "gp",
            Self::Periodic => "periodic",
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub n_obs: usize,
    pub n_dims: usize,
    pub family: KernelFamily,
    /// Scale factor between outputs and derivative observations:
    /// alpha = lambda * alpha', sigma = lambda * sigma'.
    pub lambda: f64,
    /// Uniform between-dimension correlation of the GP scenario.
    pub corr: f64,
    /// Measurement SD of the observed inputs.
    pub x_obs_sd: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::Gp,
            n_obs: 20,
            n_dims: 5,
            family: KernelFamily::SquaredExponential,
            lambda: 3.0,
            corr: 0.5,
            x_obs_sd: 0.3,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_obs < 2 {
            return Err(Error::InvalidArgument("n_obs must be at least 2".into()));
        }
        if self.n_dims == 0 {
            return Err(Error::InvalidArgument("n_dims must be positive".into()));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::InvalidArgument("lambda must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.corr) {
            return Err(Error::InvalidArgument("corr must lie in [0, 1)".into()));
        }
        if !(self.x_obs_sd > 0.0) {
            return Err(Error::InvalidArgument("x_obs_sd must be positive".into()));
        }
        Ok(())
    }
}

/// Data-generating parameters of one simulated trial.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub x_true: Vec<f64>,
    pub rho: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_prime: Vec<f64>,
    pub sigma: Vec<f64>,
    pub sigma_prime: Vec<f64>,
    pub corr_matrix: Array2<f64>,
}

/// A simulated dataset with its generating truth and the noise-free
/// function values (kept for oracle tests, never serialized for fitting).
#[derive(Debug, Clone)]
pub struct SimulatedTrial {
    pub dataset: Dataset,
    pub truth: GroundTruth,
    /// N x D noise-free mixed function values.
    pub latent_f: Array2<f64>,
    /// N x D noise-free mixed derivative values.
    pub latent_f_prime: Array2<f64>,
}

/// The ground-truth input grid: equidistant steps of 0.5 starting at 0.5.
pub fn truth_grid(n_obs: usize) -> Vec<f64> {
    (1..=n_obs).map(|i| 0.5 * i as f64).collect()
}

/// Draw per-dimension hyperparameters: alpha' ~ U(0.4, 0.6),
/// sigma' ~ U(0.05, 0.15), rho ~ U(0.5, 1), with alpha = lambda alpha'
/// and sigma = lambda sigma'.
pub fn sample_truth_hyperparams(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> GroundTruth {
    let d = cfg.n_dims;
    let mut truth = GroundTruth {
        x_true: truth_grid(cfg.n_obs),
        rho: Vec::with_capacity(d),
        alpha: Vec::with_capacity(d),
        alpha_prime: Vec::with_capacity(d),
        sigma: Vec::with_capacity(d),
        sigma_prime: Vec::with_capacity(d),
        corr_matrix: Array2::from_shape_fn((d, d), |(i, j)| if i == j { 1.0 } else { cfg.corr }),
    };
    for _ in 0..d {
        let alpha_prime = rng.gen_range(0.4..0.6);
        let sigma_prime = rng.gen_range(0.05..0.15);
        let rho = rng.gen_range(0.5..1.0);
        truth.alpha_prime.push(alpha_prime);
        truth.sigma_prime.push(sigma_prime);
        truth.rho.push(rho);
        truth.alpha.push(cfg.lambda * alpha_prime);
        truth.sigma.push(cfg.lambda * sigma_prime);
    }
    truth
}

fn default_dim_names(d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("d{i}")).collect()
}

/// Generate one dataset for the configured scenario.
pub fn simulate(cfg: &ScenarioConfig) -> Result<SimulatedTrial> {
    match cfg.scenario {
        Scenario::Gp => simulate_gp_scenario(cfg),
        Scenario::Periodic => simulate_periodic_scenario(cfg),
    }
}

/// Multi-output GP scenario: per-dimension draws from the zero-mean GP
/// with the scaled derivative kernel at the true inputs, mixed across
/// dimensions with the Cholesky factor of the correlation matrix.
pub fn simulate_gp_scenario(cfg: &ScenarioConfig) -> Result<SimulatedTrial> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let truth = sample_truth_hyperparams(cfg, &mut rng);
    simulate_gp_at_grid(cfg, truth, &truth_grid(cfg.n_obs).clone(), &mut rng)
}

/// GP scenario on an explicit input grid; the dense-grid variant used by
/// the derivative-consistency oracles.
pub fn simulate_gp_with_grid(cfg: &ScenarioConfig, x_grid: &[f64]) -> Result<SimulatedTrial> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut truth = sample_truth_hyperparams(cfg, &mut rng);
    truth.x_true = x_grid.to_vec();
    simulate_gp_at_grid(cfg, truth, x_grid, &mut rng)
}

fn simulate_gp_at_grid(
    cfg: &ScenarioConfig,
    truth: GroundTruth,
    x: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<SimulatedTrial> {
    let n = x.len();
    let d = cfg.n_dims;
    let mut truth = truth;
    truth.x_true = x.to_vec();

    // independent joint draws per dimension
    let mut f = Array2::<f64>::zeros((n, d));
    let mut fp = Array2::<f64>::zeros((n, d));
    for dim in 0..d {
        let spec = KernelSpec::new(
            cfg.family,
            truth.rho[dim],
            truth.alpha[dim],
            truth.alpha_prime[dim],
        )?;
        let l = factor_with_escalation(&spec, x)?;
        let xi: Vec<f64> = (0..2 * n).map(|_| StandardNormal.sample(rng)).collect();
        let u = tri_lower_matvec(&l, &xi);
        for i in 0..n {
            f[[i, dim]] = u[i];
            fp[[i, dim]] = u[n + i];
        }
    }

    // cross-dimension mixing per observation
    let l_corr = cholesky_lower(&truth.corr_matrix)?;
    let mut f_mixed = Array2::<f64>::zeros((n, d));
    let mut fp_mixed = Array2::<f64>::zeros((n, d));
    for i in 0..n {
        for dim in 0..d {
            let mut acc = 0.0;
            let mut accp = 0.0;
            for e in 0..=dim {
                acc += l_corr[[dim, e]] * f[[i, e]];
                accp += l_corr[[dim, e]] * fp[[i, e]];
            }
            f_mixed[[i, dim]] = acc;
            fp_mixed[[i, dim]] = accp;
        }
    }

    let (y, y_prime) = observe(&f_mixed, &fp_mixed, &truth, rng);
    let x_obs = observe_inputs(x, cfg.x_obs_sd, rng);
    let dataset = Dataset::new(
        x_obs,
        y,
        Some(y_prime),
        Some(x.to_vec()),
        default_dim_names(d),
    )?;
    Ok(SimulatedTrial {
        dataset,
        truth,
        latent_f: f_mixed,
        latent_f_prime: fp_mixed,
    })
}

/// Noise-free periodic values: f = alpha sin(x / rho) per dimension with
/// derivative observations (alpha' / rho) cos(x / rho).
pub fn periodic_latent_values(truth: &GroundTruth, x: &[f64]) -> (Array2<f64>, Array2<f64>) {
    let n = x.len();
    let d = truth.rho.len();
    let mut f = Array2::<f64>::zeros((n, d));
    let mut fp = Array2::<f64>::zeros((n, d));
    for dim in 0..d {
        for i in 0..n {
            let phase = x[i] / truth.rho[dim];
            f[[i, dim]] = truth.alpha[dim] * phase.sin();
            fp[[i, dim]] = truth.alpha_prime[dim] / truth.rho[dim] * phase.cos();
        }
    }
    (f, fp)
}

/// Derivative periodic scenario. Dimensions are generated independently;
/// there is no cross-dimension mixing here.
pub fn simulate_periodic_scenario(cfg: &ScenarioConfig) -> Result<SimulatedTrial> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let truth = sample_truth_hyperparams(cfg, &mut rng);
    let x = truth_grid(cfg.n_obs);
    let (f, fp) = periodic_latent_values(&truth, &x);
    let (y, y_prime) = observe(&f, &fp, &truth, &mut rng);
    let x_obs = observe_inputs(&x, cfg.x_obs_sd, &mut rng);
    let dataset = Dataset::new(
        x_obs,
        y,
        Some(y_prime),
        Some(x),
        default_dim_names(cfg.n_dims),
    )?;
    Ok(SimulatedTrial {
        dataset,
        truth,
        latent_f: f,
        latent_f_prime: fp,
    })
}

fn observe(
    f: &Array2<f64>,
    fp: &Array2<f64>,
    truth: &GroundTruth,
    rng: &mut ChaCha8Rng,
) -> (Array2<f64>, Array2<f64>) {
    let (n, d) = f.dim();
    let mut y = Array2::<f64>::zeros((n, d));
    let mut yp = Array2::<f64>::zeros((n, d));
    for dim in 0..d {
        for i in 0..n {
            let e: f64 = StandardNormal.sample(rng);
            y[[i, dim]] = f[[i, dim]] + truth.sigma[dim] * e;
        }
    }
    for dim in 0..d {
        for i in 0..n {
            let e: f64 = StandardNormal.sample(rng);
            yp[[i, dim]] = fp[[i, dim]] + truth.sigma_prime[dim] * e;
        }
    }
    (y, yp)
}

fn observe_inputs(x: &[f64], sd: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    x.iter()
        .map(|xi| {
            let e: f64 = StandardNormal.sample(rng);
            xi + sd * e
        })
        .collect()
}

/// Factorize the true-kernel joint covariance, escalating the jitter by
/// factors of ten (at most three times) before giving up.
fn factor_with_escalation(spec: &KernelSpec, x: &[f64]) -> Result<Array2<f64>> {
    let mut jitter = DEFAULT_JITTER;
    let mut last_err = None;
    for _ in 0..4 {
        let cov = build_joint_cov(spec, x, true, jitter)?;
        match cholesky_lower(&cov.entries) {
            Ok(l) => return Ok(l),
            Err(e) => last_err = Some(e),
        }
        jitter *= 10.0;
    }
    Err(last_err.expect("at least one attempt"))
}
