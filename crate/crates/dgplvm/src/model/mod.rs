//! The DGP-LVM joint probability model: latent inputs, per-dimension
//! kernel hyperparameters, optional cross-dimension correlation, whitened
//! latent GP values, and the Gaussian likelihood over outputs and scaled
//! derivative outputs.

mod corr;
mod logp;

pub use corr::{corr_cholesky, inv_corr_cholesky, lkj_cholesky_logpdf, n_corr_coords};
pub use logp::{log_joint, log_joint_grad, log_joint_with_grad};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelFamily;

/// Default absolute jitter added to every diagonal entry of a joint
/// covariance before factorization.
pub const DEFAULT_JITTER: f64 = 1e-6;

/// Prior hyperparameters.
///
/// `rho_shape`/`rho_scale` parameterize an inverse-gamma on the length
/// scale; `sd_scale_y`/`sd_scale_yprime` are the empirical SDs that scale
/// the half-normal priors on the marginal and error SD parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PriorSpec {
    pub rho_shape: f64,
    pub rho_scale: f64,
    pub sd_scale_y: f64,
    pub sd_scale_yprime: f64,
    pub lkj_eta: f64,
    pub x_obs_sd: f64,
}

impl PriorSpec {
    /// Simulation-study defaults: InvGamma(5, 5) on rho, LKJ(3), s = 0.3.
    pub fn simulation_default(sd_scale_y: f64, sd_scale_yprime: f64) -> Self {
        Self {
            rho_shape: 5.0,
            rho_scale: 5.0,
            sd_scale_y,
            sd_scale_yprime,
            lkj_eta: 3.0,
            x_obs_sd: 0.3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("rho_shape", self.rho_shape),
            ("rho_scale", self.rho_scale),
            ("sd_scale_y", self.sd_scale_y),
            ("sd_scale_yprime", self.sd_scale_yprime),
            ("lkj_eta", self.lkj_eta),
            ("x_obs_sd", self.x_obs_sd),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "prior field {name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// The four model switches plus the shared structural settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub use_derivatives: bool,
    pub scaled_derivatives: bool,
    pub varying_hyperparams: bool,
    pub correlated_outputs: bool,
    pub family: KernelFamily,
    pub n_obs: usize,
    pub n_dims: usize,
    pub jitter: f64,
    pub priors: PriorSpec,
}

impl ModelConfig {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        use_derivatives: bool,
        scaled_derivatives: bool,
        varying_hyperparams: bool,
        correlated_outputs: bool,
        family: KernelFamily,
        n_obs: usize,
        n_dims: usize,
        jitter: f64,
        priors: PriorSpec,
    ) -> Result<Self> {
        if scaled_derivatives && !use_derivatives {
            return Err(Error::InvalidArgument(
                "scaled_derivatives requires use_derivatives".into(),
            ));
        }
        if n_obs == 0 || n_dims == 0 {
            return Err(Error::InvalidArgument(
                "n_obs and n_dims must be positive".into(),
            ));
        }
        if !jitter.is_finite() || jitter < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "jitter must be nonnegative, got {jitter}"
            )));
        }
        priors.validate()?;
        Ok(Self {
            use_derivatives,
            scaled_derivatives,
            varying_hyperparams,
            correlated_outputs,
            family,
            n_obs,
            n_dims,
            jitter,
            priors,
        })
    }

    /// Short variant label, e.g. "d1s1v1c1" for the full DGP-LVM.
    pub fn variant_label(&self) -> String {
        format!(
            "d{}s{}v{}c{}",
            self.use_derivatives as u8,
            self.scaled_derivatives as u8,
            self.varying_hyperparams as u8,
            self.correlated_outputs as u8
        )
    }
}

/// Observed data: noisy inputs, outputs, optional derivative outputs and
/// optional simulation ground truth.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x_obs: Vec<f64>,
    /// N x D
    pub y: Array2<f64>,
    /// N x D, present iff the producing scenario or ingestion supplied
    /// derivative observations.
    pub y_prime: Option<Array2<f64>>,
    pub x_true: Option<Vec<f64>>,
    pub dim_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        x_obs: Vec<f64>,
        y: Array2<f64>,
        y_prime: Option<Array2<f64>>,
        x_true: Option<Vec<f64>>,
        dim_names: Vec<String>,
    ) -> Result<Self> {
        let n = x_obs.len();
        let d = y.ncols();
        if y.nrows() != n {
            return Err(Error::InvalidArgument(format!(
                "y has {} rows but x_obs has {n} entries",
                y.nrows()
            )));
        }
        if let Some(yp) = &y_prime {
            if yp.nrows() != n || yp.ncols() != d {
                return Err(Error::InvalidArgument(format!(
                    "y_prime is {}x{} but y is {n}x{d}",
                    yp.nrows(),
                    yp.ncols()
                )));
            }
        }
        if let Some(xt) = &x_true {
            if xt.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "x_true has {} entries but x_obs has {n}",
                    xt.len()
                )));
            }
        }
        if dim_names.len() != d {
            return Err(Error::InvalidArgument(format!(
                "{} dim names for {d} dimensions",
                dim_names.len()
            )));
        }
        Ok(Self {
            x_obs,
            y,
            y_prime,
            x_true,
            dim_names,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.x_obs.len()
    }

    pub fn n_dims(&self) -> usize {
        self.y.ncols()
    }

    /// Mean-center each output dimension of y (zero-mean GP assumption).
    /// y' is left untouched: subtracting a constant from y does not change
    /// its derivative. Returns the centered data and the removed means.
    pub fn center_outputs(&self) -> (Dataset, Vec<f64>) {
        let mut out = self.clone();
        let n = self.n_obs() as f64;
        let mut means = Vec::with_capacity(self.n_dims());
        for d in 0..self.n_dims() {
            let mean = self.y.column(d).sum() / n;
            means.push(mean);
            for i in 0..self.n_obs() {
                out.y[[i, d]] -= mean;
            }
        }
        (out, means)
    }
}

/// Pooled empirical SDs used to scale the half-normal priors: the sample
/// SD over all entries of y, and of y' when present (falls back to the y
/// scale otherwise).
pub fn empirical_prior_scales(data: &Dataset) -> Result<(f64, f64)> {
    if data.n_obs() < 2 {
        return Err(Error::InvalidArgument(
            "empirical prior scales need at least 2 observations".into(),
        ));
    }
    let pooled_sd = |m: &Array2<f64>| -> f64 {
        let cnt = m.len() as f64;
        let mean = m.sum() / cnt;
        (m.mapv(|v| (v - mean) * (v - mean)).sum() / (cnt - 1.0)).sqrt()
    };
    let s_y = pooled_sd(&data.y);
    if s_y == 0.0 {
        return Err(Error::DegenerateData(
            "all y values identical; empirical prior scale is zero".into(),
        ));
    }
    let s_yp = match &data.y_prime {
        Some(yp) => {
            let s = pooled_sd(yp);
            if s == 0.0 {
                return Err(Error::DegenerateData(
                    "all y' values identical; empirical prior scale is zero".into(),
                ));
            }
            s
        }
        None => s_y,
    };
    Ok((s_y, s_yp))
}

/// Index layout of the unconstrained parameter vector for a given config.
///
/// Order: x (N), log_rho (H), log_alpha (H), log_alpha_prime (H if scaled),
/// log_sigma (H), log_sigma_prime (H if scaled), corr coords (D(D-1)/2 if
/// correlated), whitened values (M per dimension, dimension-major), where
/// H is D with varying hyperparameters and 1 otherwise, and M is 2N with
/// derivatives and N otherwise.
#[derive(Debug, Clone)]
pub struct ParamLayout {
    pub n: usize,
    pub d: usize,
    /// hyperparameter slots: d when varying, else 1
    pub h: usize,
    /// whitened values per dimension: 2n with derivatives, else n
    pub m: usize,
    pub n_corr: usize,
    pub use_derivatives: bool,
    pub scaled_derivatives: bool,
    pub x_off: usize,
    pub log_rho_off: usize,
    pub log_alpha_off: usize,
    pub log_alpha_prime_off: usize,
    pub log_sigma_off: usize,
    pub log_sigma_prime_off: usize,
    pub corr_off: usize,
    pub z_off: usize,
    pub total: usize,
}

impl ParamLayout {
    pub fn new(config: &ModelConfig) -> Self {
        let n = config.n_obs;
        let d = config.n_dims;
        let h = if config.varying_hyperparams { d } else { 1 };
        let m = if config.use_derivatives { 2 * n } else { n };
        let scaled = config.scaled_derivatives && config.use_derivatives;
        let n_corr = if config.correlated_outputs {
            n_corr_coords(d)
        } else {
            0
        };
        let x_off = 0;
        let log_rho_off = x_off + n;
        let log_alpha_off = log_rho_off + h;
        let log_alpha_prime_off = log_alpha_off + h;
        let log_sigma_off = log_alpha_prime_off + if scaled { h } else { 0 };
        let log_sigma_prime_off = log_sigma_off + h;
        let corr_off = log_sigma_prime_off + if scaled { h } else { 0 };
        let z_off = corr_off + n_corr;
        let total = z_off + m * d;
        Self {
            n,
            d,
            h,
            m,
            n_corr,
            use_derivatives: config.use_derivatives,
            scaled_derivatives: scaled,
            x_off,
            log_rho_off,
            log_alpha_off,
            log_alpha_prime_off,
            log_sigma_off,
            log_sigma_prime_off,
            corr_off,
            z_off,
            total,
        }
    }

    /// Hyperparameter slot for dimension `dim`.
    #[inline]
    pub fn slot(&self, dim: usize) -> usize {
        if self.h == 1 {
            0
        } else {
            dim
        }
    }

    /// Start of the whitened block for dimension `dim`.
    #[inline]
    pub fn z_dim_off(&self, dim: usize) -> usize {
        self.z_off + dim * self.m
    }
}

/// Constrained parameter state: positivity transforms applied, tying and
/// broadcasting resolved, plus the mixed GP values when the kernel
/// factorization succeeds.
#[derive(Debug, Clone)]
pub struct ConstrainedParams {
    pub x_latent: Vec<f64>,
    pub rho: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_prime: Vec<f64>,
    pub sigma: Vec<f64>,
    pub sigma_prime: Vec<f64>,
    /// D x D lower-triangular correlation Cholesky factor (identity when
    /// outputs are uncorrelated).
    pub corr_cholesky: Array2<f64>,
    /// M x D whitened values (identity transform).
    pub z_white: Array2<f64>,
    /// N x D mixed GP values; None if any per-dimension factorization
    /// failed at this parameter value.
    pub f_tilde: Option<Array2<f64>>,
    /// N x D mixed derivative GP values, when derivatives are used.
    pub f_tilde_prime: Option<Array2<f64>>,
}

/// Apply all constraining transforms. Total: never fails; the mixed GP
/// values are None when the covariance cannot be factorized.
pub fn constrain(config: &ModelConfig, p: &[f64]) -> ConstrainedParams {
    let lay = ParamLayout::new(config);
    assert_eq!(p.len(), lay.total, "parameter vector size mismatch");
    let d = lay.d;
    let n = lay.n;

    let mut rho = vec![0.0; d];
    let mut alpha = vec![0.0; d];
    let mut alpha_prime = vec![0.0; d];
    let mut sigma = vec![0.0; d];
    let mut sigma_prime = vec![0.0; d];
    for dim in 0..d {
        let s = lay.slot(dim);
        rho[dim] = p[lay.log_rho_off + s].exp();
        alpha[dim] = p[lay.log_alpha_off + s].exp();
        sigma[dim] = p[lay.log_sigma_off + s].exp();
        if lay.scaled_derivatives {
            alpha_prime[dim] = p[lay.log_alpha_prime_off + s].exp();
            sigma_prime[dim] = p[lay.log_sigma_prime_off + s].exp();
        } else {
            alpha_prime[dim] = alpha[dim];
            sigma_prime[dim] = sigma[dim];
        }
    }

    let corr_cholesky = if lay.n_corr > 0 {
        corr_cholesky(&p[lay.corr_off..lay.corr_off + lay.n_corr], d)
    } else {
        Array2::eye(d)
    };

    let x_latent = p[lay.x_off..lay.x_off + n].to_vec();
    let mut z_white = Array2::<f64>::zeros((lay.m, d));
    for dim in 0..d {
        let z = &p[lay.z_dim_off(dim)..lay.z_dim_off(dim) + lay.m];
        for k in 0..lay.m {
            z_white[[k, dim]] = z[k];
        }
    }

    let mixed = logp::mixed_gp_values(config, &lay, p, &rho, &alpha, &alpha_prime, &corr_cholesky);
    let (f_tilde, f_tilde_prime) = match mixed {
        Ok((f, fp)) => (Some(f), fp),
        Err(_) => (None, None),
    };

    ConstrainedParams {
        x_latent,
        rho,
        alpha,
        alpha_prime,
        sigma,
        sigma_prime,
        corr_cholesky,
        z_white,
        f_tilde,
        f_tilde_prime,
    }
}

/// Inverse of [`constrain`] on the invertible fields.
pub fn unconstrain(config: &ModelConfig, cp: &ConstrainedParams) -> Vec<f64> {
    let lay = ParamLayout::new(config);
    let mut p = vec![0.0; lay.total];
    p[lay.x_off..lay.x_off + lay.n].copy_from_slice(&cp.x_latent);
    for s in 0..lay.h {
        // slot s corresponds to dimension s when varying, else to all
        p[lay.log_rho_off + s] = cp.rho[s].ln();
        p[lay.log_alpha_off + s] = cp.alpha[s].ln();
        p[lay.log_sigma_off + s] = cp.sigma[s].ln();
        if lay.scaled_derivatives {
            p[lay.log_alpha_prime_off + s] = cp.alpha_prime[s].ln();
            p[lay.log_sigma_prime_off + s] = cp.sigma_prime[s].ln();
        }
    }
    if lay.n_corr > 0 {
        let w = inv_corr_cholesky(&cp.corr_cholesky);
        p[lay.corr_off..lay.corr_off + lay.n_corr].copy_from_slice(&w);
    }
    for dim in 0..lay.d {
        for k in 0..lay.m {
            p[lay.z_dim_off(dim) + k] = cp.z_white[[k, dim]];
        }
    }
    p
}

/// Names of the constrained parameters reported in draws and summaries:
/// latent inputs, kernel hyperparameters and between-output correlations.
pub fn constrained_param_names(config: &ModelConfig) -> Vec<String> {
    let lay = ParamLayout::new(config);
    let mut names = Vec::new();
    for i in 1..=lay.n {
        names.push(format!("x[{i}]"));
    }
    let hyper = |base: &str, names: &mut Vec<String>| {
        if lay.h == 1 {
            names.push(base.to_string());
        } else {
            for d in 1..=lay.d {
                names.push(format!("{base}[{d}]"));
            }
        }
    };
    hyper("rho", &mut names);
    hyper("alpha", &mut names);
    if lay.scaled_derivatives {
        hyper("alpha_prime", &mut names);
    }
    hyper("sigma", &mut names);
    if lay.scaled_derivatives {
        hyper("sigma_prime", &mut names);
    }
    if lay.n_corr > 0 {
        for i in 2..=lay.d {
            for j in 1..i {
                names.push(format!("C[{i},{j}]"));
            }
        }
    }
    names
}

/// Constrained draw in the order of [`constrained_param_names`].
pub fn constrained_draw(config: &ModelConfig, p: &[f64]) -> Vec<f64> {
    let lay = ParamLayout::new(config);
    let cp = constrain(config, p);
    let mut out = Vec::with_capacity(lay.n + 5 * lay.h + n_corr_coords(lay.d));
    out.extend_from_slice(&cp.x_latent);
    let push_hyper = |vals: &[f64], out: &mut Vec<f64>| {
        if lay.h == 1 {
            out.push(vals[0]);
        } else {
            out.extend_from_slice(vals);
        }
    };
    push_hyper(&cp.rho, &mut out);
    push_hyper(&cp.alpha, &mut out);
    if lay.scaled_derivatives {
        push_hyper(&cp.alpha_prime, &mut out);
    }
    push_hyper(&cp.sigma, &mut out);
    if lay.scaled_derivatives {
        push_hyper(&cp.sigma_prime, &mut out);
    }
    if lay.n_corr > 0 {
        let c = cp.corr_cholesky.dot(&cp.corr_cholesky.t());
        for i in 1..lay.d {
            for j in 0..i {
                out.push(c[[i, j]]);
            }
        }
    }
    out
}

pub(crate) use corr::{corr_cholesky_with_aux, corr_cholesky_vjp, lkj_unconstrained_grad,
    lkj_unconstrained_log_term};
