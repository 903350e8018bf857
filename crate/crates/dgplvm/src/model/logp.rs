//! Joint log density of the DGP-LVM and its exact gradient on the
//! unconstrained parameter vector.
//!
//! Construction per dimension d: build the joint covariance with
//! (rho_d, alpha_d, alpha'_d), factorize, map the whitened column through
//! the factor to get (f_d, f'_d), then mix across dimensions per
//! observation with the correlation Cholesky factor. Outputs and
//! derivative outputs get independent Gaussian noise.
//!
//! The gradient runs the same computation backwards: likelihood residuals
//! pull back through the mixing matrix, the whitening map, the Cholesky
//! factorization (see [`crate::linalg::cholesky_reverse`]) and finally the
//! kernel, where stationarity reduces every entry's sensitivity to the
//! latent inputs and the length scale to one tau-derivative per pair.

use ndarray::Array2;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::kernels::{build_joint_cov, pair_blocks, KernelSpec};
use crate::linalg::{cholesky_lower, tri_lower_matvec, tri_lower_transpose_matvec};

use super::{
    corr_cholesky_vjp, corr_cholesky_with_aux, lkj_unconstrained_grad,
    lkj_unconstrained_log_term, Dataset, ModelConfig, ParamLayout,
};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[inline]
fn ln_normal(v: f64, mean: f64, sd: f64) -> f64 {
    let z = (v - mean) / sd;
    -0.5 * LN_2PI - sd.ln() - 0.5 * z * z
}

#[inline]
fn ln_half_normal(v: f64, scale: f64) -> f64 {
    std::f64::consts::LN_2 - 0.5 * LN_2PI - scale.ln() - 0.5 * (v / scale) * (v / scale)
}

#[inline]
fn ln_inv_gamma(v: f64, shape: f64, scale: f64) -> f64 {
    shape * scale.ln() - ln_gamma(shape) - (shape + 1.0) * v.ln() - scale / v
}

/// Per-dimension constrained scales with tying and broadcasting applied.
struct Scales {
    rho: Vec<f64>,
    alpha: Vec<f64>,
    alpha_prime: Vec<f64>,
    sigma: Vec<f64>,
    sigma_prime: Vec<f64>,
}

impl Scales {
    /// None when a transform produced a non-finite or zero value; the log
    /// density is -inf there.
    fn from_params(lay: &ParamLayout, p: &[f64]) -> Option<Self> {
        let d = lay.d;
        let mut s = Scales {
            rho: vec![0.0; d],
            alpha: vec![0.0; d],
            alpha_prime: vec![0.0; d],
            sigma: vec![0.0; d],
            sigma_prime: vec![0.0; d],
        };
        for dim in 0..d {
            let slot = lay.slot(dim);
            s.rho[dim] = p[lay.log_rho_off + slot].exp();
            s.alpha[dim] = p[lay.log_alpha_off + slot].exp();
            s.sigma[dim] = p[lay.log_sigma_off + slot].exp();
            if lay.scaled_derivatives {
                s.alpha_prime[dim] = p[lay.log_alpha_prime_off + slot].exp();
                s.sigma_prime[dim] = p[lay.log_sigma_prime_off + slot].exp();
            } else {
                s.alpha_prime[dim] = s.alpha[dim];
                s.sigma_prime[dim] = s.sigma[dim];
            }
        }
        let ok = |v: &[f64]| v.iter().all(|x| x.is_finite() && *x > 0.0);
        if ok(&s.rho) && ok(&s.alpha) && ok(&s.alpha_prime) && ok(&s.sigma) && ok(&s.sigma_prime)
        {
            Some(s)
        } else {
            None
        }
    }
}

/// Mixed GP values at the current parameters, (N x D), used by
/// [`super::constrain`]. Derivative values are returned when the model
/// includes them.
pub(crate) fn mixed_gp_values(
    config: &ModelConfig,
    lay: &ParamLayout,
    p: &[f64],
    rho: &[f64],
    alpha: &[f64],
    alpha_prime: &[f64],
    l_corr: &Array2<f64>,
) -> Result<(Array2<f64>, Option<Array2<f64>>)> {
    let n = lay.n;
    let d = lay.d;
    let x = &p[lay.x_off..lay.x_off + n];
    let mut f = Array2::<f64>::zeros((d, n));
    let mut fp = Array2::<f64>::zeros((d, n));
    for dim in 0..d {
        let spec = KernelSpec::new(config.family, rho[dim], alpha[dim], alpha_prime[dim])?;
        let cov = build_joint_cov(&spec, x, config.use_derivatives, config.jitter)?;
        let l = cholesky_lower(&cov.entries)?;
        let z = &p[lay.z_dim_off(dim)..lay.z_dim_off(dim) + lay.m];
        let u = tri_lower_matvec(&l, z);
        for i in 0..n {
            f[[dim, i]] = u[i];
            if config.use_derivatives {
                fp[[dim, i]] = u[n + i];
            }
        }
    }
    let ft = l_corr.dot(&f);
    let ftp = if config.use_derivatives {
        Some(l_corr.dot(&fp).t().to_owned())
    } else {
        None
    };
    Ok((ft.t().to_owned(), ftp))
}

/// Log joint density of data and parameters, including all constraining
/// Jacobians. A failed covariance factorization propagates as an error,
/// which samplers treat as a divergent (-inf) proposal.
pub fn log_joint(config: &ModelConfig, data: &Dataset, p: &[f64]) -> Result<f64> {
    evaluate(config, data, p, false).map(|(lp, _)| lp)
}

/// Exact gradient of [`log_joint`] with respect to every unconstrained
/// coordinate, latent inputs included.
pub fn log_joint_grad(config: &ModelConfig, data: &Dataset, p: &[f64]) -> Result<Vec<f64>> {
    evaluate(config, data, p, true).map(|(_, g)| g.expect("gradient requested"))
}

/// Value and gradient in one pass; this is what the sampler calls.
pub fn log_joint_with_grad(
    config: &ModelConfig,
    data: &Dataset,
    p: &[f64],
) -> Result<(f64, Vec<f64>)> {
    evaluate(config, data, p, true).map(|(lp, g)| (lp, g.expect("gradient requested")))
}

fn evaluate(
    config: &ModelConfig,
    data: &Dataset,
    p: &[f64],
    want_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    let lay = ParamLayout::new(config);
    if p.len() != lay.total {
        return Err(Error::InvalidArgument(format!(
            "parameter vector has {} coordinates, layout needs {}",
            p.len(),
            lay.total
        )));
    }
    if data.n_obs() != config.n_obs || data.n_dims() != config.n_dims {
        return Err(Error::InvalidArgument(format!(
            "data is {}x{} but config is {}x{}",
            data.n_obs(),
            data.n_dims(),
            config.n_obs,
            config.n_dims
        )));
    }
    let y_prime = if config.use_derivatives {
        Some(data.y_prime.as_ref().ok_or_else(|| {
            Error::InvalidArgument("model uses derivatives but data has no y_prime".into())
        })?)
    } else {
        None
    };

    let n = lay.n;
    let d = lay.d;
    let m = lay.m;
    let pr = &config.priors;

    let Some(sc) = Scales::from_params(&lay, p) else {
        let g = want_grad.then(|| vec![0.0; lay.total]);
        return Ok((f64::NEG_INFINITY, g));
    };

    let x = &p[lay.x_off..lay.x_off + n];
    let w = &p[lay.corr_off..lay.corr_off + lay.n_corr];
    let corr_aux = (lay.n_corr > 0).then(|| corr_cholesky_with_aux(w, d));

    // forward: whitened values through the per-dimension factors
    let mut chols: Vec<Array2<f64>> = Vec::with_capacity(d);
    let mut f = Array2::<f64>::zeros((d, n));
    let mut fp = Array2::<f64>::zeros((d, n));
    for dim in 0..d {
        let spec = KernelSpec::new(config.family, sc.rho[dim], sc.alpha[dim], sc.alpha_prime[dim])?;
        let cov = build_joint_cov(&spec, x, config.use_derivatives, config.jitter)?;
        let l = cholesky_lower(&cov.entries)?;
        let z = &p[lay.z_dim_off(dim)..lay.z_dim_off(dim) + m];
        let u = tri_lower_matvec(&l, z);
        for i in 0..n {
            f[[dim, i]] = u[i];
            if config.use_derivatives {
                fp[[dim, i]] = u[n + i];
            }
        }
        chols.push(l);
    }

    // cross-dimension mixing
    let (ft, ftp) = match &corr_aux {
        Some(aux) => (aux.l.dot(&f), aux.l.dot(&fp)),
        None => (f.clone(), fp.clone()),
    };

    let mut lp = 0.0;

    // Gaussian likelihood, residuals kept for the backward pass
    let mut res = Array2::<f64>::zeros((d, n));
    let mut resp = Array2::<f64>::zeros((d, n));
    for dim in 0..d {
        let sd = sc.sigma[dim];
        let sdp = sc.sigma_prime[dim];
        for i in 0..n {
            let r = data.y[[i, dim]] - ft[[dim, i]];
            res[[dim, i]] = r;
            lp += -0.5 * LN_2PI - sd.ln() - 0.5 * (r / sd) * (r / sd);
            if let Some(yp) = y_prime {
                let rp = yp[[i, dim]] - ftp[[dim, i]];
                resp[[dim, i]] = rp;
                lp += -0.5 * LN_2PI - sdp.ln() - 0.5 * (rp / sdp) * (rp / sdp);
            }
        }
    }

    // latent input measurement prior
    for i in 0..n {
        lp += ln_normal(x[i], data.x_obs[i], pr.x_obs_sd);
    }

    // whitened values
    for dim in 0..d {
        for k in 0..m {
            let z = p[lay.z_dim_off(dim) + k];
            lp += -0.5 * LN_2PI - 0.5 * z * z;
        }
    }

    // hyperparameter priors plus log-Jacobians of the positivity transforms
    for slot in 0..lay.h {
        let rho = sc.rho[slot];
        let alpha = sc.alpha[slot];
        let sigma = sc.sigma[slot];
        lp += ln_inv_gamma(rho, pr.rho_shape, pr.rho_scale) + rho.ln();
        lp += ln_half_normal(alpha, pr.sd_scale_y) + alpha.ln();
        lp += ln_half_normal(sigma, pr.sd_scale_y) + sigma.ln();
        if lay.scaled_derivatives {
            let ap = sc.alpha_prime[slot];
            let sp = sc.sigma_prime[slot];
            lp += ln_half_normal(ap, pr.sd_scale_yprime) + ap.ln();
            lp += ln_half_normal(sp, pr.sd_scale_yprime) + sp.ln();
        }
    }

    // correlation prior, directly in the unconstrained space
    if lay.n_corr > 0 {
        lp += lkj_unconstrained_log_term(w, d, pr.lkj_eta);
    }

    if !want_grad {
        return Ok((lp, None));
    }

    let mut grad = vec![0.0; lay.total];

    // priors with closed-form gradients
    for i in 0..n {
        grad[lay.x_off + i] -= (x[i] - data.x_obs[i]) / (pr.x_obs_sd * pr.x_obs_sd);
    }
    for dim in 0..d {
        for k in 0..m {
            grad[lay.z_dim_off(dim) + k] -= p[lay.z_dim_off(dim) + k];
        }
    }
    for slot in 0..lay.h {
        let rho = sc.rho[slot];
        grad[lay.log_rho_off + slot] += pr.rho_scale / rho - pr.rho_shape;
        let alpha = sc.alpha[slot];
        grad[lay.log_alpha_off + slot] +=
            1.0 - (alpha / pr.sd_scale_y) * (alpha / pr.sd_scale_y);
        let sigma = sc.sigma[slot];
        grad[lay.log_sigma_off + slot] +=
            1.0 - (sigma / pr.sd_scale_y) * (sigma / pr.sd_scale_y);
        if lay.scaled_derivatives {
            let ap = sc.alpha_prime[slot];
            grad[lay.log_alpha_prime_off + slot] +=
                1.0 - (ap / pr.sd_scale_yprime) * (ap / pr.sd_scale_yprime);
            let sp = sc.sigma_prime[slot];
            grad[lay.log_sigma_prime_off + slot] +=
                1.0 - (sp / pr.sd_scale_yprime) * (sp / pr.sd_scale_yprime);
        }
    }
    if lay.n_corr > 0 {
        lkj_unconstrained_grad(
            w,
            d,
            pr.lkj_eta,
            &mut grad[lay.corr_off..lay.corr_off + lay.n_corr],
        );
    }

    // noise scales: d/dlog sigma of the Gaussian terms
    for dim in 0..d {
        let slot = lay.slot(dim);
        let s2 = sc.sigma[dim] * sc.sigma[dim];
        let sp2 = sc.sigma_prime[dim] * sc.sigma_prime[dim];
        let mut acc = 0.0;
        let mut accp = 0.0;
        for i in 0..n {
            acc += res[[dim, i]] * res[[dim, i]] / s2 - 1.0;
            if y_prime.is_some() {
                accp += resp[[dim, i]] * resp[[dim, i]] / sp2 - 1.0;
            }
        }
        grad[lay.log_sigma_off + slot] += acc;
        if y_prime.is_some() {
            if lay.scaled_derivatives {
                grad[lay.log_sigma_prime_off + slot] += accp;
            } else {
                grad[lay.log_sigma_off + slot] += accp;
            }
        }
    }

    // likelihood pullback through the mixing matrix
    let mut g = Array2::<f64>::zeros((d, n));
    let mut gp = Array2::<f64>::zeros((d, n));
    for dim in 0..d {
        let s2 = sc.sigma[dim] * sc.sigma[dim];
        let sp2 = sc.sigma_prime[dim] * sc.sigma_prime[dim];
        for i in 0..n {
            g[[dim, i]] = res[[dim, i]] / s2;
            if y_prime.is_some() {
                gp[[dim, i]] = resp[[dim, i]] / sp2;
            }
        }
    }
    let (fbar, fpbar) = match &corr_aux {
        Some(aux) => {
            let mut l_bar = g.dot(&f.t());
            if config.use_derivatives {
                l_bar = l_bar + gp.dot(&fp.t());
            }
            corr_cholesky_vjp(
                aux,
                &l_bar,
                &mut grad[lay.corr_off..lay.corr_off + lay.n_corr],
            );
            (aux.l.t().dot(&g), aux.l.t().dot(&gp))
        }
        None => (g, gp),
    };

    // per-dimension pullback: whitening map, Cholesky, kernel
    for dim in 0..d {
        let l = &chols[dim];
        let z = &p[lay.z_dim_off(dim)..lay.z_dim_off(dim) + m];
        let mut u_bar = vec![0.0; m];
        for i in 0..n {
            u_bar[i] = fbar[[dim, i]];
            if config.use_derivatives {
                u_bar[n + i] = fpbar[[dim, i]];
            }
        }
        let z_bar = tri_lower_transpose_matvec(l, &u_bar);
        for k in 0..m {
            grad[lay.z_dim_off(dim) + k] += z_bar[k];
        }
        // u = L z makes the adjoint of L rank one
        let k_bar = crate::linalg::cholesky_reverse_rank1(l, &u_bar, z);
        let kb = k_bar.as_slice().expect("row-major");

        let rho = sc.rho[dim];
        let a2 = sc.alpha[dim] * sc.alpha[dim];
        let aap = sc.alpha[dim] * sc.alpha_prime[dim];
        let ap2 = sc.alpha_prime[dim] * sc.alpha_prime[dim];
        let slot = lay.slot(dim);
        let mut g_rho = 0.0;
        let mut g_a = 0.0;
        let mut g_ap = 0.0;
        // one profile evaluation per unordered pair; K is symmetric as a
        // function of (x, theta), so mirrored entries share each block's
        // derivatives and only their adjoint weights add up
        for i in 0..n {
            for j in i..n {
                let tau = x[i] - x[j];
                let pb = pair_blocks(config.family, rho, tau);
                let diag = i == j;
                let w00 = if diag {
                    kb[i * m + i]
                } else {
                    kb[i * m + j] + kb[j * m + i]
                };
                let v00 = a2 * pb.k00;
                let t00 = a2 * pb.d00;
                let mut dx = w00 * t00;
                g_a += 2.0 * w00 * v00;
                g_rho -= w00 * tau * t00;
                if config.use_derivatives {
                    // weights of entries holding +K01(tau) and -K01(tau)
                    let (w01, w10, w11) = if diag {
                        (
                            kb[i * m + n + i],
                            kb[(n + i) * m + i],
                            kb[(n + i) * m + n + i],
                        )
                    } else {
                        (
                            kb[i * m + n + j] + kb[(n + j) * m + i],
                            kb[j * m + n + i] + kb[(n + i) * m + j],
                            kb[(n + i) * m + n + j] + kb[(n + j) * m + n + i],
                        )
                    };
                    let v01 = aap * pb.k01;
                    let t01 = aap * pb.d01;
                    let v11 = ap2 * pb.k11;
                    let t11 = ap2 * pb.d11;
                    dx += (w01 - w10) * t01 + w11 * t11;
                    let cross = (w01 - w10) * v01;
                    if lay.scaled_derivatives {
                        g_a += cross;
                        g_ap += cross + 2.0 * w11 * v11;
                    } else {
                        g_a += 2.0 * (cross + w11 * v11);
                    }
                    g_rho -=
                        (w01 - w10) * (v01 + tau * t01) + w11 * (2.0 * v11 + tau * t11);
                }
                grad[lay.x_off + i] += dx;
                grad[lay.x_off + j] -= dx;
            }
        }
        grad[lay.log_rho_off + slot] += g_rho;
        grad[lay.log_alpha_off + slot] += g_a;
        if lay.scaled_derivatives {
            grad[lay.log_alpha_prime_off + slot] += g_ap;
        }
    }

    Ok((lp, Some(grad)))
}

#[cfg(test)]
mod tests {
    use super::super::{constrain, ParamLayout, PriorSpec};
    use super::*;
    use crate::kernels::{cholesky_psd, BlockSelector, KernelFamily};
    use ndarray::arr2;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn config(
        use_derivatives: bool,
        scaled: bool,
        varying: bool,
        correlated: bool,
        family: KernelFamily,
        n: usize,
        d: usize,
        priors: PriorSpec,
    ) -> ModelConfig {
        ModelConfig::new(
            use_derivatives,
            scaled,
            varying,
            correlated,
            family,
            n,
            d,
            super::super::DEFAULT_JITTER,
            priors,
        )
        .unwrap()
    }

    fn random_dataset(n: usize, d: usize, with_deriv: bool, rng: &mut ChaCha8Rng) -> Dataset {
        Dataset::new(
            (0..n).map(|i| 0.5 * (i + 1) as f64 + rng.gen_range(-0.2..0.2)).collect(),
            Array2::from_shape_fn((n, d), |_| rng.gen_range(-2.0..2.0)),
            with_deriv.then(|| Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0))),
            None,
            (0..d).map(|i| format!("d{}", i + 1)).collect(),
        )
        .unwrap()
    }

    /// Every term of the all-switches-off single-point model, computed by
    /// independent scalar formulas.
    #[test]
    fn single_point_value_matches_scalar_oracle() {
        let priors = PriorSpec {
            rho_shape: 5.0,
            rho_scale: 5.0,
            sd_scale_y: 1.3,
            sd_scale_yprime: 0.6,
            lkj_eta: 3.0,
            x_obs_sd: 0.3,
        };
        let cfg = config(false, false, false, false, KernelFamily::SquaredExponential, 1, 1, priors);
        let data = Dataset::new(
            vec![0.4],
            arr2(&[[1.1]]),
            None,
            None,
            vec!["d1".into()],
        )
        .unwrap();
        let lay = ParamLayout::new(&cfg);
        let mut p = vec![0.0; lay.total];
        p[lay.x_off] = 0.4; // x at x_obs
        p[lay.log_rho_off] = 0.2;
        p[lay.log_alpha_off] = -0.1;
        p[lay.log_sigma_off] = -0.4;
        // z stays 0, so f = 0
        let got = log_joint(&cfg, &data, &p).unwrap();

        let rho = 0.2f64.exp();
        let alpha = (-0.1f64).exp();
        let sigma = (-0.4f64).exp();
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        let mut expect = 0.0;
        // y ~ Normal(0, sigma)
        expect += -0.5 * ln2pi - sigma.ln() - 0.5 * (1.1 / sigma) * (1.1 / sigma);
        // x ~ Normal(x_obs, s), evaluated at x = x_obs
        expect += -0.5 * ln2pi - 0.3f64.ln();
        // z ~ Normal(0, 1) at 0
        expect += -0.5 * ln2pi;
        // rho ~ InvGamma(5, 5) with log Jacobian
        expect += 5.0 * 5f64.ln() - ln_gamma(5.0) - 6.0 * rho.ln() - 5.0 / rho + rho.ln();
        // alpha, sigma ~ HalfNormal(0, 1.3) with log Jacobians
        for v in [alpha, sigma] {
            expect += 2f64.ln() - 0.5 * ln2pi - 1.3f64.ln() - 0.5 * (v / 1.3) * (v / 1.3)
                + v.ln();
        }
        assert!(
            (got - expect).abs() < 1e-12,
            "log joint {got} vs oracle {expect}"
        );
    }

    /// Shifting y by a constant with everything else fixed changes only
    /// the Gaussian likelihood term, by the analytic amount.
    #[test]
    fn constant_shift_changes_likelihood_analytically() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (deriv, scaled, varying, corr) in
            [(true, true, true, true), (false, false, false, false), (true, false, true, false)]
        {
            let (n, d) = (5, 3);
            let cfg = config(
                deriv,
                scaled,
                varying,
                corr,
                KernelFamily::Matern52,
                n,
                d,
                PriorSpec::simulation_default(1.0, 0.5),
            );
            let data = random_dataset(n, d, true, &mut rng);
            let lay = ParamLayout::new(&cfg);
            let p: Vec<f64> = (0..lay.total).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let c = 0.37;
            let mut shifted = data.clone();
            shifted.y.mapv_inplace(|v| v + c);

            let base = log_joint(&cfg, &data, &p).unwrap();
            let moved = log_joint(&cfg, &shifted, &p).unwrap();

            let cp = constrain(&cfg, &p);
            let ftil = cp.f_tilde.unwrap();
            let mut delta = 0.0;
            for dim in 0..d {
                let s2 = cp.sigma[dim] * cp.sigma[dim];
                for i in 0..n {
                    let r = data.y[[i, dim]] - ftil[[i, dim]];
                    delta += (r * r - (r + c) * (r + c)) / (2.0 * s2);
                }
            }
            assert!(
                ((moved - base) - delta).abs() < 1e-9,
                "shift delta {} vs analytic {delta}",
                moved - base
            );
        }
    }

    /// With zero correlation coordinates the mixing matrix is the identity
    /// and the correlated model differs from the uncorrelated one by
    /// exactly the LKJ log density at the identity.
    #[test]
    fn identity_correlation_reduces_to_uncorrelated_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (n, d) = (4, 3);
        let priors = PriorSpec::simulation_default(1.0, 0.5);
        let cfg_corr = config(true, true, true, true, KernelFamily::SquaredExponential, n, d, priors);
        let cfg_unc = config(true, true, true, false, KernelFamily::SquaredExponential, n, d, priors);
        let data = random_dataset(n, d, true, &mut rng);
        let lay_c = ParamLayout::new(&cfg_corr);
        let lay_u = ParamLayout::new(&cfg_unc);
        let p_u: Vec<f64> = (0..lay_u.total).map(|_| rng.gen_range(-0.8..0.8)).collect();
        // same parameters, correlation coordinates all zero
        let mut p_c = vec![0.0; lay_c.total];
        p_c[..lay_c.corr_off].copy_from_slice(&p_u[..lay_u.corr_off]);
        p_c[lay_c.z_off..].copy_from_slice(&p_u[lay_u.z_off..]);

        let with_corr = log_joint(&cfg_corr, &data, &p_c).unwrap();
        let without = log_joint(&cfg_unc, &data, &p_u).unwrap();
        let lkj_at_identity =
            super::super::lkj_cholesky_logpdf(&Array2::<f64>::eye(d), priors.lkj_eta);
        assert!(
            (with_corr - (without + lkj_at_identity)).abs() < 1e-10,
            "{with_corr} vs {} + {lkj_at_identity}",
            without
        );
    }

    /// Uncorrelated varying model factorizes over dimensions up to the
    /// shared latent-input prior counted once.
    #[test]
    fn uncorrelated_model_factorizes_over_dimensions() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (n, d) = (5, 3);
        let priors = PriorSpec::simulation_default(1.1, 0.7);
        let cfg = config(true, true, true, false, KernelFamily::Matern32, n, d, priors);
        let data = random_dataset(n, d, true, &mut rng);
        let lay = ParamLayout::new(&cfg);
        let p: Vec<f64> = (0..lay.total).map(|_| rng.gen_range(-0.6..0.6)).collect();
        let full = log_joint(&cfg, &data, &p).unwrap();

        let cfg1 = config(true, true, true, false, KernelFamily::Matern32, n, 1, priors);
        let lay1 = ParamLayout::new(&cfg1);
        let mut sum = 0.0;
        for dim in 0..d {
            let sub = Dataset::new(
                data.x_obs.clone(),
                data.y.column(dim).to_owned().insert_axis(ndarray::Axis(1)),
                data.y_prime
                    .as_ref()
                    .map(|yp| yp.column(dim).to_owned().insert_axis(ndarray::Axis(1))),
                None,
                vec![format!("d{dim}")],
            )
            .unwrap();
            let mut p1 = vec![0.0; lay1.total];
            p1[..n].copy_from_slice(&p[..n]);
            p1[lay1.log_rho_off] = p[lay.log_rho_off + dim];
            p1[lay1.log_alpha_off] = p[lay.log_alpha_off + dim];
            p1[lay1.log_alpha_prime_off] = p[lay.log_alpha_prime_off + dim];
            p1[lay1.log_sigma_off] = p[lay.log_sigma_off + dim];
            p1[lay1.log_sigma_prime_off] = p[lay.log_sigma_prime_off + dim];
            p1[lay1.z_off..].copy_from_slice(
                &p[lay.z_dim_off(dim)..lay.z_dim_off(dim) + lay.m],
            );
            sum += log_joint(&cfg1, &sub, &p1).unwrap();
        }
        // the x prior appears once per sub-model
        let mut lp_x = 0.0;
        for i in 0..n {
            lp_x += ln_normal(p[i], data.x_obs[i], priors.x_obs_sd);
        }
        let expect = sum - (d as f64 - 1.0) * lp_x;
        assert!((full - expect).abs() < 1e-8, "{full} vs {expect}");
    }

    /// With derivatives off, the likelihood path must agree with a direct
    /// N x N implementation of the classic latent GP model.
    #[test]
    fn derivative_off_matches_direct_gp_implementation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (n, d) = (6, 1);
        let priors = PriorSpec::simulation_default(0.9, 0.9);
        let cfg = config(false, false, false, false, KernelFamily::SquaredExponential, n, d, priors);
        let data = random_dataset(n, d, false, &mut rng);
        let lay = ParamLayout::new(&cfg);
        let p: Vec<f64> = (0..lay.total).map(|_| rng.gen_range(-0.7..0.7)).collect();
        let got = log_joint(&cfg, &data, &p).unwrap();

        // independent implementation via the public kernel ops
        let x = &p[..n];
        let rho = p[lay.log_rho_off].exp();
        let alpha = p[lay.log_alpha_off].exp();
        let sigma = p[lay.log_sigma_off].exp();
        let spec =
            KernelSpec::new(KernelFamily::SquaredExponential, rho, alpha, alpha).unwrap();
        let mut k = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                k[[i, j]] =
                    crate::kernels::kernel_block(&spec, x[i], x[j], BlockSelector::K00).unwrap();
            }
            k[[i, i]] += cfg.jitter;
        }
        let l = cholesky_psd(&crate::kernels::JointCovMatrix {
            entries: k,
            jitter: cfg.jitter,
        })
        .unwrap();
        let z = &p[lay.z_off..];
        let mut expect = 0.0;
        for i in 0..n {
            let mut fi = 0.0;
            for j in 0..=i {
                fi += l[[i, j]] * z[j];
            }
            expect += ln_normal(data.y[[i, 0]], fi, sigma);
            expect += ln_normal(p[i], data.x_obs[i], priors.x_obs_sd);
        }
        for zk in z {
            expect += -0.5 * LN_2PI - 0.5 * zk * zk;
        }
        expect += ln_inv_gamma(rho, 5.0, 5.0) + rho.ln();
        expect += ln_half_normal(alpha, 0.9) + alpha.ln();
        expect += ln_half_normal(sigma, 0.9) + sigma.ln();
        assert!((got - expect).abs() < 1e-10, "{got} vs {expect}");
    }

    /// Mixed values are the correlation factor applied per observation.
    #[test]
    fn mixing_is_linear_in_the_per_dimension_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (n, d) = (4, 4);
        let cfg = config(
            true,
            true,
            true,
            true,
            KernelFamily::SquaredExponential,
            n,
            d,
            PriorSpec::simulation_default(1.0, 0.5),
        );
        let lay = ParamLayout::new(&cfg);
        let p: Vec<f64> = (0..lay.total).map(|_| rng.gen_range(-0.9..0.9)).collect();
        let cp = constrain(&cfg, &p);
        let ftil = cp.f_tilde.clone().unwrap();

        // recompute the unmixed values from the public pieces
        let x = &p[..n];
        for dim in 0..d {
            let _ = dim;
        }
        let mut f = Array2::<f64>::zeros((d, n));
        for dim in 0..d {
            let spec = KernelSpec::new(
                cfg.family,
                cp.rho[dim],
                cp.alpha[dim],
                cp.alpha_prime[dim],
            )
            .unwrap();
            let cov = build_joint_cov(&spec, x, true, cfg.jitter).unwrap();
            let l = cholesky_lower(&cov.entries).unwrap();
            let z = &p[lay.z_dim_off(dim)..lay.z_dim_off(dim) + lay.m];
            let u = tri_lower_matvec(&l, z);
            for i in 0..n {
                f[[dim, i]] = u[i];
            }
        }
        for i in 0..n {
            for dim in 0..d {
                let mut mixed = 0.0;
                for e in 0..d {
                    mixed += cp.corr_cholesky[[dim, e]] * f[[e, i]];
                }
                assert!(
                    (ftil[[i, dim]] - mixed).abs() < 1e-12,
                    "obs {i} dim {dim}: {} vs {mixed}",
                    ftil[[i, dim]]
                );
            }
        }
    }

    #[test]
    fn singular_covariance_propagates_as_error() {
        let cfg = ModelConfig::new(
            false,
            false,
            false,
            false,
            KernelFamily::SquaredExponential,
            2,
            1,
            0.0, // no jitter
            PriorSpec::simulation_default(1.0, 1.0),
        )
        .unwrap();
        let data = Dataset::new(
            vec![1.0, 1.0],
            arr2(&[[0.1], [0.2]]),
            None,
            None,
            vec!["d1".into()],
        )
        .unwrap();
        let lay = ParamLayout::new(&cfg);
        let mut p = vec![0.0; lay.total];
        p[0] = 1.0;
        p[1] = 1.0; // coincident latent inputs, singular K00
        assert!(matches!(
            log_joint(&cfg, &data, &p),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    fn all_variants() -> Vec<(bool, bool, bool, bool)> {
        let mut v = Vec::new();
        for deriv in [true, false] {
            for scaled in [true, false] {
                if scaled && !deriv {
                    continue;
                }
                for varying in [true, false] {
                    for corr in [true, false] {
                        v.push((deriv, scaled, varying, corr));
                    }
                }
            }
        }
        v
    }

    /// The master property: the analytic gradient matches central finite
    /// differences on every variant code path.
    #[test]
    fn gradient_matches_finite_differences_on_all_variants() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (n, d) = (4, 3);
        assert_eq!(all_variants().len(), 12);
        for family in [
            KernelFamily::SquaredExponential,
            KernelFamily::Matern32,
            KernelFamily::Matern52,
        ] {
            for (deriv, scaled, varying, corr) in all_variants() {
                let cfg = config(
                    deriv,
                    scaled,
                    varying,
                    corr,
                    family,
                    n,
                    d,
                    PriorSpec::simulation_default(1.2, 0.6),
                );
                let data = random_dataset(n, d, true, &mut rng);
                let lay = ParamLayout::new(&cfg);
                let p: Vec<f64> =
                    (0..lay.total).map(|_| rng.gen_range(-0.6..0.6)).collect();
                let grad = log_joint_grad(&cfg, &data, &p).unwrap();
                let h = 1e-5;
                for k in 0..lay.total {
                    let mut pp = p.clone();
                    let mut pm = p.clone();
                    pp[k] += h;
                    pm[k] -= h;
                    let fd = (log_joint(&cfg, &data, &pp).unwrap()
                        - log_joint(&cfg, &data, &pm).unwrap())
                        / (2.0 * h);
                    let err = (grad[k] - fd).abs();
                    assert!(
                        err <= 1e-5 * fd.abs().max(1.0) + 1e-7,
                        "{family:?} variant d{deriv}s{scaled}v{varying}c{corr}, coord {k}: \
                         analytic {} vs fd {fd}",
                        grad[k]
                    );
                }
            }
        }
    }

    /// Zero whitened values put the latent function at zero; the z block
    /// of the gradient is then the pullback of the Gaussian likelihood
    /// alone, still verified against finite differences.
    #[test]
    fn gradient_at_zero_whitened_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (n, d) = (5, 2);
        let cfg = config(
            true,
            true,
            true,
            false,
            KernelFamily::SquaredExponential,
            n,
            d,
            PriorSpec::simulation_default(1.0, 0.5),
        );
        let data = random_dataset(n, d, true, &mut rng);
        let lay = ParamLayout::new(&cfg);
        let mut p: Vec<f64> = (0..lay.total).map(|_| rng.gen_range(-0.4..0.4)).collect();
        for k in lay.z_off..lay.total {
            p[k] = 0.0;
        }
        let grad = log_joint_grad(&cfg, &data, &p).unwrap();
        let h = 1e-5;
        for k in lay.z_off..lay.total {
            let mut pp = p.clone();
            let mut pm = p.clone();
            pp[k] += h;
            pm[k] -= h;
            let fd = (log_joint(&cfg, &data, &pp).unwrap()
                - log_joint(&cfg, &data, &pm).unwrap())
                / (2.0 * h);
            assert!(
                (grad[k] - fd).abs() <= 1e-5 * fd.abs().max(1.0) + 1e-7,
                "z coord {k}: {} vs {fd}",
                grad[k]
            );
        }
    }
}
