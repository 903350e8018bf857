//! Derivative Gaussian process latent variable models (DGP-LVM).
//!
//! Joint GP modeling of outputs and scaled derivative outputs over
//! multiple correlated dimensions, with Bayesian estimation of the latent
//! inputs via gradient-based MCMC. The crate also ships the simulation
//! scenarios, convergence/accuracy diagnostics and the experiment harness
//! behind the `dgplvm` CLI.

pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod kernels;
pub(crate) mod linalg;
pub mod model;
pub mod sampler;
pub mod simgen;

pub use error::{Error, Result};

// probe hook, test builds only
#[doc(hidden)]
pub fn linalg_probe_chol_rev_rank1(
    l: &ndarray::Array2<f64>,
    u_bar: &[f64],
    z: &[f64],
) -> ndarray::Array2<f64> {
    linalg::cholesky_reverse_rank1(l, u_bar, z)
}
