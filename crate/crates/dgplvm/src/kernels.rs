//! Base and derivative covariance functions.
//!
//! Each supported family is stationary and scale-invariant in `tau / rho`,
//! so every block of the joint covariance reduces to derivatives of a
//! scalar profile `h(u)`:
//!
//! * `K00 = alpha^2 h(u)` — output/output
//! * `K01 = -alpha alpha' h'(u) / rho` — output/derivative
//! * `K10 = +alpha alpha' h'(u) / rho` — derivative/output
//! * `K11 = -alpha'^2 h''(u) / rho^2` — derivative/derivative
//!
//! with `u = (x_i - x_j) / rho`. The split marginal SDs `alpha` and
//! `alpha'` absorb scale differences between outputs and observed
//! derivatives; setting `alpha' = alpha` recovers the classic derivative
//! kernel.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Covariance function family. Matern 1/2 is deliberately absent: it is
/// not twice differentiable, so no derivative counterpart exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelFamily {
    SquaredExponential,
    Matern32,
    Matern52,
}

impl KernelFamily {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "se" | "squared-exponential" => Ok(Self::SquaredExponential),
            "matern32" | "matern-3/2" => Ok(Self::Matern32),
            "matern52" | "matern-5/2" => Ok(Self::Matern52),
            other => Err(Error::InvalidArgument(format!(
                "unknown kernel family '{other}' (expected se, matern32 or matern52)"
            ))),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::SquaredExponential => "se",
            Self::Matern32 => "matern32",
            Self::Matern52 => "matern52",
        }
    }
}

/// Kernel hyperparameters for one output dimension.
#[derive(Debug, Clone, Copy)]
pub struct KernelSpec {
    pub family: KernelFamily,
    /// Length scale, in input units.
    pub rho: f64,
    /// Marginal SD of the output GP.
    pub alpha: f64,
    /// Marginal SD of the derivative GP.
    pub alpha_prime: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, rho: f64, alpha: f64, alpha_prime: f64) -> Result<Self> {
        for (name, v) in [("rho", rho), ("alpha", alpha), ("alpha_prime", alpha_prime)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(Self {
            family,
            rho,
            alpha,
            alpha_prime,
        })
    }
}

/// Selects one block of the joint covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockSelector {
    /// K(x_i, x_j)
    K00,
    /// dK/dx_j
    K01,
    /// dK/dx_i
    K10,
    /// d^2K/dx_i dx_j
    K11,
}

/// Symmetric joint covariance matrix with the jitter used on its diagonal.
#[derive(Debug, Clone)]
pub struct JointCovMatrix {
    pub entries: Array2<f64>,
    pub jitter: f64,
}

/// Profile derivatives h, h', h'', h''' at u = tau / rho.
///
/// The Matern profiles depend on |u|; at u = 0 the odd derivatives use the
/// two-sided limit 0, which keeps the off-diagonal blocks exactly zero at
/// coincident inputs.
#[inline]
pub(crate) fn profile(family: KernelFamily, u: f64) -> [f64; 4] {
    match family {
        KernelFamily::SquaredExponential => {
            let e = (-0.5 * u * u).exp();
            [e, -u * e, (u * u - 1.0) * e, (3.0 * u - u * u * u) * e]
        }
        KernelFamily::Matern32 => {
            let a = 3f64.sqrt();
            let r = u.abs();
            let s = if u > 0.0 {
                1.0
            } else if u < 0.0 {
                -1.0
            } else {
                0.0
            };
            let e = (-a * r).exp();
            [
                (1.0 + a * r) * e,
                -3.0 * u * e,
                -3.0 * (1.0 - a * r) * e,
                3.0 * a * s * (2.0 - a * r) * e,
            ]
        }
        KernelFamily::Matern52 => {
            let b = 5f64.sqrt();
            let r = u.abs();
            let e = (-b * r).exp();
            [
                (1.0 + b * r + 5.0 * r * r / 3.0) * e,
                -(5.0 * u / 3.0) * (1.0 + b * r) * e,
                -(5.0 / 3.0) * (1.0 + b * r - 5.0 * r * r) * e,
                (25.0 * u / 3.0) * (3.0 - b * r) * e,
            ]
        }
    }
}

/// All distinct block values and their d/dtau derivatives at one input
/// pair, with unit marginal SDs. K10 follows from K01 by oddness.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PairBlocks {
    pub k00: f64,
    pub k01: f64,
    pub k11: f64,
    pub d00: f64,
    pub d01: f64,
    pub d11: f64,
}

#[inline]
pub(crate) fn pair_blocks(family: KernelFamily, rho: f64, tau: f64) -> PairBlocks {
    let [h0, h1, h2, h3] = profile(family, tau / rho);
    PairBlocks {
        k00: h0,
        k01: -h1 / rho,
        k11: -h2 / (rho * rho),
        d00: h1 / rho,
        d01: -h2 / (rho * rho),
        d11: -h3 / (rho * rho * rho),
    }
}

/// Evaluate one block of the scaled derivative covariance function.
pub fn kernel_block(spec: &KernelSpec, xi: f64, xj: f64, block: BlockSelector) -> Result<f64> {
    if !xi.is_finite() || !xj.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "inputs must be finite, got xi={xi}, xj={xj}"
        )));
    }
    // K10(x_i, x_j) = K01(x_j, x_i)
    if block == BlockSelector::K10 {
        return kernel_block(spec, xj, xi, BlockSelector::K01);
    }
    let pb = pair_blocks(spec.family, spec.rho, xi - xj);
    let v = match block {
        BlockSelector::K00 => spec.alpha * spec.alpha * pb.k00,
        BlockSelector::K01 => spec.alpha * spec.alpha_prime * pb.k01,
        BlockSelector::K11 => spec.alpha_prime * spec.alpha_prime * pb.k11,
        BlockSelector::K10 => unreachable!(),
    };
    Ok(v)
}

/// Assemble the joint covariance over a grid of inputs.
///
/// With derivatives included the result is the 2N x 2N block matrix
/// [[K00, K01], [K10, K11]] plus `jitter` on the diagonal; otherwise just
/// K00 plus jitter. Duplicate inputs are allowed; the jitter covers the
/// resulting rank deficiency.
pub fn build_joint_cov(
    spec: &KernelSpec,
    x: &[f64],
    include_derivatives: bool,
    jitter: f64,
) -> Result<JointCovMatrix> {
    let n = x.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty input grid".into()));
    }
    if !jitter.is_finite() || jitter < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "jitter must be nonnegative, got {jitter}"
        )));
    }
    for (i, v) in x.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "input {i} is not finite: {v}"
            )));
        }
    }
    let a2 = spec.alpha * spec.alpha;
    let aap = spec.alpha * spec.alpha_prime;
    let ap2 = spec.alpha_prime * spec.alpha_prime;
    let m = if include_derivatives { 2 * n } else { n };
    let mut e = vec![0.0; m * m];
    // one profile evaluation per unordered input pair; the mirrored
    // entries follow from the parity of the blocks in tau, and K10 is
    // K01 with swapped arguments
    for i in 0..n {
        for j in i..n {
            let pb = pair_blocks(spec.family, spec.rho, x[i] - x[j]);
            let k00 = a2 * pb.k00;
            e[i * m + j] = k00;
            e[j * m + i] = k00;
            if include_derivatives {
                let k01 = aap * pb.k01;
                let k11 = ap2 * pb.k11;
                e[i * m + n + j] = k01;
                e[(n + j) * m + i] = k01;
                e[j * m + n + i] = -k01;
                e[(n + i) * m + j] = -k01;
                e[(n + i) * m + n + j] = k11;
                e[(n + j) * m + n + i] = k11;
            }
        }
    }
    for i in 0..m {
        e[i * m + i] += jitter;
    }
    let entries = Array2::from_shape_vec((m, m), e).expect("square");
    Ok(JointCovMatrix { entries, jitter })
}

/// Lower Cholesky factor of a joint covariance matrix. The failing pivot
/// index is carried in the error when the matrix is not positive definite
/// even after jitter.
pub fn cholesky_psd(m: &JointCovMatrix) -> Result<Array2<f64>> {
    linalg::cholesky_lower(&m.entries)
}
