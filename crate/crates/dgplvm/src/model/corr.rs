//! Correlation Cholesky factor: the tanh row-filling transform from
//! unconstrained coordinates, its inverse and pullback, and the LKJ prior.
//!
//! Coordinates are stored row-major: for row i (0-based, 1..D-1) the
//! entries (i, 0..i). Under an LKJ(eta) prior the transformed canonical
//! partial correlations are independent with a per-column Beta parameter,
//! which gives a closed form for both the prior term and its gradient in
//! the unconstrained space.

use ndarray::Array2;
use statrs::function::gamma::ln_gamma;

pub fn n_corr_coords(d: usize) -> usize {
    d * (d - 1) / 2
}

/// Forward transform plus the intermediates needed by the pullback.
pub(crate) struct CorrTransform {
    pub l: Array2<f64>,
    /// tanh of each coordinate, in coordinate order.
    pub z: Vec<f64>,
    /// remaining squared row mass before each coordinate is placed.
    pub acc: Vec<f64>,
}

pub(crate) fn corr_cholesky_with_aux(w: &[f64], d: usize) -> CorrTransform {
    debug_assert_eq!(w.len(), n_corr_coords(d));
    let mut l = Array2::<f64>::zeros((d, d));
    if d > 0 {
        l[[0, 0]] = 1.0;
    }
    let mut z = vec![0.0; w.len()];
    let mut acc = vec![0.0; w.len()];
    let mut k = 0;
    for i in 1..d {
        let mut rest: f64 = 1.0;
        for j in 0..i {
            let zij = w[k].tanh();
            z[k] = zij;
            acc[k] = rest;
            l[[i, j]] = zij * rest.sqrt();
            rest *= 1.0 - zij * zij;
            k += 1;
        }
        l[[i, i]] = rest.sqrt();
    }
    CorrTransform { l, z, acc }
}

/// Unconstrained coordinates -> lower-triangular Cholesky factor of a
/// correlation matrix (unit row norms).
pub fn corr_cholesky(w: &[f64], d: usize) -> Array2<f64> {
    corr_cholesky_with_aux(w, d).l
}

/// Inverse of [`corr_cholesky`].
pub fn inv_corr_cholesky(l: &Array2<f64>) -> Vec<f64> {
    let d = l.nrows();
    let mut w = Vec::with_capacity(n_corr_coords(d));
    for i in 1..d {
        let mut rest = 1.0f64;
        for j in 0..i {
            let z = l[[i, j]] / rest.sqrt();
            w.push(z.atanh());
            rest -= l[[i, j]] * l[[i, j]];
        }
    }
    w
}

/// Pullback: adjoint of L (lower triangle including diagonal) to the
/// adjoint of the unconstrained coordinates, accumulated into `w_bar`.
pub(crate) fn corr_cholesky_vjp(aux: &CorrTransform, l_bar: &Array2<f64>, w_bar: &mut [f64]) {
    let d = aux.l.nrows();
    let mut k_row_end = 0;
    for i in 1..d {
        let k0 = k_row_end;
        k_row_end += i;
        // backward over the row recurrence:
        //   L[i,j] = z_j sqrt(acc_j),  acc_{j+1} = acc_j (1 - z_j^2)
        let acc_i = aux.acc[k_row_end - 1] * (1.0 - aux.z[k_row_end - 1] * aux.z[k_row_end - 1]);
        let mut acc_bar = if aux.l[[i, i]] > 0.0 {
            l_bar[[i, i]] * 0.5 / acc_i.sqrt()
        } else {
            0.0
        };
        for j in (0..i).rev() {
            let k = k0 + j;
            let z = aux.z[k];
            let a = aux.acc[k];
            let z_bar = l_bar[[i, j]] * a.sqrt() + acc_bar * a * (-2.0 * z);
            acc_bar = l_bar[[i, j]] * z * 0.5 / a.sqrt() + acc_bar * (1.0 - z * z);
            // dz/dw = 1 - z^2
            w_bar[k] += z_bar * (1.0 - z * z);
        }
    }
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Per-column Beta parameter of the canonical partial correlations under
/// LKJ(eta); `j` is the 0-based column index.
fn vine_shape(eta: f64, d: usize, j: usize) -> f64 {
    eta + (d as f64 - 2.0 - j as f64) / 2.0
}

/// Log density of the LKJ distribution over correlation Cholesky factors,
/// normalizing constant included.
pub fn lkj_cholesky_logpdf(l: &Array2<f64>, eta: f64) -> f64 {
    let d = l.nrows();
    let mut lp = 0.0;
    for i in 1..d {
        lp += (d as f64 - (i + 1) as f64 + 2.0 * eta - 2.0) * l[[i, i]].ln();
    }
    for j in 0..d.saturating_sub(1) {
        let a = vine_shape(eta, d, j);
        lp += (d - 1 - j) as f64 * (-(2.0 * a - 1.0) * std::f64::consts::LN_2 - ln_beta(a, a));
    }
    lp
}

/// LKJ prior plus full transform Jacobian, evaluated directly in the
/// unconstrained space: sum over coordinates of
/// `a_j ln(1 - z^2) - (2 a_j - 1) ln 2 - ln B(a_j, a_j)`.
pub(crate) fn lkj_unconstrained_log_term(w: &[f64], d: usize, eta: f64) -> f64 {
    let mut lp = 0.0;
    let mut k = 0;
    for i in 1..d {
        for j in 0..i {
            let a = vine_shape(eta, d, j);
            let z = w[k].tanh();
            lp += a * (1.0 - z * z).ln()
                - (2.0 * a - 1.0) * std::f64::consts::LN_2
                - ln_beta(a, a);
            k += 1;
        }
    }
    lp
}

/// Gradient of [`lkj_unconstrained_log_term`], accumulated into `w_bar`.
pub(crate) fn lkj_unconstrained_grad(w: &[f64], d: usize, eta: f64, w_bar: &mut [f64]) {
    let mut k = 0;
    for i in 1..d {
        for j in 0..i {
            let a = vine_shape(eta, d, j);
            w_bar[k] += -2.0 * a * w[k].tanh();
            k += 1;
        }
    }
}
