//! Convergence measures (rank-normalized split R-hat, bulk and tail
//! effective sample size) and accuracy measures (per-input RMSE with its
//! bias/variance decomposition).
//!
//! Single-chain R-hat is computed on the two halves of that chain; this
//! is weaker evidence than a multi-chain comparison, which is why the
//! harness also exposes a chains flag.

use ndarray::Array2;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Threshold above which a parameter's R-hat is flagged.
pub const RHAT_THRESHOLD: f64 = 1.1;
/// ESS must exceed this many multiples of the chain count.
pub const ESS_PER_CHAIN: f64 = 100.0;

/// Draws of one scalar quantity: C chains by S draws.
#[derive(Debug, Clone)]
pub struct ScalarDrawSet {
    values: Array2<f64>,
}

impl ScalarDrawSet {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() < 4 {
            return Err(Error::InvalidArgument(
                "draw set needs at least one chain with 4 draws".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "draw set contains non-finite values".into(),
            ));
        }
        Ok(Self { values })
    }

    pub fn from_single_chain(draws: &[f64]) -> Result<Self> {
        Self::new(Array2::from_shape_vec((1, draws.len()), draws.to_vec()).map_err(|e| {
            Error::InvalidArgument(format!("bad draw vector: {e}"))
        })?)
    }

    pub fn n_chains(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_draws(&self) -> usize {
        self.values.ncols()
    }
}

fn is_constant(values: &Array2<f64>) -> bool {
    let first = values[[0, 0]];
    values.iter().all(|v| *v == first)
}

/// Split each chain into halves (the middle draw of an odd-length chain
/// belongs to neither half).
fn split_chains(values: &Array2<f64>) -> Vec<Vec<f64>> {
    let half = values.ncols() / 2;
    let mut out = Vec::with_capacity(2 * values.nrows());
    for c in 0..values.nrows() {
        let row = values.row(c);
        out.push(row.iter().take(half).copied().collect());
        out.push(row.iter().skip(values.ncols() - half).copied().collect());
    }
    out
}

/// Rank-normalize all draws jointly: average ranks for ties, then the
/// inverse standard normal of the fractional ranks (r - 3/8)/(S + 1/4).
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let total: usize = chains.iter().map(|c| c.len()).sum();
    let mut indexed: Vec<(f64, usize)> = Vec::with_capacity(total);
    let mut flat_ix = 0;
    for c in chains {
        for v in c {
            indexed.push((*v, flat_ix));
            flat_ix += 1;
        }
    }
    indexed.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite draws"));
    let mut ranks = vec![0.0; total];
    let mut i = 0;
    while i < total {
        let mut j = i;
        while j + 1 < total && indexed[j + 1].0 == indexed[i].0 {
            j += 1;
        }
        // average rank over the tie group, 1-based
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for item in indexed.iter().take(j + 1).skip(i) {
            ranks[item.1] = avg;
        }
        i = j + 1;
    }
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let denom = total as f64 + 0.25;
    let mut out = Vec::with_capacity(chains.len());
    let mut k = 0;
    for c in chains {
        let mut z = Vec::with_capacity(c.len());
        for _ in c {
            z.push(std_normal.inverse_cdf((ranks[k] - 0.375) / denom));
            k += 1;
        }
        out.push(z);
    }
    out
}

/// Classic potential scale reduction over a set of chains.
fn psrf(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len() as f64;
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| c.iter().sum::<f64>() / n).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = n / (m - 1.0) * means.iter().map(|mu| (mu - grand) * (mu - grand)).sum::<f64>();
    let w = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / m;
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}

/// Rank-normalized split R-hat.
pub fn split_rhat(d: &ScalarDrawSet) -> Result<f64> {
    if is_constant(&d.values) {
        return Err(Error::DegenerateDraws);
    }
    let halves = split_chains(&d.values);
    let z = rank_normalize(&halves);
    Ok(psrf(&z))
}

/// Multi-chain ESS with Geyer's initial-positive-sequence truncation and
/// monotone pair correction. Chains must share a length.
fn ess_core(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len() as f64;
    let n = chains[0].len();
    let nf = n as f64;
    let means: Vec<f64> = chains.iter().map(|c| c.iter().sum::<f64>() / nf).collect();
    let vars: Vec<f64> = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (nf - 1.0))
        .collect();
    let w = vars.iter().sum::<f64>() / m;
    if w == 0.0 {
        return f64::NAN;
    }
    let var_plus = if chains.len() > 1 {
        let grand = means.iter().sum::<f64>() / m;
        let b_over_n =
            means.iter().map(|mu| (mu - grand) * (mu - grand)).sum::<f64>() / (m - 1.0);
        (nf - 1.0) / nf * w + b_over_n
    } else {
        (nf - 1.0) / nf * w
    };

    // biased (1/n) autocovariance averaged over chains, one lag at a time
    let acov_at = |t: usize| -> f64 {
        let mut total = 0.0;
        for (c, mu) in chains.iter().zip(&means) {
            let mut s = 0.0;
            for i in 0..n - t {
                s += (c[i] - mu) * (c[i + t] - mu);
            }
            total += s / nf;
        }
        total / m
    };
    let rho_at = |t: usize| 1.0 - (w - acov_at(t)) / var_plus;

    // Geyer pairs: keep while positive, then make them non-increasing
    let mut pairs = Vec::new();
    let mut t = 0;
    while t + 1 < n {
        let even = if t == 0 { 1.0 } else { rho_at(t) };
        let odd = rho_at(t + 1);
        let p = even + odd;
        if p <= 0.0 {
            break;
        }
        pairs.push(p);
        t += 2;
    }
    let mut tau = -1.0;
    let mut running_min = f64::INFINITY;
    for p in pairs {
        running_min = running_min.min(p);
        tau += 2.0 * running_min;
    }
    let total_draws = m * nf;
    let tau = tau.max(1.0 / total_draws.log10());
    total_draws / tau
}

/// Bulk effective sample size: ESS of the rank-normalized split chains.
pub fn bulk_ess(d: &ScalarDrawSet) -> Result<f64> {
    if is_constant(&d.values) {
        return Err(Error::DegenerateDraws);
    }
    let halves = split_chains(&d.values);
    let z = rank_normalize(&halves);
    Ok(ess_core(&z))
}

/// R's default (type 7) quantile.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let h = (n as f64 - 1.0) * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Tail effective sample size: the smaller of the ESS of the indicator
/// draws at the 5% and 95% quantiles.
pub fn tail_ess(d: &ScalarDrawSet) -> Result<f64> {
    if is_constant(&d.values) {
        return Err(Error::DegenerateDraws);
    }
    let mut all: Vec<f64> = d.values.iter().copied().collect();
    all.sort_by(|a, b| a.partial_cmp(b).expect("finite draws"));
    let mut out = f64::INFINITY;
    for p in [0.05, 0.95] {
        let q = quantile(&all, p);
        let indicator = d.values.mapv(|v| f64::from(v <= q));
        if is_constant(&indicator) {
            return Err(Error::DegenerateDraws);
        }
        let halves = split_chains(&indicator);
        out = out.min(ess_core(&halves));
    }
    Ok(out)
}

/// Per-input accuracy of latent input recovery.
#[derive(Debug, Clone, Copy)]
pub struct RmseRecord {
    pub rmse: f64,
    pub bias: f64,
    /// sample SD of the draws (n-1 denominator)
    pub sd: f64,
}

#[derive(Debug, Clone)]
pub struct RmseReport {
    pub per_input: Vec<RmseRecord>,
    pub mean_rmse: f64,
}

/// RMSE of posterior draws against the true latent inputs, decomposed
/// into bias and posterior spread: rmse^2 = bias^2 + sd^2 (S-1)/S.
pub fn rmse_latent(draws_of_x: &Array2<f64>, x_true: &[f64]) -> Result<RmseReport> {
    let s = draws_of_x.nrows();
    let n = draws_of_x.ncols();
    if n != x_true.len() {
        return Err(Error::InvalidArgument(format!(
            "{} draw columns but {} true inputs",
            n,
            x_true.len()
        )));
    }
    if s == 0 {
        return Err(Error::InvalidArgument("no draws".into()));
    }
    if x_true.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite x_true".into()));
    }
    let sf = s as f64;
    let mut per_input = Vec::with_capacity(n);
    let mut total = 0.0;
    for i in 0..n {
        let col = draws_of_x.column(i);
        let mean = col.sum() / sf;
        let mse = col.iter().map(|v| (v - x_true[i]) * (v - x_true[i])).sum::<f64>() / sf;
        let var = if s > 1 {
            col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (sf - 1.0)
        } else {
            0.0
        };
        let rec = RmseRecord {
            rmse: mse.sqrt(),
            bias: mean - x_true[i],
            sd: var.sqrt(),
        };
        total += rec.rmse;
        per_input.push(rec);
    }
    Ok(RmseReport {
        per_input,
        mean_rmse: total / n as f64,
    })
}

/// Convergence flags at the thresholds used by the harness.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct ConvergenceFlags {
    pub rhat_ok: bool,
    pub bulk_ess_ok: bool,
    pub tail_ess_ok: bool,
}

impl ConvergenceFlags {
    pub fn check(rhat: f64, bulk: f64, tail: f64, n_chains: usize) -> Self {
        let floor = ESS_PER_CHAIN * n_chains as f64;
        Self {
            rhat_ok: rhat <= RHAT_THRESHOLD,
            bulk_ess_ok: bulk >= floor,
            tail_ess_ok: tail >= floor,
        }
    }

    pub fn all_ok(&self) -> bool {
        self.rhat_ok && self.bulk_ess_ok && self.tail_ess_ok
    }
}
