//! Hamiltonian Monte Carlo with dynamic path lengths (multinomial NUTS),
//! dual-averaging step size adaptation and diagonal mass matrix
//! estimation over expanding warmup windows. One chain is strictly
//! sequential and a pure function of its seed.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma, Normal};

use crate::error::{Error, Result};
use crate::model::{constrain, unconstrain, ConstrainedParams, Dataset, ModelConfig, ParamLayout};

/// Energy error above which a trajectory is declared divergent.
const DIVERGENCE_THRESHOLD: f64 = 1000.0;

/// Sampler settings. Defaults follow the single-chain protocol of the
/// simulation study: 3000 iterations with 1000 warmup.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Total iterations, warmup included.
    pub n_iterations: usize,
    pub n_warmup: usize,
    pub target_accept: f64,
    pub max_tree_depth: usize,
    pub seed: u64,
    pub init_jitter: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_iterations: 3000,
            n_warmup: 1000,
            target_accept: 0.8,
            max_tree_depth: 10,
            seed: 0,
            init_jitter: 0.1,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_warmup >= self.n_iterations {
            return Err(Error::InvalidArgument(format!(
                "n_warmup ({}) must be smaller than n_iterations ({})",
                self.n_warmup, self.n_iterations
            )));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "target_accept must lie in (0, 1), got {}",
                self.target_accept
            )));
        }
        if self.max_tree_depth == 0 {
            return Err(Error::InvalidArgument("max_tree_depth must be positive".into()));
        }
        if !(self.init_jitter >= 0.0) {
            return Err(Error::InvalidArgument("init_jitter must be nonnegative".into()));
        }
        Ok(())
    }
}

/// A log density with gradient, plus the hooks the sampler needs to start
/// a chain and to report draws in user-facing coordinates.
pub trait HmcTarget {
    /// Log density at `position`; fill `grad`. Return `f64::NEG_INFINITY`
    /// for evaluation failures (the proposal is then rejected).
    fn logp_and_grad(&self, position: &[f64], grad: &mut [f64]) -> f64;

    /// A starting point; called repeatedly until the density is finite.
    fn initial_position(&self, dim: usize, init_jitter: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..dim)
            .map(|_| {
                if init_jitter > 0.0 {
                    rng.gen_range(-init_jitter..init_jitter)
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Map an unconstrained position to the reported (constrained) draw.
    fn transform_draw(&self, position: &[f64]) -> Vec<f64> {
        position.to_vec()
    }

    fn param_names(&self, dim: usize) -> Vec<String> {
        (1..=dim).map(|i| format!("p[{i}]")).collect()
    }
}

/// Post-warmup draws in constrained coordinates with sampler statistics.
#[derive(Debug, Clone)]
pub struct ChainDraws {
    /// (n_iterations - n_warmup) x P
    pub draws: Array2<f64>,
    pub param_names: Vec<String>,
    /// Average acceptance statistic, one entry per post-warmup iteration.
    pub accept_stats: Vec<f64>,
    /// Count of divergent post-warmup iterations.
    pub divergences: usize,
    pub tree_depths: Vec<usize>,
    pub seed: u64,
    /// Set when more than half of the post-warmup iterations diverged.
    pub persistent_divergence: bool,
}

impl ChainDraws {
    pub fn n_draws(&self) -> usize {
        self.draws.nrows()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let ix = self.param_names.iter().position(|n| n == name)?;
        Some(self.draws.column(ix).to_vec())
    }
}

/// One leapfrog update: half-step momentum, full-step position, half-step
/// momentum. `grad_fn` returns None (or a non-finite gradient) to signal
/// divergence, which is passed through as None.
pub fn leapfrog<F>(
    mut grad_fn: F,
    position: &[f64],
    momentum: &[f64],
    step: f64,
    inv_mass: &[f64],
) -> Option<(Vec<f64>, Vec<f64>)>
where
    F: FnMut(&[f64]) -> Option<Vec<f64>>,
{
    let g0 = grad_fn(position)?;
    if g0.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut p = momentum.to_vec();
    for i in 0..p.len() {
        p[i] += 0.5 * step * g0[i];
    }
    let mut q = position.to_vec();
    for i in 0..q.len() {
        q[i] += step * inv_mass[i] * p[i];
    }
    let g1 = grad_fn(&q)?;
    if g1.iter().any(|v| !v.is_finite()) {
        return None;
    }
    for i in 0..p.len() {
        p[i] += 0.5 * step * g1[i];
    }
    Some((q, p))
}

#[derive(Clone)]
struct State {
    q: Vec<f64>,
    p: Vec<f64>,
    grad: Vec<f64>,
    logp: f64,
}

impl State {
    fn energy(&self, inv_mass: &[f64]) -> f64 {
        let kinetic: f64 = self
            .p
            .iter()
            .zip(inv_mass)
            .map(|(p, im)| 0.5 * im * p * p)
            .sum();
        -self.logp + kinetic
    }
}

struct Trajectory {
    left: State,
    right: State,
    proposal: State,
    p_sum: Vec<f64>,
    log_size: f64,
    depth: usize,
}

enum Extend {
    Ok(Trajectory),
    Turning,
    Divergent,
}

fn logaddexp(a: f64, b: f64) -> f64 {
    if a > b {
        a + (b - a).exp().ln_1p()
    } else {
        b + (a - b).exp().ln_1p()
    }
}

struct Nuts<'a, T: HmcTarget> {
    target: &'a T,
    dim: usize,
    inv_mass: Vec<f64>,
    step: f64,
    max_depth: usize,
    // per-iteration accumulators for the acceptance statistic
    sum_accept: f64,
    n_leapfrog: usize,
}

impl<'a, T: HmcTarget> Nuts<'a, T> {
    fn eval(&mut self, q: Vec<f64>) -> State {
        let mut grad = vec![0.0; self.dim];
        let logp = self.target.logp_and_grad(&q, &mut grad);
        State {
            q,
            p: vec![0.0; self.dim],
            grad,
            logp,
        }
    }

    /// Leapfrog with the cached gradient of the start state.
    fn leapfrog_cached(&mut self, start: &State, dir_step: f64) -> Option<State> {
        let mut p = start.p.clone();
        for i in 0..self.dim {
            p[i] += 0.5 * dir_step * start.grad[i];
        }
        let mut q = start.q.clone();
        for i in 0..self.dim {
            q[i] += dir_step * self.inv_mass[i] * p[i];
        }
        let mut grad = vec![0.0; self.dim];
        let logp = self.target.logp_and_grad(&q, &mut grad);
        if !logp.is_finite() || grad.iter().any(|v| !v.is_finite()) {
            return None;
        }
        for i in 0..self.dim {
            p[i] += 0.5 * dir_step * grad[i];
        }
        Some(State { q, p, grad, logp })
    }

    fn is_turning(&self, s_back: &State, s_front: &State, p_sum: &[f64]) -> bool {
        let mut back = 0.0;
        let mut front = 0.0;
        for i in 0..self.dim {
            back += self.inv_mass[i] * s_back.p[i] * p_sum[i];
            front += self.inv_mass[i] * s_front.p[i] * p_sum[i];
        }
        back <= 0.0 || front <= 0.0
    }

    /// Build a subtree of 2^depth leapfrog states starting one step away
    /// from `from` in direction `dir` (+1 forward, -1 backward).
    fn build(
        &mut self,
        rng: &mut ChaCha8Rng,
        from: &State,
        dir: f64,
        depth: usize,
        h0: f64,
    ) -> Extend {
        if depth == 0 {
            let Some(state) = self.leapfrog_cached(from, dir * self.step) else {
                self.n_leapfrog += 1;
                return Extend::Divergent;
            };
            let h = state.energy(&self.inv_mass);
            let log_w = h0 - h;
            self.n_leapfrog += 1;
            if !h.is_finite() || h - h0 > DIVERGENCE_THRESHOLD {
                return Extend::Divergent;
            }
            self.sum_accept += log_w.min(0.0).exp();
            return Extend::Ok(Trajectory {
                left: state.clone(),
                right: state.clone(),
                p_sum: state.p.clone(),
                proposal: state,
                log_size: log_w,
                depth: 0,
            });
        }

        let first = match self.build(rng, from, dir, depth - 1, h0) {
            Extend::Ok(t) => t,
            other => return other,
        };
        let inner_start = if dir > 0.0 {
            first.right.clone()
        } else {
            first.left.clone()
        };
        let second = match self.build(rng, &inner_start, dir, depth - 1, h0) {
            Extend::Ok(t) => t,
            other => return other,
        };

        let log_size = logaddexp(first.log_size, second.log_size);
        // unbiased multinomial choice between the two halves
        let take_second = (second.log_size - log_size).exp();
        let proposal = if rng.gen_range(0.0..1.0) < take_second {
            second.proposal
        } else {
            first.proposal
        };
        let (left, right) = if dir > 0.0 {
            (first.left, second.right)
        } else {
            (second.left, first.right)
        };
        let mut p_sum = first.p_sum;
        for i in 0..self.dim {
            p_sum[i] += second.p_sum[i];
        }
        if self.is_turning(&left, &right, &p_sum) {
            return Extend::Turning;
        }
        Extend::Ok(Trajectory {
            left,
            right,
            proposal,
            p_sum,
            log_size,
            depth,
        })
    }

    /// One NUTS transition. Returns (divergent?, depth).
    fn draw(&mut self, rng: &mut ChaCha8Rng, current: &mut State) -> (bool, usize) {
        for i in 0..self.dim {
            let z: f64 = StandardNormal.sample(rng);
            current.p[i] = z / self.inv_mass[i].sqrt();
        }
        self.sum_accept = 0.0;
        self.n_leapfrog = 0;
        let h0 = current.energy(&self.inv_mass);
        let mut tree = Trajectory {
            left: current.clone(),
            right: current.clone(),
            proposal: current.clone(),
            p_sum: current.p.clone(),
            log_size: 0.0,
            depth: 0,
        };
        let mut divergent = false;
        while tree.depth < self.max_depth {
            let dir = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            let start = if dir > 0.0 {
                tree.right.clone()
            } else {
                tree.left.clone()
            };
            let sub = match self.build(rng, &start, dir, tree.depth, h0) {
                Extend::Ok(t) => t,
                Extend::Turning => break,
                Extend::Divergent => {
                    divergent = true;
                    break;
                }
            };
            // biased progressive sampling toward the new half
            let accept_new = (sub.log_size - tree.log_size).exp();
            if rng.gen_range(0.0..1.0) < accept_new {
                tree.proposal = sub.proposal;
            }
            if dir > 0.0 {
                tree.right = sub.right;
            } else {
                tree.left = sub.left;
            }
            for i in 0..self.dim {
                tree.p_sum[i] += sub.p_sum[i];
            }
            tree.log_size = logaddexp(tree.log_size, sub.log_size);
            tree.depth += 1;
            if self.is_turning(&tree.left, &tree.right, &tree.p_sum) {
                break;
            }
        }
        *current = tree.proposal;
        (divergent, tree.depth)
    }

    fn accept_stat(&self) -> f64 {
        if self.n_leapfrog == 0 {
            0.0
        } else {
            self.sum_accept / self.n_leapfrog as f64
        }
    }

    /// Step size heuristic: double or halve until the one-step acceptance
    /// probability crosses 1/2.
    fn find_reasonable_step(&mut self, rng: &mut ChaCha8Rng, state: &State) -> f64 {
        self.step = 1.0;
        let mut trial = state.clone();
        for i in 0..self.dim {
            let z: f64 = StandardNormal.sample(rng);
            trial.p[i] = z / self.inv_mass[i].sqrt();
        }
        let h0 = trial.energy(&self.inv_mass);
        fn ratio_at<T: HmcTarget>(nuts: &mut Nuts<T>, trial: &State, h0: f64, eps: f64) -> f64 {
            match nuts.leapfrog_cached(trial, eps) {
                Some(s) => (h0 - s.energy(&nuts.inv_mass)).exp(),
                None => 0.0,
            }
        }
        let mut step = 1.0f64;
        let mut ratio = ratio_at(self, &trial, h0, step);
        while !ratio.is_finite() || ratio == 0.0 {
            step *= 0.5;
            if step < 1e-10 {
                return 1e-10;
            }
            ratio = ratio_at(self, &trial, h0, step);
        }
        let a: f64 = if ratio > 0.5 { 1.0 } else { -1.0 };
        for _ in 0..100 {
            if !ratio.is_finite() || ratio == 0.0 || ratio.powf(a) <= 2f64.powf(-a) {
                break;
            }
            step *= 2f64.powf(a);
            if !(1e-10..=1e6).contains(&step) {
                break;
            }
            ratio = ratio_at(self, &trial, h0, step);
        }
        step.clamp(1e-10, 1e6)
    }
}

/// Dual averaging toward a target acceptance statistic.
struct DualAveraging {
    mu: f64,
    log_step: f64,
    log_step_avg: f64,
    h_bar: f64,
    t: f64,
    target: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(initial_step: f64, target: f64) -> Self {
        Self {
            mu: (10.0 * initial_step).ln(),
            log_step: initial_step.ln(),
            log_step_avg: initial_step.ln(),
            h_bar: 0.0,
            t: 0.0,
            target,
        }
    }

    fn update(&mut self, accept: f64) {
        self.t += 1.0;
        let eta = 1.0 / (self.t + Self::T0);
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target - accept);
        self.log_step = self.mu - self.t.sqrt() / Self::GAMMA * self.h_bar;
        let w = self.t.powf(-Self::KAPPA);
        self.log_step_avg = w * self.log_step + (1.0 - w) * self.log_step_avg;
    }

    fn current(&self) -> f64 {
        self.log_step.exp()
    }

    fn averaged(&self) -> f64 {
        self.log_step_avg.exp()
    }
}

/// Running mean/variance for the diagonal metric.
struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for i in 0..x.len() {
            let d = x[i] - self.mean[i];
            self.mean[i] += d / n;
            self.m2[i] += d * (x[i] - self.mean[i]);
        }
    }

    /// Regularized variance estimate, shrunk toward a small constant.
    fn regularized_variance(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.m2
            .iter()
            .map(|m2| {
                let var = if self.n > 1 { m2 / (n - 1.0) } else { 1.0 };
                (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            })
            .collect()
    }
}

/// Warmup schedule: fast start, expanding covariance windows, fast tail.
struct Windows {
    /// iteration indices (within warmup) at which a window closes
    closes: Vec<usize>,
    collect_from: usize,
    collect_to: usize,
}

fn warmup_windows(n_warmup: usize) -> Windows {
    let (mut init, mut term, mut base) = (75usize, 50usize, 25usize);
    if n_warmup < init + term + base {
        init = (n_warmup as f64 * 0.15) as usize;
        term = (n_warmup as f64 * 0.10) as usize;
        base = n_warmup.saturating_sub(init + term);
    }
    let mut closes = Vec::new();
    if base > 0 && n_warmup > init + term {
        let slow_end = n_warmup - term;
        let mut start = init;
        let mut width = base;
        while start < slow_end {
            let mut end = start + width;
            // a window that cannot double again swallows the rest
            if end + 2 * width > slow_end {
                end = slow_end;
            }
            closes.push(end.min(slow_end));
            start = end;
            width *= 2;
        }
    }
    Windows {
        closes,
        collect_from: init,
        collect_to: n_warmup.saturating_sub(term),
    }
}

/// Run one chain. Deterministic in (target, dim, config).
pub fn sample<T: HmcTarget>(target: &T, dim: usize, config: &SamplerConfig) -> Result<ChainDraws> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut nuts = Nuts {
        target,
        dim,
        inv_mass: vec![1.0; dim],
        step: 1.0,
        max_depth: config.max_tree_depth,
        sum_accept: 0.0,
        n_leapfrog: 0,
    };

    // jittered initialization attempts until the density is finite
    let mut current = None;
    for _ in 0..100 {
        let q = target.initial_position(dim, config.init_jitter, &mut rng);
        let state = nuts.eval(q);
        if state.logp.is_finite() {
            current = Some(state);
            break;
        }
    }
    let mut current = current.ok_or(Error::InitializationFailed { attempts: 100 })?;

    nuts.step = nuts.find_reasonable_step(&mut rng, &current);
    let mut da = DualAveraging::new(nuts.step, config.target_accept);
    let windows = warmup_windows(config.n_warmup);
    let mut welford = Welford::new(dim);
    let mut next_close = 0usize;

    let kept = config.n_iterations - config.n_warmup;
    let names = target.param_names(dim);
    let n_params = target.transform_draw(&current.q).len();
    if names.len() != n_params {
        return Err(Error::InvalidArgument(format!(
            "{} parameter names for {} reported parameters",
            names.len(),
            n_params
        )));
    }
    let mut draws = Array2::<f64>::zeros((kept, n_params));
    let mut accept_stats = Vec::with_capacity(kept);
    let mut tree_depths = Vec::with_capacity(kept);
    let mut divergences = 0usize;

    for it in 0..config.n_iterations {
        let warming = it < config.n_warmup;
        let (divergent, depth) = nuts.draw(&mut rng, &mut current);
        if warming {
            da.update(nuts.accept_stat());
            nuts.step = da.current();
            if it >= windows.collect_from && it < windows.collect_to {
                welford.push(&current.q);
            }
            if next_close < windows.closes.len() && it + 1 == windows.closes[next_close] {
                if welford.n >= 10 {
                    nuts.inv_mass = welford.regularized_variance();
                }
                welford = Welford::new(dim);
                next_close += 1;
                // re-tune the step size for the new metric
                nuts.step = nuts.find_reasonable_step(&mut rng, &current);
                da = DualAveraging::new(nuts.step, config.target_accept);
            }
            if it + 1 == config.n_warmup {
                nuts.step = da.averaged();
            }
        } else {
            let k = it - config.n_warmup;
            let row = target.transform_draw(&current.q);
            for (j, v) in row.iter().enumerate() {
                draws[[k, j]] = *v;
            }
            accept_stats.push(nuts.accept_stat());
            tree_depths.push(depth);
            if divergent {
                divergences += 1;
            }
        }
    }

    let persistent_divergence = divergences * 2 > kept;
    Ok(ChainDraws {
        draws,
        param_names: names,
        accept_stats,
        divergences,
        tree_depths,
        seed: config.seed,
        persistent_divergence,
    })
}

/// Initial parameter vector for a GP model fit: latent inputs at the
/// observed inputs, log scales at the log prior medians, correlation
/// coordinates and whitened values at zero, everything perturbed by
/// Uniform(-init_jitter, init_jitter) noise.
pub fn initialize(
    config: &ModelConfig,
    data: &Dataset,
    sampler_config: &SamplerConfig,
) -> Result<Vec<f64>> {
    let lay = ParamLayout::new(config);
    if data.n_obs() != config.n_obs || data.n_dims() != config.n_dims {
        return Err(Error::InvalidArgument(
            "data dimensions do not match model config".into(),
        ));
    }
    let pr = &config.priors;
    let mut p = vec![0.0; lay.total];
    p[lay.x_off..lay.x_off + lay.n].copy_from_slice(&data.x_obs);

    // prior medians: InvGamma(a, b) median is b over the Gamma(a, 1)
    // median; the half-normal median is scale * Phi^-1(3/4)
    let gamma_med = Gamma::new(pr.rho_shape, 1.0)
        .map_err(|e| Error::InvalidArgument(format!("rho prior: {e}")))?
        .inverse_cdf(0.5);
    let rho_median = pr.rho_scale / gamma_med;
    let half_normal_factor = Normal::new(0.0, 1.0).unwrap().inverse_cdf(0.75);
    for slot in 0..lay.h {
        p[lay.log_rho_off + slot] = rho_median.ln();
        p[lay.log_alpha_off + slot] = (half_normal_factor * pr.sd_scale_y).ln();
        p[lay.log_sigma_off + slot] = (half_normal_factor * pr.sd_scale_y).ln();
        if lay.scaled_derivatives {
            p[lay.log_alpha_prime_off + slot] = (half_normal_factor * pr.sd_scale_yprime).ln();
            p[lay.log_sigma_prime_off + slot] = (half_normal_factor * pr.sd_scale_yprime).ln();
        }
    }
    // corr coords and whitened values stay at zero before jitter

    if sampler_config.init_jitter > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(sampler_config.seed);
        for v in p.iter_mut() {
            *v += rng.gen_range(-sampler_config.init_jitter..sampler_config.init_jitter);
        }
    }
    Ok(p)
}

/// The DGP-LVM posterior as a sampler target.
pub struct GpPosterior {
    pub config: ModelConfig,
    pub data: Dataset,
}

impl GpPosterior {
    pub fn new(config: ModelConfig, data: Dataset) -> Self {
        Self { config, data }
    }

    pub fn dim(&self) -> usize {
        ParamLayout::new(&self.config).total
    }

    pub fn constrain(&self, p: &[f64]) -> ConstrainedParams {
        constrain(&self.config, p)
    }

    pub fn unconstrain(&self, cp: &ConstrainedParams) -> Vec<f64> {
        unconstrain(&self.config, cp)
    }
}

impl HmcTarget for GpPosterior {
    fn logp_and_grad(&self, position: &[f64], grad: &mut [f64]) -> f64 {
        match crate::model::log_joint_with_grad(&self.config, &self.data, position) {
            Ok((lp, g)) => {
                grad.copy_from_slice(&g);
                lp
            }
            Err(_) => {
                grad.fill(0.0);
                f64::NEG_INFINITY
            }
        }
    }

    fn initial_position(&self, _dim: usize, init_jitter: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let sc = SamplerConfig {
            init_jitter,
            seed: rng.gen(),
            ..Default::default()
        };
        initialize(&self.config, &self.data, &sc).expect("config/data validated at construction")
    }

    fn transform_draw(&self, position: &[f64]) -> Vec<f64> {
        crate::model::constrained_draw(&self.config, position)
    }

    fn param_names(&self, _dim: usize) -> Vec<String> {
        crate::model::constrained_param_names(&self.config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct DiagNormal {
        mean: Vec<f64>,
        sd: Vec<f64>,
    }

    impl HmcTarget for DiagNormal {
        fn logp_and_grad(&self, position: &[f64], grad: &mut [f64]) -> f64 {
            let mut lp = 0.0;
            for i in 0..position.len() {
                let z = (position[i] - self.mean[i]) / self.sd[i];
                lp -= 0.5 * z * z;
                grad[i] = -z / self.sd[i];
            }
            lp
        }
    }

    /// Correlated 2-d Gaussian with the precision worked out inline.
    struct Correlated2d {
        rho: f64,
    }

    impl HmcTarget for Correlated2d {
        fn logp_and_grad(&self, q: &[f64], grad: &mut [f64]) -> f64 {
            let r = self.rho;
            let det = 1.0 - r * r;
            let (a, b) = (q[0], q[1]);
            grad[0] = -(a - r * b) / det;
            grad[1] = -(b - r * a) / det;
            -0.5 * (a * a - 2.0 * r * a * b + b * b) / det
        }
    }

    #[test]
    fn leapfrog_is_identity_with_zero_gradient_and_momentum() {
        let q = vec![1.0, -2.0, 3.0];
        let p = vec![0.0; 3];
        let (q1, p1) = leapfrog(
            |_: &[f64]| Some(vec![0.0; 3]),
            &q,
            &p,
            0.1,
            &[1.0, 1.0, 1.0],
        )
        .unwrap();
        assert_eq!(q1, q);
        assert_eq!(p1, p);
    }

    #[test]
    fn leapfrog_conserves_energy_on_quadratic_potential() {
        // U(q) = q^2/2, gradient of the log density is -q
        let grad = |q: &[f64]| Some(vec![-q[0]]);
        let mut q = vec![1.0];
        let mut p = vec![0.0];
        let h = |q: &[f64], p: &[f64]| 0.5 * q[0] * q[0] + 0.5 * p[0] * p[0];
        let h0 = h(&q, &p);
        for _ in 0..1000 {
            let (q1, p1) = leapfrog(grad, &q, &p, 0.01, &[1.0]).unwrap();
            q = q1;
            p = p1;
        }
        assert!((h(&q, &p) - h0).abs() <= 1e-3, "drift {}", (h(&q, &p) - h0).abs());
    }

    #[test]
    fn leapfrog_reverses_with_negated_momentum() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let dim = 5;
        let mean: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let grad_fn = |q: &[f64]| {
            Some(q.iter().zip(&mean).map(|(qi, m)| -(qi - m)).collect::<Vec<_>>())
        };
        let inv_mass: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.5..2.0)).collect();
        let q0: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let p0: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let (q1, p1) = leapfrog(&grad_fn, &q0, &p0, 0.37, &inv_mass).unwrap();
        let p1_neg: Vec<f64> = p1.iter().map(|v| -v).collect();
        let (q2, p2) = leapfrog(&grad_fn, &q1, &p1_neg, 0.37, &inv_mass).unwrap();
        for i in 0..dim {
            assert!((q2[i] - q0[i]).abs() <= 1e-10);
            assert!((p2[i] + p0[i]).abs() <= 1e-10);
        }
    }

    #[test]
    fn leapfrog_signals_divergence_on_bad_gradient() {
        assert!(leapfrog(|_: &[f64]| None, &[0.0], &[0.0], 0.1, &[1.0]).is_none());
        assert!(
            leapfrog(|_: &[f64]| Some(vec![f64::NAN]), &[0.0], &[0.0], 0.1, &[1.0]).is_none()
        );
    }

    #[test]
    fn recovers_standard_normal_moments_in_ten_dimensions() {
        let target = DiagNormal {
            mean: vec![0.0; 10],
            sd: vec![1.0; 10],
        };
        let config = SamplerConfig {
            n_iterations: 3000,
            n_warmup: 1000,
            seed: 123,
            ..Default::default()
        };
        let out = sample(&target, 10, &config).unwrap();
        assert_eq!(out.n_draws(), 2000);
        assert_eq!(out.divergences, 0);
        for j in 0..10 {
            let col = out.draws.column(j);
            let mean = col.sum() / col.len() as f64;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / (col.len() as f64 - 1.0);
            assert!(mean.abs() <= 0.1, "coord {j} mean {mean}");
            assert!((var.sqrt() - 1.0).abs() <= 0.1, "coord {j} sd {}", var.sqrt());
        }
        // energy diagnostics: post-warmup acceptance near the target
        let avg_accept: f64 =
            out.accept_stats.iter().sum::<f64>() / out.accept_stats.len() as f64;
        assert!(avg_accept >= config.target_accept - 0.15 && avg_accept <= 1.0);
    }

    #[test]
    fn recovers_shifted_scaled_normal() {
        let target = DiagNormal {
            mean: vec![5.0],
            sd: vec![2.0],
        };
        let config = SamplerConfig {
            n_iterations: 3000,
            n_warmup: 1000,
            seed: 99,
            ..Default::default()
        };
        let out = sample(&target, 1, &config).unwrap();
        let col = out.draws.column(0);
        let mean = col.sum() / col.len() as f64;
        let var =
            col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (col.len() as f64 - 1.0);
        assert!((mean - 5.0).abs() <= 0.15, "mean {mean}");
        assert!((var.sqrt() - 2.0).abs() <= 0.2, "sd {}", var.sqrt());
        assert_eq!(out.divergences, 0);
    }

    #[test]
    fn recovers_correlated_gaussian_covariance() {
        let target = Correlated2d { rho: 0.7 };
        let config = SamplerConfig {
            n_iterations: 4000,
            n_warmup: 1000,
            seed: 7,
            ..Default::default()
        };
        let out = sample(&target, 2, &config).unwrap();
        let a = out.draws.column(0);
        let b = out.draws.column(1);
        let n = a.len() as f64;
        let ma = a.sum() / n;
        let mb = b.sum() / n;
        let cov = a
            .iter()
            .zip(b.iter())
            .map(|(x, y)| (x - ma) * (y - mb))
            .sum::<f64>()
            / (n - 1.0);
        assert!((cov - 0.7).abs() < 0.1, "cov {cov}");
    }

    #[test]
    fn same_seed_gives_bit_identical_chains() {
        let target = DiagNormal {
            mean: vec![1.0, -1.0],
            sd: vec![1.0, 3.0],
        };
        let config = SamplerConfig {
            n_iterations: 400,
            n_warmup: 200,
            seed: 2024,
            ..Default::default()
        };
        let a = sample(&target, 2, &config).unwrap();
        let b = sample(&target, 2, &config).unwrap();
        assert_eq!(a.draws, b.draws);
        assert_eq!(a.accept_stats, b.accept_stats);
        assert_eq!(a.tree_depths, b.tree_depths);
    }

    struct NeverFinite;
    impl HmcTarget for NeverFinite {
        fn logp_and_grad(&self, _q: &[f64], grad: &mut [f64]) -> f64 {
            grad.fill(0.0);
            f64::NEG_INFINITY
        }
    }

    #[test]
    fn initialization_failure_is_reported() {
        let config = SamplerConfig {
            n_iterations: 10,
            n_warmup: 5,
            ..Default::default()
        };
        match sample(&NeverFinite, 3, &config) {
            Err(Error::InitializationFailed { attempts }) => assert_eq!(attempts, 100),
            other => panic!("expected initialization failure, got {other:?}"),
        }
    }

    #[test]
    fn warmup_windows_cover_standard_schedule() {
        let w = warmup_windows(1000);
        assert_eq!(w.collect_from, 75);
        assert_eq!(w.collect_to, 950);
        assert_eq!(w.closes, vec![100, 150, 250, 450, 950]);
        // tiny warmups stay valid
        let w = warmup_windows(30);
        assert!(w.collect_to <= 30);
    }
}
