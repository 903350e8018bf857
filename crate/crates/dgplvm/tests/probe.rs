use dgplvm::harness::{fit_single, VariantFlags};
use dgplvm::kernels::KernelFamily;
use dgplvm::model::{log_joint_with_grad, ParamLayout, PriorSpec};
use dgplvm::sampler::SamplerConfig;
use dgplvm::simgen::{simulate, Scenario, ScenarioConfig};

fn priors() -> PriorSpec {
    PriorSpec {
        rho_shape: 5.0,
        rho_scale: 5.0,
        sd_scale_y: 1.0,
        sd_scale_yprime: 1.0,
        lkj_eta: 3.0,
        x_obs_sd: 0.3,
    }
}

#[test]
#[ignore]
fn probe_eval_cost() {
    let cfg = ScenarioConfig {
        scenario: Scenario::Gp,
        seed: 3,
        ..Default::default()
    };
    let trial = simulate(&cfg).unwrap();
    let config = VariantFlags::full()
        .to_model_config(KernelFamily::SquaredExponential, 20, 5, priors())
        .unwrap();
    let lay = ParamLayout::new(&config);
    let mut p = vec![0.05; lay.total];
    for i in 0..20 {
        p[i] = trial.dataset.x_obs[i];
    }
    let t0 = std::time::Instant::now();
    let reps = 2000;
    let mut acc = 0.0;
    for _ in 0..reps {
        let (lp, g) = log_joint_with_grad(&config, &trial.dataset, &p).unwrap();
        acc += lp + g[0];
    }
    let elapsed = t0.elapsed().as_secs_f64();
    println!(
        "grad eval: {:.1} us each ({} reps, sink {acc:.3})",
        elapsed / reps as f64 * 1e6,
        reps
    );
}

#[test]
#[ignore]
fn probe_short_fit() {
    let cfg = ScenarioConfig {
        scenario: Scenario::Gp,
        seed: 3,
        ..Default::default()
    };
    let trial = simulate(&cfg).unwrap();
    let config = VariantFlags::full()
        .to_model_config(KernelFamily::SquaredExponential, 20, 5, priors())
        .unwrap();
    let sc = SamplerConfig {
        n_iterations: 1300,
        n_warmup: 1000,
        seed: 17,
        ..Default::default()
    };
    let t0 = std::time::Instant::now();
    let fit = fit_single(&config, &trial.dataset, &sc, 1, None).unwrap();
    let elapsed = t0.elapsed().as_secs_f64();
    let depths = &fit.chains[0].tree_depths;
    let mean_depth = depths.iter().sum::<usize>() as f64 / depths.len() as f64;
    let max_depth = depths.iter().max().unwrap();
    println!(
        "1300 iters in {elapsed:.1}s, mean depth {mean_depth:.1}, max depth {max_depth}, div {}",
        fit.summary.divergences
    );
}

#[test]
#[ignore]
fn probe_component_costs() {
    use dgplvm::kernels::{build_joint_cov, KernelSpec};
    let x: Vec<f64> = (1..=20).map(|i| 0.5 * i as f64).collect();
    let spec = KernelSpec::new(KernelFamily::SquaredExponential, 0.7, 1.5, 0.5).unwrap();
    let reps = 20000;

    let t0 = std::time::Instant::now();
    let mut sink = 0.0;
    for _ in 0..reps {
        let cov = build_joint_cov(&spec, &x, true, 1e-6).unwrap();
        sink += cov.entries[[0, 0]];
    }
    println!("build_joint_cov 40x40: {:.1} us (sink {sink:.1})", t0.elapsed().as_secs_f64() / reps as f64 * 1e6);

    let cov = build_joint_cov(&spec, &x, true, 1e-6).unwrap();
    let t0 = std::time::Instant::now();
    let mut sink = 0.0;
    for _ in 0..reps {
        let l = dgplvm::kernels::cholesky_psd(&cov).unwrap();
        sink += l[[39, 39]];
    }
    println!("cholesky 40x40: {:.1} us (sink {sink:.1})", t0.elapsed().as_secs_f64() / reps as f64 * 1e6);

    let l = dgplvm::kernels::cholesky_psd(&cov).unwrap();
    let u_bar: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
    let z: Vec<f64> = (0..40).map(|i| (i as f64 * 0.11).cos()).collect();
    let t0 = std::time::Instant::now();
    let mut sink = 0.0;
    for _ in 0..reps {
        let kb = dgplvm::linalg_probe_chol_rev_rank1(&l, &u_bar, &z);
        sink += kb[[0, 0]];
    }
    println!("chol_rev_rank1 40x40: {:.1} us (sink {sink:.3})", t0.elapsed().as_secs_f64() / reps as f64 * 1e6);
}

struct IllNormal {
    sd: Vec<f64>,
}
impl dgplvm::sampler::HmcTarget for IllNormal {
    fn logp_and_grad(&self, q: &[f64], grad: &mut [f64]) -> f64 {
        let mut lp = 0.0;
        for i in 0..q.len() {
            let z = q[i] / self.sd[i];
            lp -= 0.5 * z * z;
            grad[i] = -z / self.sd[i];
        }
        lp
    }
}

#[test]
#[ignore]
fn probe_gaussian_depths() {
    for (label, sds) in [
        ("iso-10", (0..10).map(|_| 1.0).collect::<Vec<f64>>()),
        ("ill-50", (0..50).map(|i| 10f64.powf(-2.0 * i as f64 / 49.0)).collect()),
        ("iso-250", (0..250).map(|_| 1.0).collect()),
    ] {
        let dim = sds.len();
        let target = IllNormal { sd: sds };
        let sc = SamplerConfig {
            n_iterations: 1500,
            n_warmup: 1000,
            seed: 5,
            ..Default::default()
        };
        let out = dgplvm::sampler::sample(&target, dim, &sc).unwrap();
        let mean_depth = out.tree_depths.iter().sum::<usize>() as f64 / out.tree_depths.len() as f64;
        let acc = out.accept_stats.iter().sum::<f64>() / out.accept_stats.len() as f64;
        println!(
            "{label}: mean depth {mean_depth:.2}, accept {acc:.3}, div {}",
            out.divergences
        );
    }
}


#[test]
#[ignore]
fn probe_geometry_grid() {
    let cfg = ScenarioConfig {
        scenario: Scenario::Gp,
        seed: 3,
        ..Default::default()
    };
    let trial = simulate(&cfg).unwrap();
    let cases: Vec<(&str, VariantFlags, usize, f64, f64)> = vec![
        ("full 1e-4", VariantFlags::full(), 5, 0.8, 1e-4),
        ("no-deriv 1e-4", VariantFlags::new(false, false, true, true).unwrap(), 5, 0.8, 1e-4),
        ("unscaled 1e-4", VariantFlags::new(true, false, true, true).unwrap(), 5, 0.8, 1e-4),
        ("full 1e-5", VariantFlags::full(), 5, 0.8, 1e-5),
    ];
    for (label, variant, d, ta, jitter) in cases {
        let mut config = variant
            .to_model_config(KernelFamily::SquaredExponential, 20, d, priors())
            .unwrap();
        config.jitter = jitter;
        let sc = SamplerConfig {
            n_iterations: 1300,
            n_warmup: 1000,
            target_accept: ta,
            seed: 17,
            ..Default::default()
        };
        let t0 = std::time::Instant::now();
        match fit_single(&config, &trial.dataset, &sc, 1, None) {
            Ok(fit) => {
                let depths = &fit.chains[0].tree_depths;
                let mean_depth =
                    depths.iter().sum::<usize>() as f64 / depths.len() as f64;
                let acc = fit.chains[0].accept_stats.iter().sum::<f64>()
                    / fit.chains[0].accept_stats.len() as f64;
                let x_true = trial.truth.x_true.clone();
                let names = fit.param_names().to_vec();
                let stacked = fit.stacked_draws();
                let mut rmse_sum = 0.0;
                let mut rhat_max: f64 = 0.0;
                let mut ess_min = f64::INFINITY;
                for i in 0..20 {
                    let ix = names.iter().position(|p| p == &format!("x[{}]", i + 1)).unwrap();
                    let col = stacked.column(ix);
                    let mse = col.iter().map(|v| (v - x_true[i]) * (v - x_true[i])).sum::<f64>()
                        / col.len() as f64;
                    rmse_sum += mse.sqrt();
                    let p = &fit.summary.params[ix];
                    rhat_max = rhat_max.max(p.rhat.unwrap_or(f64::NAN));
                    ess_min = ess_min
                        .min(p.bulk_ess.unwrap_or(0.0))
                        .min(p.tail_ess.unwrap_or(0.0));
                }
                println!(
                    "{label}: {:.0}s depth {mean_depth:.1} accept {acc:.2} div {} rmse_x {:.3} max_rhat {rhat_max:.3} min_ess {ess_min:.0}",
                    t0.elapsed().as_secs_f64(),
                    fit.summary.divergences,
                    rmse_sum / 20.0
                );
            }
            Err(e) => println!("{label}: failed {e}"),
        }
    }
}
