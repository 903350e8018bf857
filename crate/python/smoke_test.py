#!/usr/bin/env python3
"""Build-and-import smoke test for the dgplvm_py extension module.

Locates (or builds) the cdylib produced by `cargo build -p dgplvm-py`,
stages it under the importable name, and exercises the main entry points:
kernel evaluation, scenario simulation, a short model fit and the MCMC
diagnostics.
"""

import math
import random
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def ensure_module():
    try:
        import dgplvm_py  # noqa: F401

        return
    except ImportError:
        pass
    candidates = [
        p
        for profile in ("release", "debug")
        for p in [ROOT / "target" / profile / "libdgplvm_py.so"]
        if p.exists()
    ]
    if not candidates:
        print("building dgplvm-py (cargo build --release -p dgplvm-py)...")
        subprocess.run(
            ["cargo", "build", "--release", "-p", "dgplvm-py"], cwd=ROOT, check=True
        )
        candidates = [ROOT / "target" / "release" / "libdgplvm_py.so"]
    lib = max(candidates, key=lambda p: p.stat().st_mtime)
    stage = Path(tempfile.mkdtemp(prefix="dgplvm_py_"))
    shutil.copy2(lib, stage / "dgplvm_py.so")
    sys.path.insert(0, str(stage))


def main():
    ensure_module()
    import dgplvm_py as dg

    # kernel blocks at zero distance
    assert abs(dg.kernel_block("se", 1.0, 2.0, 1.0, 0.3, 0.3, "k00") - 4.0) < 1e-12
    assert dg.kernel_block("se", 1.0, 2.0, 1.0, 0.3, 0.3, "k01") == 0.0
    assert abs(dg.kernel_block("matern32", 1.0, 1.0, 2.0, 0.0, 0.0, "k11") - 12.0) < 1e-12

    cov = dg.build_joint_cov("matern52", 0.8, 1.0, 0.5, [0.5, 1.0, 1.5])
    assert len(cov) == 6 and len(cov[0]) == 6
    assert abs(cov[0][0] - (1.0 + 1e-6)) < 1e-12

    # simulate a small trial and fit the full model briefly
    trial = dg.simulate(scenario="gp", n_obs=10, n_dims=2, seed=7)
    assert len(trial.y) == 10 and len(trial.y[0]) == 2
    assert all(abs(a - 3.0 * b) < 1e-12 for a, b in zip(trial.alpha, trial.alpha_prime))

    fit = dg.fit(
        trial.x_obs,
        trial.y,
        trial.y_prime,
        iterations=600,
        warmup=300,
        seed=1,
    )
    assert "x[1]" in fit.param_names and "rho[1]" in fit.param_names
    assert len(fit.draws) == 300

    x_cols = [fit.param_names.index(f"x[{i + 1}]") for i in range(10)]
    x_draws = [[row[c] for c in x_cols] for row in fit.draws]
    _, posterior_rmse = dg.rmse_latent(x_draws, trial.x_true)
    obs_rmse = math.sqrt(
        sum((o - t) ** 2 for o, t in zip(trial.x_obs, trial.x_true)) / 10
    )
    print(f"posterior rmse {posterior_rmse:.3f} vs observed-input rmse {obs_rmse:.3f}")

    # diagnostics on an iid chain
    rng = random.Random(0)
    chain = [rng.gauss(0, 1) for _ in range(2000)]
    assert dg.split_rhat([chain]) < 1.02
    ess = dg.bulk_ess([chain])
    assert 1500 < ess < 2500, ess
    assert dg.tail_ess([chain]) > 500

    bench = dg.prior_rmse_benchmark(trial.x_true, 0.3, n_mc=100_000, seed=1)
    assert abs(bench - 0.3 * math.sqrt(2)) < 0.02, bench

    print("dgplvm_py smoke test passed")


if __name__ == "__main__":
    main()
