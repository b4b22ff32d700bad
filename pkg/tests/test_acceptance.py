"""Acceptance criteria 1 to 11.

Each test records one PASS/FAIL line (printed in the pytest terminal summary)
before asserting. Criteria 4 and 8 do not hold for the method as defined.
They are marked as strict expected failures, so the measured numbers stay
visible and an unexpected pass is reported.
"""

import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from _oracles import policy_log_prob_ld, random_policy_case, random_value_case, value_ld
from fracpg import cli
from fracpg.bench import median_episodes, run_cells, variance_decay_fit, welch_t
from fracpg.config import load_config
from fracpg.envs import make_env
from fracpg.frac_math import gamma, gl_weight_asymptotic, gl_weights, gl_weights_direct
from fracpg.frac_td import FracTdConfig, FracTdState, kernel_fidelity_report, recursive_step
from fracpg.policy import central_difference, gradient_check, policy_for_env, score, value_grad
from fracpg.trainer import Algo, default_config, train

DATA = Path(__file__).parent / "data"
ALPHAS = (0.3, 0.5, 0.7, 0.9)
SEEDS = list(range(100, 120))  # disjoint from the seeds used to pick the hyperparameters
REINFORCE_LR = 1e-4


@pytest.fixture(scope="module")
def base_config():
    return load_config(DATA / "cartpole_acceptance.cfg")


# ------------------------------------------------------------ numerics


def test_c01_gamma_accuracy(acceptance, gamma_reference):
    t0 = time.perf_counter()
    worst = max(abs(gamma(z) - ref) / abs(ref) for z, ref in gamma_reference)
    elapsed = time.perf_counter() - t0
    ok = len(gamma_reference) == 200 and worst < 2e-10 and elapsed < 1.0
    acceptance(1, "gamma accuracy", ok, f"max rel err {worst:.2e} (< 2e-10) over {len(gamma_reference)} points, {elapsed:.3f}s")
    assert ok


def test_c02_weight_recurrence(acceptance):
    t0 = time.perf_counter()
    worst = 0.0
    for a in ALPHAS:
        rec = gl_weights(a, 10_000).weights
        direct = gl_weights_direct(a, 10_000)
        worst = max(worst, float(np.max(np.abs(rec - direct) / np.abs(direct))))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-10 and elapsed < 1.0
    acceptance(2, "weight recurrence vs gamma-ratio form", ok, f"max rel dev {worst:.2e} (<= 1e-10), {elapsed:.3f}s")
    assert ok


def test_c03_asymptotics(acceptance):
    ratios = {}
    for a in ALPHAS:
        w = gl_weights(a, 1000).weights
        err = {k: abs(gl_weight_asymptotic(a, k) - w[k]) / abs(w[k]) for k in (100, 1000)}
        ratios[a] = err[1000] / err[100]
    ok = all(r <= 0.2 for r in ratios.values())
    detail = ", ".join(f"a={a}: {r:.4f}" for a, r in ratios.items())
    acceptance(3, "two-term asymptote error ratio k=1000/k=100", ok, f"{detail} (each <= 0.2)")
    assert ok


@pytest.mark.xfail(strict=True, reason="the recursion's error vs the exact convolution grows with t; see README")
def test_c04_recursion_fidelity(acceptance):
    t0 = time.perf_counter()
    best = {}
    for a in (0.5, 0.7):
        rep = kernel_fidelity_report(a, horizon=10_000, seeds=100, timing=False)
        best[a] = (rep.best_variant, rep.best_slope)
    elapsed = time.perf_counter() - t0
    ok = all(slope <= -(a + 0.5) for a, (_, slope) in best.items()) and elapsed < 120
    detail = "; ".join(f"a={a}: best {v} slope {s:+.3f} (target <= {-(a + 0.5):+.2f})" for a, (v, s) in best.items())
    acceptance(4, "recursion fidelity decay slope", ok, f"{detail}; {elapsed:.1f}s")
    assert ok


def test_c06_constant_cost_per_step(acceptance):
    rep = kernel_fidelity_report(0.5, horizon=10_000, seeds=1)
    rec = {name: rep.timing_ratio(name) for name in rep.slopes}
    naive = rep.timing_ratio("naive")
    cfg = FracTdConfig(0.5)
    state = FracTdState()
    size0 = sys.getsizeof(state)
    for d in np.random.default_rng(0).uniform(-1, 1, 10_000):
        state, _ = recursive_step(state, float(d), cfg)
    const_size = sys.getsizeof(state) == size0 and not hasattr(state, "__dict__")
    worst = max(rec.values())
    ok = worst <= 1.2 and naive > 5.0 and const_size
    acceptance(
        6,
        "O(1) recursive step",
        ok,
        f"worst recursive last/first decile time {worst:.2f} (<= 1.2), naive {naive:.1f}x (> 5), "
        f"state size {size0} B constant: {const_size}",
    )
    assert ok


def test_c07_gradient_correctness(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst_score = worst_value = 0.0
    envs = [make_env(n).spec for n in ("cartpole", "mountaincar", "pendulum")]
    for i in range(100):
        spec = envs[i % 3]
        arch = policy_for_env(spec)
        p, obs, a = random_policy_case(rng, arch)
        num = central_difference(lambda t: policy_log_prob_ld(arch, t, obs, a), p.theta, dtype=np.longdouble)
        worst_score = max(worst_score, gradient_check(score(p, obs, a), num))
        vp, vobs = random_value_case(rng, spec.obs_dim, arch.hidden)
        num = central_difference(lambda f: value_ld(spec.obs_dim, arch.hidden, f, vobs), vp.phi, dtype=np.longdouble)
        worst_value = max(worst_value, gradient_check(value_grad(vp, vobs), num))
    elapsed = time.perf_counter() - t0
    ok = worst_score <= 1e-5 and worst_value <= 1e-5 and elapsed < 10
    acceptance(
        7,
        "analytic gradients vs central differences",
        ok,
        f"worst rel err score {worst_score:.1e}, value {worst_value:.1e} (<= 1e-5) at 100 points each, {elapsed:.1f}s",
    )
    assert ok


def test_c11_statistics(acceptance):
    rng = np.random.default_rng(0)

    def standardized(mean):
        x = rng.normal(size=20)
        return (x - x.mean()) / x.std(ddof=1) + mean

    res = welch_t(standardized(0.0), standardized(1.0))
    t = np.arange(1, 2001)
    slopes = {}
    for target in (-0.5, -0.7):
        v = t**target * (1 + 0.01 * rng.normal(size=t.size))
        slopes[target] = variance_decay_fit(np.column_stack([t, v]))[0]
    ok = abs(res.t + 3.162) <= 1e-3 and abs(res.dof - 38) <= 1e-3 and all(abs(s - k) <= 0.05 for k, s in slopes.items())
    acceptance(
        11,
        "statistics",
        ok,
        f"Welch t {res.t:.4f} dof {res.dof:.3f}; decay slopes "
        + ", ".join(f"{s:+.4f} (target {k})" for k, s in slopes.items()),
    )
    assert ok


def test_c10_determinism(acceptance, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("[run]\nenv = cartpole\nmax_episodes = 40\n[fractional]\nalpha = 0.7\n")
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert cli.main(["train", "--config", str(cfg), "--seed", "7", "--out", str(out)]) == 0
        outs.append((out / "metrics.csv").read_bytes())
    pend = default_config("pendulum", max_episodes=5, seed=3)
    same_pend = train(pend).rows == train(pend).rows
    ok = outs[0] == outs[1] and same_pend
    acceptance(10, "determinism", ok, f"metrics CSVs bit-identical: {outs[0] == outs[1]} ({len(outs[0])} bytes); pendulum rows equal: {same_pend}")
    assert ok


# --------------------------------------------------------- training runs


@pytest.fixture(scope="module")
def variance_cells(base_config):
    cells = {
        "fpg": replace(base_config, algo=Algo.FPG, alpha=0.7, max_episodes=300),
        "a2c": replace(base_config, algo=Algo.A2C, max_episodes=300),
    }
    t0 = time.perf_counter()
    out = run_cells(cells, SEEDS)
    return out, time.perf_counter() - t0


@pytest.fixture(scope="module")
def efficiency_cells(base_config):
    base = replace(base_config, stop_at_threshold=True, max_episodes=800)
    cells = {
        "fpg": replace(base, algo=Algo.FPG),
        "reinforce": replace(base, algo=Algo.REINFORCE, beta_theta=REINFORCE_LR),
    }
    t0 = time.perf_counter()
    out = run_cells(cells, SEEDS)
    return out, time.perf_counter() - t0


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="the critic driven by the fractional error keeps TD-errors large; see README")
def test_c08_variance_reduction(acceptance, variance_cells):
    cells, elapsed = variance_cells
    fpg, a2c = cells["fpg"].final_third_grad_var(), cells["a2c"].final_third_grad_var()
    res = welch_t(fpg, a2c)
    ok = res.p_less < 0.05 and fpg.mean() < a2c.mean() and elapsed < 20 * 60 and not (cells["fpg"].errors or cells["a2c"].errors)
    acceptance(
        8,
        "gradient variance FPG < A2C, CartPole, 20 seeds",
        ok,
        f"final-third mean {fpg.mean():.4g} vs {a2c.mean():.4g} (ratio {fpg.mean() / a2c.mean():.3f}), "
        f"one-sided Welch p {res.p_less:.2e} (< 0.05), {elapsed / 60:.1f} min",
    )
    assert ok


@pytest.mark.slow
def test_c09_sample_efficiency(acceptance, efficiency_cells):
    cells, elapsed = efficiency_cells
    threshold = make_env("cartpole").spec.solved_threshold
    ett = {k: c.episodes_to_threshold(threshold) for k, c in cells.items()}
    med = {k: median_episodes(v, 800) for k, v in ett.items()}
    solved = {k: sum(x is not None for x in v) for k, v in ett.items()}
    ok = med["fpg"] < med["reinforce"] and med["fpg"] <= 800 and elapsed < 30 * 60
    acceptance(
        9,
        "episodes to 200: FPG median < REINFORCE median, FPG <= 800",
        ok,
        f"FPG median {med['fpg']:.1f} ({solved['fpg']}/20 solved), REINFORCE median {med['reinforce']:.1f} "
        f"({solved['reinforce']}/20 solved; unsolved counted as 801), {elapsed / 60:.1f} min",
    )
    assert ok


@pytest.mark.slow
def test_c05_bound_never_violated(acceptance, variance_cells, efficiency_cells):
    checked = [variance_cells[0]["fpg"], efficiency_cells[0]["fpg"]]
    violations = sum(c.bound_violations for c in checked)
    runs = sum(len(c.runs) for c in checked)
    steps = sum(r.steps for c in checked for rows in c.runs for r in rows)
    for env in ("mountaincar", "pendulum"):
        art = train(default_config(env, max_episodes=5, seed=1))
        violations += art.bound_violations
        runs += 1
        steps += sum(r.steps for r in art.rows)
    ok = violations == 0
    acceptance(5, "fractional TD-error bound", ok, f"{violations} violations over {runs} clipped runs, {steps} steps")
    assert ok
