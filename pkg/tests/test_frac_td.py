import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fracpg.frac_math import gl_weights, stabilization_constants
from fracpg.frac_td import (
    ALL_VARIANTS,
    EtaVariant,
    FracTdConfig,
    FracTdState,
    MuVariant,
    exact_frac_td,
    fir_frac_td,
    kernel_fidelity_report,
    mu_weight,
    recursive_frac_td,
    recursive_step,
    td_error,
    theorem4_bound,
)


@pytest.mark.parametrize(
    "args, expected",
    [
        ((1.0, 0.0, 0.0, 0.99, False), 1.0),
        ((0.0, 10.0, 10.0, 1.0, False), 0.0),
        ((1.0, 5.0, 2.0, 0.9, True), -1.0),
    ],
)
def test_td_error(args, expected):
    assert td_error(*args) == expected


def test_td_error_rejects_bad_discount():
    with pytest.raises(ValueError):
        td_error(1.0, 0.0, 0.0, 0.0, False)


def test_exact_impulse_gives_weights():
    np.testing.assert_allclose(exact_frac_td([1, 0, 0, 0], 0.5), [1, -0.5, -0.125, -0.0625], atol=1e-15)


def test_exact_constant_sequence():
    np.testing.assert_allclose(exact_frac_td([2.0, 2.0, 2.0], 0.5), [2.0, 1.0, 0.75], atol=1e-15)


def test_exact_first_step_is_delta():
    assert exact_frac_td([3.25, 7.0], 0.4)[0] == 3.25


def test_exact_matches_brute_force_double_loop():
    rng = np.random.default_rng(1)
    d = rng.uniform(-1, 1, 60)
    w = gl_weights(0.35, 59).weights
    brute = [math.fsum(w[k] * d[t - k] for k in range(t + 1)) for t in range(60)]
    np.testing.assert_allclose(exact_frac_td(d, 0.35), brute, atol=1e-13)


def test_fir_full_window_is_bitwise_exact():
    d = np.random.default_rng(2).uniform(-1, 1, (3, 300))
    np.testing.assert_array_equal(fir_frac_td(d, 0.7, 300), exact_frac_td(d, 0.7))
    np.testing.assert_array_equal(fir_frac_td(d[0], 0.7, 10_000), exact_frac_td(d[0], 0.7))


def test_fir_window_one_is_identity():
    d = np.array([0.3, -1.0, 2.5, 4.0])
    np.testing.assert_array_equal(fir_frac_td(d, 0.6, 1), d)


def test_fir_window_two_impulse():
    np.testing.assert_allclose(fir_frac_td([1, 0, 0, 0], 0.5, 2), [1, -0.5, 0, 0], atol=1e-15)


def test_fir_bad_window():
    with pytest.raises(ValueError):
        fir_frac_td([1.0], 0.5, 0)


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(-5, 5, allow_nan=False), min_size=1, max_size=80),
    st.sampled_from([0.2, 0.5, 0.8]),
)
def test_oracle_bound_property(deltas, alpha):
    out = exact_frac_td(deltas, alpha)
    abs_w = np.cumsum(np.abs(gl_weights(alpha, len(deltas) - 1).weights))
    m = max(abs(x) for x in deltas)
    assert np.all(np.abs(out) <= m * abs_w + 1e-12)


# recursion -----------------------------------------------------------------


def test_first_step_gl_consistent():
    cfg = FracTdConfig(0.5, eta_variant=EtaVariant.GL_CONSISTENT, clipping_enabled=False)
    _, frac = recursive_step(FracTdState(), 2.0, cfg)
    assert frac == 2.0


@pytest.mark.parametrize("alpha", [0.01, 0.1, 0.5, 0.9, 0.99])
def test_clipping_constant_is_below_one(alpha):
    assert 0.0 < stabilization_constants(alpha).c_alpha < 1.0


@pytest.mark.parametrize("alpha", [0.3, 0.5, 0.7, 0.9])
def test_unit_first_weight_is_clipped(alpha):
    # c_alpha < 1, so with eta = 1 the first step exceeds the bound once kappa is small
    cfg = FracTdConfig(alpha, eta_variant=EtaVariant.GL_CONSISTENT)
    state, frac = recursive_step(FracTdState(), 2.0, cfg)
    assert frac == theorem4_bound(cfg.constants, 2.0, 0) < 2.0 and state.clip_events == 1


def test_first_step_gamma_reciprocal():
    cfg = FracTdConfig(0.5, eta_variant=EtaVariant.GAMMA_RECIPROCAL)
    _, frac = recursive_step(FracTdState(), 2.0, cfg)
    assert frac == pytest.approx(2 / math.sqrt(math.pi), abs=1e-9)


def test_mu_examples():
    alg = FracTdConfig(0.5, mu_variant=MuVariant.ALGORITHM)
    thm = FracTdConfig(0.5, mu_variant=MuVariant.THEOREM)
    der = FracTdConfig(0.5, mu_variant=MuVariant.DERIVATION)
    assert mu_weight(1, alg) == pytest.approx(math.sqrt(2), abs=1e-6)
    assert mu_weight(2, thm) == pytest.approx(math.sqrt(0.75), abs=1e-6)
    assert mu_weight(2, der) == 0.25
    assert mu_weight(1, der) == 0.0
    assert all(mu_weight(0, c) == 0.0 for c in (alg, thm, der))


@pytest.mark.parametrize("mu", list(MuVariant))
@pytest.mark.parametrize("alpha", [0.1, 0.5, 0.9])
def test_all_mu_variants_tend_to_one(mu, alpha):
    cfg = FracTdConfig(alpha, mu_variant=mu)
    for t in (10, 100, 1000, 10**5):
        assert abs(mu_weight(t, cfg) - 1.0) < 2 * (1 + alpha) / t


def test_recursion_formula_without_clipping():
    cfg = FracTdConfig(0.7, MuVariant.THEOREM, EtaVariant.GAMMA_RECIPROCAL, clipping_enabled=False)
    deltas = [0.5, -1.0, 0.25, 2.0]
    out = recursive_frac_td(deltas, cfg)
    prev = 0.0
    for t, d in enumerate(deltas):
        prev = cfg.eta * d + mu_weight(t, cfg) * prev
        assert out[t] == prev


def test_state_is_constant_size():
    cfg = FracTdConfig(0.6)
    state = FracTdState()
    names = [f.name for f in dataclasses.fields(FracTdState)]
    for d in np.random.default_rng(0).uniform(-1, 1, 2000):
        state, _ = recursive_step(state, float(d), cfg)
    assert [f.name for f in dataclasses.fields(state)] == names
    assert not hasattr(state, "__dict__")
    assert state.t == 2000


@pytest.mark.parametrize("mu, eta", ALL_VARIANTS)
def test_clipping_bound_holds_every_step(mu, eta):
    cfg = FracTdConfig(0.7, mu, eta, clipping_enabled=True)
    state = FracTdState()
    rng = np.random.default_rng(5)
    m = 0.0
    for t, d in enumerate(rng.normal(0, 3, 3000)):
        state, frac = recursive_step(state, float(d), cfg)
        m = max(m, abs(d))
        assert abs(frac) <= theorem4_bound(cfg.constants, m, t)
        assert state.prev_frac_delta == frac and state.max_abs_delta == m
    assert state.clip_events > 0


def test_clipping_preserves_sign_and_lands_on_bound():
    cfg = FracTdConfig(0.5, eta_variant=EtaVariant.GL_CONSISTENT)
    state, frac = recursive_step(FracTdState(), -4.0, cfg)
    bound = theorem4_bound(cfg.constants, 4.0, 0)
    assert frac == -bound and state.clip_events == 1


def test_clipping_disabled_leaves_value():
    cfg = FracTdConfig(0.5, eta_variant=EtaVariant.GL_CONSISTENT, clipping_enabled=False)
    _, frac = recursive_step(FracTdState(), -4.0, cfg)
    assert frac == -4.0


def test_zero_inputs_stay_zero():
    cfg = FracTdConfig(0.7)
    state, frac = recursive_step(FracTdState(), 0.0, cfg)
    assert frac == 0.0 and state.prev_frac_delta == 0.0


@pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
def test_non_finite_delta_rejected(bad):
    with pytest.raises(ValueError):
        recursive_step(FracTdState(), bad, FracTdConfig(0.5))


def test_config_rejects_bad_tolerance():
    with pytest.raises(ValueError):
        FracTdConfig(0.5, eps_tol=0.0)


def test_config_accepts_strings():
    cfg = FracTdConfig(0.5, "derivation", "gl_consistent")
    assert cfg.mu_variant is MuVariant.DERIVATION and cfg.eta == 1.0
    assert cfg.constants == stabilization_constants(0.5)


# fidelity report -----------------------------------------------------------


def test_report_requires_horizon():
    with pytest.raises(ValueError):
        kernel_fidelity_report(0.5, horizon=50, seeds=2, timing=False)


def test_report_shape_and_csv(tmp_path):
    rep = kernel_fidelity_report(0.5, horizon=200, seeds=4, timing=True)
    assert set(rep.slopes) == {f"{m.value}/{e.value}" for m, e in ALL_VARIANTS}
    assert all(len(e) == 200 for e in rep.errors.values())
    path = tmp_path / "r.csv"
    rep.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# alpha=0.5")
    assert lines[1] == "variant,t,abs_error,bound_value,step_time_ns"
    assert len(lines) == 2 + 200 * (len(ALL_VARIANTS) + 2)


def test_report_counts_no_violations_with_clipping():
    rep = kernel_fidelity_report(0.7, horizon=300, seeds=5, clipping_enabled=True, timing=False)
    assert rep.clip_violations == 0


def test_report_errors_match_direct_comparison():
    rep = kernel_fidelity_report(0.6, horizon=150, seeds=3, variants=[(MuVariant.THEOREM, EtaVariant.GAMMA_RECIPROCAL)], timing=False)
    deltas = np.random.default_rng(0).uniform(-1, 1, (3, 150))
    cfg = FracTdConfig(0.6, clipping_enabled=False)
    direct = np.mean([np.abs(recursive_frac_td(row, cfg) - exact_frac_td(row, 0.6)) for row in deltas], axis=0)
    np.testing.assert_allclose(rep.errors["theorem/gamma_reciprocal"], direct, rtol=1e-12, atol=1e-15)
