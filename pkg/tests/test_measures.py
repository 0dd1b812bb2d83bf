import json
import math

import numpy as np
import pytest

from simlab.cli import to_json
from simlab.euler import EulerParams
from simlab.measures import (
    BetaRangeError,
    MomentReport,
    SamplingConfig,
    SweepResult,
    check_exp_bound,
    check_factorial_bound,
    energy_balance_residual,
    euler_invariance_test,
    exp_moment_bound,
    integrated_autocorr_time,
    inviscid_sweep,
    run_stationary,
)
from simlab.solver import SolverParams
from simlab.spectral import make_lattice, random_solenoidal
from simlab.stochastic import NoiseSpec, ou_stationary_moment, trace_in_sobolev


@pytest.fixture(scope="module")
def lat():
    return make_lattice(16, 2 * np.pi)


def test_zero_noise_gives_zero_moments(lat):
    p = SolverParams(0.2, 2.0, 0.1, lat)
    rep = run_stationary(p, NoiseSpec(0.0), 1.0, 2.0, 3, 0)
    assert rep.m2_ha1 == (0.0, 0.0)
    assert all(v == 0.0 for v, _ in rep.m2n_h1.values())
    for row in check_factorial_bound(rep):
        assert row["passed"]


def test_linear_model_matches_ou_closed_form(lat):
    noise = NoiseSpec()
    p = SolverParams(0.5, 2.0, 0.1, lat, nonlinear=False)
    rep = run_stationary(p, noise, 10.0, 100.0, 32, 1)
    target = ou_stationary_moment(noise, 0.5, 2.0, 3.0, lat)
    v, se = rep.m2_ha1
    assert abs(v - target) <= 3 * se


def test_linear_model_gaussian_moments(lat):
    # the OU field is Gaussian: E|X|^4 = (E|X|^2)^2 + 2 sum_j s_j^2 over the real modes
    noise = NoiseSpec()
    p = SolverParams(0.5, 2.0, 0.1, lat, nonlinear=False)
    rep = run_stationary(p, noise, 10.0, 100.0, 32, 2)
    var = noise.sigma(lat) ** 2 * lat.weight(1.0) / (2 * lat.weight(2.0))
    per_mode = list(var[var > 0]) + [var[0, 0]]  # k = 0 carries two real modes
    m2 = ou_stationary_moment(noise, 0.5, 2.0, 1.0, lat)
    assert m2 == pytest.approx(sum(per_mode), rel=1e-12)
    m4 = m2**2 + 2 * sum(x * x for x in per_mode)
    v, se = rep.m2n_h1[2]
    assert abs(v - m4) <= 4 * se
    assert rep.m2n_h1[1][0] <= rep.c_alpha_target


def test_report_serialisation_roundtrip(lat):
    p = SolverParams(0.5, 2.0, 0.1, lat)
    rep = run_stationary(p, NoiseSpec(), 2.0, 5.0, 4, 3)
    back = MomentReport.from_dict(json.loads(to_json(rep.to_dict())))
    assert to_json(back.to_dict()) == to_json(rep.to_dict())
    rows = rep.rows()
    assert rows[0][:2] == (0.5, "m2_ha1")


def test_results_do_not_depend_on_block_size(lat):
    p = SolverParams(0.5, 2.0, 0.1, lat)
    a = run_stationary(p, NoiseSpec(), 1.0, 3.0, 4, 4, block=7)
    b = run_stationary(p, NoiseSpec(), 1.0, 3.0, 4, 4, block=64)
    assert to_json(a.to_dict()) == to_json(b.to_dict())
    assert np.array_equal(a.terminal.coeffs, b.terminal.coeffs)


def test_energy_residual_scale_invariance(lat):
    p = SolverParams(0.5, 2.0, 0.1, lat, nonlinear=False)
    a = run_stationary(p, NoiseSpec(1.0), 5.0, 20.0, 8, 5)
    b = run_stationary(p, NoiseSpec(2.0), 5.0, 20.0, 8, 5)
    assert b.m2_ha1[0] == pytest.approx(4 * a.m2_ha1[0], rel=1e-12)
    assert energy_balance_residual(a, NoiseSpec(1.0), lat) == pytest.approx(
        energy_balance_residual(b, NoiseSpec(2.0), lat), rel=1e-10)
    with pytest.raises(ValueError):
        energy_balance_residual(a, NoiseSpec(0.0), lat)


def test_exp_bound_formula_and_guard():
    c = 1.7
    assert exp_moment_bound(0.0, c) == 2.0
    assert exp_moment_bound(1 / (4 * c), c) == pytest.approx(2 * math.e, rel=1e-15)
    with pytest.raises(BetaRangeError):
        exp_moment_bound(1 / (2 * c), c)
    with pytest.raises(BetaRangeError):
        exp_moment_bound(-0.1, c)


def test_exp_bound_check_rejects_unknown_beta(lat):
    p = SolverParams(0.5, 2.0, 0.1, lat)
    rep = run_stationary(p, NoiseSpec(), 1.0, 2.0, 2, 0)
    assert all(r["passed"] for r in check_exp_bound(rep))
    with pytest.raises(KeyError):
        check_exp_bound(rep, [1e-6])


def test_autocorrelation_time_of_ar1():
    rng = np.random.default_rng(0)
    phi = 0.8
    x = np.zeros((20000, 4))
    for t in range(1, len(x)):
        x[t] = phi * x[t - 1] + rng.standard_normal(4)
    tau = integrated_autocorr_time(x)
    assert tau == pytest.approx((1 + phi) / (1 - phi), rel=0.15)


def test_sampling_config_scaling():
    s = SamplingConfig(horizon=100.0, n_replicas=4, horizon_ref_nu=0.1)
    assert s.horizon_for(0.02) == pytest.approx(500.0)
    assert s.burn_in_for(0.5) == pytest.approx(40.0)


def test_sweep_requires_decreasing_nu(lat):
    p = SolverParams(0.5, 2.0, 0.1, lat)
    s = SamplingConfig(horizon=1.0, n_replicas=2, burn_in=0.5)
    with pytest.raises(ValueError):
        inviscid_sweep([0.1, 0.5], p, NoiseSpec(), s)
    with pytest.raises(ValueError):
        inviscid_sweep([], p, NoiseSpec(), s)
    res = inviscid_sweep([0.5], p, NoiseSpec(), s)
    assert len(res.reports) == 1 and res.flatness() == []
    with pytest.raises(ValueError):
        SweepResult([0.1, 0.2], [])


def test_invariance_test_null_rows(lat):
    ens = random_solenoidal(lat, np.random.default_rng(1), (40,), slope=3.0)
    rows = euler_invariance_test(ens, [0.0, 0.5], EulerParams(0.01, lat), 2.0)
    zero = [r for r in rows if r["t"] == 0.0]
    assert all(r["standardized_drift"] == 0.0 for r in zero)
    h1 = [r for r in rows if r["quantity"] == "m2_h1"]
    assert all(abs(r["standardized_drift"]) < 1e-6 for r in h1)
    with pytest.raises(ValueError):
        euler_invariance_test(ens[:10], [1.0], EulerParams(0.01, lat), 2.0)


def test_trace_target_recorded(lat):
    p = SolverParams(0.5, 2.0, 0.1, lat)
    rep = run_stationary(p, NoiseSpec(), 1.0, 1.0, 2, 0)
    assert rep.c_alpha_target == pytest.approx(trace_in_sobolev(NoiseSpec(), 1.0, lat) / 2)
