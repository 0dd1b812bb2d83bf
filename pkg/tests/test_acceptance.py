"""Acceptance criteria 1-10 at their stated tolerances.

Each test records one PASS/FAIL line; conftest prints them together at the
end of the pytest run.  Run alone with ``pytest tests/test_acceptance.py -v``
(about 10 minutes, dominated by the three-nu stationary sweep).
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from simlab.cli import main
from simlab.measures import exp_moment_bound, BetaRangeError
from simlab.solver import SolverParams, ito_balance_audit, ou_path, reconstruct_X, simulate
from simlab.spectral import SpectralField, make_lattice, random_solenoidal, sobolev_norm, weighted_inner
from simlab.stochastic import NoiseSpec, coarsen_increments, ou_exact_step, sample_increments
from simlab.verify import run_identity_suite

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
ACCEPTANCE_RESULTS: dict = {}


def record(n: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_RESULTS[n] = (bool(passed), detail)
    line = f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    print(line)


@pytest.fixture(scope="module")
def sweep(tmp_path_factory):
    """The nu in {0.5, 0.1, 0.02} stationary sweep shared by criteria 3, 4, 5 and 9."""
    out = tmp_path_factory.mktemp("sweep")
    t0 = time.perf_counter()
    code = main(["sweep", "--config", str(CONFIGS / "sweep.toml"), "--out", str(out)])
    elapsed = time.perf_counter() - t0
    report = json.loads((out / "report.json").read_text())
    return {"code": code, "report": report, "elapsed": elapsed}


def _checks(report, prefix):
    return [c for c in report["checks"] if c["name"].startswith(prefix)]


def test_criterion_01_identity_suite():
    t0 = time.perf_counter()
    suite = run_identity_suite(32)
    elapsed = time.perf_counter() - t0
    worst = {c["name"]: c["residual"] for c in suite["checks"]}
    tol = {
        "leray_idempotent": 1e-12,
        "leray_self_adjoint": 1e-12,
        "A_alpha_norm_shift": 1e-12,
        "semigroup_additivity": 1e-12,
        "cancel_<B(u),u>_advective": 1e-11,
        "cancel_<B(u),Au>_advective": 1e-11,
        "B_vs_convolution_oracle_N16": 1e-12,
        "interpolation_inequality": 0.0,
    }
    ok = all(worst[k] <= v for k, v in tol.items()) and suite["passed"] and elapsed < 30
    record(1, ok, f"max residual {max(worst[k] for k in tol if k != 'interpolation_inequality'):.2e}, "
                  f"interpolation violations {int(worst['interpolation_inequality'])}, {elapsed:.1f}s")
    assert ok


def _ou_mode_stats(nu, lat, noise, alpha, n_samples, chunk, seed):
    """Per-mode L^2 |c_k|^2 over independent draws of the stationary law."""
    sigma2 = noise.sigma(lat) ** 2
    lam = lat.weight(alpha)
    m1, m2 = lat.m
    rep = (sigma2 > 0) & ((m2 > 0) | ((m2 == 0) & (m1 >= 0)))
    target = sigma2[rep] / (2 * lam[rep]) * np.where((m1[rep] == 0) & (m2[rep] == 0), 2.0, 1.0)
    g = np.random.default_rng(seed)
    s1 = np.zeros(target.size)
    s2 = np.zeros(target.size)
    # from rest, one exact step with nu dt = 20 lands within e^-40 of the stationary law
    dt = 20.0 / nu
    for _ in range(n_samples // chunk):
        z = ou_exact_step(SpectralField.zeros(lat, (chunk,)), dt, nu, alpha, noise, g)
        x = lat.volume * (np.abs(z.coeffs) ** 2).sum(axis=1)[:, rep]
        s1 += x.sum(axis=0)
        s2 += (x**2).sum(axis=0)
    mean = s1 / n_samples
    se = np.sqrt((s2 / n_samples - mean**2) / (n_samples - 1))
    return mean, se, target


def test_criterion_02_ou_exactness():
    t0 = time.perf_counter()
    lat = make_lattice(32, 2 * np.pi)
    noise = NoiseSpec()
    worst = 0.0
    means = []
    for nu, seed in ((0.1, 1), (1.0, 2)):
        mean, se, target = _ou_mode_stats(nu, lat, noise, 2.0, 100_000, 2000, seed)
        worst = max(worst, float(np.max(np.abs(mean - target) / se)))
        means.append((mean, se))
    (a, sa), (b, sb) = means
    cross = float(np.max(np.abs(a - b) / np.hypot(sa, sb)))
    elapsed = time.perf_counter() - t0
    ok = worst <= 4.0 and cross <= 4.0 and elapsed < 120
    record(2, ok, f"max |mean - sigma^2/(2 lambda)| = {worst:.2f} SE over {a.size} modes, "
                  f"nu vs 10 nu max {cross:.2f} SE, {elapsed:.0f}s")
    assert ok


def test_criterion_03_energy_balance(sweep):
    rep = sweep["report"]
    res = _checks(rep, "energy_balance")
    flat = _checks(rep, "flatness")
    vals = ", ".join(f"nu={c['nu']:g}: {100 * c['value']:.2f}%" for c in res)
    ok = all(c["passed"] for c in res + flat) and len(res) == 3 and sweep["elapsed"] <= 1800
    record(3, ok, f"residuals {vals}; pairwise flatness {'ok' if all(c['passed'] for c in flat) else 'FAILED'}; "
                  f"sweep {sweep['elapsed'] / 60:.1f} min")
    assert ok


def test_criterion_04_factorial_bounds(sweep):
    rows = _checks(sweep["report"], "factorial_bound")
    margins = [1 - c["value"] / c["bound"] for c in rows]
    ok = len(rows) == 3 * len(sweep['report']['sweep']['nu_list']) and all(c["passed"] for c in rows)
    record(4, ok, f"{sum(c['passed'] for c in rows)}/{len(rows)} (nu, n) pairs within bound + 3 SE; "
                  f"min relative margin {min(margins):.2f}")
    assert ok


def test_criterion_05_exponential_bounds(sweep):
    rows = _checks(sweep["report"], "exp_bound")
    c_alpha = sweep["report"]["sweep"]["reports"][0]["c_alpha_target"]
    try:
        exp_moment_bound(1.0 / (2.0 * c_alpha), c_alpha)
        guard = False
    except BetaRangeError:
        guard = True
    ok = len(rows) == 3 * len(sweep['report']['sweep']['nu_list']) and all(c["passed"] for c in rows) and guard
    record(5, ok, f"{sum(c['passed'] for c in rows)}/{len(rows)} (nu, beta) pairs within bound + 3 SE; "
                  f"guard at 2 beta C = 1 {'fires' if guard else 'MISSING'}")
    assert ok


def test_criterion_06_pathwise_decomposition():
    lat = make_lattice(32, 2 * np.pi)
    noise = NoiseSpec()
    nu, alpha, reps = 0.1, 2.0, 4
    x = random_solenoidal(lat, np.random.default_rng(3), slope=3.0)
    x = x * (3.0 / sobolev_norm(x, 0.0))
    xs = SpectralField(lat, np.broadcast_to(x.coeffs, (reps,) + x.coeffs.shape).copy())
    dt = 0.0025
    g = np.random.default_rng(0)
    w, z = map(np.array, zip(*(sample_increments(lat, noise, nu, alpha, dt, g, (reps,)) for _ in range(400))))
    errors = []
    for _ in range(4):
        p = SolverParams(nu, alpha, dt, lat)
        direct = simulate(xs, p, noise, None, len(z), increments=(w, z))
        recon = reconstruct_X(xs, ou_path(z, p), p)
        diff = direct.states - recon.states
        sup_h1 = np.sqrt(weighted_inner(lat, diff, diff, lat.weight(1.0))).max(axis=0)
        errors.append((dt, float(sup_h1.mean())))
        w, z = coarsen_increments(w, z, lat, nu, alpha, dt)
        dt *= 2
    ratios = [errors[i + 1][1] / errors[i][1] for i in range(len(errors) - 1)]
    ok = all(1.6 <= r <= 2.4 for r in ratios)
    record(6, ok, "sup_t H1 error ratios (2dt / dt) " + ", ".join(f"{r:.3f}" for r in ratios)
           + f" for dt {errors[0][0]:g}..{errors[-1][0]:g}")
    assert ok


def test_criterion_07_ito_audit():
    lat = make_lattice(32, 2 * np.pi)
    noise = NoiseSpec()
    p = SolverParams(0.1, 2.0, 0.01, lat)
    g = np.random.default_rng(7)
    residual, nl_rel = [], 0.0
    for _ in range(4):
        x0 = SpectralField.zeros(lat, (25,))
        tr = simulate(x0, p, noise, g, 100)
        rep = ito_balance_audit(tr, p, noise, 1.0)
        residual.extend(np.atleast_1d(rep.residual))
        nl_rel = max(nl_rel, float(np.max(np.abs(rep.nonlinear) / rep.nonlinear_scale)))
    r = np.array(residual)
    mean, se = float(r.mean()), float(r.std(ddof=1) / math.sqrt(r.size))
    ok = r.size == 100 and abs(mean) <= 3 * se and nl_rel <= 1e-10
    record(7, ok, f"residual mean {mean:.3e} +/- {se:.3e} ({abs(mean) / se:.2f} SE) over {r.size} replicas; "
                  f"B term {nl_rel:.1e} of scale")
    assert ok


def test_criterion_08_euler_conservation(tmp_path):
    out = tmp_path / "euler"
    main(["euler-check", "--config", str(CONFIGS / "euler_check.toml"), "--out", str(out)])
    rep = json.loads((out / "report.json").read_text())
    drift, exps = rep["drift"], rep["fit_exponent"]
    ladder = [r["dt"] for r in rep["refinement"]]
    ok = rep["passed"]
    record(8, ok, f"drift l2 {drift['l2']:.1e}, h1 {drift['h1']:.1e} at dt={rep['dt']:g}; "
                  f"fit exponent l2 {exps['l2']:.2f}, h1 {exps['h1']:.2f} on dt {ladder} (band 3.5..4.5)")
    assert drift["l2"] <= 1e-8 and drift["h1"] <= 1e-8
    assert 3.5 <= exps["l2"] <= 4.5 and 3.5 <= exps["h1"] <= 4.5


def test_criterion_09_euler_invariance(sweep):
    rep = sweep["report"]
    rows = rep["sweep"]["euler_invariance"]
    n_ens = min(rep["config"]["euler"]["n_snapshots"], rep["sweep"]["reports"][-1]["n_replicas"])
    worst = max(abs(r["standardized_drift"]) for r in rows)
    ts = sorted({r["t"] for r in rows})
    ok = n_ens >= 30 and ts == [1.0, 5.0] and all(abs(r["standardized_drift"]) <= 3 for r in rows)
    detail = "; ".join(
        f"t={t:g}: " + ", ".join(f"{r['quantity']} {r['standardized_drift']:+.2f}" for r in rows if r["t"] == t)
        for t in ts
    )
    record(9, ok, f"{n_ens} independent snapshots at nu=0.02; {detail}; max |drift| {worst:.2f}")
    assert ok


def test_criterion_10_reproducibility(tmp_path):
    cfg = tmp_path / "repro.toml"
    cfg.write_text((CONFIGS / "simulate.toml").read_text().replace("horizon = 200.0", "horizon = 20.0"))
    trees = []
    for name in ("a", "b"):
        main(["simulate", "--config", str(cfg), "--out", str(tmp_path / name)])
        root = tmp_path / name
        trees.append({p.relative_to(root).as_posix(): p.read_bytes()
                      for p in sorted(root.rglob("*")) if p.suffix in (".csv", ".json", ".toml")})
    same = trees[0] == trees[1]
    ok = same and len(trees[0]) >= 5
    record(10, ok, f"{len(trees[0])} CSV/JSON artifacts byte-identical across two runs: {same}")
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
