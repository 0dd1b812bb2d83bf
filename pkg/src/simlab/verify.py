"""Deterministic identity suite: projections, operators, cancellations, oracle agreement, bounds.

Every check is a pure function of fixed seeds, so the JSON it produces is
reproducible.  Residuals are relative unless the check says otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .measures import BetaRangeError, double_factorial, exp_moment_bound
from .nonlinearity import DealiasRule, quadratic_B, quadratic_B_coeffs
from .oracles import convolution_B
from .spectral import (
    Lattice,
    SpectralField,
    apply_A_alpha,
    hermitize,
    leray_project,
    make_lattice,
    random_solenoidal,
    semigroup_apply,
    sobolev_inner,
    sobolev_norm,
)
from .stochastic import NoiseSpec, ou_stationary_moment, trace_in_sobolev

__all__ = ["Check", "run_identity_suite"]


@dataclass
class Check:
    name: str
    residual: float
    tolerance: float
    detail: str = ""

    @property
    def passed(self) -> bool:
        return bool(self.residual <= self.tolerance)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "residual": float(self.residual),
            "tolerance": self.tolerance,
            "passed": self.passed,
            "detail": self.detail,
        }


def _raw_field(lat: Lattice, rng: np.random.Generator, batch=()) -> SpectralField:
    """Real but not solenoidal, for testing the projection itself."""
    n = lat.n_modes
    c = rng.standard_normal(batch + (2, n, n)) + 1j * rng.standard_normal(batch + (2, n, n))
    return SpectralField(lat, hermitize(lat, c * lat.weight(-1.0)))


def _rel(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(float(np.max(np.abs(b))), 1e-300))


def projection_checks(lat: Lattice, rng, n_fields: int = 20) -> list[Check]:
    u = _raw_field(lat, rng, (n_fields,))
    v = _raw_field(lat, rng, (n_fields,))
    pu = leray_project(u)
    idem = _rel(leray_project(pu).coeffs, pu.coeffs)
    lhs = sobolev_inner(pu, v, 0.0)
    rhs = sobolev_inner(u, leray_project(v), 0.0)
    scale = sobolev_norm(u, 0.0) * sobolev_norm(v, 0.0)
    adj = float(np.max(np.abs(lhs - rhs) / scale))
    div = max(pu.divergence_defect() / float(np.abs(u.coeffs).max() * math.sqrt(lat.k2.max())), 0.0)
    return [
        Check("leray_idempotent", idem, 1e-12, "max |PPu - Pu| / max |Pu|"),
        Check("leray_self_adjoint", adj, 1e-12, "|<Pu, v> - <u, Pv>| / (|u| |v|)"),
        Check("leray_divergence_free", div, 1e-12, "max |k . Pu| / (max|u| |k|max)"),
    ]


def operator_checks(lat: Lattice, rng, n_fields: int = 20) -> list[Check]:
    u = random_solenoidal(lat, rng, (n_fields,), slope=3.0)
    worst = 0.0
    for alpha, s in ((2.0, 0.0), (2.0, 1.0), (1.5, -1.0), (3.0, 0.5)):
        a = sobolev_norm(apply_A_alpha(u, alpha), s)
        b = sobolev_norm(u, 2 * alpha + s)
        worst = max(worst, float(np.max(np.abs(a - b) / b)))
    nu, alpha = 0.3, 2.0
    semi = 0.0
    for t, s in ((0.01, 0.02), (0.5, 0.25), (1e-3, 2.0)):
        two = semigroup_apply(semigroup_apply(u, nu, alpha, t), nu, alpha, s)
        one = semigroup_apply(u, nu, alpha, t + s)
        semi = max(semi, _rel(two.coeffs, one.coeffs))
    return [
        Check("A_alpha_norm_shift", worst, 1e-12, "| |A^a u|_s - |u|_{2a+s} | / |u|_{2a+s}"),
        Check("semigroup_additivity", semi, 1e-12, "S(t) S(s) u vs S(t + s) u"),
    ]


def cancellation_checks(lat: Lattice, rng, n_fields: int = 100) -> list[Check]:
    u = random_solenoidal(lat, rng, (n_fields,), slope=2.0)
    rule = DealiasRule()
    out = []
    for label, b in (
        ("advective", quadratic_B(u, rule)),
        ("divergence", SpectralField(lat, quadratic_B_coeffs(lat, u.coeffs, rule.mask(lat)))),
    ):
        for s, name in ((0.0, "<B(u),u>"), (1.0, "<B(u),Au>")):
            ip = sobolev_inner(b, u, s)
            scale = sobolev_norm(b, s) * sobolev_norm(u, s)
            out.append(Check(f"cancel_{name}_{label}", float(np.max(np.abs(ip) / scale)), 1e-11,
                             f"max over {n_fields} fields of |{name}| / (|B|_{s:g} |u|_{s:g})"))
    b = quadratic_B(u, rule)
    real = b.hermitian_defect() / float(np.abs(b.coeffs).max())
    div = b.divergence_defect() / (float(np.abs(b.coeffs).max()) * math.sqrt(lat.k2.max()))
    band = 0.0 if b.is_band_limited() else 1.0
    out.append(Check("B_real_solenoidal_banded", max(real, div, band), 1e-12, "Hermitian, divergence and band defects"))
    return out


def oracle_checks(rng, n_fields: int = 4) -> list[Check]:
    lat = make_lattice(16, 2 * np.pi)
    worst = 0.0
    for _ in range(n_fields):
        u = random_solenoidal(lat, rng, slope=1.0)
        fast = quadratic_B(u).coeffs
        slow = convolution_B(u, u).coeffs
        worst = max(worst, _rel(fast, slow))
    return [Check("B_vs_convolution_oracle_N16", worst, 1e-12, "pseudo-spectral vs direct mode-pair summation")]


def interpolation_checks(lat: Lattice, rng, n_fields: int = 1000) -> list[Check]:
    """|u|_r <= |u|_p^lam |u|_q^(1 - lam), r = lam p + (1 - lam) q; counts violations."""
    u = random_solenoidal(lat, rng, (n_fields,), slope=rng.uniform(0.5, 4.0))
    p = rng.uniform(-2.0, 6.0, n_fields)
    q = rng.uniform(-2.0, 6.0, n_fields)
    lam = rng.uniform(0.0, 1.0, n_fields)
    r = lam * p + (1 - lam) * q
    violations = 0
    for i in range(n_fields):
        ui = u[i]
        lhs = sobolev_norm(ui, r[i])
        rhs = sobolev_norm(ui, p[i]) ** lam[i] * sobolev_norm(ui, q[i]) ** (1 - lam[i])
        if lhs > rhs * (1 + 1e-12):
            violations += 1
    return [Check("interpolation_inequality", float(violations), 0.0, f"violations over {n_fields} fields")]


def noise_checks(lat: Lattice) -> list[Check]:
    noise = NoiseSpec()
    alpha = 2.0
    target = trace_in_sobolev(noise, 1.0, lat) / 2.0
    worst = 0.0
    for nu in (0.5, 0.1, 0.02):
        m = ou_stationary_moment(noise, nu, alpha, alpha + 1.0, lat)
        worst = max(worst, abs(m - target) / target)
    # 2 beta C = 1/2 gives 2e; the guard must fire at 2 beta C = 1
    at_half = abs(exp_moment_bound(1.0 / (4.0 * target), target) - 2.0 * math.e) / (2.0 * math.e)
    try:
        exp_moment_bound(1.0 / (2.0 * target), target)
        guard = 1.0
    except BetaRangeError:
        guard = 0.0
    fact = float(double_factorial(5) != 15 or double_factorial(1) != 1)
    return [
        Check("ou_moment_equals_half_trace", worst, 1e-12, "E|Z|^2_{alpha+1} vs Tr[Q_1]/2 for nu in {0.5, 0.1, 0.02}"),
        Check("exp_bound_at_half", at_half, 1e-14, "bound at 2 beta C = 1/2 equals 2e"),
        Check("exp_bound_guard", guard + fact, 0.0, "guard rejects 2 beta C = 1; (2n-1)!! table"),
    ]


def run_identity_suite(n_modes: int = 32, box_length: float = 2 * np.pi, seed: int = 20240531) -> dict:
    lat = make_lattice(n_modes, box_length)
    rng = np.random.default_rng(seed)
    checks = (
        projection_checks(lat, rng)
        + operator_checks(lat, rng)
        + cancellation_checks(lat, rng)
        + oracle_checks(rng)
        + interpolation_checks(lat, rng)
        + noise_checks(lat)
    )
    return {
        "lattice": {"N": lat.n_modes, "L": lat.box_length},
        "seed": seed,
        "checks": [c.to_dict() for c in checks],
        "max_residual": {c.name: float(c.residual) for c in checks},
        "passed": all(c.passed for c in checks),
    }
