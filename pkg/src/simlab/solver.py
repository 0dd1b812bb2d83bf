"""Exponential Euler-Maruyama for dX + [nu A^alpha X + B(X)] dt = sqrt(nu) dW.

The stochastic convolution over each step is sampled exactly, so the linear
part carries no time-discretisation error.  ``solve_v`` integrates the
shifted deterministic equation v' + nu A^alpha v + B(v + z) = 0 for the
pathwise decomposition X = v + Z.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .nonlinearity import DealiasRule, quadratic_B_coeffs
from .spectral import Lattice, SpectralField, semigroup_factor, weighted_inner
from .stochastic import NoiseSpec, ou_stationary_moment, sample_increments, trace_in_sobolev

__all__ = [
    "BlowUpError",
    "SolverParams",
    "Trajectory",
    "step_hns",
    "simulate",
    "ou_path",
    "solve_v",
    "reconstruct_X",
    "BalanceReport",
    "ito_balance_audit",
    "BoundReport",
    "check_apriori_bounds",
    "cfl_dt",
]


class BlowUpError(FloatingPointError):
    """Non-finite state; usually dt is too large."""

    def __init__(self, step: int, members=None):
        self.step = step
        self.members = members
        msg = f"non-finite state at step {step}"
        if members is not None:
            msg += f" (members {list(members)})"
        super().__init__(msg)


@dataclass(frozen=True)
class SolverParams:
    nu: float
    alpha: float
    dt: float
    lattice: Lattice
    dealias: DealiasRule = DealiasRule()
    nonlinear: bool = True
    picard_sweeps: int = 1
    cfl: float = 0.5

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError(f"nu must be positive, got {self.nu}")
        if not self.alpha > 1:
            raise ValueError(f"alpha must exceed 1, got {self.alpha}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.picard_sweeps < 0:
            raise ValueError("picard_sweeps must be nonnegative")

    @property
    def mask(self) -> np.ndarray:
        return self.dealias.mask(self.lattice)

    def decay(self, dt: Optional[float] = None) -> np.ndarray:
        return semigroup_factor(self.lattice, self.nu, self.alpha, self.dt if dt is None else dt)

    def B(self, c: np.ndarray) -> np.ndarray:
        if not self.nonlinear:
            return np.zeros_like(c)
        return quadratic_B_coeffs(self.lattice, c, self.mask)

    def replace(self, **kw) -> "SolverParams":
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d.update(kw)
        return SolverParams(**d)


def cfl_dt(p: SolverParams, u_max: float) -> float:
    """Heuristic explicit-advection limit cfl / (max|u| k_max)."""
    kmax = p.dealias.cutoff_fraction * p.lattice.n_modes / 2 * p.lattice.k_min
    return math.inf if u_max <= 0 else p.cfl / (u_max * kmax)


def typical_speed(noise: NoiseSpec, p: SolverParams) -> float:
    """Four standard deviations of the stationary OU point velocity."""
    m0 = ou_stationary_moment(noise, p.nu, p.alpha, 0.0, p.lattice)
    return 4.0 * math.sqrt(m0 / p.lattice.volume)


@dataclass
class Trajectory:
    """Sampled path; ``states`` has shape (len(times), *batch, 2, N, N).

    ``dW``/``dZ`` hold the per-step Wiener and exact-convolution increments
    (shape (len(times) - 1, *batch, 2, N, N)) when recorded.
    """

    lattice: Lattice
    times: np.ndarray
    states: np.ndarray
    dW: Optional[np.ndarray] = None
    dZ: Optional[np.ndarray] = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.times[0] != 0 or np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must start at 0 and increase strictly")
        if len(self.states) != len(self.times):
            raise ValueError("one state per time required")

    def __len__(self):
        return len(self.times)

    def state(self, i: int) -> SpectralField:
        return SpectralField(self.lattice, self.states[i])

    @property
    def final(self) -> SpectralField:
        return self.state(-1)


def _check_finite(c: np.ndarray, step: int) -> None:
    if not np.isfinite(c).all():
        batch_axes = tuple(range(c.ndim - 3, c.ndim))
        bad = np.flatnonzero(~np.isfinite(c).all(axis=batch_axes)) if c.ndim > 3 else None
        raise BlowUpError(step, bad)


def _hns_update(c: np.ndarray, p: SolverParams, decay: np.ndarray, dz: np.ndarray) -> np.ndarray:
    if p.nonlinear:
        return decay * (c - p.dt * p.B(c)) + dz
    return decay * c + dz


def step_hns(X: SpectralField, p: SolverParams, noise: NoiseSpec, rng, increment=None, step: int = 0) -> SpectralField:
    """X+ = exp(-nu dt A^alpha)[X - dt B(X)] + dZ with dZ the exact OU increment from 0.

    ``increment`` may supply a precomputed dZ coefficient array (for coupling);
    otherwise it is drawn from ``rng``.
    """
    if X.lattice != p.lattice:
        raise ValueError("state lattice does not match solver lattice")
    if increment is None:
        _, increment = sample_increments(p.lattice, noise, p.nu, p.alpha, p.dt, rng, X.batch_shape)
    out = _hns_update(X.coeffs, p, p.decay(), increment)
    _check_finite(out, step)
    return SpectralField(p.lattice, out)


def simulate(
    x: SpectralField,
    p: SolverParams,
    noise: NoiseSpec,
    rng,
    n_steps: int,
    increments: Optional[tuple[np.ndarray, np.ndarray]] = None,
    record_noise: bool = True,
) -> Trajectory:
    """Run step_hns for ``n_steps`` and keep every state.

    ``increments`` = (dW, dZ) arrays with leading time axis drive the path
    instead of ``rng``; they are then stored as the noise path.
    """
    lat = p.lattice
    batch = x.batch_shape
    states = np.empty((n_steps + 1,) + x.coeffs.shape, dtype=complex)
    states[0] = x.coeffs
    if increments is None:
        dW = np.empty((n_steps,) + x.coeffs.shape, dtype=complex) if record_noise else None
        dZ = np.empty_like(dW) if record_noise else None
    else:
        dW, dZ = increments
        if len(dZ) != n_steps:
            raise ValueError("increment path length does not match n_steps")
    decay = p.decay()
    c = x.coeffs
    for n in range(n_steps):
        if increments is None:
            w, z = sample_increments(lat, noise, p.nu, p.alpha, p.dt, rng, batch)
            if record_noise:
                dW[n], dZ[n] = w, z
        else:
            z = dZ[n]
        c = _hns_update(c, p, decay, z)
        _check_finite(c, n + 1)
        states[n + 1] = c
    return Trajectory(lat, p.dt * np.arange(n_steps + 1), states, dW, dZ)


def ou_path(dZ: np.ndarray, p: SolverParams) -> Trajectory:
    """Z on the step grid from exact increments, Z_0 = 0."""
    decay = p.decay()
    states = np.empty((len(dZ) + 1,) + dZ.shape[1:], dtype=complex)
    states[0] = 0.0
    for n in range(len(dZ)):
        states[n + 1] = decay * states[n] + dZ[n]
    return Trajectory(p.lattice, p.dt * np.arange(len(dZ) + 1), states, dZ=dZ)


def solve_v(x: SpectralField, z_path: Trajectory, p: SolverParams) -> Trajectory:
    """v' + nu A^alpha v + B(v + z) = 0, v(0) = x, with z frozen per step.

    Base step v+ = S[v - dt B(v + z_n)].  Each Picard sweep re-evaluates the
    step's Duhamel integral by the trapezoid rule on the current iterate:
    v+ = S v - dt/2 [S B(v + z_n) + B(v+ + z_{n+1})].
    """
    if not np.allclose(np.diff(z_path.times), p.dt, rtol=1e-12, atol=0):
        raise ValueError("z_path must be sampled on the solver step grid")
    decay = p.decay()
    zs = z_path.states
    states = np.empty(zs.shape[:1] + np.broadcast_shapes(x.coeffs.shape, zs.shape[1:]), dtype=complex)
    v = x.coeffs
    states[0] = v
    for n in range(len(zs) - 1):
        b0 = p.B(v + zs[n])
        sv = decay * v
        sb0 = decay * b0
        new = sv - p.dt * sb0
        for _ in range(p.picard_sweeps if p.nonlinear else 0):
            new = sv - 0.5 * p.dt * (sb0 + p.B(new + zs[n + 1]))
        _check_finite(new, n + 1)
        states[n + 1] = new
        v = new
    return Trajectory(p.lattice, z_path.times.copy(), states)


def reconstruct_X(x: SpectralField, z_path: Trajectory, p: SolverParams) -> Trajectory:
    """X = V(x, Z) + Z pointwise on the grid."""
    v = solve_v(x, z_path, p)
    if v.states.shape[0] != z_path.states.shape[0]:
        raise ValueError("grid mismatch between v and z paths")
    return Trajectory(p.lattice, v.times, v.states + z_path.states, dZ=z_path.dZ)


def _norm2_path(lat: Lattice, states: np.ndarray, s: float) -> np.ndarray:
    return weighted_inner(lat, states, states, lat.weight(s))


@dataclass
class BalanceReport:
    """Discrete Ito identity for ||X||^2_{H^gamma}; arrays are per ensemble member."""

    gamma: float
    terminal: np.ndarray
    initial: np.ndarray
    dissipation: np.ndarray
    nonlinear: np.ndarray
    nonlinear_scale: np.ndarray
    martingale: np.ndarray
    trace_term: float
    residual: np.ndarray

    def summary(self) -> dict:
        r = np.atleast_1d(self.residual)
        se = float(np.std(r, ddof=1) / math.sqrt(r.size)) if r.size > 1 else float("nan")
        return {
            "gamma": self.gamma,
            "residual_mean": float(np.mean(r)),
            "residual_stderr": se,
            "nonlinear_max_rel": float(
                np.max(np.abs(self.nonlinear) / np.maximum(np.atleast_1d(self.nonlinear_scale), 1e-300))
            ),
            "trace_term": self.trace_term,
        }


def ito_balance_audit(traj: Trajectory, p: SolverParams, noise: NoiseSpec, gamma: float) -> BalanceReport:
    """Residual of

    ||X_T||^2 - ||X_0||^2 + 2 nu sum dt ||X||^2_{gamma+alpha} + 2 sum dt <B(X), X>_gamma
        - 2 sqrt(nu) sum <X, dW>_gamma - nu Tr[Q_gamma] T,  norms in H^gamma.
    """
    if traj.dW is None:
        raise ValueError("trajectory carries no Wiener increments; record the noise path")
    lat = traj.lattice
    dt = np.diff(traj.times).reshape((-1,) + (1,) * (traj.states.ndim - 4))
    left = traj.states[:-1]
    wg = lat.weight(gamma)
    terminal = weighted_inner(lat, traj.states[-1], traj.states[-1], wg)
    initial = weighted_inner(lat, traj.states[0], traj.states[0], wg)
    diss = 2 * p.nu * np.sum(dt * _norm2_path(lat, left, gamma + p.alpha), axis=0)
    if p.nonlinear:
        b = np.stack([p.B(c) for c in left])
        nl_terms = weighted_inner(lat, b, left, wg)
        scale_terms = np.sqrt(_norm2_path(lat, b, gamma) * _norm2_path(lat, left, gamma))
        nonlinear = 2 * np.sum(dt * nl_terms, axis=0)
        nl_scale = 2 * np.sum(dt * scale_terms, axis=0)
    else:
        nonlinear = np.zeros_like(np.asarray(terminal, dtype=float))
        nl_scale = np.zeros_like(nonlinear)
    mart = 2 * math.sqrt(p.nu) * np.sum(weighted_inner(lat, left, traj.dW, wg), axis=0)
    trace = p.nu * trace_in_sobolev(noise, gamma, lat) * float(traj.times[-1])
    residual = terminal - initial + diss + nonlinear - mart - trace
    return BalanceReport(gamma, terminal, initial, diss, nonlinear, nl_scale, mart, trace, residual)


@dataclass
class BoundReport:
    nu: float
    horizon: float
    n_members: int
    sup_moments: dict = field(default_factory=dict)
    initial_moments: dict = field(default_factory=dict)
    ratios: dict = field(default_factory=dict)
    dissipation: float = 0.0
    energy_terminal: float = 0.0
    energy_budget: float = 0.0


def check_apriori_bounds(traj: Trajectory, p: SolverParams, noise: NoiseSpec, powers=(2, 4, 8)) -> BoundReport:
    """Empirical E sup_t ||X_t||^p_{H^1} against E||X_0||^p + (T nu)^(p/2).

    ``traj`` is an ensemble (batch axis 1) started from a common initial law.
    Also reports the p = 2 Ito budget E||X_T||^2 + 2 nu E int ||X||^2_{alpha+1}
    versus E||X_0||^2 + nu Tr[Q_1] T.
    """
    if traj.states.ndim < 5 or traj.states.shape[1] == 0:
        raise ValueError("empty ensemble")
    lat = traj.lattice
    T = float(traj.times[-1])
    h1 = np.sqrt(_norm2_path(lat, traj.states, 1.0))
    sup = h1.max(axis=0)
    rep = BoundReport(nu=p.nu, horizon=T, n_members=int(traj.states.shape[1]))
    for q in powers:
        s = float(np.mean(sup**q))
        x0 = float(np.mean(h1[0] ** q))
        rep.sup_moments[q] = s
        rep.initial_moments[q] = x0
        denom = x0 + (T * p.nu) ** (q / 2)
        rep.ratios[q] = s / denom if denom > 0 else 0.0
    dt = np.diff(traj.times)[:, None]
    ha1 = _norm2_path(lat, traj.states[:-1], p.alpha + 1.0)
    rep.dissipation = float(np.mean(2 * p.nu * np.sum(dt * ha1, axis=0)))
    rep.energy_terminal = float(np.mean(h1[-1] ** 2))
    rep.energy_budget = float(np.mean(h1[0] ** 2)) + p.nu * trace_in_sobolev(noise, 1.0, lat) * T
    return rep
