"""Stationary sampling by burn-in plus time averaging, moment checks and the inviscid sweep."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .euler import EulerParams, euler_flow
from .nonlinearity import quadratic_B_half
from .solver import SolverParams
from .spectral import SpectralField, expand_half, half_multiplicity, half_width, weighted_inner
from .stochastic import BatchNormals, IncrementSampler, NoiseSpec, RngStream, trace_in_sobolev

__all__ = [
    "MomentReport",
    "SamplingConfig",
    "SweepResult",
    "BetaRangeError",
    "run_stationary",
    "energy_balance_residual",
    "check_factorial_bound",
    "check_exp_bound",
    "exp_moment_bound",
    "inviscid_sweep",
    "euler_invariance_test",
    "integrated_autocorr_time",
]

N_SEGMENTS = 10
MAX_FAIL_FRACTION = 0.10


class BetaRangeError(ValueError):
    """beta violates 2 beta C_alpha < 1."""


def double_factorial(k: int) -> int:
    return math.prod(range(k, 0, -2)) if k > 0 else 1


@dataclass
class MomentReport:
    nu: float
    alpha: float
    dt: float
    horizon: float
    burn_in: float
    n_replicas: int
    seed: int
    c_alpha_target: float
    m2_ha1: tuple[float, float]
    m2n_h1: dict
    exp_moment: dict
    beta_fractions: tuple
    failed: list = field(default_factory=list)
    h1_autocorr_time: float = float("nan")
    group_zscore: float = float("nan")
    terminal: Optional[SpectralField] = field(default=None, repr=False)
    diagnostics: list = field(default_factory=list, repr=False)
    snapshots: list = field(default_factory=list, repr=False)

    @property
    def valid(self) -> bool:
        return len(self.failed) <= MAX_FAIL_FRACTION * self.n_replicas and all(
            math.isfinite(v) for v, _ in [self.m2_ha1, *self.m2n_h1.values(), *self.exp_moment.values()]
        )

    def to_dict(self) -> dict:
        return {
            "nu": self.nu,
            "alpha": self.alpha,
            "dt": self.dt,
            "horizon": self.horizon,
            "burn_in": self.burn_in,
            "n_replicas": self.n_replicas,
            "seed": self.seed,
            "valid": self.valid,
            "failed_replicas": list(self.failed),
            "c_alpha_target": self.c_alpha_target,
            "m2_ha1": {"value": self.m2_ha1[0], "stderr": self.m2_ha1[1]},
            "m2n_h1": {str(n): {"value": v, "stderr": s} for n, (v, s) in self.m2n_h1.items()},
            "exp_moment": {repr(b): {"value": v, "stderr": s} for b, (v, s) in self.exp_moment.items()},
            "beta_fractions": list(self.beta_fractions),
            "h1_autocorr_time": self.h1_autocorr_time,
            "group_zscore": self.group_zscore,
        }

    @classmethod
    def from_dict(cls, d: dict, terminal: Optional[SpectralField] = None) -> "MomentReport":
        """Inverse of to_dict (diagnostics and snapshots are not carried)."""
        def pair(e):
            return _num(e["value"]), _num(e["stderr"])

        return cls(
            nu=d["nu"],
            alpha=d["alpha"],
            dt=d["dt"],
            horizon=d["horizon"],
            burn_in=d["burn_in"],
            n_replicas=d["n_replicas"],
            seed=d["seed"],
            c_alpha_target=d["c_alpha_target"],
            m2_ha1=pair(d["m2_ha1"]),
            m2n_h1={int(k): pair(v) for k, v in d["m2n_h1"].items()},
            exp_moment={float(k): pair(v) for k, v in d["exp_moment"].items()},
            beta_fractions=tuple(d["beta_fractions"]),
            failed=list(d["failed_replicas"]),
            h1_autocorr_time=_num(d["h1_autocorr_time"]),
            group_zscore=_num(d["group_zscore"]),
            terminal=terminal,
        )

    def rows(self) -> list[tuple]:
        """(nu, quantity, value, stderr) rows for the flat CSV."""
        out = [(self.nu, "m2_ha1", *self.m2_ha1), (self.nu, "c_alpha_target", self.c_alpha_target, 0.0)]
        for n, (v, s) in self.m2n_h1.items():
            out.append((self.nu, f"m{2 * n}_h1", v, s))
        for b, (v, s) in self.exp_moment.items():
            out.append((self.nu, f"exp_moment[beta={b!r}]", v, s))
        return out


def _num(x) -> float:
    return float("nan") if x is None else float(x)


@dataclass(frozen=True)
class SamplingConfig:
    """``burn_in=None`` means 20 / (nu lambda_min); ``horizon_ref_nu`` rescales the horizon as horizon * ref / nu."""

    horizon: float
    n_replicas: int
    seed: int = 0
    burn_in: Optional[float] = None
    horizon_ref_nu: Optional[float] = None
    beta_fractions: tuple = (0.1, 0.25, 0.4)
    diagnostics_every: int = 0
    snapshot_every: int = 0

    def burn_in_for(self, nu: float, lambda_min: float = 1.0) -> float:
        return self.burn_in if self.burn_in is not None else 20.0 / (nu * lambda_min)

    def horizon_for(self, nu: float) -> float:
        return self.horizon * (self.horizon_ref_nu / nu) if self.horizon_ref_nu else self.horizon


def integrated_autocorr_time(series: np.ndarray, c: float = 5.0) -> float:
    """Integrated autocorrelation time (in samples) with Sokal's adaptive window.

    ``series`` has shape (n_samples, n_chains); autocorrelations are averaged over chains.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    x = x - x.mean(axis=0)
    f = np.fft.rfft(x, n=2 * n, axis=0)
    acf = np.fft.irfft(f * np.conj(f), axis=0)[:n].mean(axis=1)
    if acf[0] <= 0:
        return 1.0
    rho = acf / acf[0]
    taus = 2.0 * np.cumsum(rho) - 1.0
    window = np.arange(n) >= c * taus
    m = int(np.argmax(window)) if window.any() else n - 1
    return float(max(taus[m], 1.0))


def _mean_se(values: np.ndarray) -> tuple[float, float]:
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return float("nan"), float("nan")
    if values.size == 1:
        return float(values[0]), float("nan")
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(values.size))


def run_stationary(
    p: SolverParams,
    noise: NoiseSpec,
    burn_in: float,
    horizon: float,
    n_replicas: int,
    seed: int,
    *,
    nu_index: int = 0,
    beta_fractions: Sequence[float] = (0.1, 0.25, 0.4),
    diagnostics_every: int = 0,
    snapshot_every: int = 0,
    block: int = 64,
) -> MomentReport:
    """Krylov-Bogoliubov surrogate: X_0 = 0, discard [0, burn_in], time-average over the horizon.

    Replicas advance together in one batch; replica r draws from
    RngStream(seed, r, key=(nu_index,)) so results do not depend on batching.
    """
    if not (burn_in >= 0 and horizon > 0):
        raise ValueError("burn_in must be >= 0 and horizon > 0")
    if n_replicas < 1:
        raise ValueError("n_replicas must be >= 1")
    lat = p.lattice
    R = n_replicas
    n_burn = int(math.ceil(burn_in / p.dt - 1e-9))
    n_avg = int(math.ceil(horizon / p.dt - 1e-9))
    c_target = trace_in_sobolev(noise, 1.0, lat) / 2.0
    betas = tuple(float(f) / (2.0 * c_target) if c_target > 0 else 0.0 for f in beta_fractions)

    sampler = IncrementSampler(lat, noise, p.nu, p.alpha, p.dt)
    normals = BatchNormals([RngStream(seed, r, key=(nu_index,)) for r in range(R)], sampler.width, block)
    # the loop runs on the m2 >= 0 half of the Hermitian spectrum
    w = half_width(lat)
    decay = p.decay()[:, :w]
    mask = p.dealias.half_mask(lat)
    weights = np.stack([lat.weight(1.0), lat.weight(p.alpha + 1.0), lat.weight(2.0 * p.alpha)])[:, :, :w]
    weights = (weights * half_multiplicity(lat) * lat.volume).reshape(3, -1).T
    n = lat.n_modes
    c = np.zeros((R, 2, n, w), dtype=complex)
    alive = np.ones(R, dtype=bool)
    failed: list[int] = []

    # per (replica, segment): ha1, h1^2, h1^4, h1^6, exp(beta ha1)...
    nq = 4 + len(betas)
    sums = np.zeros((R, N_SEGMENTS, nq))
    counts = np.zeros(N_SEGMENTS)
    iat_stride = max(1, n_avg // 4096)
    h1_series = []
    diagnostics, snapshots = [], []

    def norms(c):
        a2 = (c.real**2 + c.imag**2).sum(axis=1).reshape(R, -1)
        return a2 @ weights  # (R, 3): h1^2, ha1^2, h2a^2

    if diagnostics_every:
        diagnostics.append((0.0, 0.0, 0.0, 0.0))
    for step in range(1, n_burn + n_avg + 1):
        dz = sampler.dz_half(normals.next())
        if p.nonlinear:
            c = decay * (c - p.dt * quadratic_B_half(lat, c, mask)) + dz
        else:
            c = decay * c + dz
        nm = norms(c)
        bad = alive & ~np.isfinite(nm).all(axis=1)
        if bad.any():
            for r in np.flatnonzero(bad):
                failed.append(int(r))
            alive &= ~bad
            c[~alive] = 0.0
            nm[~alive] = 0.0
        t = step * p.dt
        if diagnostics_every and step % diagnostics_every == 0:
            diagnostics.append((t, *np.sqrt(nm[0])))
        if step <= n_burn:
            continue
        k = step - n_burn - 1
        seg = min(k * N_SEGMENTS // n_avg, N_SEGMENTS - 1)
        h1sq, ha1sq = nm[:, 0], nm[:, 1]
        q = np.empty((R, nq))
        q[:, 0] = ha1sq
        q[:, 1] = h1sq
        q[:, 2] = h1sq**2
        q[:, 3] = h1sq**3
        for j, b in enumerate(betas):
            q[:, 4 + j] = np.exp(b * ha1sq)
        sums[:, seg] += q
        counts[seg] += 1
        if k % iat_stride == 0:
            h1_series.append(np.sqrt(h1sq))
        if snapshot_every and step % snapshot_every == 0:
            snapshots.append((step, t, expand_half(lat, c[0])))

    ok = np.flatnonzero(alive)
    per_rep = sums[ok].sum(axis=1) / counts.sum()
    if len(ok) >= 2:
        stats = [_mean_se(per_rep[:, j]) for j in range(nq)]
        half = len(ok) // 2
        a, b = per_rep[:half, 0], per_rep[half:, 0]
        sa, sb = _mean_se(a), _mean_se(b)
        pooled = math.hypot(sa[1], sb[1]) if len(a) > 1 and len(b) > 1 else float("nan")
        group_z = abs(sa[0] - sb[0]) / pooled if pooled > 0 else float("nan")
    else:
        seg_means = sums[ok].reshape(-1, N_SEGMENTS, nq)[0] / counts[:, None] if len(ok) else np.full((1, nq), np.nan)
        stats = [(float(seg_means[:, j].mean()), float(seg_means[:, j].std(ddof=1) / math.sqrt(N_SEGMENTS)))
                 for j in range(nq)]
        group_z = float("nan")
    series = np.array(h1_series)[:, ok] if h1_series and len(ok) else np.zeros((0, 1))
    iat = integrated_autocorr_time(series) * iat_stride * p.dt if len(series) > 8 else float("nan")

    return MomentReport(
        nu=p.nu,
        alpha=p.alpha,
        dt=p.dt,
        horizon=n_avg * p.dt,
        burn_in=n_burn * p.dt,
        n_replicas=R,
        seed=seed,
        c_alpha_target=c_target,
        m2_ha1=stats[0],
        m2n_h1={1: stats[1], 2: stats[2], 3: stats[3]},
        exp_moment={b: stats[4 + j] for j, b in enumerate(betas)},
        beta_fractions=tuple(float(f) for f in beta_fractions),
        failed=sorted(failed),
        h1_autocorr_time=iat,
        group_zscore=group_z,
        terminal=SpectralField(lat, expand_half(lat, c[ok])),
        diagnostics=diagnostics,
        snapshots=snapshots,
    )


def energy_balance_residual(report: MomentReport, noise: NoiseSpec, lattice) -> float:
    """|m2_ha1 - Tr[Q_1]/2| / (Tr[Q_1]/2)."""
    target = trace_in_sobolev(noise, 1.0, lattice) / 2.0
    if target <= 0:
        raise ValueError("noise has zero trace; the balance target vanishes")
    return abs(report.m2_ha1[0] - target) / target


def _slack(se: float, n_se: float) -> float:
    return n_se * se if math.isfinite(se) else 0.0


def check_factorial_bound(report: MomentReport, n_se: float = 3.0) -> list[dict]:
    """m2n_h1[n] <= (2n-1)!! C^n + n_se * stderr for each recorded n."""
    c = report.c_alpha_target
    out = []
    for n, (v, se) in sorted(report.m2n_h1.items()):
        bound = double_factorial(2 * n - 1) * c**n
        allowed = bound + _slack(se, n_se)
        out.append({
            "n": n,
            "value": v,
            "stderr": se,
            "bound": bound,
            "passed": bool(v <= allowed),
            "margin": (allowed - v) / bound if bound > 0 else allowed - v,
        })
    return out


def exp_moment_bound(beta: float, c_alpha: float) -> float:
    """2 exp(2 beta C / (1 - 2 beta C)); requires 2 beta C < 1."""
    x = 2.0 * beta * c_alpha
    if not (beta >= 0 and x < 1.0):
        raise BetaRangeError(f"beta={beta!r} violates 2*beta*C_alpha < 1 (C_alpha={c_alpha!r})")
    return 2.0 * math.exp(x / (1.0 - x))


def check_exp_bound(report: MomentReport, beta_list: Optional[Sequence[float]] = None, n_se: float = 3.0) -> list[dict]:
    c = report.c_alpha_target
    betas = list(report.exp_moment) if beta_list is None else list(beta_list)
    out = []
    for b in betas:
        bound = exp_moment_bound(b, c)
        match = [k for k in report.exp_moment if math.isclose(k, b, rel_tol=1e-12, abs_tol=0.0)]
        if not match:
            raise KeyError(f"report has no exponential moment at beta={b!r}")
        v, se = report.exp_moment[match[0]]
        allowed = bound + _slack(se, n_se)
        out.append({"beta": b, "value": v, "stderr": se, "bound": bound, "passed": bool(v <= allowed)})
    return out


@dataclass
class SweepResult:
    nu_list: list
    reports: list
    euler_invariance: list = field(default_factory=list)

    def __post_init__(self):
        if any(b >= a for a, b in zip(self.nu_list, self.nu_list[1:])):
            raise ValueError("nu_list must be strictly decreasing")

    def flatness(self, n_se: float = 3.0) -> list[dict]:
        """Pairwise agreement of m2_ha1 across nu within combined n_se standard errors."""
        out = []
        for i in range(len(self.reports)):
            for j in range(i + 1, len(self.reports)):
                (a, sa), (b, sb) = self.reports[i].m2_ha1, self.reports[j].m2_ha1
                comb = math.hypot(sa, sb)
                out.append({
                    "nu_a": self.nu_list[i],
                    "nu_b": self.nu_list[j],
                    "diff": a - b,
                    "combined_stderr": comb,
                    "passed": bool(abs(a - b) <= n_se * comb),
                })
        return out

    def to_dict(self) -> dict:
        return {
            "nu_list": list(self.nu_list),
            "reports": [r.to_dict() for r in self.reports],
            "flatness": self.flatness(),
            "euler_invariance": list(self.euler_invariance),
        }


def _sweep_point(args):
    i, nu, base, noise, sampling = args
    p = base.replace(nu=nu)
    return run_stationary(
        p,
        noise,
        sampling.burn_in_for(nu),
        sampling.horizon_for(nu),
        sampling.n_replicas,
        sampling.seed,
        nu_index=i,
        beta_fractions=sampling.beta_fractions,
        diagnostics_every=sampling.diagnostics_every,
        snapshot_every=sampling.snapshot_every,
    )


def inviscid_sweep(
    nu_list: Sequence[float],
    base_params: SolverParams,
    noise: NoiseSpec,
    sampling: SamplingConfig,
    euler_params: Optional[EulerParams] = None,
    t_list: Sequence[float] = (),
    n_snapshots: int = 64,
    parallel: int = 1,
) -> SweepResult:
    """run_stationary per nu (keyed by nu index), then the Euler invariance test on the smallest nu."""
    nu_list = [float(v) for v in nu_list]
    if not nu_list:
        raise ValueError("nu_list is empty")
    if any(v <= 0 for v in nu_list):
        raise ValueError("every nu must be positive")
    if any(b >= a for a, b in zip(nu_list, nu_list[1:])):
        raise ValueError("nu_list must be strictly decreasing")
    jobs = [(i, nu, base_params, noise, sampling) for i, nu in enumerate(nu_list)]
    if parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            reports = list(pool.map(_sweep_point, jobs))
    else:
        reports = [_sweep_point(j) for j in jobs]
    result = SweepResult(nu_list, reports)
    if euler_params is not None and t_list:
        ensemble = reports[-1].terminal
        if ensemble is not None and ensemble.batch_shape[0] > n_snapshots:
            ensemble = ensemble[:n_snapshots]
        result.euler_invariance = euler_invariance_test(ensemble, t_list, euler_params, base_params.alpha)
    return result


def _moment_vector(field_: SpectralField, alpha: float) -> dict:
    lat = field_.lattice
    c = field_.coeffs
    h1 = weighted_inner(lat, c, c, lat.weight(1.0))
    ha1 = weighted_inner(lat, c, c, lat.weight(alpha + 1.0))
    return {"m2_h1": np.atleast_1d(h1), "m2_ha1": np.atleast_1d(ha1), "m4_h1": np.atleast_1d(h1) ** 2}


def euler_invariance_test(
    ensemble: SpectralField,
    t_list: Sequence[float],
    euler_params: EulerParams,
    alpha: float,
    min_size: int = 30,
) -> list[dict]:
    """Standardised drift of (m2_h1, m2_ha1, m4_h1) between the ensemble and its image under Phi_t.

    drift = (after - before) / sqrt(se_before^2 + se_after^2).  A statistical
    surrogate at finite nu, not an exact invariance statement.
    """
    if ensemble is None or not ensemble.batch_shape or ensemble.batch_shape[0] < min_size:
        size = 0 if ensemble is None or not ensemble.batch_shape else ensemble.batch_shape[0]
        raise ValueError(f"ensemble has {size} snapshots; need at least {min_size}")
    before = _moment_vector(ensemble, alpha)
    rows = []
    current, t_now = ensemble, 0.0
    for t in sorted(float(v) for v in t_list):
        if t > t_now:
            current = euler_flow(current, t - t_now, euler_params)
            t_now = t
        after = _moment_vector(current, alpha)
        for name in ("m2_h1", "m2_ha1", "m4_h1"):
            b, sb = _mean_se(before[name])
            a, sa = _mean_se(after[name])
            pooled = math.hypot(sb, sa)
            drift = (a - b) / pooled if pooled > 0 else (0.0 if a == b else math.inf)
            rows.append({"t": t, "quantity": name, "before": b, "after": a, "stderr_before": sb,
                         "stderr_after": sa, "standardized_drift": drift})
    return rows
