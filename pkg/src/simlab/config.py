"""Experiment configuration: TOML text in, validated ExperimentConfig out.

Example::

    seed = 7
    output_dir = "runs/demo"

    [lattice]
    N = 32
    L = 6.283185307179586

    [solver]
    nu_list = [0.5, 0.1, 0.02]     # or a single `nu = 0.1`
    alpha = 2.0
    dt = 0.1

    [noise]
    sigma0 = 1.0                   # decay_exponent defaults to 2 alpha + 2

    [sampling]
    horizon = 200.0
    n_replicas = 64

Every field has a default; the canonical echo (``ExperimentConfig.to_toml``)
lists all of them, defaulted or not.  Unknown keys are errors.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Any, Optional

import tomli
import tomli_w

from .euler import SCHEMES, EulerParams
from .measures import SamplingConfig
from .nonlinearity import DealiasRule
from .solver import SolverParams, cfl_dt, typical_speed
from .spectral import Lattice, make_lattice
from .stochastic import NoiseSpec

__all__ = ["ConfigError", "ExperimentConfig", "parse_config", "load_config"]

UINT64_MAX = 2**64 - 1


class ConfigError(ValueError):
    """All problems found in one config; ``errors`` is a list of dicts."""

    def __init__(self, errors: list[dict]):
        self.errors = errors
        lines = [f"{e['where']}: {e['message']}" for e in errors]
        super().__init__("invalid config:\n  " + "\n  ".join(lines))

    def to_dict(self) -> dict:
        return {"error": "config", "violations": self.errors}


@dataclass(frozen=True)
class LatticeSection:
    N: int = 32
    L: float = 2 * math.pi


@dataclass(frozen=True)
class SolverSection:
    nu_list: tuple = (0.1,)
    alpha: float = 2.0
    dt: float = 0.1
    picard_sweeps: int = 1
    dealias_fraction: float = 2.0 / 3.0
    nonlinear: bool = True


@dataclass(frozen=True)
class NoiseSection:
    sigma0: float = 1.0
    decay_exponent: Optional[float] = None
    active_set: Any = "all"


@dataclass(frozen=True)
class SamplingSection:
    burn_in: Any = "auto"
    horizon: float = 200.0
    horizon_ref_nu: Optional[float] = None
    n_replicas: int = 64
    beta_fractions: tuple = (0.1, 0.25, 0.4)
    diagnostics_every: int = 10
    snapshot_every: int = 0


@dataclass(frozen=True)
class EulerSection:
    dt: float = 1e-3
    scheme: str = "rk4"
    t_list: tuple = (1.0, 5.0)
    t_final: float = 10.0
    refine_dt: tuple = (0.04, 0.02, 0.01, 0.005)
    record_every: int = 100
    n_snapshots: int = 64
    amplitude: float = 1.0
    perturbation: float = 0.1


@dataclass(frozen=True)
class ExperimentConfig:
    lattice: LatticeSection = LatticeSection()
    solver: SolverSection = SolverSection()
    noise: NoiseSection = NoiseSection()
    sampling: SamplingSection = SamplingSection()
    euler: EulerSection = EulerSection()
    seed: int = 0
    output_dir: str = "simlab-out"
    warnings: tuple = field(default=(), compare=False)

    # builders for the numerical objects

    def make_lattice(self) -> Lattice:
        return make_lattice(self.lattice.N, self.lattice.L)

    def solver_params(self, nu: Optional[float] = None) -> SolverParams:
        s = self.solver
        return SolverParams(
            nu=s.nu_list[0] if nu is None else nu,
            alpha=s.alpha,
            dt=s.dt,
            lattice=self.make_lattice(),
            dealias=DealiasRule(s.dealias_fraction),
            nonlinear=s.nonlinear,
            picard_sweeps=s.picard_sweeps,
        )

    def noise_spec(self) -> NoiseSpec:
        n = self.noise
        active = n.active_set if isinstance(n.active_set, str) else tuple(tuple(m) for m in n.active_set)
        return NoiseSpec(n.sigma0, n.decay_exponent, active)

    def sampling_config(self) -> SamplingConfig:
        s = self.sampling
        return SamplingConfig(
            horizon=s.horizon,
            n_replicas=s.n_replicas,
            seed=self.seed,
            burn_in=None if s.burn_in == "auto" else float(s.burn_in),
            horizon_ref_nu=s.horizon_ref_nu,
            beta_fractions=tuple(s.beta_fractions),
            diagnostics_every=s.diagnostics_every,
            snapshot_every=s.snapshot_every,
        )

    def euler_params(self) -> EulerParams:
        e = self.euler
        return EulerParams(e.dt, self.make_lattice(), DealiasRule(self.solver.dealias_fraction), e.scheme)

    def to_dict(self) -> dict:
        d = {
            "seed": self.seed,
            "output_dir": self.output_dir,
            "lattice": asdict(self.lattice),
            "solver": asdict(self.solver),
            "noise": asdict(self.noise),
            "sampling": asdict(self.sampling),
            "euler": asdict(self.euler),
        }
        return _plain(d)

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def replace(self, **top) -> "ExperimentConfig":
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d.update(top)
        return ExperimentConfig(**d)


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


class _Checker:
    def __init__(self):
        self.errors: list[dict] = []

    def add(self, where: str, message: str) -> None:
        self.errors.append({"where": where, "message": message})

    def number(self, sec: dict, where: str, key: str, default, *, integer=False, positive=False, nonneg=False):
        v = sec.pop(key, default)
        path = f"{where}.{key}" if where else key
        if integer:
            if isinstance(v, bool) or not isinstance(v, int):
                self.add(path, f"must be an integer, got {v!r}")
                return default
        elif isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            self.add(path, f"must be a finite number, got {v!r}")
            return default
        if positive and not v > 0:
            self.add(path, f"must be positive, got {v!r}")
        if nonneg and v < 0:
            self.add(path, f"must be nonnegative, got {v!r}")
        return v if integer else float(v)

    def numbers(self, sec: dict, where: str, key: str, default, *, positive=False) -> tuple:
        v = sec.pop(key, default)
        path = f"{where}.{key}"
        if not isinstance(v, (list, tuple)) or any(
            isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x) for x in v
        ):
            self.add(path, f"must be a list of finite numbers, got {v!r}")
            return tuple(default)
        if positive and any(x <= 0 for x in v):
            self.add(path, "entries must be positive")
        return tuple(float(x) for x in v)

    def leftovers(self, sec: dict, where: str) -> None:
        for key in sec:
            self.add(f"{where}.{key}" if where else key, "unknown key")


def _table(doc: dict, name: str, chk: _Checker) -> dict:
    sec = doc.pop(name, {})
    if not isinstance(sec, dict):
        chk.add(name, "must be a table")
        return {}
    return dict(sec)


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate; raises ConfigError listing every violation."""
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        col = getattr(exc, "colno", None)
        msg = getattr(exc, "msg", str(exc))
        raise ConfigError([{"where": f"line {line}, column {col}", "message": f"syntax error: {msg}",
                            "line": line, "column": col}]) from None
    chk = _Checker()
    doc = dict(doc)

    seed = doc.pop("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed <= UINT64_MAX:
        chk.add("seed", f"must be an unsigned 64-bit integer, got {seed!r}")
        seed = 0
    output_dir = doc.pop("output_dir", ExperimentConfig.output_dir)
    if not isinstance(output_dir, str) or not output_dir:
        chk.add("output_dir", "must be a non-empty string")
        output_dir = ExperimentConfig.output_dir

    # lattice
    sec = _table(doc, "lattice", chk)
    d = LatticeSection()
    n = chk.number(sec, "lattice", "N", d.N, integer=True)
    box = chk.number(sec, "lattice", "L", d.L, positive=True)
    if isinstance(n, int) and (n % 2 or n < 8):
        chk.add("lattice.N", f"must be an even integer >= 8, got {n}")
    chk.leftovers(sec, "lattice")
    lattice = LatticeSection(n, box)

    # solver
    sec = _table(doc, "solver", chk)
    d = SolverSection()
    if "nu" in sec and "nu_list" in sec:
        chk.add("solver", "give either nu or nu_list, not both")
        sec.pop("nu")
    if "nu" in sec:
        nu_list = (chk.number(sec, "solver", "nu", 0.1, positive=True),)
    else:
        nu_list = chk.numbers(sec, "solver", "nu_list", d.nu_list, positive=True)
    if not nu_list:
        chk.add("solver.nu_list", "must not be empty")
    elif any(b >= a for a, b in zip(nu_list, nu_list[1:])):
        chk.add("solver.nu_list", "nu_list must be strictly decreasing")
    alpha = chk.number(sec, "solver", "alpha", d.alpha)
    if not alpha > 1:
        chk.add("solver.alpha", f"must exceed 1, got {alpha}")
    dt = chk.number(sec, "solver", "dt", d.dt, positive=True)
    sweeps = chk.number(sec, "solver", "picard_sweeps", d.picard_sweeps, integer=True, nonneg=True)
    frac = chk.number(sec, "solver", "dealias_fraction", d.dealias_fraction)
    if not 0 < frac <= 1:
        chk.add("solver.dealias_fraction", f"must lie in (0, 1], got {frac}")
    nonlinear = sec.pop("nonlinear", True)
    if not isinstance(nonlinear, bool):
        chk.add("solver.nonlinear", "must be true or false")
        nonlinear = True
    chk.leftovers(sec, "solver")
    solver = SolverSection(nu_list, alpha, dt, sweeps, frac, nonlinear)

    # noise
    sec = _table(doc, "noise", chk)
    sigma0 = chk.number(sec, "noise", "sigma0", 1.0, nonneg=True)
    decay = chk.number(sec, "noise", "decay_exponent", 2.0 * alpha + 2.0)
    active = sec.pop("active_set", "all")
    if isinstance(active, str):
        if active != "all":
            chk.add("noise.active_set", f"must be 'all' or a list of [m1, m2] pairs, got {active!r}")
            active = "all"
    elif not (isinstance(active, list) and all(
        isinstance(m, list) and len(m) == 2 and all(isinstance(x, int) and not isinstance(x, bool) for x in m)
        for m in active
    )):
        chk.add("noise.active_set", "must be 'all' or a list of [m1, m2] integer pairs")
        active = "all"
    else:
        active = tuple(sorted(tuple(m) for m in active))
        half = n // 2 if isinstance(n, int) else 0
        for m1, m2 in active:
            if (m1, m2) == (0, 0) or not (-half < m1 < half and -half < m2 < half):
                chk.add("noise.active_set", f"wavevector [{m1}, {m2}] is zero or off the lattice interior")
    chk.leftovers(sec, "noise")
    noise = NoiseSection(sigma0, decay, active)

    # sampling
    sec = _table(doc, "sampling", chk)
    d = SamplingSection()
    burn = sec.pop("burn_in", "auto")
    if burn != "auto" and (isinstance(burn, bool) or not isinstance(burn, (int, float)) or not burn >= 0):
        chk.add("sampling.burn_in", f"must be 'auto' or a nonnegative number, got {burn!r}")
        burn = "auto"
    elif burn != "auto":
        burn = float(burn)
    horizon = chk.number(sec, "sampling", "horizon", d.horizon, positive=True)
    ref = chk.number(sec, "sampling", "horizon_ref_nu", nu_list[0] if nu_list else 0.1, positive=True)
    reps = chk.number(sec, "sampling", "n_replicas", d.n_replicas, integer=True)
    if isinstance(reps, int) and reps < 1:
        chk.add("sampling.n_replicas", "must be >= 1")
    betas = chk.numbers(sec, "sampling", "beta_fractions", d.beta_fractions)
    for b in betas:
        if not 0 < b < 1:
            chk.add("sampling.beta_fractions", f"{b!r} must lie in (0, 1): beta = f / (2 C_alpha) needs 2 beta C_alpha < 1")
    diag = chk.number(sec, "sampling", "diagnostics_every", d.diagnostics_every, integer=True, nonneg=True)
    snap = chk.number(sec, "sampling", "snapshot_every", d.snapshot_every, integer=True, nonneg=True)
    chk.leftovers(sec, "sampling")
    sampling = SamplingSection(burn, horizon, ref, reps, betas, diag, snap)

    # euler
    sec = _table(doc, "euler", chk)
    d = EulerSection()
    edt = chk.number(sec, "euler", "dt", d.dt, positive=True)
    scheme = sec.pop("scheme", d.scheme)
    if scheme not in SCHEMES:
        chk.add("euler.scheme", f"must be one of {list(SCHEMES)}, got {scheme!r}")
        scheme = d.scheme
    t_list = chk.numbers(sec, "euler", "t_list", d.t_list)
    if any(t < 0 for t in t_list):
        chk.add("euler.t_list", "times must be nonnegative")
    t_final = chk.number(sec, "euler", "t_final", d.t_final, positive=True)
    refine = chk.numbers(sec, "euler", "refine_dt", d.refine_dt, positive=True)
    if len(refine) < 2:
        chk.add("euler.refine_dt", "need at least two step sizes for a convergence fit")
    rec = chk.number(sec, "euler", "record_every", d.record_every, integer=True, positive=True)
    nsnap = chk.number(sec, "euler", "n_snapshots", d.n_snapshots, integer=True, positive=True)
    amp = chk.number(sec, "euler", "amplitude", d.amplitude)
    pert = chk.number(sec, "euler", "perturbation", d.perturbation)
    chk.leftovers(sec, "euler")
    euler = EulerSection(edt, scheme, t_list, t_final, refine, rec, nsnap, amp, pert)

    chk.leftovers(doc, "")
    if chk.errors:
        raise ConfigError(chk.errors)

    cfg = ExperimentConfig(lattice, solver, noise, sampling, euler, seed, output_dir)
    return cfg.replace(warnings=tuple(_warnings(cfg)))


def _warnings(cfg: ExperimentConfig) -> list[str]:
    out = []
    noise = cfg.noise_spec()
    for nu in cfg.solver.nu_list:
        p = cfg.solver_params(nu)
        limit = cfl_dt(p, typical_speed(noise, p))
        if p.dt > limit:
            out.append(f"solver.dt={p.dt!r} exceeds the advective CFL estimate {limit:.3g} at nu={nu!r}")
    return out


def load_config(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ConfigError([{"where": "file", "message": f"not UTF-8: {exc}"}]) from None
    return parse_config(text)
