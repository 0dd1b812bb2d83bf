"""simlab <simulate|sweep|euler-check|verify> --config PATH [--seed N] [--out DIR] [--parallel K]

Exit status: 0 all asserted checks pass, 1 some check failed, 2 bad config
or arguments, 3 runtime failure.  Errors are also printed to stderr as JSON
and, when the output directory is writable, saved as ``error.json``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, load_config
from .euler import euler_norm_history, relative_drift, taylor_green
from .measures import (
    MomentReport,
    SweepResult,
    check_exp_bound,
    check_factorial_bound,
    energy_balance_residual,
    euler_invariance_test,
    run_stationary,
)
from .snapshot import atomic_write_bytes, read_snapshot, write_snapshot
from .spectral import SpectralField
from .verify import run_identity_suite

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3
ENERGY_TOL = 0.05
DRIFT_TOL = 3.0
EULER_DRIFT_TOL = 1e-8
EULER_ORDER_BAND = (3.5, 4.5)


# serialisation


def fmt_float(x: float) -> str:
    """17 significant digits, always readable back as a float."""
    s = format(float(x), ".17g")
    return s if any(ch in s for ch in ".eEn") else s + ".0"


def to_json(obj, indent: int = 2) -> str:
    return _encode(obj, 0, indent) + "\n"


def _encode(x, level: int, indent: int) -> str:
    if isinstance(x, np.generic):
        x = x.item()
    if x is None:
        return "null"
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, int):
        return str(x)
    if isinstance(x, float):
        return fmt_float(x) if math.isfinite(x) else "null"
    if isinstance(x, str):
        return json.dumps(x)
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(x, dict):
        if not x:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(v, level + 1, indent)}" for k, v in x.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(x, (list, tuple, np.ndarray)):
        if len(x) == 0:
            return "[]"
        items = [pad + _encode(v, level + 1, indent) for v in x]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialise {type(x).__name__}")


def csv_text(header: tuple, rows) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(fmt_float(v) if isinstance(v, (float, np.floating)) else str(v) for v in row))
    return "\n".join(lines) + "\n"


class Artifacts:
    """Writes files atomically under one directory and records their hashes."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.files: dict[str, dict] = {}

    def _record(self, rel: str) -> None:
        data = (self.root / rel).read_bytes()
        self.files[rel] = {"sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)}

    def text(self, rel: str, text: str) -> None:
        atomic_write_bytes(self.root / rel, text.encode("utf-8"))
        self._record(rel)

    def snapshot(self, rel: str, field: SpectralField, meta: dict, t: float) -> None:
        write_snapshot(field, meta, self.root / rel, t)
        self._record(rel)
        self._record(rel + ".json")

    def existing(self, rel: str) -> None:
        self._record(rel)

    def manifest(self, command: str) -> None:
        body = {"command": command, "version": __version__, "artifacts": dict(sorted(self.files.items()))}
        atomic_write_bytes(self.root / "manifest.json", to_json(body).encode("utf-8"))


# shared pieces


def _echo(cfg: ExperimentConfig) -> ExperimentConfig:
    """The config as recorded inside its own output directory."""
    return cfg.replace(output_dir=".")


def fingerprint(cfg: ExperimentConfig) -> str:
    d = cfg.to_dict()
    d.pop("output_dir")
    return hashlib.sha256(to_json(d).encode()).hexdigest()


def moment_checks(report: MomentReport, noise, lattice) -> list[dict]:
    nu = report.nu
    residual = energy_balance_residual(report, noise, lattice)
    checks = [
        {"nu": nu, "name": "valid_report", "value": float(len(report.failed)), "passed": report.valid,
         "asserted": True},
        {"nu": nu, "name": "energy_balance", "value": residual, "tolerance": ENERGY_TOL,
         "passed": bool(residual <= ENERGY_TOL), "asserted": True},
    ]
    for row in check_factorial_bound(report):
        checks.append({"nu": nu, "name": f"factorial_bound_n{row['n']}", "value": row["value"],
                       "bound": row["bound"], "stderr": row["stderr"], "passed": row["passed"], "asserted": True})
    for row in check_exp_bound(report):
        checks.append({"nu": nu, "name": f"exp_bound_beta{row['beta']!r}", "value": row["value"],
                       "bound": row["bound"], "stderr": row["stderr"], "passed": row["passed"], "asserted": True})
    z = report.group_zscore
    checks.append({"nu": nu, "name": "replica_group_agreement", "value": z, "tolerance": 3.0,
                   "passed": bool(math.isfinite(z) and z <= 3.0), "asserted": False})
    return checks


def _all_pass(checks: list[dict]) -> bool:
    return all(c["passed"] for c in checks if c.get("asserted", True))


def _run_point(args):
    cfg, i, nu = args
    s = cfg.sampling_config()
    p = cfg.solver_params(nu)
    return run_stationary(
        p,
        cfg.noise_spec(),
        s.burn_in_for(nu),
        s.horizon_for(nu),
        s.n_replicas,
        cfg.seed,
        nu_index=i,
        beta_fractions=s.beta_fractions,
        diagnostics_every=s.diagnostics_every,
        snapshot_every=s.snapshot_every,
    )


def _write_run(art: Artifacts, prefix: str, report: MomentReport, cfg: ExperimentConfig) -> None:
    art.text(prefix + "diagnostics.csv", csv_text(("t", "h1", "ha1", "h2a"), report.diagnostics))
    meta = {"nu": report.nu, "alpha": report.alpha, "seed": cfg.seed}
    for step, t, c in report.snapshots:
        art.snapshot(f"{prefix}snapshots/step_{step:09d}.spf", SpectralField(report.terminal.lattice, c),
                     {**meta, "step": step, "replica": 0}, t)
    if report.terminal is not None:
        n_keep = min(report.terminal.batch_shape[0], cfg.euler.n_snapshots)
        t_end = report.burn_in + report.horizon
        step_end = int(round(t_end / report.dt))
        for r in range(n_keep):
            art.snapshot(f"{prefix}terminal/r{r:04d}.spf", report.terminal[r],
                         {**meta, "step": step_end, "replica": r}, t_end)


# commands


def cmd_simulate(cfg: ExperimentConfig, parallel: int = 1) -> tuple[int, dict]:
    if len(cfg.solver.nu_list) != 1:
        raise ConfigError([{"where": "solver.nu_list", "message": "simulate takes exactly one nu; use sweep"}])
    art = Artifacts(cfg.output_dir)
    art.text("config.toml", _echo(cfg).to_toml())
    nu = cfg.solver.nu_list[0]
    report = _run_point((cfg, 0, nu))
    lat = cfg.make_lattice()
    checks = moment_checks(report, cfg.noise_spec(), lat)
    body = {"command": "simulate", "config": _echo(cfg).to_dict(), "warnings": list(cfg.warnings),
            "report": report.to_dict(), "checks": checks, "passed": _all_pass(checks)}
    art.text("report.json", to_json(body))
    art.text("moments.csv", csv_text(("nu", "quantity", "value", "stderr"), report.rows()))
    _write_run(art, "", report, cfg)
    art.manifest("simulate")
    return (EXIT_OK if body["passed"] else EXIT_FAILED), body


def _load_point(art: Artifacts, prefix: str, fp: str, cfg: ExperimentConfig) -> Optional[MomentReport]:
    path = art.root / prefix / "point.json"
    if not path.exists():
        return None
    try:
        saved = json.loads(path.read_text())
    except json.JSONDecodeError:
        return None
    if saved.get("fingerprint") != fp:
        return None
    lat = cfg.make_lattice()
    files = sorted((art.root / prefix / "terminal").glob("r*.spf"))
    fields = [read_snapshot(f, lat)[0].coeffs for f in files]
    terminal = SpectralField(lat, np.stack(fields)) if fields else None
    for rel in sorted(str(p.relative_to(art.root)) for p in (art.root / prefix).rglob("*") if p.is_file()):
        art.existing(rel)
    return MomentReport.from_dict(saved["report"], terminal)


def cmd_sweep(cfg: ExperimentConfig, parallel: int = 1) -> tuple[int, dict]:
    art = Artifacts(cfg.output_dir)
    art.text("config.toml", _echo(cfg).to_toml())
    fp = fingerprint(cfg)
    nus = list(cfg.solver.nu_list)
    reports: list[Optional[MomentReport]] = [_load_point(art, f"nu_{i}/", fp, cfg) for i in range(len(nus))]
    resumed = [i for i, r in enumerate(reports) if r is not None]
    todo = [(cfg, i, nus[i]) for i, r in enumerate(reports) if r is None]
    if resumed:
        sys.stderr.write(f"resuming: nu points {resumed} reused from {art.root}\n")

    def finish(i: int, rep: MomentReport) -> None:
        prefix = f"nu_{i}/"
        _write_run(art, prefix, rep, cfg)
        art.text(prefix + "point.json", to_json({"fingerprint": fp, "report": rep.to_dict()}))
        reports[i] = rep

    if parallel > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            for (_, i, _), rep in zip(todo, pool.map(_run_point, todo)):
                finish(i, rep)
    else:
        for job in todo:
            finish(job[1], _run_point(job))

    result = SweepResult(nus, reports)
    lat = cfg.make_lattice()
    noise = cfg.noise_spec()
    checks = []
    for rep in reports:
        checks.extend(moment_checks(rep, noise, lat))
    for row in result.flatness():
        checks.append({"name": f"flatness_nu{row['nu_a']!r}_nu{row['nu_b']!r}", "value": row["diff"],
                       "stderr": row["combined_stderr"], "passed": row["passed"], "asserted": True})
    if cfg.euler.t_list:
        ens = reports[-1].terminal
        if ens is not None and ens.batch_shape[0] > cfg.euler.n_snapshots:
            ens = ens[: cfg.euler.n_snapshots]
        result.euler_invariance = euler_invariance_test(ens, cfg.euler.t_list, cfg.euler_params(), cfg.solver.alpha)
        for row in result.euler_invariance:
            d = row["standardized_drift"]
            checks.append({"name": f"invariance_{row['quantity']}_t{row['t']!r}", "value": d,
                           "tolerance": DRIFT_TOL, "passed": bool(abs(d) <= DRIFT_TOL), "asserted": True})
    body = {"command": "sweep", "config": _echo(cfg).to_dict(), "warnings": list(cfg.warnings),
            "sweep": result.to_dict(), "checks": checks, "passed": _all_pass(checks)}
    art.text("report.json", to_json(body))
    rows = [row for rep in reports for row in rep.rows()]
    art.text("moments.csv", csv_text(("nu", "quantity", "value", "stderr"), rows))
    art.manifest("sweep")
    return (EXIT_OK if body["passed"] else EXIT_FAILED), body


def fit_exponent(dts, drifts) -> float:
    """Least-squares slope of log drift against log dt."""
    x, y = np.log(np.asarray(dts, float)), np.log(np.asarray(drifts, float))
    return float(np.polyfit(x, y, 1)[0])


def cmd_euler_check(cfg: ExperimentConfig, parallel: int = 1) -> tuple[int, dict]:
    art = Artifacts(cfg.output_dir)
    art.text("config.toml", _echo(cfg).to_toml())
    e = cfg.euler
    ep = cfg.euler_params()
    lat = ep.lattice
    alpha = cfg.solver.alpha
    x = taylor_green(lat, e.amplitude, e.perturbation)
    ss = (0.0, 1.0, alpha + 1.0, 2.0 * alpha)
    times, norms = euler_norm_history(x, e.t_final, ep, ss)
    drift = {"l2": relative_drift(norms[:, 0]), "h1": relative_drift(norms[:, 1])}
    refine = []
    for dt in e.refine_dt:
        _, nr = euler_norm_history(x, e.t_final, ep.__class__(dt, lat, ep.dealias, ep.scheme), ss[:2])
        refine.append({"dt": dt, "l2": relative_drift(nr[:, 0]), "h1": relative_drift(nr[:, 1])})
    exps = {q: fit_exponent([r["dt"] for r in refine], [r[q] for r in refine]) for q in ("l2", "h1")}
    lo, hi = EULER_ORDER_BAND
    checks = []
    for q in ("l2", "h1"):
        checks.append({"name": f"drift_{q}", "value": drift[q], "tolerance": EULER_DRIFT_TOL,
                       "passed": bool(drift[q] <= EULER_DRIFT_TOL), "asserted": True})
    for q in ("l2", "h1"):
        checks.append({"name": f"order_{q}", "value": exps[q], "band": [lo, hi],
                       "passed": bool(lo <= exps[q] <= hi), "asserted": True})
    body = {"command": "euler-check", "config": _echo(cfg).to_dict(), "scheme": ep.scheme, "dt": ep.dt,
            "t_final": e.t_final, "drift": drift, "refinement": refine, "fit_exponent": exps,
            "checks": checks, "passed": _all_pass(checks)}
    art.text("report.json", to_json(body))
    keep = slice(None, None, e.record_every)
    diag = [(t, *row[1:]) for t, row in zip(times[keep], norms[keep])]
    if (len(times) - 1) % e.record_every:
        diag.append((times[-1], *norms[-1, 1:]))
    art.text("diagnostics.csv", csv_text(("t", "h1", "ha1", "h2a"), diag))
    art.snapshot("snapshots/initial.spf", x, {"nu": None, "alpha": alpha, "seed": cfg.seed, "step": 0}, 0.0)
    art.manifest("euler-check")
    return (EXIT_OK if body["passed"] else EXIT_FAILED), body


def cmd_verify(cfg: ExperimentConfig, parallel: int = 1) -> tuple[int, dict]:
    art = Artifacts(cfg.output_dir)
    suite = run_identity_suite(cfg.lattice.N, cfg.lattice.L, cfg.seed)
    body = {"command": "verify", **suite}
    art.text("report.json", to_json(body))
    art.manifest("verify")
    return (EXIT_OK if suite["passed"] else EXIT_FAILED), body


COMMANDS = {
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "euler-check": cmd_euler_check,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="simlab", description="Stochastic hyperviscous 2D Navier-Stokes lab.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="TOML experiment config")
    ap.add_argument("--seed", type=int, help="override the config seed")
    ap.add_argument("--out", help="override output_dir")
    ap.add_argument("--parallel", type=int, default=1, help="worker processes for nu points")
    return ap


def _fail(code: int, payload: dict, out_dir: Optional[str]) -> int:
    text = to_json(payload)
    sys.stderr.write(text)
    if out_dir:
        try:
            atomic_write_bytes(Path(out_dir) / "error.json", text.encode())
        except OSError:
            pass
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out_dir = args.out
    try:
        cfg = load_config(args.config)
        over = {}
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError([{"where": "--seed", "message": "must be an unsigned 64-bit integer"}])
            over["seed"] = args.seed
        if args.out is not None:
            over["output_dir"] = args.out
        if args.parallel < 1:
            raise ConfigError([{"where": "--parallel", "message": "must be >= 1"}])
        cfg = cfg.replace(**over) if over else cfg
        out_dir = cfg.output_dir
        for w in cfg.warnings:
            sys.stderr.write(f"warning: {w}\n")
        code, body = COMMANDS[args.command](cfg, args.parallel)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, exc.to_dict(), out_dir)
    except FileNotFoundError as exc:
        return _fail(EXIT_CONFIG, {"error": "config", "violations": [{"where": "--config", "message": str(exc)}]},
                     None)
    except Exception as exc:  # noqa: BLE001 - every failure becomes a structured log
        payload = {"error": type(exc).__name__, "message": str(exc)}
        if hasattr(exc, "to_dict"):
            payload.update(exc.to_dict())
        return _fail(EXIT_RUNTIME, payload, out_dir)
    failed = [c["name"] for c in body.get("checks", []) if c.get("asserted", True) and not c["passed"]]
    sys.stdout.write(to_json({"command": args.command, "passed": code == EXIT_OK, "failed_checks": failed,
                              "output_dir": str(cfg.output_dir)}))
    return code


if __name__ == "__main__":
    sys.exit(main())
