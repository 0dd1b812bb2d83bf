"""Pseudo-spectral lab for the stochastic hyperviscous 2D Navier-Stokes equations on a periodic box."""

__version__ = "0.1.0"

from .spectral import (  # noqa: E402
    Lattice,
    SpectralField,
    apply_A_alpha,
    leray_project,
    make_lattice,
    semigroup_apply,
    sobolev_inner,
    sobolev_norm,
)
from .nonlinearity import DealiasRule, bilinear_B, quadratic_B, trilinear_b  # noqa: E402
from .stochastic import NoiseSpec, RngStream, ou_exact_step, sample_wiener_increment, trace_in_sobolev  # noqa: E402
from .solver import SolverParams, simulate, step_hns, solve_v, reconstruct_X, ito_balance_audit  # noqa: E402
from .euler import EulerParams, euler_flow  # noqa: E402
from .measures import MomentReport, SweepResult, run_stationary, inviscid_sweep  # noqa: E402
from .config import ExperimentConfig, parse_config  # noqa: E402
from .snapshot import read_snapshot, write_snapshot  # noqa: E402
