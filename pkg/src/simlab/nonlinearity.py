"""Dealiased pseudo-spectral Navier-Stokes nonlinearity B(u, v) = Pi[(u . grad) v].

Products are formed on the physical grid from the non-negative-m2 half of the
Hermitian spectrum (real FFTs); the 2/3 truncation afterwards makes the result
the exact Galerkin projection of the product for band-limited inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft as sfft

from .spectral import (
    Lattice,
    SpectralField,
    _check_same,
    band_mask,
    expand_half,
    half_width,
    leray_coeffs,
    sobolev_norm,
    weighted_inner,
)

__all__ = [
    "DealiasRule",
    "bilinear_B",
    "quadratic_B",
    "trilinear_b",
    "check_B_bound",
    "advect_coeffs",
    "quadratic_B_coeffs",
    "quadratic_B_half",
]


@dataclass(frozen=True)
class DealiasRule:
    """Orszag truncation: zero modes with max(|m1|, |m2|) > cutoff_fraction * N / 2."""

    cutoff_fraction: float = 2.0 / 3.0

    def __post_init__(self):
        if not 0.0 < self.cutoff_fraction <= 1.0:
            raise ValueError(f"cutoff_fraction must lie in (0, 1], got {self.cutoff_fraction}")

    def mask(self, lattice: Lattice) -> np.ndarray:
        return _mask(lattice, self.cutoff_fraction)

    def half_mask(self, lattice: Lattice) -> np.ndarray:
        return _mask(lattice, self.cutoff_fraction)[:, : half_width(lattice)]


@lru_cache(maxsize=32)
def _mask(lattice: Lattice, fraction: float) -> np.ndarray:
    m = band_mask(lattice, fraction)
    m.flags.writeable = False
    return m


def _ik(lattice: Lattice) -> np.ndarray:
    return 1j * lattice.k[:, :, : half_width(lattice)]


def _physical(lattice: Lattice, half: np.ndarray) -> np.ndarray:
    n = lattice.n_modes
    return sfft.irfft2(half, s=(n, n), norm="forward")


def _spectral(f: np.ndarray) -> np.ndarray:
    return sfft.rfft2(f, norm="forward")


def advect_half(lattice: Lattice, hu: np.ndarray, hv: np.ndarray, mask_half: np.ndarray) -> np.ndarray:
    """Truncated (u . grad) v, before projection, on half spectra."""
    ik = _ik(lattice)
    batch = np.broadcast_shapes(hu.shape[:-3], hv.shape[:-3])
    n = lattice.n_modes
    stack = np.empty(batch + (6, n, half_width(lattice)), dtype=complex)
    stack[..., 0:2, :, :] = hu
    # d_i v_j laid out as [d_x v_x, d_y v_x, d_x v_y, d_y v_y]
    stack[..., 2, :, :] = ik[0] * hv[..., 0, :, :]
    stack[..., 3, :, :] = ik[1] * hv[..., 0, :, :]
    stack[..., 4, :, :] = ik[0] * hv[..., 1, :, :]
    stack[..., 5, :, :] = ik[1] * hv[..., 1, :, :]
    phys = _physical(lattice, stack)
    ux, uy = phys[..., 0, :, :], phys[..., 1, :, :]
    prod = np.empty(batch + (2, n, n))
    prod[..., 0, :, :] = ux * phys[..., 2, :, :] + uy * phys[..., 3, :, :]
    prod[..., 1, :, :] = ux * phys[..., 4, :, :] + uy * phys[..., 5, :, :]
    out = _spectral(prod)
    out *= mask_half
    return out


def quadratic_B_half(lattice: Lattice, h: np.ndarray, mask_half: np.ndarray) -> np.ndarray:
    """B(u) on half spectra via the divergence form Pi div(u (x) u).

    Equal to Pi[(u . grad) u] whenever div u = 0 (mode-wise, to round-off);
    needs two inverse and three forward transforms instead of six and two.
    Projection of div P for the symmetric tensor P collapses to
    i S (k_y, -k_x) with S = [k_x k_y (P_xx - P_yy) + (k_y^2 - k_x^2) P_xy] / |k|^2.
    """
    c1, c2, iky, ikx = _div_form_symbols(lattice, mask_half)
    u = _physical(lattice, h)
    ux, uy = u[..., 0, :, :], u[..., 1, :, :]
    n = lattice.n_modes
    prod = np.empty(u.shape[:-3] + (3, n, n))
    # overflow is caught downstream by the finiteness checks
    with np.errstate(over="ignore", invalid="ignore"):
        np.multiply(ux, ux, out=prod[..., 0, :, :])
        np.multiply(ux, uy, out=prod[..., 1, :, :])
        np.multiply(uy, uy, out=prod[..., 2, :, :])
        p = _spectral(prod)
        s = c1 * (p[..., 0, :, :] - p[..., 2, :, :]) + c2 * p[..., 1, :, :]
    out = np.empty(h.shape, dtype=complex)
    np.multiply(iky, s, out=out[..., 0, :, :])
    np.multiply(ikx, s, out=out[..., 1, :, :])
    return out


def _div_form_symbols(lattice: Lattice, mask_half: np.ndarray):
    key = (lattice, mask_half.tobytes())
    hit = _SYMBOLS.get(key)
    if hit is None:
        w = half_width(lattice)
        kx, ky = lattice.k[0, :, :w], lattice.k[1, :, :w]
        k2 = lattice.k2_safe[:, :w]
        c1 = mask_half * kx * ky / k2
        c2 = mask_half * (ky**2 - kx**2) / k2
        hit = (c1, c2, 1j * ky, -1j * kx)
        _SYMBOLS[key] = hit
    return hit


_SYMBOLS: dict = {}


def advect_coeffs(lattice: Lattice, cu: np.ndarray, cv: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Truncated (u . grad) v on full Hermitian coefficient arrays (projection not applied)."""
    w = half_width(lattice)
    return expand_half(lattice, advect_half(lattice, cu[..., :w], cv[..., :w], mask[:, :w]))


def quadratic_B_coeffs(lattice: Lattice, c: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Solver-path B(u) on full coefficient arrays (divergence form)."""
    w = half_width(lattice)
    return expand_half(lattice, quadratic_B_half(lattice, c[..., :w], mask[:, :w]))


def _require_solenoidal(*fields: SpectralField) -> None:
    for f in fields:
        if not f.is_solenoidal(1e-10):
            raise ValueError("nonlinearity requires solenoidal input fields")


def bilinear_B(
    u: SpectralField,
    v: SpectralField,
    rule: DealiasRule = DealiasRule(),
    check: bool = True,
) -> SpectralField:
    """Pi[(u . grad) v]: derivative of v, products on the grid, truncation, projection."""
    _check_same(u, v)
    if check:
        _require_solenoidal(u, v)
    lat = u.lattice
    return SpectralField(lat, leray_coeffs(lat, advect_coeffs(lat, u.coeffs, v.coeffs, rule.mask(lat))))


def quadratic_B(u: SpectralField, rule: DealiasRule = DealiasRule(), check: bool = True) -> SpectralField:
    return bilinear_B(u, u, rule, check)


def trilinear_b(u: SpectralField, v: SpectralField, w: SpectralField, rule: DealiasRule = DealiasRule()):
    """b(u, v, w) = <(u . grad) v, w> evaluated by Parseval on the truncation."""
    _check_same(u, v)
    _check_same(u, w)
    _require_solenoidal(u)
    lat = u.lattice
    adv = advect_coeffs(lat, u.coeffs, v.coeffs, rule.mask(lat))
    return weighted_inner(lat, adv, w.coeffs, np.ones(lat.k2.shape))


def check_B_bound(u: SpectralField, v: SpectralField, sigma: float, rule: DealiasRule = DealiasRule()):
    """Return (||B(u,v)||_{sigma-1}, ||u||_{sigma-1} ||v||_{sigma})."""
    if not sigma > 2:
        raise ValueError(f"sigma must exceed 2, got {sigma}")
    lhs = sobolev_norm(bilinear_B(u, v, rule), sigma - 1)
    rhs = sobolev_norm(u, sigma - 1) * sobolev_norm(v, sigma)
    return lhs, rhs
