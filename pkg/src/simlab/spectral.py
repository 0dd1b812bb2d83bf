"""Truncated Fourier lattice, divergence-free spectral fields and diagonal operators.

A velocity field on the periodic box ``[0, L)^2`` is stored by its Fourier
coefficients

    u(x) = sum_k c(k) exp(i k.x),    k = 2 pi m / L,  m in [-N/2, N/2)^2,

so ``c = fft2(u) / N**2``.  Coefficient arrays have shape ``(..., 2, N, N)``:
optional leading batch axes, then the velocity component, then the two
wavevector axes in standard FFT order (index ``i`` <-> ``m = fftfreq(N, 1/N)[i]``;
axis ``-2`` is the x direction, axis ``-1`` the y direction).

Norms use the box volume ``L**2`` so that ``s = 0`` reproduces the continuum
L2 inner product on the box::

    <u, v>_s = L**2 * sum_k (1 + |k|^2)^s Re[c_u(k) . conj(c_v(k))]
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft

__all__ = [
    "Lattice",
    "SpectralField",
    "make_lattice",
    "leray_project",
    "sobolev_inner",
    "sobolev_norm",
    "apply_A_alpha",
    "semigroup_apply",
    "random_solenoidal",
    "band_mask",
]


@dataclass(frozen=True)
class Lattice:
    """N x N Fourier lattice on the periodic box [0, L)^2."""

    n_modes: int
    box_length: float

    @cached_property
    def index(self) -> np.ndarray:
        """Integer wavenumbers m in FFT order, shape (N,)."""
        return np.fft.fftfreq(self.n_modes, 1.0 / self.n_modes).astype(np.int64)

    @cached_property
    def m(self) -> tuple[np.ndarray, np.ndarray]:
        m1, m2 = np.meshgrid(self.index, self.index, indexing="ij")
        return m1, m2

    @cached_property
    def k(self) -> np.ndarray:
        """Wavevectors, shape (2, N, N)."""
        m1, m2 = self.m
        return (2.0 * np.pi / self.box_length) * np.stack([m1, m2]).astype(float)

    @cached_property
    def k2(self) -> np.ndarray:
        return self.k[0] ** 2 + self.k[1] ** 2

    @cached_property
    def k2_safe(self) -> np.ndarray:
        k2 = self.k2.copy()
        k2[0, 0] = 1.0
        return k2

    @cached_property
    def conj_index(self) -> tuple[np.ndarray, np.ndarray]:
        """Array indices of -k for every k."""
        n = self.n_modes
        i = (-np.arange(n)) % n
        ii, jj = np.meshgrid(i, i, indexing="ij")
        return ii, jj

    @property
    def volume(self) -> float:
        return self.box_length**2

    @property
    def k_min(self) -> float:
        return 2.0 * np.pi / self.box_length

    def weight(self, s: float) -> np.ndarray:
        """Sobolev weight (1 + |k|^2)^s on the lattice."""
        return (1.0 + self.k2) ** s

    def grid(self) -> tuple[np.ndarray, np.ndarray]:
        x = np.arange(self.n_modes) * (self.box_length / self.n_modes)
        return np.meshgrid(x, x, indexing="ij")

    def position(self, m1: int, m2: int) -> tuple[int, int]:
        """Array position of the integer wavevector (m1, m2)."""
        n = self.n_modes
        if not (-n // 2 <= m1 < n // 2 and -n // 2 <= m2 < n // 2):
            raise ValueError(f"wavevector ({m1}, {m2}) outside the lattice")
        return m1 % n, m2 % n


def make_lattice(n_modes: int, box_length: float) -> Lattice:
    if int(n_modes) != n_modes or n_modes % 2 or n_modes < 8:
        raise ValueError(f"n_modes must be an even integer >= 8, got {n_modes}")
    if not box_length > 0:
        raise ValueError(f"box_length must be positive, got {box_length}")
    return Lattice(int(n_modes), float(box_length))


def band_mask(lattice: Lattice, cutoff_fraction: float = 2.0 / 3.0) -> np.ndarray:
    """Boolean (N, N) mask of modes kept by the dealiasing rule."""
    kmax = cutoff_fraction * lattice.n_modes / 2
    m1, m2 = lattice.m
    return np.maximum(np.abs(m1), np.abs(m2)) <= kmax


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Real 2D vector field held as Fourier coefficients on a lattice.

    ``coeffs`` may carry leading batch axes; every operator in the package
    broadcasts over them and returns per-member scalars as arrays.
    """

    lattice: Lattice
    coeffs: np.ndarray

    def __post_init__(self):
        n = self.lattice.n_modes
        if self.coeffs.shape[-3:] != (2, n, n):
            raise ValueError(f"coeffs shape {self.coeffs.shape} does not match lattice N={n}")

    @classmethod
    def zeros(cls, lattice: Lattice, batch: tuple[int, ...] = ()) -> SpectralField:
        n = lattice.n_modes
        return cls(lattice, np.zeros(batch + (2, n, n), dtype=complex))

    @classmethod
    def from_physical(cls, lattice: Lattice, u: np.ndarray) -> SpectralField:
        return cls(lattice, sfft.fft2(np.asarray(u, dtype=float), norm="forward"))

    def to_physical(self) -> np.ndarray:
        return sfft.ifft2(self.coeffs, norm="forward").real

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.coeffs.shape[:-3]

    def __getitem__(self, idx) -> SpectralField:
        if not self.batch_shape:
            raise IndexError("field has no batch axes")
        return SpectralField(self.lattice, self.coeffs[idx])

    def _wrap(self, coeffs):
        return SpectralField(self.lattice, coeffs)

    def __add__(self, other: SpectralField) -> SpectralField:
        _check_same(self, other)
        return self._wrap(self.coeffs + other.coeffs)

    def __sub__(self, other: SpectralField) -> SpectralField:
        _check_same(self, other)
        return self._wrap(self.coeffs - other.coeffs)

    def __mul__(self, a) -> SpectralField:
        return self._wrap(self.coeffs * a)

    __rmul__ = __mul__

    def __neg__(self) -> SpectralField:
        return self._wrap(-self.coeffs)

    def hermitian_defect(self) -> float:
        ii, jj = self.lattice.conj_index
        mirrored = np.conj(self.coeffs[..., ii, jj])
        return float(np.max(np.abs(self.coeffs - mirrored), initial=0.0))

    def divergence_defect(self) -> float:
        k = self.lattice.k
        div = k[0] * self.coeffs[..., 0, :, :] + k[1] * self.coeffs[..., 1, :, :]
        return float(np.max(np.abs(div), initial=0.0))

    def is_real(self, tol: float = 1e-13) -> bool:
        return self.hermitian_defect() <= tol * max(1.0, float(np.max(np.abs(self.coeffs), initial=0.0)))

    def is_solenoidal(self, tol: float = 1e-13) -> bool:
        scale = float(np.max(np.abs(self.coeffs), initial=0.0)) * float(np.sqrt(self.lattice.k2.max()))
        return self.divergence_defect() <= tol * max(1.0, scale)

    def is_band_limited(self, cutoff_fraction: float = 2.0 / 3.0) -> bool:
        outside = ~band_mask(self.lattice, cutoff_fraction)
        return not np.any(self.coeffs[..., outside])


def _check_same(u: SpectralField, v: SpectralField) -> None:
    if u.lattice != v.lattice:
        raise ValueError(f"lattice mismatch: {u.lattice} vs {v.lattice}")


def leray_project(u: SpectralField) -> SpectralField:
    """Per-mode projection onto k-perp; the k = 0 mode is left alone."""
    return SpectralField(u.lattice, leray_coeffs(u.lattice, u.coeffs))


def leray_coeffs(lattice: Lattice, c: np.ndarray) -> np.ndarray:
    """Leray projection of full (N, N) or half (N, N//2 + 1) coefficient arrays."""
    w = c.shape[-1]
    k = lattice.k[..., :w]
    kdotc = (k[0] * c[..., 0, :, :] + k[1] * c[..., 1, :, :]) / lattice.k2_safe[:, :w]
    out = np.empty_like(c)
    out[..., 0, :, :] = c[..., 0, :, :] - k[0] * kdotc
    out[..., 1, :, :] = c[..., 1, :, :] - k[1] * kdotc
    return out


def weighted_inner(lattice: Lattice, cu: np.ndarray, cv: np.ndarray, weight: np.ndarray):
    prod = (cu.real * cv.real + cu.imag * cv.imag).sum(axis=-3)
    out = lattice.volume * np.einsum("...ij,ij->...", prod, weight)
    return out if np.ndim(out) else float(out)


def sobolev_inner(u: SpectralField, v: SpectralField, s: float):
    _check_same(u, v)
    return weighted_inner(u.lattice, u.coeffs, v.coeffs, u.lattice.weight(s))


def sobolev_norm(u: SpectralField, s: float):
    sq = weighted_inner(u.lattice, u.coeffs, u.coeffs, u.lattice.weight(s))
    return np.sqrt(np.maximum(sq, 0.0))


def apply_A_alpha(u: SpectralField, alpha: float) -> SpectralField:
    return SpectralField(u.lattice, u.coeffs * u.lattice.weight(alpha))


def semigroup_factor(lattice: Lattice, nu: float, alpha: float, t: float) -> np.ndarray:
    return np.exp(-nu * t * lattice.weight(alpha))


def semigroup_apply(u: SpectralField, nu: float, alpha: float, t: float) -> SpectralField:
    """exp(-nu t A^alpha) u."""
    if t < 0:
        raise ValueError(f"semigroup time must be nonnegative, got {t}")
    if not nu > 0:
        raise ValueError(f"nu must be positive, got {nu}")
    if t == 0:
        return SpectralField(u.lattice, u.coeffs.copy())
    return SpectralField(u.lattice, u.coeffs * semigroup_factor(u.lattice, nu, alpha, t))


def half_width(lattice: Lattice) -> int:
    return lattice.n_modes // 2 + 1


def expand_half(lattice: Lattice, half: np.ndarray) -> np.ndarray:
    """Full (..., N, N) coefficients from the non-negative-m2 half (..., N, N//2 + 1)."""
    n = lattice.n_modes
    h = n // 2 + 1
    rows = ((-np.arange(n)) % n)[:, None]
    cols = (n - np.arange(h, n))[None, :]
    full = np.empty(half.shape[:-1] + (n,), dtype=complex)
    full[..., :h] = half
    full[..., h:] = np.conj(half[..., rows, cols])
    return full


def half_multiplicity(lattice: Lattice) -> np.ndarray:
    """How many full-lattice modes each half-spectrum column stands for (1 or 2)."""
    h = half_width(lattice)
    mult = np.full(h, 2.0)
    mult[0] = 1.0
    if lattice.n_modes % 2 == 0:
        mult[-1] = 1.0
    return mult


def hermitize(lattice: Lattice, c: np.ndarray) -> np.ndarray:
    ii, jj = lattice.conj_index
    return 0.5 * (c + np.conj(c[..., ii, jj]))


def random_solenoidal(
    lattice: Lattice,
    rng: np.random.Generator,
    batch: tuple[int, ...] = (),
    slope: float = 2.0,
    cutoff_fraction: float = 2.0 / 3.0,
    mean_flow: bool = True,
) -> SpectralField:
    """Random real, solenoidal, band-limited field with spectrum ~ (1+|k|^2)^(-slope/2)."""
    n = lattice.n_modes
    shape = batch + (2, n, n)
    c = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    c *= lattice.weight(-slope / 2.0) * band_mask(lattice, cutoff_fraction)
    if not mean_flow:
        c[..., 0, 0] = 0.0
    c = hermitize(lattice, leray_coeffs(lattice, c))
    return SpectralField(lattice, c)
