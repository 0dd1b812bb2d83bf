"""Trace-class Q-Wiener noise on divergence-free Fourier modes and the exact OU step.

Noise is diagonal in the real L2-orthonormal divergence-free basis: for each
pair +-k (k != 0) the two real modes ``(k_perp/|k|) sqrt(2) cos(k.x) / L`` and
``(k_perp/|k|) sqrt(2) sin(k.x) / L``, and at k = 0 the two constant unit
vectors divided by L.  Each real mode carries an independent Brownian motion
with variance ``sigma_k**2`` per unit time, hence

    E ||W_t||_{H^gamma}^2 = t * sum_k sigma_k^2 (1 + |k|^2)^gamma

with one term per lattice wavevector k != 0 and two at k = 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Union

import numpy as np

from .spectral import Lattice, SpectralField, band_mask, half_width

__all__ = [
    "NoiseSpec",
    "RngStream",
    "BatchNormals",
    "IncrementSampler",
    "trace_in_sobolev",
    "sample_wiener_increment",
    "sample_increments",
    "ou_exact_step",
    "ou_stationary_moment",
    "coarsen_increments",
]


@dataclass(frozen=True)
class NoiseSpec:
    """sigma_k = sigma0 (1 + |k|^2)^(-decay_exponent / 2) on the active set.

    ``active_set`` is ``"all"`` (every mode inside the 2/3 band) or a tuple of
    integer wavevectors; the set is closed under k -> -k automatically.
    """

    sigma0: float = 1.0
    decay_exponent: float = 6.0
    active_set: Union[str, tuple] = "all"

    def __post_init__(self):
        if self.sigma0 < 0:
            raise ValueError(f"sigma0 must be nonnegative, got {self.sigma0}")
        if isinstance(self.active_set, str):
            if self.active_set != "all":
                raise ValueError(f"active_set must be 'all' or a list of wavevectors, got {self.active_set!r}")
        else:
            modes = tuple(sorted({(int(a), int(b)) for a, b in self.active_set}))
            object.__setattr__(self, "active_set", modes)

    def active_mask(self, lattice: Lattice) -> np.ndarray:
        return _active_mask(self, lattice)

    def sigma(self, lattice: Lattice) -> np.ndarray:
        """sigma_k on the lattice, zero outside the active set, shape (N, N)."""
        return _sigma(self, lattice)

    def to_dict(self) -> dict:
        active = self.active_set if isinstance(self.active_set, str) else [list(m) for m in self.active_set]
        return {"sigma0": self.sigma0, "decay_exponent": self.decay_exponent, "active_set": active}


@lru_cache(maxsize=64)
def _active_mask(noise: NoiseSpec, lattice: Lattice) -> np.ndarray:
    n = lattice.n_modes
    if noise.active_set == "all":
        mask = band_mask(lattice)
    else:
        mask = np.zeros((n, n), dtype=bool)
        for m1, m2 in noise.active_set:
            if m1 == -n // 2 or m2 == -n // 2:
                raise ValueError(f"Nyquist wavevector ({m1}, {m2}) cannot carry real noise")
            mask[lattice.position(m1, m2)] = True
            mask[lattice.position(-m1, -m2)] = True
    mask.flags.writeable = False
    return mask


@lru_cache(maxsize=64)
def _sigma(noise: NoiseSpec, lattice: Lattice) -> np.ndarray:
    s = noise.sigma0 * lattice.weight(-noise.decay_exponent / 2.0)
    s = np.where(noise.active_mask(lattice), s, 0.0)
    s.flags.writeable = False
    return s


def _dof_count(lattice: Lattice) -> np.ndarray:
    count = np.ones((lattice.n_modes, lattice.n_modes))
    count[0, 0] = 2.0
    return count


def trace_in_sobolev(noise: NoiseSpec, gamma: float, lattice: Lattice) -> float:
    """Tr[Q_gamma] = sum_k sigma_k^2 (1 + |k|^2)^gamma over real noise modes."""
    s2 = noise.sigma(lattice) ** 2
    return float(np.sum(_dof_count(lattice) * s2 * lattice.weight(gamma)))


def ou_stationary_moment(noise: NoiseSpec, nu: float, alpha: float, gamma: float, lattice: Lattice) -> float:
    """Exact stationary E||Z||^2_{H^gamma} of dZ + nu A^alpha Z dt = sqrt(nu) dW (independent of nu)."""
    if not nu > 0:
        raise ValueError(f"nu must be positive, got {nu}")
    s2 = noise.sigma(lattice) ** 2
    lam = lattice.weight(alpha)
    return float(np.sum(_dof_count(lattice) * s2 * lattice.weight(gamma) / (2.0 * lam)))


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream keyed by (seed, key..., stream_id)."""

    seed: int
    stream_id: int = 0
    key: tuple = ()

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(self.seed, spawn_key=tuple(self.key) + (self.stream_id,))
        return np.random.Generator(np.random.PCG64(seq))


class BatchNormals:
    """One generator per replica, drawn in blocks.

    Block draws consume each generator exactly as step-by-step draws would, so
    a replica's path does not depend on the block size or the batch it ran in.
    """

    def __init__(self, streams, width: int, block: int = 64):
        self.gens = [s.generator() if isinstance(s, RngStream) else s for s in streams]
        self.width = width
        self.block = block
        self._buf = None
        self._pos = block

    def next(self) -> np.ndarray:
        if self._pos >= self.block:
            self._buf = np.stack([g.standard_normal((self.block, self.width)) for g in self.gens], axis=1)
            self._pos = 0
        out = self._buf[self._pos]
        self._pos += 1
        return out


def draw_normals(rng, batch: tuple[int, ...], width: int) -> np.ndarray:
    if isinstance(rng, BatchNormals):
        if rng.width != width:
            raise ValueError(f"normal source width {rng.width} != required {width}")
        out = rng.next()
        if out.shape[:-1] != batch:
            raise ValueError(f"normal source batch {out.shape[:-1]} != state batch {batch}")
        return out
    if isinstance(rng, RngStream):
        raise TypeError("pass rng_stream.generator() and keep it; a fresh generator per call repeats draws")
    return rng.standard_normal(batch + (width,))


class IncrementSampler:
    """Joint exact law of (dW, dZ) over one step for every noise mode.

    dW is the Wiener increment; dZ = sqrt(nu) int_0^dt exp(-nu (dt - s) A^alpha) dW_s
    is the exact stochastic-convolution increment from zero.
    """

    def __init__(self, lattice: Lattice, noise: NoiseSpec, nu: float, alpha: float, dt: float):
        if not dt > 0:
            raise ValueError(f"dt must be positive, got {dt}")
        if not nu > 0:
            raise ValueError(f"nu must be positive, got {nu}")
        self.lattice = lattice
        n = lattice.n_modes
        sigma = noise.sigma(lattice)
        m1, m2 = lattice.m
        # one representative per +-k pair, all inside the half spectrum m2 >= 0
        upper = (m2 > 0) | ((m2 == 0) & (m1 > 0))
        upper &= (m1 != -n // 2) & (m2 != -n // 2)
        rep = np.argwhere(upper & (sigma > 0))
        self.ri, self.rj = rep[:, 0], rep[:, 1]
        ci, cj = lattice.conj_index
        self.ci, self.cj = ci[self.ri, self.rj], cj[self.ri, self.rj]
        self.on_axis = np.flatnonzero(self.rj == 0)
        k = lattice.k[:, self.ri, self.rj]
        kn = np.sqrt(lattice.k2[self.ri, self.rj])
        self.perp = np.stack([-k[1] / kn, k[0] / kn])
        self.n_rep = len(self.ri)
        self.width = 4 * self.n_rep + 4

        lam = lattice.weight(alpha)
        s_rep = sigma[self.ri, self.rj]
        s0 = sigma[0, 0]
        self.w_scale = np.concatenate([s_rep, [s0]]) * np.sqrt(dt)
        x = nu * dt * np.concatenate([lam[self.ri, self.rj], [lam[0, 0]]])
        rho = np.sqrt(nu) * (-np.expm1(-x)) / x
        tau2 = nu * dt * ((-np.expm1(-2 * x)) / (2 * x) - (np.expm1(-x) / x) ** 2)
        self.rho = rho
        self.z_scale = np.concatenate([s_rep, [s0]]) * np.sqrt(np.maximum(tau2, 0.0))
        self.inv_l = 1.0 / lattice.box_length

    def _assemble(self, rep_amp: np.ndarray, zero_amp: np.ndarray) -> np.ndarray:
        n = self.lattice.n_modes
        batch = rep_amp.shape[:-1]
        c = np.zeros(batch + (2, n, n), dtype=complex)
        vec = rep_amp[..., None, :] * self.perp
        c[..., :, self.ri, self.rj] = vec
        c[..., :, self.ci, self.cj] = np.conj(vec)
        c[..., :, 0, 0] = zero_amp
        return c * self.inv_l

    def _assemble_half(self, rep_amp: np.ndarray, zero_amp: np.ndarray) -> np.ndarray:
        n = self.lattice.n_modes
        batch = rep_amp.shape[:-1]
        c = np.zeros(batch + (2, n, half_width(self.lattice)), dtype=complex)
        vec = rep_amp[..., None, :] * self.perp
        c[..., :, self.ri, self.rj] = vec
        ax = self.on_axis
        c[..., :, self.ci[ax], 0] = np.conj(vec[..., ax])
        c[..., :, 0, 0] = zero_amp
        return c * self.inv_l

    def split(self, normals: np.ndarray):
        m = self.n_rep
        a = normals[..., : 2 * m]
        g = (a[..., 0::2] + 1j * a[..., 1::2]) * np.sqrt(0.5)
        return g, normals[..., 2 * m : 2 * m + 2]

    def increments(self, normals: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Map ``width`` standard normals per member to (dW, dZ) coefficient arrays."""
        half = 2 * self.n_rep + 2
        g1, z1 = self.split(normals[..., :half])
        g2, z2 = self.split(normals[..., half:])
        m = self.n_rep
        w_rep = self.w_scale[:m] * g1
        w_zero = self.w_scale[m] * z1
        z_rep = self.rho[:m] * w_rep + self.z_scale[:m] * g2
        z_zero = self.rho[m] * w_zero + self.z_scale[m] * z2
        return self._assemble(w_rep, w_zero), self._assemble(z_rep, z_zero)

    def dz_half(self, normals: np.ndarray) -> np.ndarray:
        """Only the convolution increment dZ, on the half spectrum."""
        half = 2 * self.n_rep + 2
        g1, z1 = self.split(normals[..., :half])
        g2, z2 = self.split(normals[..., half:])
        m = self.n_rep
        z_rep = self.rho[:m] * self.w_scale[:m] * g1 + self.z_scale[:m] * g2
        z_zero = self.rho[m] * self.w_scale[m] * z1 + self.z_scale[m] * z2
        return self._assemble_half(z_rep, z_zero)


@lru_cache(maxsize=32)
def _sampler(lattice: Lattice, noise: NoiseSpec, nu: float, alpha: float, dt: float) -> IncrementSampler:
    return IncrementSampler(lattice, noise, nu, alpha, dt)


def sample_increments(lattice, noise, nu, alpha, dt, rng, batch=()) -> tuple[np.ndarray, np.ndarray]:
    s = _sampler(lattice, noise, float(nu), float(alpha), float(dt))
    return s.increments(draw_normals(rng, batch, s.width))


def sample_wiener_increment(
    noise: NoiseSpec, dt: float, rng, lattice: Lattice, batch: tuple[int, ...] = ()
) -> SpectralField:
    """W_{t+dt} - W_t: real, solenoidal, with E||dW||^2_{H^gamma} = dt Tr[Q_gamma]."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    s = _sampler(lattice, noise, 1.0, 1.0, float(dt))
    half = 2 * s.n_rep + 2
    g, z = s.split(draw_normals(rng, batch, half))
    m = s.n_rep
    return SpectralField(lattice, s._assemble(s.w_scale[:m] * g, s.w_scale[m] * z))


def ou_exact_step(
    z: SpectralField, dt: float, nu: float, alpha: float, noise: NoiseSpec, rng
) -> SpectralField:
    """Exact transition of dZ + nu A^alpha Z dt = sqrt(nu) dW over one step."""
    if not (dt > 0 and nu > 0):
        raise ValueError(f"dt and nu must be positive, got dt={dt}, nu={nu}")
    if not alpha > 1:
        raise ValueError(f"alpha must exceed 1, got {alpha}")
    lat = z.lattice
    _, dz = sample_increments(lat, noise, nu, alpha, dt, rng, z.batch_shape)
    decay = np.exp(-nu * dt * lat.weight(alpha))
    return SpectralField(lat, z.coeffs * decay + dz)


def coarsen_increments(dw: np.ndarray, dz: np.ndarray, lattice: Lattice, nu: float, alpha: float, dt_fine: float):
    """Combine consecutive fine-step increment pairs (time axis 0) into exact coarse increments."""
    if dw.shape[0] % 2:
        raise ValueError("need an even number of fine steps")
    decay = np.exp(-nu * dt_fine * lattice.weight(alpha))
    return dw[0::2] + dw[1::2], dz[0::2] * decay + dz[1::2]
