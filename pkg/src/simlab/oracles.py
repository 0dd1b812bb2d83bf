"""Brute-force reference computations that avoid the FFT path entirely."""

from __future__ import annotations

import numpy as np

from .spectral import Lattice, SpectralField, band_mask, leray_coeffs


def convolution_advection(u: SpectralField, v: SpectralField, cutoff_fraction: float = 2.0 / 3.0) -> np.ndarray:
    """Truncated (u . grad) v by direct summation over mode pairs.

    (u . grad) v = sum_{p, q} (c_u(p) . i q) c_v(q) exp(i (p + q) . x); sums
    landing outside the band are dropped.  O(M^2) in the number M of
    nonzero modes, unbatched.
    """
    lat = u.lattice
    n = lat.n_modes
    keep = band_mask(lat, cutoff_fraction)
    m1, m2 = lat.m
    support_u = np.argwhere(np.any(u.coeffs != 0, axis=0))
    support_v = np.argwhere(np.any(v.coeffs != 0, axis=0))
    qi, qj = support_v[:, 0], support_v[:, 1]
    q_int = np.stack([m1[qi, qj], m2[qi, qj]], axis=1)
    q_vec = lat.k[:, qi, qj].T
    cv = v.coeffs[:, qi, qj].T
    out = np.zeros((2, n, n), dtype=complex)
    for pi, pj in support_u:
        cu = u.coeffs[:, pi, pj]
        amp = 1j * (q_vec @ cu)
        s_int = q_int + np.array([m1[pi, pj], m2[pi, pj]])
        inside = np.all((s_int >= -n // 2) & (s_int < n // 2), axis=1)
        if not np.any(inside):
            continue
        ti = s_int[inside, 0] % n
        tj = s_int[inside, 1] % n
        contrib = amp[inside, None] * cv[inside]
        np.add.at(out[0], (ti, tj), contrib[:, 0])
        np.add.at(out[1], (ti, tj), contrib[:, 1])
    return out * keep


def convolution_B(u: SpectralField, v: SpectralField, cutoff_fraction: float = 2.0 / 3.0) -> SpectralField:
    lat: Lattice = u.lattice
    return SpectralField(lat, leray_coeffs(lat, convolution_advection(u, v, cutoff_fraction)))


def quadrature_inner(lattice: Lattice, u_phys: np.ndarray, v_phys: np.ndarray) -> float:
    """Rectangle-rule L2 inner product on the grid (exact for trigonometric polynomials)."""
    cell = (lattice.box_length / lattice.n_modes) ** 2
    return float(np.sum(u_phys * v_phys) * cell)
