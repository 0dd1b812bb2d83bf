import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from simlab.nonlinearity import (
    DealiasRule,
    bilinear_B,
    check_B_bound,
    quadratic_B,
    quadratic_B_coeffs,
    trilinear_b,
)
from simlab.oracles import convolution_B
from simlab.spectral import SpectralField, make_lattice, random_solenoidal, sobolev_inner, sobolev_norm


def _fields(seed, n=16, batch=()):
    lat = make_lattice(n, 2 * np.pi)
    return lat, random_solenoidal(lat, np.random.default_rng(seed), batch)


def test_matches_convolution_oracle(lat16, rng):
    for _ in range(3):
        u = random_solenoidal(lat16, rng, slope=1.0)
        v = random_solenoidal(lat16, rng, slope=1.0)
        fast = bilinear_B(u, v).coeffs
        slow = convolution_B(u, v).coeffs
        assert np.max(np.abs(fast - slow)) <= 1e-12 * np.max(np.abs(slow))


def test_divergence_form_equals_advective(lat32, rng):
    u = random_solenoidal(lat32, rng, (5,))
    a = quadratic_B(u).coeffs
    b = quadratic_B_coeffs(lat32, u.coeffs, DealiasRule().mask(lat32))
    assert np.max(np.abs(a - b)) <= 1e-13 * np.max(np.abs(a))


def test_single_mode_self_interaction_vanishes(lat16):
    # a single Fourier pair is a steady Euler flow: B(u) = 0
    c = np.zeros((2, 16, 16), dtype=complex)
    c[:, 1, 2] = [2.0, -1.0]
    c[:, 15, 14] = [2.0, -1.0]
    u = SpectralField(lat16, c)
    assert np.max(np.abs(quadratic_B(u).coeffs)) < 1e-14


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.5, 4.0))
def test_cancellations(seed, slope):
    lat = make_lattice(16, 2 * np.pi)
    u = random_solenoidal(lat, np.random.default_rng(seed), slope=slope)
    b = quadratic_B(u)
    for s in (0.0, 1.0):
        scale = sobolev_norm(b, s) * sobolev_norm(u, s)
        assert abs(sobolev_inner(b, u, s)) <= 1e-12 * scale


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_trilinear_antisymmetry(seed):
    lat, f = _fields(seed, batch=(3,))
    u, v, w = f[0], f[1], f[2]
    a = trilinear_b(u, v, w)
    b = trilinear_b(u, w, v)
    scale = sobolev_norm(u, 1.0) * sobolev_norm(v, 1.0) * sobolev_norm(w, 1.0)
    assert abs(a + b) <= 1e-12 * scale


def test_bilinear_in_each_slot(lat16, rng):
    u, v, w = (random_solenoidal(lat16, rng) for _ in range(3))
    lhs = bilinear_B(u * 2.0 + w, v).coeffs
    rhs = 2.0 * bilinear_B(u, v).coeffs + bilinear_B(w, v).coeffs
    assert np.allclose(lhs, rhs, atol=1e-13)


def test_output_is_real_solenoidal_banded(lat32, rng):
    b = quadratic_B(random_solenoidal(lat32, rng))
    assert b.is_real(1e-13) and b.is_solenoidal(1e-13) and b.is_band_limited()


def test_rejects_non_solenoidal_input(lat16, rng):
    c = np.zeros((2, 16, 16), dtype=complex)
    c[0, 1, 0] = c[0, 15, 0] = 1.0  # compressive mode
    with pytest.raises(ValueError):
        quadratic_B(SpectralField(lat16, c))


def test_B_bound_guard_and_finite_ratio(lat16, rng):
    u, v = random_solenoidal(lat16, rng), random_solenoidal(lat16, rng)
    with pytest.raises(ValueError):
        check_B_bound(u, v, 2.0)
    lhs, rhs = check_B_bound(u, v, 3.0)
    assert np.isfinite(lhs / rhs)


def test_dealias_rule_validation():
    with pytest.raises(ValueError):
        DealiasRule(0.0)
    with pytest.raises(ValueError):
        DealiasRule(1.5)
