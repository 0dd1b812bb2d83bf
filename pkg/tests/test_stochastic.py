import numpy as np
import pytest

from simlab.spectral import SpectralField, make_lattice, sobolev_norm
from simlab.stochastic import (
    BatchNormals,
    IncrementSampler,
    NoiseSpec,
    RngStream,
    coarsen_increments,
    ou_exact_step,
    ou_stationary_moment,
    sample_increments,
    sample_wiener_increment,
    trace_in_sobolev,
)

# independent summation over integer wavevectors in the 2/3 band (see test_trace_oracle)
TRACE_Q1_N32 = 2.1439552578332166
TRACE_Q0_N32 = 2.068432209133145


def _trace_oracle(gamma, n, box, decay, sigma0=1.0):
    kmax = int((2 / 3) * n / 2)
    total = 0.0
    for a in range(-kmax, kmax + 1):
        for b in range(-kmax, kmax + 1):
            w = 1 + (2 * np.pi / box) ** 2 * (a * a + b * b)
            total += (2 if a == b == 0 else 1) * sigma0**2 * w ** (gamma - decay)
    return total


def test_trace_frozen_values(lat32):
    noise = NoiseSpec()
    assert trace_in_sobolev(noise, 1.0, lat32) == pytest.approx(TRACE_Q1_N32, rel=1e-13)
    assert trace_in_sobolev(noise, 0.0, lat32) == pytest.approx(TRACE_Q0_N32, rel=1e-13)


@pytest.mark.parametrize("n,box,decay,gamma", [(16, 2 * np.pi, 6.0, 1.0), (32, 5.0, 4.0, 2.0), (16, 1.0, 7.0, 3.0)])
def test_trace_oracle(n, box, decay, gamma):
    lat = make_lattice(n, box)
    got = trace_in_sobolev(NoiseSpec(1.3, decay), gamma, lat)
    assert got == pytest.approx(_trace_oracle(gamma, n, box, decay, 1.3), rel=1e-13)


def test_ou_moment_at_alpha_plus_one_is_half_trace(lat32):
    noise = NoiseSpec()
    for nu in (0.5, 0.1, 0.02):
        m = ou_stationary_moment(noise, nu, 2.0, 3.0, lat32)
        assert m == pytest.approx(TRACE_Q1_N32 / 2, rel=1e-13)


def test_wiener_increment_trace_monte_carlo(lat16):
    noise = NoiseSpec(1.0, 2.0)
    dt = 0.3
    dw = sample_wiener_increment(noise, dt, np.random.default_rng(1), lat16, (8000,))
    assert dw.is_real(1e-14) and dw.is_solenoidal(1e-14) and dw.is_band_limited()
    sq = sobolev_norm(dw, 1.0) ** 2
    target = dt * trace_in_sobolev(noise, 1.0, lat16)
    assert abs(sq.mean() - target) <= 4 * sq.std() / np.sqrt(sq.size)


def test_active_set_closed_under_negation(lat16):
    noise = NoiseSpec(active_set=[(1, 2), (0, 3)])
    mask = noise.active_mask(lat16)
    assert mask.sum() == 4
    assert mask[lat16.position(-1, -2)] and mask[lat16.position(0, -3)]
    with pytest.raises(ValueError):
        NoiseSpec(active_set=[(-8, 1)]).active_mask(lat16)
    with pytest.raises(ValueError):
        NoiseSpec(active_set="some")


def test_zero_noise_gives_zero_increments(lat16):
    dw, dz = sample_increments(lat16, NoiseSpec(0.0), 0.1, 2.0, 0.1, np.random.default_rng(0), (3,))
    assert not dw.any() and not dz.any()


def test_joint_law_covariance():
    # E[dZ conj(dW)] per mode = rho * E|dW|^2 with rho = sqrt(nu)(1 - e^{-x})/x
    nu, alpha, dt = 0.7, 2.0, 0.4
    lat = make_lattice(8, 2 * np.pi)
    noise = NoiseSpec(1.0, 2.0, active_set=[(1, 0)])
    dw, dz = sample_increments(lat, noise, nu, alpha, dt, np.random.default_rng(2), (40000,))
    i, j = lat.position(1, 0)
    w, z = dw[:, 1, i, j], dz[:, 1, i, j]
    lam = 2.0**alpha
    x = nu * lam * dt
    rho = np.sqrt(nu) * (1 - np.exp(-x)) / x
    var_z = nu * np.mean(np.abs(w) ** 2) / dt * (1 - np.exp(-2 * x)) / (2 * nu * lam)
    cross = np.mean(z * np.conj(w)).real
    assert cross == pytest.approx(rho * np.mean(np.abs(w) ** 2), rel=0.03)
    assert np.mean(np.abs(z) ** 2) == pytest.approx(var_z, rel=0.03)


def test_rng_streams_independent_of_batching(lat16):
    s = IncrementSampler(lat16, NoiseSpec(), 0.1, 2.0, 0.1)
    streams = [RngStream(9, r, key=(0,)) for r in range(4)]
    together = BatchNormals(streams, s.width, block=3)
    alone = BatchNormals([streams[2]], s.width, block=5)
    for _ in range(7):
        assert np.array_equal(together.next()[2], alone.next()[0])
    assert not np.array_equal(RngStream(9, 0).generator().standard_normal(3),
                              RngStream(9, 1).generator().standard_normal(3))


def test_ou_exact_step_stationary_variance():
    lat = make_lattice(8, 2 * np.pi)
    noise = NoiseSpec(1.0, 2.0, active_set=[(1, 1), (2, 0)])
    nu, alpha = 0.3, 2.0
    z = SpectralField.zeros(lat, (40000,))
    g = np.random.default_rng(4)
    for _ in range(5):
        z = ou_exact_step(z, 10.0, nu, alpha, noise, g)
    sq = sobolev_norm(z, 0.0) ** 2
    target = ou_stationary_moment(noise, nu, alpha, 0.0, lat)
    assert abs(sq.mean() - target) <= 4 * sq.std() / np.sqrt(sq.size)


def test_coarsened_increments_have_coarse_law():
    lat = make_lattice(8, 2 * np.pi)
    nu, alpha, dt = 0.5, 2.0, 0.05
    noise = NoiseSpec(1.0, 2.0, active_set=[(1, 0)])
    g = np.random.default_rng(5)
    fine = [sample_increments(lat, noise, nu, alpha, dt, g, (40000,)) for _ in range(2)]
    dw, dz = coarsen_increments(np.array([f[0] for f in fine]), np.array([f[1] for f in fine]), lat, nu, alpha, dt)
    cw, cz = sample_increments(lat, noise, nu, alpha, 2 * dt, g, (40000,))
    i, j = lat.position(1, 0)
    for a, b in ((dw[0], cw), (dz[0], cz)):
        va, vb = np.mean(np.abs(a[:, 1, i, j]) ** 2), np.mean(np.abs(b[:, 1, i, j]) ** 2)
        assert va == pytest.approx(vb, rel=0.03)


def test_sampler_rejects_bad_parameters(lat16):
    with pytest.raises(ValueError):
        IncrementSampler(lat16, NoiseSpec(), 0.1, 2.0, 0.0)
    with pytest.raises(ValueError):
        IncrementSampler(lat16, NoiseSpec(), -1.0, 2.0, 0.1)
    with pytest.raises(ValueError):
        NoiseSpec(-1.0)
