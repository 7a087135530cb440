import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helmholtz_hp.frequency_split import (
    GridFunction,
    apply_projector,
    base_bump,
    decompose,
    derivative_norm,
    grid_size_for,
    h1k_norm,
    l2_norm,
    loglog_slope,
    make_smooth_cutoff,
    scaling_report,
    semiclassical_sobolev_norm,
    smooth_step,
    spectral_derivative,
    spatial_cutoff_phi,
)


def chi_oracle(t):
    g = lambda s: mp.e ** (-1 / s) if s > 0 else mp.mpf(0)
    t = mp.mpf(t)
    if t <= 1:
        return mp.mpf(1)
    if t >= 2:
        return mp.mpf(0)
    return g(2 - t) / (g(2 - t) + g(t - 1))


def test_cutoff_midpoint():
    assert make_smooth_cutoff(3.0)(4.5) == pytest.approx(0.5, abs=1e-15)
    assert spatial_cutoff_phi(2.5, 1.0) == pytest.approx(0.5, abs=1e-15)


@given(st.floats(0.0, 3.0))
def test_cutoff_against_mpmath(t):
    assert float(base_bump(t)) == pytest.approx(float(chi_oracle(t)), abs=1e-14)


def test_cutoff_shape():
    t = np.linspace(0, 7, 7001)
    c = make_smooth_cutoff(3.0)(t)
    assert np.all(c[t <= 3] == 1) and np.all(c[t >= 6] == 0)
    assert np.all(np.diff(c) <= 0)
    with pytest.raises(ValueError):
        make_smooth_cutoff(0.0)
    with pytest.raises(ValueError):
        smooth_step(0.5, 1.0, 1.0)


def test_phi_support_2d():
    x = np.array([[1.9, 0.0], [0.0, 3.1], [2.2, 2.2]])
    assert np.allclose(spatial_cutoff_phi(x, 1.0), [1.0, 0.0, 0.0])


def test_grid_checks():
    with pytest.raises(ValueError):
        GridFunction(4.0, 100, np.zeros(100))
    with pytest.raises(ValueError):
        GridFunction(4.0, 64, np.zeros(65))
    a = GridFunction(4.0, 64, np.zeros(64))
    b = GridFunction(5.0, 64, np.zeros(64))
    with pytest.raises(ValueError):
        a + b


def test_grid_size_rule():
    n = grid_size_for(20.0, 3.0, 4.0)
    assert math.pi * n / 8.0 >= 4 * math.sqrt(6) * 20
    assert math.pi * (n // 2) / 8.0 < 4 * math.sqrt(6) * 20


def gaussian_packet(k, L=6.0, N=1024, dimension=1):
    def f(x):
        r2 = x**2 if dimension == 1 else np.sum(x**2, axis=-1)
        x0 = x if dimension == 1 else x[..., 0]
        return np.exp(-4 * r2) * (np.exp(1j * k * x0) + np.exp(2.5j * k * x0))

    return GridFunction.sample(f, L, N, dimension)


@pytest.mark.parametrize("dimension,N", [(1, 1024), (2, 128)])
def test_partition_and_idempotence(dimension, N):
    u = gaussian_packet(8.0, N=N, dimension=dimension)
    lo = apply_projector(u, 8.0, 3.0, "low")
    hi = apply_projector(u, 8.0, 3.0, "high")
    assert l2_norm(lo + hi - u) <= 1e-12 * l2_norm(u)
    # projectors are not idempotent, but they commute and are self-adjoint
    lohi = apply_projector(lo, 8.0, 3.0, "high")
    hilo = apply_projector(hi, 8.0, 3.0, "low")
    assert l2_norm(lohi - hilo) <= 1e-12 * l2_norm(u)
    v = gaussian_packet(5.0, N=N, dimension=dimension)
    lhs = np.vdot(v.values, apply_projector(u, 8.0, 3.0, "low").values)
    rhs = np.vdot(apply_projector(v, 8.0, 3.0, "low").values, u.values)
    assert abs(lhs - rhs) <= 1e-10 * abs(lhs)


def test_projector_frequency_support():
    u = gaussian_packet(10.0)
    k, mu = 10.0, 3.0
    zeta = np.abs(u.frequencies()[0])
    lo = np.abs(apply_projector(u, k, mu, "low").spectrum())
    hi = np.abs(apply_projector(u, k, mu, "high").spectrum())
    assert np.all(lo[zeta**2 >= 2 * mu * k**2] <= 1e-9)
    assert np.all(hi[zeta**2 <= mu * k**2] <= 1e-9)


def test_bernstein_bounds():
    k, mu = 10.0, 3.0
    u = gaussian_packet(k)
    lo = apply_projector(u, k, mu, "low")
    hi = apply_projector(u, k, mu, "high")
    assert derivative_norm(lo, 1) <= math.sqrt(2 * mu) * k * l2_norm(lo) * (1 + 1e-12)
    assert derivative_norm(hi, 1) >= math.sqrt(mu) * k * l2_norm(hi) * (1 - 1e-12)


def test_projector_errors():
    u = gaussian_packet(4.0)
    with pytest.raises(ValueError):
        apply_projector(u, 0.0, 3.0, "low")
    with pytest.raises(ValueError):
        apply_projector(u, 1.0, 3.0, "middle")


@given(st.floats(0.01, 0.5))
def test_plancherel(hbar):
    u = gaussian_packet(6.0, N=512)
    assert semiclassical_sobolev_norm(u, 0.0, hbar) == pytest.approx(l2_norm(u), rel=1e-12)


def test_sobolev_norm_against_derivatives():
    # s = 1: ||u||^2 + hbar^2 ||u'||^2
    hbar = 0.1
    u = gaussian_packet(6.0, N=512)
    expected = math.sqrt(l2_norm(u) ** 2 + hbar**2 * derivative_norm(u, 1) ** 2)
    assert semiclassical_sobolev_norm(u, 1.0, hbar) == pytest.approx(expected, rel=1e-10)


def test_sobolev_monotone_in_s():
    u = gaussian_packet(6.0, N=512)
    norms = [semiclassical_sobolev_norm(u, s, 0.2) for s in (-1, 0, 1, 2)]
    assert norms == sorted(norms)


def test_derivative_of_gaussian():
    u = GridFunction.sample(lambda x: np.exp(-(x**2)), 8.0, 512)
    # ||u'||^2 = int 4 x^2 e^{-2x^2} = sqrt(pi / 2)
    assert derivative_norm(u, 1) == pytest.approx(math.sqrt(math.sqrt(math.pi / 2)), rel=1e-12)
    assert l2_norm(u) == pytest.approx((math.pi / 2) ** 0.25, rel=1e-12)


def test_h1k_norm_grid():
    u = GridFunction.sample(lambda x: np.exp(-(x**2)), 8.0, 512)
    exact = math.sqrt(math.sqrt(math.pi / 2) + 9 * math.sqrt(math.pi / 2))
    assert h1k_norm(u, 3.0, 8.0) == pytest.approx(exact, rel=1e-10)
    with pytest.raises(ValueError):
        h1k_norm(u, 3.0)


def test_decompose_plane_wave():
    # a solution of the free equation sits at |zeta| = k, well inside the low band
    R, mu = 1.0, 3.0
    ratios = []
    for k in (10.0, 20.0, 40.0):
        L = R + 3.0
        N = 2 * grid_size_for(k, mu, L)
        u = GridFunction.sample(lambda x: np.exp(1j * k * x), L, N)
        d = decompose(u, 1.0, k, mu, R)
        assert l2_norm(d.u_low + d.u_high - d.phi_u) <= 1e-13 * l2_norm(d.phi_u)
        ratios.append(l2_norm(d.u_high) / l2_norm(d.u_low))
    assert ratios[-1] < 1e-3
    assert ratios == sorted(ratios, reverse=True)


@given(st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False))
def test_decompose_linear(c):
    k, R = 5.0, 1.0
    u = gaussian_packet(k, L=4.0, N=256)
    v = GridFunction.sample(lambda x: np.cos(3 * x), 4.0, 256)
    w = u.with_values(u.values + c * v.values)
    du, dv, dw = (decompose(g, 1.0, k, 3.0, R) for g in (u, v, w))
    diff = dw.u_high.values - du.u_high.values - c * dv.u_high.values
    assert np.max(np.abs(diff)) <= 1e-12 * (1 + abs(c))


def test_decompose_box_too_small():
    u = GridFunction.sample(np.cos, 2.5, 64)
    with pytest.raises(ValueError, match="box"):
        decompose(u, 1.0, 5.0, 3.0, 1.0)


def test_decompose_warns_below_mu_zero(caplog):
    u = GridFunction.sample(np.cos, 4.0, 256)
    with caplog.at_level("WARNING", logger="helmholtz_hp"):
        decompose(u, 1.0, 5.0, 2.0, 1.0, mu_min=3.0)
    assert any("mu" in r.message for r in caplog.records)


def test_loglog_slope():
    k = np.array([10.0, 20.0, 40.0])
    assert loglog_slope(k, 3 * k**2) == pytest.approx(2.0)
    assert loglog_slope(k, np.zeros(3)) == 0.0


def test_scaling_report_needs_three_runs():
    with pytest.raises(ValueError):
        scaling_report([])


@pytest.mark.parametrize("mu", [3.0, 5.0])
@pytest.mark.parametrize("j", [32, 64])
def test_plane_wave_leakage_matches_shifted_phi(mu, j):
    # with k on the lattice, the spectrum of phi e^{ikx} is that of phi shifted by j bins
    R, L = 1.0, 4.0
    k = j * math.pi / L
    N = 2 * grid_size_for(k, mu, L)
    u = GridFunction.sample(lambda x: np.exp(1j * k * x), L, N)
    d = decompose(u, 1.0, k, mu, R)
    phi = GridFunction.sample(lambda x: spatial_cutoff_phi(x, R), L, N)
    shifted = np.roll(phi.spectrum() * np.exp(1j * k * (-L)), j)
    zeta = u.frequencies()[0]
    oracle = u.with_values(np.fft.ifft((1 - make_smooth_cutoff(mu)(zeta**2 / k**2)) * shifted))
    assert l2_norm(d.u_high - oracle) <= 1e-10 * l2_norm(d.phi_u)
    if j == 64:
        assert l2_norm(d.u_high, d.ball_mask()) <= 1e-8 * l2_norm(d.phi_u)


def test_zero_input_gives_zero_parts():
    u = GridFunction(4.0, 256, np.zeros(256))
    d = decompose(u, 1.0, 10.0, 3.0, 1.0)
    assert not np.any(d.u_low.values) and not np.any(d.u_high.values)


def test_single_mode_sobolev_norm():
    L, N, j, hbar = 4.0, 256, 7, 0.3
    zeta = j * math.pi / L
    u = GridFunction.sample(lambda x: np.exp(1j * zeta * x), L, N)
    expected = l2_norm(u) * math.sqrt(1 + (hbar * zeta) ** 2)
    assert semiclassical_sobolev_norm(u, 1.0, hbar) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("j", [0, 3])
@given(order=st.integers(0, 3), seed=st.integers(0, 2**16))
def test_derivative_bound(j, order, seed):
    rng = np.random.default_rng(seed)
    g = GridFunction(4.0, 256, np.zeros(256))
    spec = rng.standard_normal(256) + 1j * rng.standard_normal(256)
    spec[np.abs(g.frequencies()[0]) > 15 + j] = 0
    u = g.with_values(np.fft.ifft(spec))
    hbar = 0.1
    lhs = hbar**order * l2_norm(spectral_derivative(u, (order,)))
    assert lhs <= semiclassical_sobolev_norm(u, order, hbar) * (1 + 1e-12)


def test_h1k_norm_grid_examples():
    # 2D disk of radius 1: constant c gives k |c| |B|^{1/2}, a plane wave k sqrt(2) |B|^{1/2}
    L, N, k = 2.0, 256, 5.0
    c = GridFunction.sample(lambda x: np.full(x.shape[:-1], 2.0), L, N, 2)
    area = np.count_nonzero(c.radius() < 1.0) * c.dx**2
    assert h1k_norm(c, k, 1.0) == pytest.approx(k * 2 * math.sqrt(area), rel=1e-12)
    zeta = 4 * math.pi / L * 2
    w = GridFunction.sample(lambda x: np.exp(1j * zeta * x[..., 0]), L, N, 2)
    assert h1k_norm(w, zeta, 1.0) == pytest.approx(zeta * math.sqrt(2 * area), rel=1e-10)
    assert h1k_norm(w, 3.0, 1.0) >= 3.0 * l2_norm(w, w.radius() < 1.0)


def test_scaling_report_zero_input():
    u = GridFunction(4.0, 256, np.zeros(256))
    runs = [(k, decompose(u, 1.0, k, 3.0, 1.0), 1.0) for k in (5.0, 10.0, 20.0)]
    rep = scaling_report(runs)
    assert all(r.ratio_high == 0 for r in rep.rows if r.order <= 2)
    assert all(r.ratio_low == 0 for r in rep.rows)
    assert set(rep.slopes_high.values()) == {0.0}
