import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helmholtz_hp.symbol_core import (
    PRESETS,
    CoefficientField,
    ConstantsReport,
    constants_report,
    cqo,
    c_cont_bound,
    eta_threshold,
    eval_symbol,
    from_knots,
    garding_constants,
    mu_zero,
    preset,
    validate_bounds,
    verify_ellipticity,
)


def scaled_field(a, n, dimension=2):
    """A = a I and n constant inside the unit ball."""
    return CoefficientField(
        lambda s: np.full_like(np.asarray(s, float), a),
        lambda s: np.full_like(np.asarray(s, float), n),
        min(a, 1.0), max(a, 1.0), min(n, 1.0), max(n, 1.0), 1.0, dimension,
    )


def test_symbol_examples():
    c = preset("constant", 2)
    assert eval_symbol(c, [0, 0], [1, 0]) == 0.0
    assert eval_symbol(c, [0, 0], [2, 0]) == 3.0
    f = scaled_field(2.0, 1.5)
    # independent scalar arithmetic: 2 * (1 + 1) - 1.5
    assert eval_symbol(f, [0.1, 0.2], [1, 1]) == pytest.approx(2 * (1 * 1 + 1 * 1) - 1.5, abs=1e-15)


def test_symbol_dimension_mismatch():
    with pytest.raises(ValueError):
        eval_symbol(preset("constant", 2), [0.0], [1.0, 0.0])
    with pytest.raises(ValueError):
        eval_symbol(preset("constant", 1), [0.0], [1.0, 0.0])


@given(
    st.sampled_from(PRESETS),
    st.floats(-1.2, 1.2),
    st.floats(-1.2, 1.2),
    st.floats(-5, 5),
    st.floats(-5, 5),
    st.floats(-4, 4),
)
def test_symbol_quadratic_in_xi(name, x0, x1, xi0, xi1, t):
    c = preset(name, 2)
    x = [x0, x1]
    n = float(c.n_eval(np.array([x]))[0])
    lhs = eval_symbol(c, x, [t * xi0, t * xi1]) + n
    rhs = t**2 * (eval_symbol(c, x, [xi0, xi1]) + n)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


@pytest.mark.parametrize(
    "a_min,n_max,expected", [(1.0, 1.0, 3.0), (2.0, 1.0, 2.0), (1.0, 4.0, 9.0)]
)
def test_mu_zero(a_min, n_max, expected):
    # only the declared bounds enter mu_0
    f = CoefficientField(
        lambda s: np.full_like(s, a_min), lambda s: np.full_like(s, n_max),
        a_min, a_min, 1.0, n_max, 1.0,
    )
    assert mu_zero(f) == expected


def test_mu_zero_presets():
    assert mu_zero(preset("constant")) == 3.0
    assert mu_zero(preset("nontrapping-bump")) == 5.0
    assert mu_zero(preset("trapping-well")) == 9.0


@pytest.mark.parametrize("name", PRESETS)
@pytest.mark.parametrize("dimension", [1, 2])
def test_ellipticity_at_mu_zero(name, dimension):
    c = preset(name, dimension)
    rep = verify_ellipticity(c, mu_zero(c), 32)
    assert rep.passed
    assert rep.minimum >= c.a_min / 2 - 1e-10


def test_ellipticity_boundary_case():
    # |xi|^2 = 3, A = I, n = 1: (3 - 1) / (1 + 3) = 1/2 exactly
    rep = verify_ellipticity(preset("constant"), 3.0, 16)
    assert rep.minimum == pytest.approx(0.5, abs=1e-15)


def test_ellipticity_bump_dense_oracle():
    c = preset("bump", 2)
    coarse = verify_ellipticity(c, 5.0, 24)
    fine = verify_ellipticity(c, 5.0, 64)
    assert coarse.passed and fine.passed
    assert coarse.minimum >= fine.minimum - 1e-12


def test_ellipticity_below_mu_zero():
    with pytest.raises(ValueError):
        verify_ellipticity(preset("constant"), 2.0)


def test_garding_constants():
    assert garding_constants(preset("constant"), 10.0) == (1.0, 400.0)
    assert garding_constants(scaled_field(2.0, 1.0), 1.0) == (1.0, 2 * (1 + 1.0))
    f = CoefficientField(
        lambda s: np.full_like(s, 2.0), lambda s: np.ones_like(s), 2.0, 2.0, 1.0, 1.0, 1.0
    )
    assert garding_constants(f, 1.0) == (2.0, 6.0)
    with pytest.raises(ValueError):
        garding_constants(f, 0.0)


@given(st.floats(0.1, 1e3))
def test_garding_k_homogeneity(k):
    c = preset("trapping-well")
    a1, cv1 = garding_constants(c, k)
    a2, cv2 = garding_constants(c, 2 * k)
    assert a1 == a2
    assert cv2 == pytest.approx(4 * cv1, rel=1e-14)
    assert cv1 / k**2 == pytest.approx(2 * (c.n_max + c.a_min), rel=1e-14)


def test_cqo_examples():
    unit = preset("constant")
    assert cqo(unit, 0.0) == 2.0
    f = CoefficientField(
        lambda s: np.where(np.abs(s) < 0.5, 2.0, 1.0), lambda s: np.ones_like(s), 1.0, 2.0, 1.0, 1.0, 1.0
    )
    assert cqo(f, 1.5) == 7.0
    assert c_cont_bound(f, 1.5) == 3.5
    g = CoefficientField(
        lambda s: np.full_like(s, 2.0), lambda s: np.ones_like(s), 2.0, 2.0, 1.0, 1.0, 1.0
    )
    h = CoefficientField(
        lambda s: np.full_like(s, 2.0), lambda s: np.ones_like(s), 1.0, 2.0, 1.0, 1.0, 1.0
    )
    assert cqo(g, 1.0) == pytest.approx(cqo(h, 1.0) / 2)
    with pytest.raises(ValueError):
        cqo(unit, -0.1)


def test_eta_threshold_constant():
    assert eta_threshold(preset("constant"), 1.0) == pytest.approx(0.25)


def test_constants_report_positive():
    r = constants_report(preset("bump"), 20.0, 1.0)
    assert r.mu0 == 5.0 and r.garding_cv == 2 * 400 * 3 and r.cqo == 6.0
    with pytest.raises(ValueError):
        ConstantsReport(1.0, 1.0, 1.0, 0.0, 1.0)


@pytest.mark.parametrize("name", PRESETS)
def test_presets_invariants(name, rng):
    for dim in (1, 2):
        c = preset(name, dim)
        validate_bounds(c)
        pts = rng.uniform(-3, 3, size=(2000, dim))
        out = np.linalg.norm(pts, axis=1) > c.support_radius
        assert np.all(c.n_eval(pts[out]) == 1.0)
        assert np.all(c.a_eval(pts[out]) == np.eye(dim))
        a = c.a_eval(pts)
        assert np.array_equal(a, np.swapaxes(a, 1, 2))


def test_bump_is_nontrapping_in_2d():
    # rays in a radial medium escape iff r^2 n(r) is increasing
    c = preset("nontrapping-bump", 2)
    r = np.linspace(1e-3, 1.2, 20001)
    assert np.all(np.diff(r**2 * c.n_scalar(r)) > 0)


def test_well_traps_in_2d():
    c = preset("trapping-well", 2)
    r = np.linspace(1e-3, 1.2, 20001)
    q = r**2 * c.n_scalar(r)
    assert np.any(np.diff(q) < 0)
    # a ray tangent at the well top cannot reach r = 1
    top = np.argmax(q[r < 0.9])
    assert q[top] > q[np.searchsorted(r, 0.85)]


def test_unknown_preset():
    with pytest.raises(KeyError):
        preset("flat")


def test_from_knots():
    f = from_knots([0.0, 0.4, 0.8], [1.5, 1.2, 1.0], dimension=2)
    assert f.n_max == 1.5 and f.support_radius == 0.8
    assert f.n_eval(np.array([[0.0, 0.9]]))[0] == 1.0
    with pytest.raises(ValueError):
        from_knots([0.0, 0.5], [2.0, 1.5])
    with pytest.raises(ValueError):
        from_knots([0.5, 0.2], [2.0, 1.0])


def test_validate_bounds_catches_lies():
    liar = CoefficientField(
        lambda s: np.ones_like(s), lambda s: np.full_like(s, 3.0), 1.0, 1.0, 1.0, 2.0, 1.0
    )
    with pytest.raises(ValueError):
        validate_bounds(liar)


def test_2d_requires_radial():
    with pytest.raises(ValueError):
        CoefficientField(np.ones_like, np.ones_like, 1, 1, 1, 1, 1.0, 2, False)
