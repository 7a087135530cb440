import mpmath as mp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helmholtz_hp.dtn_map import (
    DtnOperator,
    apply_dtn,
    dtn_eigenvalue,
    estimate_cdtn1,
    make_dtn,
    mode_truncation,
    passivity_check,
)
from helmholtz_hp.hp_fem import build_space


def dtn_oracle(m, k, R):
    x = k * R
    h = lambda n: mp.hankel1(n, x)
    # H_m' = (H_{m-1} - H_{m+1}) / 2
    return complex(k * (h(m - 1) - h(m + 1)) / (2 * h(m)))


@pytest.mark.parametrize("m,k,R", [(0, 1.0, 1.0), (0, 10.0, 1.0), (3, 7.5, 2.0), (25, 20.0, 1.0)])
def test_eigenvalue_against_mpmath(m, k, R):
    assert dtn_eigenvalue(m, k, R) == pytest.approx(dtn_oracle(m, k, R), rel=1e-10)


def test_m0_unit():
    d = dtn_eigenvalue(0, 1.0, 1.0)
    assert d.imag > 0 and d.real < 0


def test_symmetric_in_m():
    assert dtn_eigenvalue(-4, 3.0, 1.0) == dtn_eigenvalue(4, 3.0, 1.0)


@pytest.mark.parametrize("k", [2.0, 10.0, 30.0])
def test_evanescent_regime(k):
    m = int(10 * k)
    d = dtn_eigenvalue(m, k, 1.0)
    assert abs(d - (-m / 1.0)) <= 0.1 * m


def test_truncation_rule():
    assert mode_truncation(10.0, 1.0) == 10 + 16 + 9
    op = make_dtn(10.0, 1.0, 2)
    assert op.truncation == 35 and op.eigenvalues.size == 71


@given(st.floats(0.5, 80.0), st.floats(0.5, 3.0))
def test_passivity(k, R):
    assert passivity_check(make_dtn(k, R, 2))


def test_1d_operator():
    op = make_dtn(4.0, 1.0, 1)
    assert op.eigenvalue(0) == 4j
    assert np.allclose(apply_dtn([1.0, 2.0], op), [4j, 8j])
    with pytest.raises(ValueError):
        apply_dtn([1.0, 2.0, 3.0], op)


def test_apply_2d_is_diagonal():
    op = make_dtn(5.0, 1.0, 2)
    t = np.zeros(op.eigenvalues.size, complex)
    t[op.truncation + 3] = 1.0
    out = apply_dtn(t, op)
    assert out[op.truncation + 3] == op.eigenvalue(3)
    assert np.count_nonzero(out) == 1
    with pytest.raises(ValueError):
        op.eigenvalue(op.truncation + 1)


def test_to_csv(tmp_path):
    op = make_dtn(3.0, 1.0, 2)
    op.to_csv(tmp_path / "dtn.csv")
    lines = (tmp_path / "dtn.csv").read_text().splitlines()
    assert lines[0] == "m,re_d,im_d" and len(lines) == op.eigenvalues.size + 1


def test_bad_arguments():
    with pytest.raises(ValueError):
        dtn_eigenvalue(0, 0.0, 1.0)


@pytest.mark.parametrize("k", [5.0, 20.0, 80.0])
def test_cdtn1_bounded(k):
    space = build_space(1.0, 0.5 * 4 / k, 4)
    c = estimate_cdtn1(make_dtn(k, 1.0, 1), space)
    assert 0.5 <= c <= 2.0


def test_cdtn1_refinement_stable():
    k = 20.0
    coarse = build_space(1.0, 0.1, 4)
    a = estimate_cdtn1(make_dtn(k, 1.0, 1), coarse)
    b = estimate_cdtn1(make_dtn(k, 1.0, 1), coarse.refine(2))
    assert abs(a - b) <= 0.02 * b


def test_cdtn1_radial():
    k = 5.0
    space = build_space(1.0, 0.05, 4, kind="radial")
    c = estimate_cdtn1(make_dtn(k, 1.0, 2), space)
    assert np.isfinite(c) and c > 0


def test_outgoing_trace_1d():
    k, R = 7.0, 1.5
    out = apply_dtn([0.0, np.exp(1j * k * R)], make_dtn(k, R, 1))
    assert out[1] == pytest.approx(1j * k * np.exp(1j * k * R), rel=1e-15)
    assert not np.any(apply_dtn(np.zeros(2), make_dtn(k, R, 1)))


def test_passivity_m60():
    op = make_dtn(5.0, 1.0, 2, truncation=60)
    assert op.eigenvalues.size == 121 and passivity_check(op)


def test_passivity_detects_sign_flip():
    op = make_dtn(5.0, 1.0, 2)
    bad = op.eigenvalues.copy()
    bad[op.truncation + 2] = -np.conj(bad[op.truncation + 2])
    assert not passivity_check(DtnOperator(5.0, 1.0, 2, op.truncation, bad))


def test_cdtn1_zero_operator():
    space = build_space(1.0, 0.1, 3)
    assert estimate_cdtn1(DtnOperator(10.0, 1.0, 1, 0, np.array([0j])), space) == 0.0


def test_cdtn1_nondecreasing_under_refinement():
    k = 10.0
    op = make_dtn(k, 1.0, 1)
    vals = [estimate_cdtn1(op, build_space(1.0, 0.2 / 2**i, 2)) for i in range(5)]
    assert all(b >= a * (1 - 1e-12) for a, b in zip(vals, vals[1:]))
    assert abs(vals[-1] - vals[-2]) <= 0.05 * vals[-1]
    assert vals[-1] <= 2
