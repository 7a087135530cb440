"""Bessel functions of integer order J_m, Y_m for real positive argument.

J is obtained from Miller's downward recurrence, carried out on the ratios
J_m / J_{m-1} so that no rescaling is needed, and normalised with the
identity J_0 + 2 sum_k J_2k = 1. Y_0 and Y_1 come from the Neumann series in
the J's for moderate argument and from Hankel's asymptotic expansion for large
argument; higher orders follow by upward recurrence, which is stable for Y.
"""

from __future__ import annotations

import math

import numpy as np

EULER_GAMMA = 0.57721566490153286061
ASYMPTOTIC_SWITCH = 25.0
MAX_ORDER = 200


def _miller_start(mmax: int, x: float) -> int:
    top = max(mmax, x)
    return int(top + 30 + 12 * math.sqrt(top)) + 2


def besselj_table(mmax: int, x: float, start: int | None = None) -> np.ndarray:
    """J_0(x), ..., J_mmax(x) by Miller's algorithm (x > 0)."""
    if not x > 0:
        raise ValueError(f"Bessel argument must be positive, got {x}")
    nstart = max(start or 0, _miller_start(mmax, x))
    # ratio[m] = J_m / J_{m-1}, from the continued fraction run downward
    ratio = np.zeros(nstart + 2)
    r = 0.0
    for m in range(nstart, 0, -1):
        denom = 2.0 * m / x - r
        if denom == 0.0:
            # x sits on a zero of J_{m-1} to machine precision
            denom = 1e-30
        r = 1.0 / denom
        ratio[m] = r
    # normalisation: 1 = J0 (1 + 2 sum_k prod_{i<=2k} ratio_i)
    total = 1.0
    prod = 1.0
    for m in range(1, nstart + 1):
        prod *= ratio[m]
        if m % 2 == 0:
            total += 2.0 * prod
        if prod == 0.0:
            break
    j = np.empty(mmax + 1)
    j[0] = 1.0 / total
    for m in range(1, mmax + 1):
        j[m] = j[m - 1] * ratio[m]
    return j


def _hankel_pq(nu: int, x: float) -> tuple[float, float]:
    """Asymptotic P and Q of Hankel's expansion, summed to the smallest term."""
    mu = 4.0 * nu * nu
    p = 1.0
    q = 0.0
    term = 1.0
    last = math.inf
    for k in range(1, 200):
        term *= (mu - (2 * k - 1) ** 2) / (k * 8.0 * x)
        if abs(term) > last:
            break
        last = abs(term)
        if k % 2 == 1:
            q += term * (-1) ** ((k - 1) // 2)
        else:
            p += term * (-1) ** (k // 2)
        if last < 1e-18:
            break
    return p, q


def _y01_asymptotic(x: float) -> tuple[float, float]:
    out = []
    for nu in (0, 1):
        p, q = _hankel_pq(nu, x)
        chi = x - (0.5 * nu + 0.25) * math.pi
        out.append(math.sqrt(2.0 / (math.pi * x)) * (p * math.sin(chi) + q * math.cos(chi)))
    return out[0], out[1]


def _y01_neumann(x: float, jt: np.ndarray) -> tuple[float, float]:
    log_term = math.log(x / 2.0) + EULER_GAMMA
    s0 = 0.0
    s1 = 0.0
    kmax = (len(jt) - 2) // 2
    for k in range(1, kmax + 1):
        sign = -1.0 if k % 2 else 1.0
        s0 += sign * jt[2 * k] / k
        s1 += sign * (1 + 2 * k) * jt[2 * k + 1] / (k * (1 + k))
    y0 = (2.0 / math.pi) * log_term * jt[0] - (4.0 / math.pi) * s0
    # psi(2) = 1 - gamma
    y1 = (
        -(2.0 / (math.pi * x)) * jt[0]
        + (2.0 / math.pi) * (log_term - 1.0) * jt[1]
        - (2.0 / math.pi) * s1
    )
    return y0, y1


def bessely_table(mmax: int, x: float, jt: np.ndarray | None = None) -> np.ndarray:
    """Y_0(x), ..., Y_mmax(x); orders past overflow come back as -inf."""
    if not x > 0:
        raise ValueError(f"Bessel argument must be positive, got {x}")
    y = np.empty(mmax + 1)
    if x >= ASYMPTOTIC_SWITCH:
        y0, y1 = _y01_asymptotic(x)
    else:
        if jt is None or len(jt) < _miller_start(1, x):
            jt = besselj_table(_miller_start(1, x) - 1, x)
        y0, y1 = _y01_neumann(x, jt)
    y[0] = y0
    if mmax >= 1:
        y[1] = y1
    with np.errstate(over="ignore", invalid="ignore"):
        for m in range(1, mmax):
            y[m + 1] = (2.0 * m / x) * y[m] - y[m - 1]
            if not np.isfinite(y[m + 1]):
                y[m + 1 :] = -np.inf
                break
    return y


def bessel_jy_table(mmax: int, x: float) -> tuple[np.ndarray, np.ndarray]:
    if mmax > MAX_ORDER:
        raise ValueError(f"order {mmax} exceeds supported maximum {MAX_ORDER}")
    n = max(mmax, _miller_start(1, x))
    jt = besselj_table(n, x)
    return jt[: mmax + 1].copy(), bessely_table(mmax, x, jt)


def bessel_jy(m: int, x: float) -> tuple[float, float]:
    """Return (J_m(x), Y_m(x)) for integer 0 <= m <= 200 and x > 0."""
    if m < 0:
        raise ValueError("order must be non-negative")
    j, y = bessel_jy_table(m, x)
    return float(j[m]), float(y[m])


def hankel1_table(mmax: int, x: float) -> np.ndarray:
    j, y = bessel_jy_table(mmax, x)
    return j + 1j * y
