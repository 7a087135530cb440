"""Dirichlet-to-Neumann map on the truncation boundary.

In 1D the map is the impedance u' = ik u (outward normal) at both endpoints.
In 2D it is diagonal in the Fourier modes e^{i m theta} with eigenvalues
d_m = k H_|m|'(kR) / H_|m|(kR), H = H^(1) the Hankel function.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .bessel import hankel1_table

PASSIVITY_TOL = 1e-12


def mode_truncation(k: float, R: float) -> int:
    kr = k * R
    return math.ceil(kr) + 16 + math.ceil(4.0 * kr ** (1.0 / 3.0))


def _hankel_log_derivatives(mmax: int, x: float) -> np.ndarray:
    """x H_m'(x) / H_m(x) for m = 0..mmax, overflow-free.

    The ratios s_m = H_m / H_{m-1} obey s_{m+1} = 2m/x - 1/s_m, run upward
    where the Y component dominates and the recurrence is stable.
    """
    h = hankel1_table(1, x)
    out = np.empty(mmax + 1, dtype=complex)
    out[0] = -x * h[1] / h[0]
    s = h[1] / h[0]
    for m in range(1, mmax + 1):
        # H_m' = H_{m-1} - (m/x) H_m
        out[m] = x / s - m
        s = 2.0 * m / x - 1.0 / s
    return out


def dtn_eigenvalue(m: int, k: float, R: float) -> complex:
    """k H_|m|'(kR) / H_|m|(kR)."""
    if not (k > 0 and R > 0):
        raise ValueError("k and R must be positive")
    m = abs(int(m))
    x = k * R
    val = _hankel_log_derivatives(m, x)[m] / R
    if not np.isfinite(val):
        raise FloatingPointError(f"Hankel ratio not finite for m={m}, kR={x}")
    return complex(val)


@dataclass
class DtnOperator:
    k: float
    R: float
    dimension: int = 1
    truncation: int = 0
    eigenvalues: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.eigenvalues is None:
            if self.dimension == 1:
                self.eigenvalues = np.array([1j * self.k])
            else:
                if self.truncation <= 0:
                    self.truncation = mode_truncation(self.k, self.R)
                half = _hankel_log_derivatives(self.truncation, self.k * self.R) / self.R
                self.eigenvalues = np.concatenate([half[:0:-1], half])
        self.eigenvalues = np.asarray(self.eigenvalues, dtype=complex)
        self.eigenvalues.setflags(write=False)

    @property
    def modes(self) -> np.ndarray:
        if self.dimension == 1:
            return np.array([0])
        return np.arange(-self.truncation, self.truncation + 1)

    def eigenvalue(self, m: int) -> complex:
        if self.dimension == 1:
            return complex(self.eigenvalues[0])
        if abs(m) > self.truncation:
            raise ValueError(f"mode {m} beyond truncation {self.truncation}")
        return complex(self.eigenvalues[m + self.truncation])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["m", "re_d", "im_d"])
            for m, d in zip(self.modes, self.eigenvalues):
                w.writerow([int(m), f"{d.real:.16e}", f"{d.imag:.16e}"])


def make_dtn(k: float, R: float, dimension: int = 1, truncation: int | None = None) -> DtnOperator:
    return DtnOperator(float(k), float(R), dimension, truncation or 0)


def apply_dtn(trace_modes, op: DtnOperator) -> np.ndarray:
    """Neumann data of the outgoing field with the given Dirichlet data.

    1D: ``trace_modes`` is the pair of endpoint values (u(-R), u(R)).
    2D: Fourier coefficients for m = -M..M.
    """
    t = np.asarray(trace_modes, dtype=complex)
    if op.dimension == 1:
        if t.shape != (2,):
            raise ValueError("1D trace must hold the two endpoint values")
        return op.eigenvalues[0] * t
    if t.shape != op.eigenvalues.shape:
        raise ValueError(f"trace has {t.size} modes, operator has {op.eigenvalues.size}")
    return op.eigenvalues * t


def passivity_check(op: DtnOperator) -> bool:
    return bool(np.all(op.eigenvalues.real <= PASSIVITY_TOL))


def estimate_cdtn1(op: DtnOperator, space) -> float:
    """Discrete sup |<DtN gamma u, gamma v>| / (||u||_{H1k} ||v||_{H1k}) over the space.

    With B the boundary-trace selector and G the H^1_k Gram matrix, the
    nonzero singular values of G^{-1/2} B^H L B G^{-1/2} agree with those of
    S^{1/2} L S^{1/2}, S = B G^{-1} B^H, a matrix of boundary size only.
    For the radial (2D) reduction the maximum over the retained modes is taken.
    """
    from .hp_fem import boundary_dofs, gram_h1k
    import scipy.sparse.linalg as spla

    if op.dimension == 1:
        cases = [(None, np.full(2, op.eigenvalues[0]))]
    else:
        cases = [(m, np.array([op.R * op.eigenvalue(m)])) for m in range(0, op.truncation + 1)]
    best = 0.0
    for m, lam in cases:
        G, free = gram_h1k(space, op.k, m)
        bd = boundary_dofs(space)
        pos = np.searchsorted(free, bd)
        lu = spla.splu(G.tocsc())
        cols = np.zeros((len(free), len(bd)))
        cols[pos, np.arange(len(bd))] = 1.0
        S = (lu.solve(cols))[pos, :]
        S = 0.5 * (S + S.T)
        half = sla.sqrtm(S).real
        core = half @ np.diag(lam) @ half
        best = max(best, float(np.linalg.norm(core, 2)))
    return best
