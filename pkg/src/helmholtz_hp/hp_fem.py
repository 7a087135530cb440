"""hp finite elements for the truncated Helmholtz problem.

Two geometries share one code path:

* ``interval``: B_R = (-R, R) in 1D, DtN impedance at both endpoints;
* ``radial``: one angular Fourier mode of the problem on the disk B_R, posed
  on (0, R) with Jacobian weight r, the potential m^2/r^2 and the modal DtN
  eigenvalue at r = R. For m != 0 the value at the origin is pinned to zero.

The basis is the hierarchical integrated-Legendre one: two hat functions per
element plus interior bubbles (P_j - P_{j-2}) / sqrt(2(2j-1)), whose
derivatives are orthonormal on the reference element.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Literal

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numpy.polynomial import legendre as npleg

from .bessel import bessel_jy_table
from .dtn_map import DtnOperator

logger = logging.getLogger(__name__)

MAX_DEGREE = 32
RESIDUAL_TOL = 1e-10
CONDITION_LIMIT = 1e14


class SolverError(RuntimeError):
    """Galerkin system could not be solved; carries the discretisation parameters."""

    def __init__(self, message: str, k: float, h: float, p: int):
        super().__init__(f"{message} (k={k}, h={h}, p={p})")
        self.k = k
        self.h = h
        self.p = p


@dataclass(frozen=True)
class Mesh1D:
    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 1 or len(v) < 2 or np.any(np.diff(v) <= 0):
            raise ValueError("mesh vertices must be strictly increasing")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    @property
    def n_elements(self) -> int:
        return len(self.vertices) - 1

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.vertices)

    @property
    def h(self) -> float:
        return float(self.lengths.max())

    @property
    def quasi_uniformity_ratio(self) -> float:
        return float(self.lengths.max() / self.lengths.min())

    def refine(self, factor: int) -> "Mesh1D":
        v = self.vertices
        t = np.arange(factor) / factor
        pts = (v[:-1, None] + t[None, :] * np.diff(v)[:, None]).ravel()
        return Mesh1D(np.append(pts, v[-1]))


@dataclass(frozen=True)
class HpSpace:
    mesh: Mesh1D
    p: int
    kind: Literal["interval", "radial"] = "interval"

    def __post_init__(self):
        if not 1 <= self.p <= MAX_DEGREE:
            raise ValueError(f"unsupported degree p={self.p}; need 1 <= p <= {MAX_DEGREE}")
        if self.kind not in ("interval", "radial"):
            raise ValueError(f"unknown space kind {self.kind!r}")
        if self.kind == "radial" and self.mesh.vertices[0] != 0.0:
            raise ValueError("radial meshes start at r = 0")
        if self.mesh.quasi_uniformity_ratio > 4.0:
            raise ValueError("mesh is not quasi-uniform (max/min element length > 4)")

    @property
    def n_elements(self) -> int:
        return self.mesh.n_elements

    @property
    def dof_count(self) -> int:
        return self.n_elements * self.p + 1

    @property
    def h(self) -> float:
        return self.mesh.h

    @property
    def R(self) -> float:
        return float(self.mesh.vertices[-1])

    @property
    def weighted(self) -> bool:
        return self.kind == "radial"

    def local_to_global(self) -> np.ndarray:
        ne, p = self.n_elements, self.p
        e = np.arange(ne)
        cols = [e, e + 1]
        base = ne + 1
        for j in range(p - 1):
            cols.append(base + e * (p - 1) + j)
        return np.stack(cols, axis=1)

    def refine(self, factor: int, p: int | None = None) -> "HpSpace":
        """A space containing this one: every element split into ``factor`` pieces."""
        p = self.p if p is None else p
        if p < self.p:
            raise ValueError("refined degree must not decrease")
        return HpSpace(self.mesh.refine(factor), p, self.kind)


def build_space(R: float, h: float, p: int, kind: Literal["interval", "radial"] = "interval") -> HpSpace:
    """Uniform mesh of (-R, R) (ceil(2R/h) elements) or (0, R) (ceil(R/h) elements)."""
    if not (0 < h and R > 0):
        raise ValueError("need h > 0 and R > 0")
    if p > MAX_DEGREE:
        raise ValueError(f"unsupported degree p={p} (maximum {MAX_DEGREE})")
    if kind == "interval":
        ne = max(1, math.ceil(2 * R / h - 1e-12))
        verts = np.linspace(-R, R, ne + 1)
    elif kind == "radial":
        ne = max(1, math.ceil(R / h - 1e-12))
        verts = np.linspace(0.0, R, ne + 1)
    else:
        raise ValueError(f"unknown space kind {kind!r}")
    return HpSpace(Mesh1D(verts), int(p), kind)


@lru_cache(maxsize=256)
def _reference_basis_cached(p: int, xi_key: tuple) -> tuple[np.ndarray, np.ndarray]:
    xi = np.array(xi_key)
    return _reference_basis(p, xi)


def _reference_basis(p: int, xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    xi = np.asarray(xi, dtype=float)
    leg = npleg.legvander(xi, max(p, 1))  # (n, p+1): P_0..P_p
    vals = np.empty((p + 1, len(xi)))
    ders = np.empty((p + 1, len(xi)))
    vals[0] = 0.5 * (1 - xi)
    vals[1] = 0.5 * (1 + xi)
    ders[0] = -0.5
    ders[1] = 0.5
    for j in range(2, p + 1):
        c = 1.0 / math.sqrt(2.0 * (2 * j - 1))
        vals[j] = c * (leg[:, j] - leg[:, j - 2])
        ders[j] = math.sqrt((2 * j - 1) / 2.0) * leg[:, j - 1]
    return vals, ders


def reference_basis(p: int, xi) -> tuple[np.ndarray, np.ndarray]:
    """Shape functions and their d/dxi on [-1, 1], each of shape (p+1, len(xi))."""
    xi = np.asarray(xi, dtype=float)
    return _reference_basis_cached(p, tuple(xi.tolist()))


@lru_cache(maxsize=64)
def gauss(nq: int) -> tuple[np.ndarray, np.ndarray]:
    return npleg.leggauss(nq)


def quadrature_order(p: int) -> int:
    return 2 * p + 4


def element_quadrature(space: HpSpace, nq: int | None = None):
    """Physical quadrature points (ne, nq), weights incl. Jacobian (ne, nq), reference nodes."""
    nq = nq or quadrature_order(space.p)
    xi, w = gauss(nq)
    v = space.mesh.vertices
    mid = 0.5 * (v[:-1] + v[1:])
    jac = 0.5 * np.diff(v)
    x = mid[:, None] + jac[:, None] * xi[None, :]
    wt = jac[:, None] * w[None, :]
    return x, wt, xi, jac


def breakpoint_quadrature(breaks: np.ndarray, nq: int):
    """Gauss rule on every interval between consecutive breakpoints (flattened)."""
    xi, w = gauss(nq)
    mid = 0.5 * (breaks[:-1] + breaks[1:])
    jac = 0.5 * np.diff(breaks)
    x = (mid[:, None] + jac[:, None] * xi[None, :]).ravel()
    wt = (jac[:, None] * w[None, :]).ravel()
    return x, wt


def locate(space: HpSpace, x: np.ndarray) -> np.ndarray:
    v = space.mesh.vertices
    idx = np.searchsorted(v, x, side="right") - 1
    return np.clip(idx, 0, space.n_elements - 1)


def basis_matrices(space: HpSpace, x) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Sparse (npts x ndof) matrices of basis values and x-derivatives at x."""
    x = np.asarray(x, dtype=float).ravel()
    el = locate(space, x)
    v = space.mesh.vertices
    mid = 0.5 * (v[el] + v[el + 1])
    jac = 0.5 * (v[el + 1] - v[el])
    xi = (x - mid) / jac
    vals, ders = _reference_basis(space.p, xi)
    ders = ders / jac[None, :]
    l2g = space.local_to_global()[el]  # (n, p+1)
    rows = np.repeat(np.arange(len(x)), space.p + 1)
    cols = l2g.ravel()
    shape = (len(x), space.dof_count)
    V = sp.csr_matrix((vals.T.ravel(), (rows, cols)), shape=shape)
    D = sp.csr_matrix((ders.T.ravel(), (rows, cols)), shape=shape)
    return V, D


def boundary_dofs(space: HpSpace) -> np.ndarray:
    """Global indices of the dofs carrying the trace on the truncation boundary."""
    if space.kind == "interval":
        return np.array([0, space.n_elements])
    return np.array([space.n_elements])


def free_dofs(space: HpSpace, mode_m: int | None) -> np.ndarray:
    all_dofs = np.arange(space.dof_count)
    if space.kind == "radial" and mode_m not in (None, 0):
        return all_dofs[1:]
    return all_dofs


def _assemble_local(space: HpSpace, stiff_w: np.ndarray, mass_w: np.ndarray, jac, vals, ders):
    """Sum over quadrature of stiff_w * phi_i' phi_j' + mass_w * phi_i phi_j per element.

    ``stiff_w`` and ``mass_w`` already include quadrature weights; ders are
    reference derivatives so the chain rule factor 1/jac^2 is applied here.
    """
    ke = np.einsum("eq,iq,jq->eij", stiff_w / jac[:, None] ** 2, ders, ders)
    me = np.einsum("eq,iq,jq->eij", mass_w, vals, vals)
    return ke, me


def _scatter(space: HpSpace, local: np.ndarray) -> sp.csr_matrix:
    l2g = space.local_to_global()
    n1 = space.p + 1
    rows = np.repeat(l2g, n1, axis=1).ravel()
    cols = np.tile(l2g, (1, n1)).ravel()
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(space.dof_count,) * 2)


def _geometric_weight(space: HpSpace, x: np.ndarray) -> np.ndarray:
    return x if space.weighted else np.ones_like(x)


def mass_matrix(space: HpSpace, weight: Callable | None = None, nq: int | None = None) -> sp.csr_matrix:
    """Int w phi_j phi_i (times r on radial spaces)."""
    x, wt, xi, jac = element_quadrature(space, nq)
    vals, ders = reference_basis(space.p, xi)
    mw = wt * _geometric_weight(space, x)
    if weight is not None:
        mw = mw * weight(x)
    _, me = _assemble_local(space, np.zeros_like(mw), mw, jac, vals, ders)
    return _scatter(space, me)


def stiffness_matrix(
    space: HpSpace, weight: Callable | None = None, mode_m: int | None = None, nq: int | None = None
) -> sp.csr_matrix:
    """Int w phi_j' phi_i' (+ w m^2/r^2 phi_j phi_i on radial spaces), Jacobian r included."""
    x, wt, xi, jac = element_quadrature(space, nq)
    vals, ders = reference_basis(space.p, xi)
    a = np.ones_like(x) if weight is None else weight(x)
    sw = wt * _geometric_weight(space, x) * a
    if space.weighted and mode_m:
        mw = wt * a * mode_m**2 / x
    else:
        mw = np.zeros_like(x)
    ke, me = _assemble_local(space, sw, mw, jac, vals, ders)
    return _scatter(space, ke + me)


def gram_h1k(space: HpSpace, k: float, mode_m: int | None = None):
    """H^1_k Gram matrix restricted to the free dofs, and the free dof indices."""
    G = stiffness_matrix(space, mode_m=mode_m) + k**2 * mass_matrix(space)
    free = free_dofs(space, mode_m)
    return G[free][:, free].tocsc(), free


@dataclass
class AssembledSystem:
    stiffness: sp.csr_matrix
    mass_n: sp.csr_matrix
    dtn_coupling: sp.csr_matrix
    k: float
    coeffs: object
    space: HpSpace
    mode_m: int | None = None
    _lu: object = field(default=None, repr=False)
    _lu_adjoint: object = field(default=None, repr=False)

    @property
    def matrix(self) -> sp.csr_matrix:
        return (self.stiffness - self.k**2 * self.mass_n - self.dtn_coupling).tocsr()

    @property
    def free(self) -> np.ndarray:
        return free_dofs(self.space, self.mode_m)

    def reduced(self) -> sp.csc_matrix:
        f = self.free
        return self.matrix[f][:, f].tocsc()

    def sesquilinear(self, u, v) -> complex:
        """a(u, v) for coefficient vectors u, v (linear in u, antilinear in v)."""
        return complex(np.conj(v) @ (self.matrix @ u))

    def factor(self):
        if self._lu is None:
            self._lu = _factorise(self.reduced(), self)
        return self._lu

    def factor_adjoint(self):
        if self._lu_adjoint is None:
            self._lu_adjoint = _factorise(self.reduced().conj().T.tocsc(), self)
        return self._lu_adjoint


def _factorise(Ared: sp.csc_matrix, system: AssembledSystem):
    sp_ = system.space
    try:
        lu = spla.splu(Ared)
    except RuntimeError as exc:
        raise SolverError(f"singular Galerkin matrix: {exc}", system.k, sp_.h, sp_.p) from exc
    n = Ared.shape[0]
    inv = spla.LinearOperator(
        (n, n), matvec=lu.solve, rmatvec=lambda y: lu.solve(y, trans="H"), dtype=complex
    )
    try:
        cond = spla.onenormest(Ared) * spla.onenormest(inv)
    except Exception:  # onenormest needs n >= 2 and can trip on tiny systems
        cond = np.linalg.cond(Ared.toarray(), 1)
    if not np.isfinite(cond) or cond > CONDITION_LIMIT:
        raise SolverError(f"near-singular Galerkin matrix (condition ~ {cond:.3e})", system.k, sp_.h, sp_.p)
    return lu


def _check_quadrature(space: HpSpace, coeffs) -> None:
    x, wt, _, _ = element_quadrature(space)
    x2, wt2, _, _ = element_quadrature(space, 2 * quadrature_order(space.p))
    for prof in (coeffs.a_scalar, coeffs.n_scalar):
        i1 = np.sum(wt * prof(x), axis=1)
        i2 = np.sum(wt2 * prof(x2), axis=1)
        if np.max(np.abs(i1 - i2) / np.abs(i2)) > 1e-6:
            logger.warning("coefficient varies on a scale the element quadrature does not resolve")
            return


def assemble(coeffs, k: float, space: HpSpace, dtn: DtnOperator | None, mode_m: int | None = None) -> AssembledSystem:
    """K - k^2 M_n - D for a(u, v) = int A u' v' - k^2 n u v - <DtN u, v>.

    ``dtn=None`` drops the boundary term (used by tests and adjoint fixtures).
    """
    if not k > 0:
        raise ValueError("k must be positive")
    if space.kind == "radial":
        if mode_m is None:
            raise ValueError("radial spaces need a mode index")
        if dtn is not None and dtn.dimension != 2:
            raise ValueError("radial spaces need a 2D DtN operator")
    elif dtn is not None and dtn.dimension != 1:
        raise ValueError("interval spaces need the 1D DtN operator")
    if dtn is not None and (not math.isclose(dtn.k, k) or not math.isclose(dtn.R, space.R)):
        raise ValueError("DtN operator does not match k and R")
    _check_quadrature(space, coeffs)
    K = stiffness_matrix(space, coeffs.a_scalar, mode_m)
    Mn = mass_matrix(space, coeffs.n_scalar)
    n = space.dof_count
    D = sp.csr_matrix((n, n), dtype=complex)
    if dtn is not None:
        bd = boundary_dofs(space)
        if space.kind == "interval":
            vals = np.full(2, dtn.eigenvalue(0))
        else:
            vals = np.array([space.R * dtn.eigenvalue(mode_m)])
        D = sp.csr_matrix((vals, (bd, bd)), shape=(n, n))
    return AssembledSystem(K.astype(complex), Mn.astype(complex), D, float(k), coeffs, space, mode_m)


def load_l2(f: Callable, space: HpSpace, breaks=None) -> np.ndarray:
    """F_j = int f phi_j (r dr on radial spaces).

    Jumps of f inside an element spoil Gauss quadrature; list them in
    ``breaks`` (or give f a ``breaks`` attribute) to split the rule there.
    """
    breaks = getattr(f, "breaks", ()) if breaks is None else breaks
    v = space.mesh.vertices
    inner = [b for b in breaks if v[0] < b < v[-1]]
    if inner:
        x, wt = breakpoint_quadrature(np.union1d(v, inner), quadrature_order(space.p) + 8)
        V, _ = basis_matrices(space, x)
        fx = np.asarray(f(x), dtype=complex) * wt * _geometric_weight(space, x)
        return np.asarray(V.T @ fx).ravel()
    x, wt, xi, _ = element_quadrature(space, quadrature_order(space.p) + 8)
    vals, _ = reference_basis(space.p, xi)
    fx = np.asarray(f(x), dtype=complex) * wt * _geometric_weight(space, x)
    local = np.einsum("eq,iq->ei", fx, vals)
    out = np.zeros(space.dof_count, dtype=complex)
    np.add.at(out, space.local_to_global(), local)
    return out


def planewave_mode_coefficient(m: int, k: float, r: np.ndarray | float, theta_a: float = 0.0):
    """Mode-m Fourier coefficient of exp(i k x.a) on the circle of radius r: i^|m| J_|m|(kr) e^{-i m theta_a}."""
    r = np.atleast_1d(np.asarray(r, dtype=float))
    mm = abs(m)
    out = np.empty(len(r), dtype=complex)
    for i, ri in enumerate(r):
        if ri == 0.0:
            out[i] = 1.0 if mm == 0 else 0.0
        else:
            out[i] = bessel_jy_table(mm, k * ri)[0][mm]
    return (1j) ** mm * out * np.exp(-1j * m * theta_a)


def load_planewave(a, k: float, space: HpSpace, dtn: DtnOperator, mode_m: int | None = None) -> np.ndarray:
    """F(v) = int_{boundary} (d_n u^I - DtN u^I) v for u^I = exp(i k x.a).

    1D: ``a`` is +1 or -1. Radial: ``a`` is a unit vector (or angle) and the
    mode-m part of the functional is returned.
    """
    out = np.zeros(space.dof_count, dtype=complex)
    R = space.R
    if space.kind == "interval":
        a = float(np.ravel(a)[0])
        if not math.isclose(abs(a), 1.0):
            raise ValueError("direction must be a unit vector")
        for dof, x, normal in ((0, -R, -1.0), (space.n_elements, R, 1.0)):
            ui = np.exp(1j * k * a * x)
            dn = normal * 1j * k * a * ui
            out[dof] = dn - dtn.eigenvalue(0) * ui
        return out
    if mode_m is None:
        raise ValueError("radial spaces need a mode index")
    av = np.ravel(np.asarray(a, dtype=float))
    theta_a = float(av[0]) if av.size == 1 else math.atan2(av[1], av[0])
    if av.size == 2 and not math.isclose(np.hypot(*av), 1.0):
        raise ValueError("direction must be a unit vector")
    mm = abs(mode_m)
    j, _ = bessel_jy_table(mm + 1, k * R)
    jp = -j[1] if mm == 0 else j[mm - 1] - mm / (k * R) * j[mm]
    phase = (1j) ** mm * np.exp(-1j * mode_m * theta_a)
    out[space.n_elements] = R * phase * (k * jp - dtn.eigenvalue(mode_m) * j[mm])
    return out


@dataclass
class DiscreteSolution:
    space: HpSpace
    coefficients: np.ndarray
    k: float
    problem_kind: str = "l2_source"
    mode_m: int | None = None

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=complex)
        if self.coefficients.shape != (self.space.dof_count,):
            raise ValueError("coefficient vector does not match the space")

    def __call__(self, x):
        return self.evaluate(x)[0]

    def evaluate(self, x) -> tuple[np.ndarray, np.ndarray]:
        """(u, u') at the points x."""
        x = np.asarray(x, dtype=float)
        V, D = basis_matrices(self.space, x.ravel())
        return (V @ self.coefficients).reshape(x.shape), (D @ self.coefficients).reshape(x.shape)

    def second_derivative(self, x) -> np.ndarray:
        """Element-wise u'' (broken), used for H^2 seminorms."""
        x = np.asarray(x, dtype=float).ravel()
        el = locate(self.space, x)
        v = self.space.mesh.vertices
        jac = 0.5 * (v[el + 1] - v[el])
        xi = (x - 0.5 * (v[el] + v[el + 1])) / jac
        p = self.space.p
        d2 = np.zeros((p + 1, len(x)))
        leg_der = npleg.legder(np.eye(max(p, 1) + 1), axis=0)
        for j in range(2, p + 1):
            d2[j] = math.sqrt((2 * j - 1) / 2.0) * npleg.legval(xi, leg_der[:, j - 1])
        l2g = self.space.local_to_global()[el]
        c = self.coefficients[l2g]  # (n, p+1)
        return np.einsum("ni,in->n", c, d2) / jac**2

    def to_csv(self, path, npts: int = 1001) -> None:
        v = self.space.mesh.vertices
        x = np.linspace(v[0], v[-1], npts)
        u = self(x)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "re_u", "im_u"])
            for xi, ui in zip(x, u):
                w.writerow([f"{xi:.16e}", f"{ui.real:.16e}", f"{ui.imag:.16e}"])


def export_triplets(matrix, path) -> None:
    """Coordinate (i, j, re, im) text dump of a sparse matrix."""
    coo = sp.coo_matrix(matrix)
    with open(path, "w") as fh:
        fh.write(f"# {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for i, j, val in zip(coo.row, coo.col, coo.data):
            val = complex(val)
            fh.write(f"{i} {j} {val.real:.16e} {val.imag:.16e}\n")


def _expand(system: AssembledSystem, reduced: np.ndarray) -> np.ndarray:
    full = np.zeros(system.space.dof_count, dtype=complex)
    full[system.free] = reduced
    return full


def _checked_solve(system, lu, Ared, rhs, trans="N"):
    x = lu.solve(rhs, trans=trans) if trans != "N" else lu.solve(rhs)
    bnorm = np.linalg.norm(rhs)
    if bnorm > 0:
        res = np.linalg.norm(Ared @ x - rhs) / bnorm
        if res > RESIDUAL_TOL:
            raise SolverError(f"residual {res:.2e} above tolerance", system.k, system.space.h, system.space.p)
    return x


def solve(system: AssembledSystem, load: np.ndarray, problem_kind: str = "l2_source") -> DiscreteSolution:
    """Direct sparse solve of a(u_N, v) = F(v) over the free dofs."""
    load = np.asarray(load, dtype=complex)
    if load.shape != (system.space.dof_count,):
        raise ValueError("load vector does not match the space")
    # matrix[i, j] = a(phi_j, phi_i), so the Galerkin equations read A u = F
    lu = system.factor()
    Ared = system.reduced()
    x = _checked_solve(system, lu, Ared, load[system.free])
    return DiscreteSolution(system.space, _expand(system, x), system.k, problem_kind, system.mode_m)


def solve_adjoint(system: AssembledSystem, f: Callable | np.ndarray) -> DiscreteSolution:
    """S*f: a*(S*f, v) = (f, v), i.e. the conjugate-transposed system with the L2 load."""
    load = f if isinstance(f, np.ndarray) else load_l2(f, system.space)
    lu = system.factor()
    Ared = system.reduced()
    rhs = np.asarray(load, dtype=complex)[system.free]
    x = lu.solve(rhs, trans="H")
    bnorm = np.linalg.norm(rhs)
    if bnorm > 0:
        res = np.linalg.norm(Ared.conj().T @ x - rhs) / bnorm
        if res > RESIDUAL_TOL:
            raise SolverError(f"adjoint residual {res:.2e} above tolerance", system.k, system.space.h, system.space.p)
    return DiscreteSolution(system.space, _expand(system, x), system.k, "adjoint", system.mode_m)


# ---- norms, projections and errors ------------------------------------------


def _reference_breaks(space: HpSpace, ref) -> np.ndarray:
    breaks = space.mesh.vertices
    if isinstance(ref, DiscreteSolution):
        breaks = np.union1d(breaks, ref.space.mesh.vertices)
    return breaks


def _ref_values(ref, x):
    if isinstance(ref, DiscreteSolution):
        return ref.evaluate(x)
    u, du = ref(x)
    return np.asarray(u, dtype=complex), np.asarray(du, dtype=complex)


def _norm_quadrature(space: HpSpace, ref=None, extra: int = 12):
    p_ref = ref.space.p if isinstance(ref, DiscreteSolution) else space.p
    nq = max(space.p, p_ref) + extra
    x, w = breakpoint_quadrature(_reference_breaks(space, ref), nq)
    return x, w


def _h1k_density(space: HpSpace, x, u, du, k, mode_m):
    dens = np.abs(du) ** 2 + k**2 * np.abs(u) ** 2
    if space.weighted:
        if mode_m:
            dens = dens + mode_m**2 * np.abs(u) ** 2 / x**2
        dens = dens * x
    return dens


def h1k_norm_fem(sol: DiscreteSolution, k: float | None = None) -> float:
    k = sol.k if k is None else k
    x, w = _norm_quadrature(sol.space)
    u, du = sol.evaluate(x)
    return math.sqrt(float(np.sum(w * _h1k_density(sol.space, x, u, du, k, sol.mode_m))))


def h1k_norm_function(ref, space: HpSpace, k: float, mode_m: int | None = None) -> float:
    """||ref||_{H^1_k} with the quadrature of ``space`` (and ref's mesh if it has one)."""
    x, w = _norm_quadrature(space, ref)
    u, du = _ref_values(ref, x)
    return math.sqrt(float(np.sum(w * _h1k_density(space, x, u, du, k, mode_m))))


def l2_norm_function(ref, space: HpSpace, mode_m: int | None = None) -> float:
    x, w = _norm_quadrature(space, ref)
    u, _ = _ref_values(ref, x)
    g = x if space.weighted else 1.0
    return math.sqrt(float(np.sum(w * g * np.abs(u) ** 2)))


def h1k_error(ref, sol: DiscreteSolution, k: float | None = None) -> float:
    """||ref - u_N||_{H^1_k} on a quadrature exact for both piecewise polynomials."""
    k = sol.k if k is None else k
    x, w = _norm_quadrature(sol.space, ref)
    ur, dur = _ref_values(ref, x)
    un, dun = sol.evaluate(x)
    return math.sqrt(float(np.sum(w * _h1k_density(sol.space, x, ur - un, dur - dun, k, sol.mode_m))))


def h1k_projection(ref, space: HpSpace, k: float, mode_m: int | None = None) -> DiscreteSolution:
    """H^1_k-orthogonal projection of ``ref`` onto the space."""
    x, w = _norm_quadrature(space, ref)
    ur, dur = _ref_values(ref, x)
    V, D = basis_matrices(space, x)
    g = x if space.weighted else np.ones_like(x)
    wg = w * g
    pot = (mode_m**2 / x**2) if (space.weighted and mode_m) else 0.0
    Wv = sp.diags(wg * (k**2 + pot))
    Wd = sp.diags(wg)
    G = (D.T @ Wd @ D + V.T @ Wv @ V).tocsc()
    rhs = D.T @ (wg * dur) + V.T @ ((wg * (k**2 + pot)) * ur)
    free = free_dofs(space, mode_m)
    c = np.zeros(space.dof_count, dtype=complex)
    c[free] = spla.spsolve(G[free][:, free].tocsc(), rhs[free])
    return DiscreteSolution(space, c, k, "projection", mode_m)


def best_approximation_error(ref, space: HpSpace, k: float, mode_m: int | None = None) -> float:
    """min over the space of ||ref - v||_{H^1_k}."""
    proj = h1k_projection(ref, space, k, mode_m)
    return h1k_error(ref, proj, k)


def h2_seminorm(ref, space: HpSpace, second_derivative: Callable | None = None) -> float:
    """|u|_{H^2} in 1D: ||u''||_{L^2}; piecewise for finite-element functions."""
    x, w = _norm_quadrature(space, ref)
    if second_derivative is not None:
        d2 = second_derivative(x)
    elif isinstance(ref, DiscreteSolution):
        d2 = ref.second_derivative(x)
    else:
        raise ValueError("need a second derivative for non-discrete references")
    return math.sqrt(float(np.sum(w * np.abs(d2) ** 2)))
