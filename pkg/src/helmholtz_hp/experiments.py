"""Constants estimation and wavenumber sweeps.

The power iterations work on the fine-space matrices restricted to free dofs.
With A the Galerkin matrix (A_ij = a(phi_j, phi_i)), M the L2 mass matrix and
G the H^1_k Gram matrix, the discrete solution operator is f -> A^{-1} M f and
the adjoint solution operator f -> A^{-H} M f. Both norms are taken from
L2 (data, measured with M) to H^1_k (solutions, measured with G).
"""

from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import hp_fem as fem
from .dtn_map import estimate_cdtn1, make_dtn
from .frequency_split import (
    GridFunction,
    ScalingReport,
    decompose,
    grid_size_for,
    loglog_slope,
    scaling_report,
    smooth_step,
)
from .symbol_core import CoefficientField, c_cont_bound, eta_threshold, from_knots, mu_zero, preset

logger = logging.getLogger(__name__)

POWER_TOL = 1e-4
POWER_MAXITER = 200
# squared norms below this are rounding noise (operator norm ~1e-12)
NOISE_FLOOR = 1e-24
RULES = ("fixed_hk", "fixed_hk_over_p", "threshold")
PROBLEMS = ("l2_source", "plane_wave")


class ConfigError(ValueError):
    """Invalid configuration value; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(message)
        self.key = key


# ---- data ---------------------------------------------------------------------


def _envelope(x):
    """Smooth bump: 1 on |x| <= 0.3, 0 for |x| >= 0.7."""
    return smooth_step(np.abs(np.asarray(x, dtype=float)), 0.3, 0.7)


@dataclass(frozen=True)
class Source:
    """An L2 right-hand side with the points where it fails to be smooth."""

    func: Callable
    support: tuple[float, float]
    breaks: tuple[float, ...] = ()
    name: str = ""

    def __call__(self, x):
        return self.func(x)


def make_source(name: str, k: float) -> Source:
    """Right-hand sides used by the sweeps; all supported in [-0.7, 0.7] or smaller.

    ``smooth-wave``  envelope * cos(kx), resonant with the free wave number;
    ``two-scale``    envelope * (cos(kx) + cos(4kx)), adds a component deep in
                     the elliptic band |zeta| > sqrt(2 mu_0) k;
    ``bump``         the envelope alone;
    ``indicator``    1 on [-0.25, 0.25].
    """
    if name == "smooth-wave":
        return Source(lambda x: _envelope(x) * np.cos(k * np.asarray(x)), (-0.7, 0.7), name=name)
    if name == "two-scale":
        return Source(
            lambda x: _envelope(x) * (np.cos(k * np.asarray(x)) + np.cos(4 * k * np.asarray(x))),
            (-0.7, 0.7),
            name=name,
        )
    if name == "bump":
        return Source(_envelope, (-0.7, 0.7), name=name)
    if name == "indicator":
        return Source(
            lambda x: (np.abs(np.asarray(x, dtype=float)) <= 0.25).astype(float),
            (-0.25, 0.25),
            (-0.25, 0.25),
            name,
        )
    raise ConfigError("source", f"unknown source {name!r}")


def source_l2_norm(source: Source, npanel: int = 200, nq: int = 16) -> float:
    lo, hi = source.support
    breaks = np.union1d(np.linspace(lo, hi, npanel + 1), [b for b in source.breaks if lo <= b <= hi])
    x, w = fem.breakpoint_quadrature(breaks, nq)
    return math.sqrt(float(np.sum(w * np.abs(source(x)) ** 2)))


class GreenReference:
    """Outgoing solution of u'' + k^2 u = -f on the line.

    u(x) = (i / 2k) int e^{ik|x - y|} f(y) dy, evaluated with composite Gauss
    quadrature split at x, so both u and u' are accurate to rounding for
    smooth f (piecewise smooth f needs its breaks listed in the source).
    """

    def __init__(self, source: Source, k: float, panels_per_wavelength: int = 4, nq: int = 20):
        self.source = source
        self.k = float(k)
        lo, hi = source.support
        npan = max(8, int(math.ceil((hi - lo) * k / (2 * math.pi) * panels_per_wavelength)))
        edges = np.union1d(np.linspace(lo, hi, npan + 1), [b for b in source.breaks if lo < b < hi])
        self.edges = edges
        self.nq = nq
        xi, wi = fem.gauss(nq)
        self._xi, self._wi = xi, wi
        a, b = edges[:-1], edges[1:]
        y = 0.5 * (a + b)[:, None] + 0.5 * (b - a)[:, None] * xi
        fy = np.asarray(source(y), dtype=complex) * (0.5 * (b - a))[:, None] * wi
        # panel integrals of e^{-iky} f and e^{iky} f, then running sums
        p1 = np.sum(np.exp(-1j * k * y) * fy, axis=1)
        p2 = np.sum(np.exp(1j * k * y) * fy, axis=1)
        self._left = np.concatenate([[0.0], np.cumsum(p1)])  # int_lo^{edge_j}
        self._right = np.concatenate([[0.0], np.cumsum(p2)])

    def _partials(self, x):
        """I1 = int_{lo}^{x} e^{-iky} f, I2 = int_x^{hi} e^{iky} f."""
        k = self.k
        lo, hi = self.edges[0], self.edges[-1]
        xc = np.clip(x, lo, hi)
        j = np.clip(np.searchsorted(self.edges, xc, side="right") - 1, 0, len(self.edges) - 2)
        a = self.edges[j]
        half = 0.5 * (xc - a)
        y = (a + half)[:, None] + half[:, None] * self._xi
        fy = np.asarray(self.source(y), dtype=complex) * half[:, None] * self._wi
        part1 = np.sum(np.exp(-1j * k * y) * fy, axis=1)
        part2 = np.sum(np.exp(1j * k * y) * fy, axis=1)
        i1 = self._left[j] + part1
        i2 = self._right[-1] - self._right[j] - part2
        return i1, i2

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        flat = x.ravel()
        i1, i2 = self._partials(flat)
        k = self.k
        ep, em = np.exp(1j * k * flat), np.exp(-1j * k * flat)
        u = (1j / (2 * k)) * (ep * i1 + em * i2)
        du = -0.5 * (ep * i1 - em * i2)
        return u.reshape(x.shape), du.reshape(x.shape)

    def __call__(self, x):
        return self.evaluate(x)

    def second_derivative(self, x):
        u, _ = self.evaluate(x)
        return -self.k**2 * u - np.asarray(self.source(x), dtype=complex)


class PlaneWave:
    """u^I(x) = exp(i k a x) in 1D."""

    def __init__(self, k: float, a: float = 1.0):
        self.k = float(k)
        self.a = float(a)

    def evaluate(self, x):
        u = np.exp(1j * self.k * self.a * np.asarray(x, dtype=float))
        return u, 1j * self.k * self.a * u

    def __call__(self, x):
        return self.evaluate(x)

    def second_derivative(self, x):
        return -self.k**2 * self.evaluate(x)[0]


def outgoing_extension(sol, R: float, k: float) -> Callable:
    """Extend a 1D solution on [-R, R] by the outgoing waves u(+-R) e^{ik(|x|-R)}.

    Exact whenever the coefficients are trivial and the data vanish outside
    [-R, R].
    """
    left = complex(sol(np.array([-R]))[0])
    right = complex(sol(np.array([R]))[0])

    def u(x):
        x = np.asarray(x, dtype=float)
        out = np.empty(x.shape, dtype=complex)
        inside = np.abs(x) <= R
        out[inside] = sol(x[inside])
        lo = x < -R
        hi = x > R
        out[lo] = left * np.exp(1j * k * (-x[lo] - R))
        out[hi] = right * np.exp(1j * k * (x[hi] - R))
        return out

    return u


# ---- operator-norm estimates -------------------------------------------------


@dataclass(frozen=True)
class PowerEstimate:
    value: float
    iterations: int
    converged: bool

    def __float__(self) -> float:
        return float(self.value)


def _power_iteration(step, quotient, n: int, rng, tol: float, maxiter: int) -> PowerEstimate:
    x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    last = None
    lam = 0.0
    for it in range(1, maxiter + 1):
        lam, y = quotient(x)
        if last is not None and abs(lam - last) <= tol * abs(lam) + NOISE_FLOOR:
            return PowerEstimate(math.sqrt(max(lam, 0.0)), it, True)
        last = lam
        x = step(y)
        nrm = np.linalg.norm(x)
        if nrm == 0.0:
            return PowerEstimate(0.0, it, True)
        x = x / nrm
    logger.warning("power iteration stopped after %d iterations without converging", maxiter)
    return PowerEstimate(math.sqrt(max(lam, 0.0)), maxiter, False)


def _rng(seed, *extra):
    return np.random.default_rng([int(seed)] + [int(e) for e in extra])


def _mode_matrices(coeffs, k, space, dtn, mode_m):
    system = fem.assemble(coeffs, k, space, dtn, mode_m)
    free = system.free
    M = fem.mass_matrix(space)[free][:, free].tocsc()
    G, _ = fem.gram_h1k(space, k, mode_m)
    return system, M, G


def _dtn_for(space, k):
    return make_dtn(k, space.R, 1 if space.kind == "interval" else 2)


def _modes(space, dtn):
    return [None] if space.kind == "interval" else list(range(dtn.truncation + 1))


def _csol_mode_power(system, M, G, rng, tol, maxiter) -> PowerEstimate:
    lu = system.factor()

    def quotient(x):
        u = lu.solve(M @ x)
        num = float(np.real(np.vdot(u, G @ u)))
        den = float(np.real(np.vdot(x, M @ x)))
        return num / den, u

    def step(u):
        return lu.solve(G @ u, trans="H")

    return _power_iteration(step, quotient, M.shape[0], rng, tol, maxiter)


def _csol_mode_dense(system, M, G) -> float:
    A = system.reduced().toarray()
    Md = M.toarray()
    S = np.linalg.solve(A, Md)
    H = S.conj().T @ G.toarray() @ S
    H = 0.5 * (H + H.conj().T)
    n = H.shape[0]
    return math.sqrt(max(float(sla.eigh(H, Md, eigvals_only=True, subset_by_index=[n - 1, n - 1])[0]), 0.0))


def estimate_csol(
    coeffs: CoefficientField,
    k: float,
    fine_space: fem.HpSpace,
    seed: int = 0,
    tol: float = POWER_TOL,
    maxiter: int = POWER_MAXITER,
    method: str = "power",
) -> PowerEstimate:
    """Norm of the discrete solution operator L2(B_R) -> H^1_k(B_R).

    ``method="dense"`` forms the operator explicitly and solves the
    generalised Hermitian eigenproblem; it is the small-scale oracle for the
    power iteration. On radial spaces the maximum over angular modes is taken.
    """
    if fine_space.h * k / fine_space.p > 0.5:
        logger.warning("fine space under-resolves the wave (hk/p = %.3g)", fine_space.h * k / fine_space.p)
    dtn = _dtn_for(fine_space, k)
    best = PowerEstimate(0.0, 0, True)
    total_it = 0
    all_conv = True
    for idx, m in enumerate(_modes(fine_space, dtn)):
        system, M, G = _mode_matrices(coeffs, k, fine_space, dtn, m)
        if method == "dense":
            est = PowerEstimate(_csol_mode_dense(system, M, G), 0, True)
        elif method == "power":
            est = _csol_mode_power(system, M, G, _rng(seed, idx), tol, maxiter)
        else:
            raise ValueError(f"unknown method {method!r}")
        total_it += est.iterations
        all_conv &= est.converged
        if est.value > best.value:
            best = est
    return PowerEstimate(best.value, total_it, all_conv)


def csol_per_mode(coeffs, k: float, space: fem.HpSpace, method: str = "dense", seed: int = 0) -> np.ndarray:
    """C_sol restricted to each angular mode m = 0..M of a radial space."""
    dtn = _dtn_for(space, k)
    out = []
    for idx, m in enumerate(_modes(space, dtn)):
        system, M, G = _mode_matrices(coeffs, k, space, dtn, m)
        if method == "dense":
            out.append(_csol_mode_dense(system, M, G))
        else:
            out.append(_csol_mode_power(system, M, G, _rng(seed, idx), POWER_TOL, POWER_MAXITER).value)
    return np.array(out)


def prolongation(coarse: fem.HpSpace, fine: fem.HpSpace, mode_m=None) -> sp.csr_matrix:
    """Matrix taking coarse coefficients to fine ones (exact for nested spaces).

    Obtained as the fine H^1 projection of each coarse basis function and
    cleaned of rounding-level entries.
    """
    breaks = np.union1d(coarse.mesh.vertices, fine.mesh.vertices)
    x, w = fem.breakpoint_quadrature(breaks, max(coarse.p, fine.p) + 4)
    Vc, Dc = fem.basis_matrices(coarse, x)
    Vf, Df = fem.basis_matrices(fine, x)
    g = x if fine.weighted else np.ones_like(x)
    W = sp.diags(w * g)
    G = (Df.T @ W @ Df + Vf.T @ W @ Vf).tocsc()
    C = (Df.T @ W @ Dc + Vf.T @ W @ Vc).toarray()
    E = spla.splu(G).solve(C)
    E[np.abs(E) < 1e-13 * np.abs(E).max()] = 0.0
    return sp.csr_matrix(E)


def is_nested(coarse: fem.HpSpace, fine: fem.HpSpace) -> bool:
    if fine.p < coarse.p or coarse.kind != fine.kind:
        return False
    fv = fine.mesh.vertices
    idx = np.searchsorted(fv, coarse.mesh.vertices)
    idx = np.clip(idx, 0, len(fv) - 1)
    return bool(np.allclose(fv[idx], coarse.mesh.vertices, rtol=0, atol=1e-12))


def estimate_eta(
    space: fem.HpSpace,
    coeffs: CoefficientField,
    k: float,
    fine_space: fem.HpSpace,
    seed: int = 0,
    tol: float = POWER_TOL,
    maxiter: int = POWER_MAXITER,
) -> PowerEstimate:
    """Adjoint approximability: norm of f -> (I - P_N) S* f from L2 to H^1_k.

    S* is the adjoint solve on ``fine_space`` and P_N the H^1_k-orthogonal
    projection onto ``space``, which must be nested in the fine space.
    """
    if not is_nested(space, fine_space):
        raise ValueError("the fine space must contain the space under test")
    dtn = _dtn_for(fine_space, k)
    best = PowerEstimate(0.0, 0, True)
    total_it = 0
    all_conv = True
    E_full = prolongation(space, fine_space)
    for idx, m in enumerate(_modes(fine_space, dtn)):
        system, M, Gf = _mode_matrices(coeffs, k, fine_space, dtn, m)
        ff = system.free
        fc = fem.free_dofs(space, m)
        E = E_full[ff][:, fc].tocsc()
        Gc, _ = fem.gram_h1k(space, k, m)
        lu_c = spla.splu(Gc.astype(complex))
        lu = system.factor()

        def project_out(y, E=E, Gf=Gf, lu_c=lu_c):
            c = lu_c.solve(E.conj().T @ (Gf @ y))
            return y - E @ c

        def quotient(x, lu=lu, M=M, Gf=Gf, project_out=project_out):
            y = lu.solve(M @ x, trans="H")
            z = project_out(y)
            num = float(np.real(np.vdot(z, Gf @ z)))
            den = float(np.real(np.vdot(x, M @ x)))
            return num / den, z

        def step(z, lu=lu, Gf=Gf):
            return lu.solve(Gf @ z)

        est = _power_iteration(step, quotient, M.shape[0], _rng(seed, idx), tol, maxiter)
        total_it += est.iterations
        all_conv &= est.converged
        if est.value > best.value:
            best = est
    return PowerEstimate(best.value, total_it, all_conv)


def eta_dense(space, coeffs, k, fine_space) -> float:
    """Dense oracle for :func:`estimate_eta` on small 1D problems."""
    dtn = _dtn_for(fine_space, k)
    system, M, Gf = _mode_matrices(coeffs, k, fine_space, dtn, None)
    A = system.reduced().toarray()
    Md = M.toarray()
    Gd = Gf.toarray()
    E = prolongation(space, fine_space).toarray()
    Gc = E.conj().T @ Gd @ E
    Y = np.linalg.solve(A.conj().T, Md)
    Q = np.eye(len(Gd)) - E @ np.linalg.solve(Gc, E.conj().T @ Gd)
    Z = Q @ Y
    H = Z.conj().T @ Gd @ Z
    H = 0.5 * (H + H.conj().T)
    return math.sqrt(max(float(sla.eigh(H, Md, eigvals_only=True)[-1]), 0.0))


# ---- sweeps -----------------------------------------------------------------


@dataclass(frozen=True)
class SweepConfig:
    preset: str = "constant"
    k_values: tuple[float, ...] = (10.0, 20.0, 40.0, 80.0, 160.0)
    rule: str = "threshold"
    C1: float = 0.5
    C2: float = 1.0
    p: int = 1
    hk: float = 0.5
    R: float = 1.0
    problem: str = "l2_source"
    source: str = "smooth-wave"
    seed: int = 0
    estimate_eta: bool = False
    jobs: int = 1
    coefficients: dict | None = None

    def __post_init__(self):
        object.__setattr__(self, "k_values", tuple(float(k) for k in self.k_values))
        ks = self.k_values
        if not ks:
            raise ConfigError("k_values", "k_values must not be empty")
        if any(not k > 0 for k in ks):
            raise ConfigError("k_values", "k must be positive")
        if any(b <= a for a, b in zip(ks, ks[1:])):
            raise ConfigError("k_values", "k_values must be increasing")
        if self.rule not in RULES:
            raise ConfigError("rule", f"rule must be one of {', '.join(RULES)}")
        if not self.C1 > 0:
            raise ConfigError("C1", "C1 must be positive")
        if not self.C2 > 0:
            raise ConfigError("C2", "C2 must be positive")
        if not (isinstance(self.p, (int, np.integer)) and 1 <= self.p <= fem.MAX_DEGREE):
            raise ConfigError("p", f"p must be an integer in [1, {fem.MAX_DEGREE}]")
        if not self.hk > 0:
            raise ConfigError("hk", "hk must be positive")
        if not self.R > 0:
            raise ConfigError("R", "R must be positive")
        if self.problem not in PROBLEMS:
            raise ConfigError("problem", f"problem must be one of {', '.join(PROBLEMS)}")
        if not (isinstance(self.jobs, (int, np.integer)) and self.jobs >= 1):
            raise ConfigError("jobs", "jobs must be a positive integer")
        self.coefficient_field()
        if self.problem == "l2_source":
            make_source(self.source, 1.0)

    def coefficient_field(self, dimension: int = 1) -> CoefficientField:
        """The preset, or the radial knot field given under ``coefficients``."""
        if self.coefficients is not None:
            spec = dict(self.coefficients)
            allowed = {"n_knots", "n_values", "a_knots", "a_values"}
            extra = set(spec) - allowed
            if extra:
                key = sorted(extra)[0]
                raise ConfigError(f"coefficients.{key}", f"unknown key coefficients.{key}")
            if "n_knots" not in spec or "n_values" not in spec:
                raise ConfigError("coefficients.n_knots", "coefficients need n_knots and n_values")
            try:
                return from_knots(dimension=dimension, name="custom", **spec)
            except ValueError as exc:
                raise ConfigError("coefficients", f"invalid coefficients: {exc}") from exc
        try:
            return preset(self.preset, dimension)
        except KeyError as exc:
            raise ConfigError("preset", f"unknown preset {self.preset!r}") from exc

    def to_dict(self) -> dict:
        d = asdict(self)
        d["k_values"] = list(self.k_values)
        if self.coefficients is None:
            d.pop("coefficients")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SweepConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            key = sorted(unknown)[0]
            raise ConfigError(key, f"unknown key {key!r}")
        return cls(**d)


def discretisation(config: SweepConfig, k: float, csol: float | None = None) -> tuple[float, int]:
    """(h, p) prescribed by the configured rule at wavenumber k.

    threshold: p = ceil(C2 (1 + log k [+ log C_sol])), h = C1 p / k.
    """
    if config.rule == "threshold":
        arg = 1.0 + math.log(k)
        if csol is not None and csol > 1.0:
            arg += math.log(csol)
        p = min(max(1, math.ceil(config.C2 * arg)), fem.MAX_DEGREE)
        return config.C1 * p / k, p
    if config.rule == "fixed_hk":
        return config.hk / k, config.p
    return config.hk * config.p / k, config.p


def reference_space(space: fem.HpSpace) -> fem.HpSpace:
    return space.refine(4, min(space.p + 4, fem.MAX_DEGREE))


@dataclass
class SweepRow:
    k: float
    h: float
    p: int
    dof: int
    h1k_error: float = math.nan
    best_approx_error: float = math.nan
    qo_ratio: float = math.nan
    eta_k: float = math.nan
    csol_est: float = math.nan
    runtime: float = math.nan
    rel_error: float = math.nan
    ref_error: float = math.nan
    c_dtn1: float = math.nan
    c_osc: float = math.nan
    status: str = "ok"


SWEEP_COLUMNS = tuple(f.name for f in fields(SweepRow))


@dataclass
class SweepReport:
    rows: list[SweepRow]
    fitted: dict = field(default_factory=dict)
    config: SweepConfig | None = None

    columns = SWEEP_COLUMNS

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    def ok_rows(self) -> list[SweepRow]:
        return [r for r in self.rows if r.status == "ok"]

    def to_csv(self, path) -> None:
        write_csv(path, self.columns, [asdict(r) for r in self.rows])


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.16e}"
    return str(v)


def write_csv(path, columns: Sequence[str], records: Sequence[dict]) -> None:
    if not records:
        raise ValueError("refusing to write an empty report")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for rec in records:
            w.writerow([format_value(rec[c]) for c in columns])


def _reference_for(config, coeffs, k, space, dtn, source):
    """Reference solution, its second derivative and a reference-error estimate."""
    if coeffs.is_constant:
        if config.problem == "l2_source":
            return GreenReference(source, k), 0.0
        return PlaneWave(k), 0.0
    fine = reference_space(space)
    mid = space.refine(2, min(space.p + 2, fem.MAX_DEGREE))
    sols = []
    for sp_ in (fine, mid):
        system = fem.assemble(coeffs, k, sp_, dtn)
        load = fem.load_l2(source, sp_) if config.problem == "l2_source" else fem.load_planewave(1.0, k, sp_, dtn)
        sols.append(fem.solve(system, load, config.problem))
    return sols[0], fem.h1k_error(sols[0], sols[1], k)


def _second_derivative(ref):
    return ref.second_derivative


def run_point(config: SweepConfig, index: int) -> SweepRow:
    """Solve and measure at one wavenumber of the sweep."""
    k = config.k_values[index]
    t0 = time.perf_counter()
    coeffs = config.coefficient_field()
    h, p = discretisation(config, k)
    space = fem.build_space(config.R, h, p)
    row = SweepRow(k=k, h=space.h, p=p, dof=space.dof_count)
    dtn = make_dtn(k, config.R, 1)
    source = make_source(config.source, k) if config.problem == "l2_source" else None
    try:
        system = fem.assemble(coeffs, k, space, dtn)
        if config.problem == "l2_source":
            load = fem.load_l2(source, space)
        else:
            load = fem.load_planewave(1.0, k, space, dtn)
        sol = fem.solve(system, load, config.problem)
        ref, ref_err = _reference_for(config, coeffs, k, space, dtn, source)
        row.h1k_error = fem.h1k_error(ref, sol, k)
        row.best_approx_error = fem.best_approximation_error(ref, space, k)
        row.qo_ratio = row.h1k_error / row.best_approx_error if row.best_approx_error > 0 else math.nan
        ref_norm = fem.h1k_norm_function(ref, space, k)
        row.rel_error = row.h1k_error / ref_norm
        row.ref_error = ref_err
        if config.problem == "plane_wave":
            ref_space = ref.space if isinstance(ref, fem.DiscreteSolution) else space
            row.c_osc = fem.h2_seminorm(ref, ref_space, _second_derivative(ref)) / (k * ref_norm)
        if config.estimate_eta:
            fine = reference_space(space)
            row.eta_k = k * estimate_eta(space, coeffs, k, fine, seed=config.seed + index).value
            row.csol_est = estimate_csol(coeffs, k, fine, seed=config.seed + index).value
            row.c_dtn1 = estimate_cdtn1(dtn, fine)
    except fem.SolverError as exc:
        logger.warning("%s", exc)
        row.status = "solver_failure"
    row.runtime = time.perf_counter() - t0
    return row


def run_rows(config: SweepConfig, worker: Callable[[SweepConfig, int], object]) -> list:
    """Evaluate every k of the sweep, concurrently if ``jobs > 1``; results in k order."""
    idx = range(len(config.k_values))
    if config.jobs == 1:
        return [worker(config, i) for i in idx]
    with ThreadPoolExecutor(max_workers=config.jobs) as pool:
        return list(pool.map(lambda i: worker(config, i), idx))


def _fit_common(rows: list[SweepRow]) -> dict:
    ok = [r for r in rows if r.status == "ok"]
    fitted = {"solver_failures": len(rows) - len(ok)}
    if not ok:
        return fitted
    qo = np.array([r.qo_ratio for r in ok])
    fitted["qo_max"] = float(np.max(qo))
    fitted["qo_min"] = float(np.min(qo))
    fitted["qo_spread"] = float(np.max(qo) / np.min(qo))
    rel = np.array([r.rel_error for r in ok])
    fitted["rel_error_max"] = float(np.max(rel))
    fitted["rel_error_growth"] = float(ok[-1].rel_error / ok[0].rel_error)
    big = [r for r in ok if r.k >= 40]
    if len(big) >= 2:
        fitted["dof_slope"] = loglog_slope([r.k for r in big], [r.dof for r in big])
    return fitted


def quasiopt_sweep(config: SweepConfig) -> SweepReport:
    """Galerkin error against best approximation along the threshold rule."""
    if config.rule != "threshold":
        raise ConfigError("rule", "quasiopt_sweep needs the threshold rule")
    rows = run_rows(config, run_point)
    fitted = _fit_common(rows)
    coeffs = config.coefficient_field()
    eta_rows = [r for r in rows if r.status == "ok" and not math.isnan(r.eta_k)]
    if eta_rows:
        fitted["eta_k_max"] = max(r.eta_k for r in eta_rows)
        bounds = [eta_threshold(coeffs, r.c_dtn1) for r in eta_rows]
        fitted["eta_bound_min"] = min(bounds)
        fitted["eta_within_bound"] = all(r.eta_k <= b for r, b in zip(eta_rows, bounds))
        fitted["qo_bound"] = min(2 * c_cont_bound(coeffs, r.c_dtn1) / coeffs.a_min for r in eta_rows)
    return SweepReport(rows, fitted, config)


def pollution_sweep(config: SweepConfig) -> SweepReport:
    """Relative error along a fixed-resolution rule; growth in k is pollution."""
    rows = run_rows(config, run_point)
    fitted = _fit_common(rows)
    if "rel_error_growth" in fitted:
        fitted["polluted"] = fitted["rel_error_growth"] >= 2.0
    return SweepReport(rows, fitted, config)


def relative_error_planewave(config: SweepConfig) -> SweepReport:
    """Plane-wave scattering: relative H^1_k error and the oscillation constant."""
    if config.problem != "plane_wave":
        config = SweepConfig(**{**config.to_dict(), "problem": "plane_wave"})
    rows = run_rows(config, run_point)
    fitted = _fit_common(rows)
    ok = [r for r in rows if r.status == "ok"]
    if ok:
        fitted["plateau"] = max(r.rel_error for r in ok)
        if len(ok) >= 2:
            fitted["c_osc_slope"] = loglog_slope([r.k for r in ok], [r.c_osc for r in ok])
    return SweepReport(rows, fitted, config)


def plateau_reduction(config: SweepConfig, factor: float = 0.5) -> tuple[SweepReport, SweepReport, float]:
    """Plateau ratio between C1 and factor * C1."""
    a = relative_error_planewave(config)
    b = relative_error_planewave(SweepConfig(**{**config.to_dict(), "C1": config.C1 * factor}))
    return a, b, a.fitted["plateau"] / b.fitted["plateau"]


# ---- decomposition -----------------------------------------------------------


@dataclass
class DecompositionRun:
    k: float
    decomposition: object
    f_norm: float
    csol: float
    partition_error: float


@dataclass
class DecompositionReport:
    runs: list[DecompositionRun]
    scaling: ScalingReport
    config: SweepConfig | None = None

    @property
    def max_partition_error(self) -> float:
        return max(r.partition_error for r in self.runs)

    def to_csv(self, path) -> None:
        write_csv(path, ScalingReport.columns, self.scaling.as_records())


def decomposition_box(R: float, k: float, mu: float) -> tuple[float, int]:
    """Half-width and grid size of the periodic box; L leaves room for the cutoff."""
    L = R + 3.0
    return L, 2 * grid_size_for(k, mu, L)


def decomposition_point(config: SweepConfig, index: int, mu: float | None = None) -> DecompositionRun:
    k = config.k_values[index]
    coeffs = config.coefficient_field()
    mu = mu_zero(coeffs) if mu is None else mu
    R = config.R
    source = make_source(config.source, k)
    h, p = discretisation(config, k)
    fine = reference_space(fem.build_space(R, h, p))
    dtn = make_dtn(k, R, 1)
    system = fem.assemble(coeffs, k, fine, dtn)
    sol = fem.solve(system, fem.load_l2(source, fine))
    L, N = decomposition_box(R, k, mu)
    u = GridFunction.sample(outgoing_extension(sol, R, k), L, N)
    f_norm = source_l2_norm(source)
    dec = decompose(u, f_norm, k, mu, R)
    mask = dec.ball_mask()
    whole = u.values[mask]
    parts = dec.u_low.values[mask] + dec.u_high.values[mask]
    part_err = float(np.max(np.abs(parts - whole)) / np.max(np.abs(whole)))
    csol = estimate_csol(coeffs, k, fine, seed=config.seed + index).value
    return DecompositionRun(k, dec, f_norm, csol, part_err)


def decomposition_sweep(
    config: SweepConfig, mu: float | None = None, alpha_max: int = 2, beta_max: int = 4
) -> DecompositionReport:
    """Frequency splitting of fine-space solutions and the k-scaling of both parts."""
    if config.problem != "l2_source":
        raise ConfigError("problem", "decomposition needs an L2 source")
    mu0 = mu_zero(config.coefficient_field())
    if mu is not None and mu < mu0:
        logger.warning("mu = %g is below mu_0 = %g; ellipticity on the high band is not guaranteed", mu, mu0)
    runs = run_rows(config, lambda c, i: decomposition_point(c, i, mu))
    scaling = scaling_report(
        [(r.k, r.decomposition, r.f_norm, r.csol) for r in runs], alpha_max=alpha_max, beta_max=beta_max
    )
    return DecompositionReport(runs, scaling, config)


# ---- trapping -----------------------------------------------------------------


@dataclass
class TrappingScan:
    k: np.ndarray
    csol: np.ndarray
    baseline: float
    peak_k: float
    peak_ratio: float
    confirmed: dict = field(default_factory=dict)

    columns = ("k", "csol", "ratio_to_baseline")

    def to_csv(self, path) -> None:
        recs = [
            {"k": float(k), "csol": float(c), "ratio_to_baseline": float(c / self.baseline)}
            for k, c in zip(self.k, self.csol)
        ]
        write_csv(path, self.columns, recs)


def radial_space(k: float, R: float = 1.0, p: int = 6) -> fem.HpSpace:
    """Radial space with hk/p <= 0.25."""
    h = min(0.25 * p / k, 0.05)
    return fem.build_space(R, h, p, "radial")


def csol_2d(preset_name: str, k: float, R: float = 1.0, method: str = "dense", seed: int = 0) -> float:
    coeffs = preset(preset_name, 2)
    return float(np.max(csol_per_mode(coeffs, k, radial_space(k, R), method, seed)))


def trapping_scan(
    k_min: float = 2.0,
    k_max: float = 20.0,
    step: float = 0.1,
    preset_name: str = "trapping-well",
    R: float = 1.0,
    confirm: int = 3,
    jobs: int = 1,
    seed: int = 0,
) -> TrappingScan:
    """C_sol on the disk over a k-grid, against the constant-coefficient baseline.

    The scan uses the dense per-mode oracle; the ``confirm`` highest peaks are
    recomputed with the power iteration and stored as (dense, power) pairs.
    """
    ks = np.round(np.arange(k_min, k_max + 0.5 * step, step), 10)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            vals = np.array(list(pool.map(lambda k: csol_2d(preset_name, k, R), ks)))
    else:
        vals = np.array([csol_2d(preset_name, k, R) for k in ks])
    base_ks = np.linspace(k_min, k_max, 5)
    baseline = float(np.max([csol_2d("constant", k, R) for k in base_ks]))
    order = np.argsort(vals)[::-1]
    confirmed = {}
    for i in order[:confirm]:
        k = float(ks[i])
        confirmed[k] = (float(vals[i]), csol_2d(preset_name, k, R, method="power", seed=seed))
    top = int(order[0])
    return TrappingScan(ks, vals, baseline, float(ks[top]), float(vals[top] / baseline), confirmed)
