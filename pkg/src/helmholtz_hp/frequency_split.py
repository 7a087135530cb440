"""Smooth cutoffs, FFT frequency projectors and the low/high splitting of a
Helmholtz solution.

Whole-space Fourier multipliers are realised on a periodic box [-L, L)^d.
The function being split is multiplied by a spatial cutoff supported in
B_{R+2} first, so periodisation is exact as long as L >= R + 2 + dx.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from itertools import product
from typing import Callable, Iterable, Literal, Sequence

import numpy as np

logger = logging.getLogger(__name__)


def _g(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    pos = s > 0
    out[pos] = np.exp(-1.0 / s[pos])
    return out


def base_bump(t):
    """chi(t): 1 for t <= 1, 0 for t >= 2, C-infinity blend in between."""
    t = np.asarray(t, dtype=float)
    a = _g(2.0 - t)
    b = _g(t - 1.0)
    out = np.where(t <= 1.0, 1.0, 0.0)
    mid = (t > 1.0) & (t < 2.0)
    out = np.where(mid, a / np.where(mid, a + b, 1.0), out)
    return out


def smooth_step(t, start: float, stop: float):
    """Equal to 1 for t <= start, 0 for t >= stop, smooth and monotone between."""
    if not stop > start:
        raise ValueError("smooth_step needs stop > start")
    t = np.asarray(t, dtype=float)
    return base_bump(1.0 + (t - start) / (stop - start))


@dataclass(frozen=True)
class SmoothCutoff:
    mu: float

    def __call__(self, t):
        return base_bump(np.asarray(t, dtype=float) / self.mu)


def make_smooth_cutoff(mu: float) -> SmoothCutoff:
    """chi_mu(t) = chi(t / mu): one on [0, mu], zero from 2 mu on."""
    if not mu > 0:
        raise ValueError(f"mu must be positive, got {mu}")
    return SmoothCutoff(float(mu))


def spatial_cutoff_phi(x, R: float):
    """Radial cutoff: 1 on B_{R+1}, 0 outside B_{R+2}.

    ``x`` is an array of positions with the coordinate axis last, or an array
    of scalars in 1D.
    """
    if not R > 0:
        raise ValueError("R must be positive")
    x = np.asarray(x, dtype=float)
    r = np.abs(x) if x.ndim <= 1 else np.linalg.norm(x, axis=-1)
    return smooth_step(r, R + 1.0, R + 2.0)


@dataclass
class GridFunction:
    """Complex samples on the uniform periodic grid of [-L, L)^d, N points per axis."""

    L: float
    N: int
    values: np.ndarray
    dimension: int = 1

    def __post_init__(self):
        if self.N < 2 or self.N & (self.N - 1):
            raise ValueError(f"points per axis must be a power of two, got {self.N}")
        self.values = np.asarray(self.values, dtype=complex)
        shape = (self.N,) * self.dimension
        if self.values.shape != shape:
            if self.values.size != self.N**self.dimension:
                raise ValueError(
                    f"values of size {self.values.size} do not match N^d = {self.N**self.dimension}"
                )
            self.values = self.values.reshape(shape)

    @property
    def dx(self) -> float:
        return 2.0 * self.L / self.N

    def axis(self) -> np.ndarray:
        return -self.L + self.dx * np.arange(self.N)

    def coordinates(self) -> list[np.ndarray]:
        return np.meshgrid(*([self.axis()] * self.dimension), indexing="ij")

    def radius(self) -> np.ndarray:
        if self.dimension == 1:
            return np.abs(self.axis())
        return np.sqrt(sum(c**2 for c in self.coordinates()))

    def frequencies(self) -> list[np.ndarray]:
        zeta = 2.0 * np.pi * np.fft.fftfreq(self.N, d=self.dx)
        return np.meshgrid(*([zeta] * self.dimension), indexing="ij")

    def frequency_magnitude(self) -> np.ndarray:
        return np.sqrt(sum(z**2 for z in self.frequencies()))

    @property
    def max_frequency(self) -> float:
        return math.pi * self.N / (2.0 * self.L) * math.sqrt(self.dimension)

    def spectrum(self) -> np.ndarray:
        return np.fft.fftn(self.values)

    def with_values(self, values) -> "GridFunction":
        return GridFunction(self.L, self.N, np.asarray(values), self.dimension)

    def __add__(self, other: "GridFunction") -> "GridFunction":
        self._check_same_grid(other)
        return self.with_values(self.values + other.values)

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        self._check_same_grid(other)
        return self.with_values(self.values - other.values)

    def _check_same_grid(self, other):
        if (self.L, self.N, self.dimension) != (other.L, other.N, other.dimension):
            raise ValueError("grid functions live on different grids")

    @classmethod
    def sample(cls, func: Callable, L: float, N: int, dimension: int = 1) -> "GridFunction":
        g = cls(L, N, np.zeros((N,) * dimension, dtype=complex), dimension)
        if dimension == 1:
            vals = func(g.axis())
        else:
            vals = func(np.stack(g.coordinates(), axis=-1))
        return g.with_values(vals)


def grid_size_for(k: float, mu: float, L: float, minimum: int = 64) -> int:
    """Smallest power of two with pi N / (2L) >= 4 sqrt(2 mu) k."""
    need = 4.0 * math.sqrt(2.0 * mu) * k * 2.0 * L / math.pi
    n = max(minimum, 2)
    while n < need:
        n *= 2
    return n


def low_multiplier(u: GridFunction, k: float, mu: float) -> np.ndarray:
    zeta2 = sum(z**2 for z in u.frequencies())
    return make_smooth_cutoff(mu)(zeta2 / k**2)


def apply_projector(
    u: GridFunction,
    k: float,
    mu: float,
    kind: Literal["low", "high"],
    mu_min: float | None = None,
) -> GridFunction:
    """Pi_L or Pi_H applied through the FFT.

    The low multiplier is chi_mu(|zeta|^2 / k^2) at each lattice frequency and
    the high multiplier is one minus it, so the two outputs add up to ``u``.
    """
    if not k > 0:
        raise ValueError("k must be positive")
    if mu_min is not None and mu < mu_min:
        logger.warning("mu = %g is below mu_0 = %g; ellipticity on the high band is not guaranteed", mu, mu_min)
    spec = u.spectrum()
    chi = low_multiplier(u, k, mu)
    if kind == "low":
        out = np.fft.ifftn(chi * spec)
    elif kind == "high":
        out = np.fft.ifftn((1.0 - chi) * spec)
    else:
        raise ValueError(f"unknown projector kind {kind!r}")
    return u.with_values(out)


@dataclass
class Decomposition:
    u_low: GridFunction
    u_high: GridFunction
    k: float
    mu: float
    R: float
    phi_u: GridFunction

    def ball_mask(self) -> np.ndarray:
        return self.u_low.radius() < self.R


def decompose(
    u: GridFunction,
    f_norm: float,
    k: float,
    mu: float,
    R: float,
    mu_min: float | None = None,
) -> Decomposition:
    """Split phi*u into Pi_L(phi u) + Pi_H(phi u).

    Both parts are kept on the whole box; restriction to B_R happens in the
    norm routines through :meth:`Decomposition.ball_mask`.
    """
    if u.L < R + 2.0 + u.dx:
        raise ValueError(f"box too small: L = {u.L} but need L >= R + 2 + dx = {R + 2.0 + u.dx}")
    phi = spatial_cutoff_phi(np.abs(u.axis()) if u.dimension == 1 else np.stack(u.coordinates(), -1), R)
    w = u.with_values(phi * u.values)
    low = apply_projector(w, k, mu, "low", mu_min=mu_min)
    # Pi_H = I - Pi_L, formed on the spectrum so the partition is exact
    high = apply_projector(w, k, mu, "high")
    return Decomposition(low, high, float(k), float(mu), float(R), w)


def _cell_volume(u: GridFunction) -> float:
    return u.dx**u.dimension


def l2_norm(u: GridFunction, mask: np.ndarray | None = None) -> float:
    vals = u.values if mask is None else u.values[mask]
    return math.sqrt(_cell_volume(u) * float(np.sum(np.abs(vals) ** 2)))


def spectral_derivative(u: GridFunction, alpha: Sequence[int]) -> GridFunction:
    """d^alpha u by multiplication with (i zeta)^alpha.

    For odd orders the Nyquist mode is dropped, as usual for real-valued
    spectral differentiation.
    """
    if len(alpha) != u.dimension:
        raise ValueError("multi-index length must equal the dimension")
    spec = u.spectrum()
    zetas = u.frequencies()
    factor = np.ones_like(spec)
    for axis, (a, z) in enumerate(zip(alpha, zetas)):
        if a:
            zz = z.copy()
            if a % 2 == 1:
                nyq = np.zeros(u.N, dtype=bool)
                nyq[u.N // 2] = True
                idx = [slice(None)] * u.dimension
                idx[axis] = nyq
                zz[tuple(idx)] = 0.0
            factor = factor * (1j * zz) ** a
    return u.with_values(np.fft.ifftn(factor * spec))


def multi_indices(order: int, dimension: int) -> Iterable[tuple[int, ...]]:
    for alpha in product(range(order + 1), repeat=dimension):
        if sum(alpha) == order:
            yield alpha


def derivative_norm(u: GridFunction, order: int, mask: np.ndarray | None = None) -> float:
    """L2 norm of nabla^order u over the mask, weighting d^alpha by order!/alpha!."""
    total = 0.0
    for alpha in multi_indices(order, u.dimension):
        weight = math.factorial(order) / math.prod(math.factorial(a) for a in alpha)
        total += weight * l2_norm(spectral_derivative(u, alpha), mask) ** 2
    return math.sqrt(total)


def semiclassical_sobolev_norm(u: GridFunction, s: float, hbar: float) -> float:
    """||u||_{H^s_hbar} by quadrature over the FFT lattice with xi = hbar zeta.

    With the discrete transform standing in for F_hbar, the (2 pi hbar)^{-d}
    prefactor and the lattice cell volume reduce to the trapezoid weight
    dx^d / N^d.
    """
    if not hbar > 0:
        raise ValueError("hbar must be positive")
    spec = u.spectrum()
    xi2 = (hbar**2) * sum(z**2 for z in u.frequencies())
    weight = (1.0 + xi2) ** s
    total = float(np.sum(weight * np.abs(spec) ** 2)) * _cell_volume(u) / u.N**u.dimension
    return math.sqrt(total)


def h1k_norm_grid(u: GridFunction, k: float, region_radius: float) -> float:
    """(||grad u||^2 + k^2 ||u||^2)^{1/2} over B_r, gradient taken spectrally."""
    if not k > 0:
        raise ValueError("k must be positive")
    mask = u.radius() < region_radius
    grad2 = derivative_norm(u, 1, mask) ** 2
    return math.sqrt(grad2 + k**2 * l2_norm(u, mask) ** 2)


def h1k_norm(u, k: float, region_radius: float | None = None) -> float:
    """Weighted H^1 norm of a grid function or a finite-element solution."""
    if isinstance(u, GridFunction):
        if region_radius is None:
            raise ValueError("region_radius is required for grid functions")
        return h1k_norm_grid(u, k, region_radius)
    from .hp_fem import h1k_norm_fem

    return h1k_norm_fem(u, k)


@dataclass
class ScalingRow:
    k: float
    order: int
    norm_high: float
    norm_low: float
    ratio_high: float
    ratio_low: float


@dataclass
class ScalingReport:
    rows: list[ScalingRow]
    slopes_high: dict[int, float]
    slopes_low: dict[int, float]

    columns = ("k", "order", "norm_high", "norm_low", "ratio_high", "ratio_low")

    def as_records(self) -> list[dict]:
        return [{c: getattr(r, c) for c in self.columns} for r in self.rows]


def loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    x = np.log(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float)
    if np.all(y == 0):
        return 0.0
    y = np.log(y)
    return float(np.polyfit(x, y, 1)[0])


def scaling_report(runs, alpha_max: int = 2, beta_max: int = 4) -> ScalingReport:
    """Normalised derivative norms of both parts and their log-log slopes in k.

    ``runs`` holds tuples ``(k, decomposition, f_norm)`` or
    ``(k, decomposition, f_norm, csol)``; csol defaults to 1. The high part is
    divided by k^{j-2} ||f|| and the low part by csol k^{j-1} ||f||, so
    bounded ratios show up as slopes near zero.
    """
    runs = list(runs)
    if len(runs) < 3:
        raise ValueError("scaling_report needs at least 3 runs")
    if alpha_max > 2 or beta_max > 6:
        raise ValueError("orders limited to alpha <= 2, beta <= 6")
    runs.sort(key=lambda r: r[0])
    rows = []
    top = max(alpha_max, beta_max)
    for run in runs:
        k, dec, f_norm = run[0], run[1], run[2]
        csol = run[3] if len(run) > 3 else 1.0
        mask = dec.ball_mask()
        for j in range(top + 1):
            nh = derivative_norm(dec.u_high, j, mask) if j <= alpha_max else math.nan
            nl = derivative_norm(dec.u_low, j, mask) if j <= beta_max else math.nan
            rh = nh / (k ** (j - 2) * f_norm) if f_norm > 0 else 0.0
            rl = nl / (csol * k ** (j - 1) * f_norm) if f_norm > 0 else 0.0
            rows.append(ScalingRow(k, j, nh, nl, rh, rl))
    ks = sorted({r.k for r in rows})
    slopes_high = {}
    slopes_low = {}
    for j in range(alpha_max + 1):
        slopes_high[j] = loglog_slope(ks, [r.ratio_high for r in rows if r.order == j])
    for j in range(beta_max + 1):
        slopes_low[j] = loglog_slope(ks, [r.ratio_low for r in rows if r.order == j])
    return ScalingReport(rows, slopes_high, slopes_low)
