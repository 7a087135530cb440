"""Coefficient fields, the semiclassical principal symbol and the closed-form
constants that go with them (mu_0, Garding pair, continuity bound, C_qo)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .frequency_split import smooth_step

BOUND_TOL = 1e-12
ELLIPTICITY_TOL = 1e-10


def _as_points(x, dimension: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if dimension == 1 and x.ndim <= 1:
        x = x.reshape(-1, 1)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.shape[-1] != dimension:
        raise ValueError(f"position has {x.shape[-1]} components, expected {dimension}")
    return x


@dataclass(frozen=True)
class CoefficientField:
    """A(x) = a(s) I and n(x) = n(s) with s = x in 1D and s = |x| in 2D.

    Only scalar multiples of the identity are represented; in 1D that is no
    restriction, in 2D it covers every radial field that is isotropic.
    The profiles take and return numpy arrays.
    """

    a_profile: Callable[[np.ndarray], np.ndarray]
    n_profile: Callable[[np.ndarray], np.ndarray]
    a_min: float
    a_max: float
    n_min: float
    n_max: float
    support_radius: float
    dimension: int = 1
    radial_symmetric: bool = True
    name: str = "custom"

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ValueError("dimension must be 1 or 2")
        if self.dimension == 2 and not self.radial_symmetric:
            raise ValueError("2D coefficient fields must be radially symmetric")
        if not (0 < self.a_min <= self.a_max and 0 < self.n_min <= self.n_max):
            raise ValueError("need 0 < a_min <= a_max and 0 < n_min <= n_max")
        if not self.support_radius > 0:
            raise ValueError("support_radius must be positive")

    def _coordinate(self, x) -> np.ndarray:
        pts = _as_points(x, self.dimension)
        return pts[:, 0] if self.dimension == 1 else np.linalg.norm(pts, axis=1)

    def a_scalar(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        return np.where(np.abs(s) >= self.support_radius, 1.0, self.a_profile(s))

    def n_scalar(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        return np.where(np.abs(s) >= self.support_radius, 1.0, self.n_profile(s))

    def a_eval(self, x) -> np.ndarray:
        """A at the given positions, shape (npts, d, d)."""
        a = self.a_scalar(self._coordinate(x))
        return a[:, None, None] * np.eye(self.dimension)[None]

    def n_eval(self, x) -> np.ndarray:
        return self.n_scalar(self._coordinate(x))

    @property
    def is_constant(self) -> bool:
        return self.a_min == self.a_max == 1.0 and self.n_min == self.n_max == 1.0

    def with_dimension(self, dimension: int) -> "CoefficientField":
        return CoefficientField(
            self.a_profile, self.n_profile, self.a_min, self.a_max, self.n_min,
            self.n_max, self.support_radius, dimension, True, self.name,
        )


def validate_bounds(coeffs: CoefficientField, samples: int = 10_000, seed: int = 0) -> None:
    """Sample the field and raise if the stored bounds are violated."""
    rng = np.random.default_rng(seed)
    reach = 1.5 * coeffs.support_radius
    if coeffs.dimension == 1:
        pts = rng.uniform(-reach, reach, size=(samples, 1))
    else:
        pts = rng.uniform(-reach, reach, size=(samples, 2))
    a = coeffs.a_eval(pts)
    n = coeffs.n_eval(pts)
    v = rng.normal(size=(samples, coeffs.dimension))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    q = np.einsum("pi,pij,pj->p", v, a, v)
    if np.any(np.abs(a - np.swapaxes(a, 1, 2)) > BOUND_TOL):
        raise ValueError("A is not symmetric")
    if q.min() < coeffs.a_min - BOUND_TOL or q.max() > coeffs.a_max + BOUND_TOL:
        raise ValueError(f"A violates [{coeffs.a_min}, {coeffs.a_max}]: sampled [{q.min()}, {q.max()}]")
    if n.min() < coeffs.n_min - BOUND_TOL or n.max() > coeffs.n_max + BOUND_TOL:
        raise ValueError(f"n violates [{coeffs.n_min}, {coeffs.n_max}]: sampled [{n.min()}, {n.max()}]")
    outside = np.linalg.norm(pts, axis=1) > coeffs.support_radius
    if np.any(np.abs(a[outside] - np.eye(coeffs.dimension)) > 0) or np.any(n[outside] != 1.0):
        raise ValueError("coefficients differ from (I, 1) outside the support radius")


# ---- presets -------------------------------------------------------------

NONTRAPPING_HEIGHT = 1.0
TRAPPING_HEIGHT = 3.0


def _bump_profile(s):
    # plateau up to 0.2, gone by 0.8
    return 1.0 + NONTRAPPING_HEIGHT * smooth_step(np.abs(s), 0.2, 0.8)


def _well_profile(s):
    r = np.abs(s)
    rise = 1.0 - smooth_step(r, 0.25, 0.45)
    fall = smooth_step(r, 0.65, 0.85)
    return 1.0 + TRAPPING_HEIGHT * rise * fall


def _one(s):
    return np.ones_like(np.asarray(s, dtype=float))


PRESETS = ("constant", "nontrapping-bump", "trapping-well")


def preset(name: str, dimension: int = 1) -> CoefficientField:
    """Built-in coefficient fields, all with A = I.

    ``constant``: n = 1. ``nontrapping-bump``: n = 1 + smooth bump of height 1
    on |x| < 0.8. ``trapping-well``: n = 4 on the annulus 0.45 < |x| < 0.65,
    falling smoothly to 1 by |x| = 0.85 (and by |x| = 0.25 inward); in 2D the
    steep outer flank confines whispering-gallery rays.
    """
    if name == "constant":
        return CoefficientField(_one, _one, 1.0, 1.0, 1.0, 1.0, 1.0, dimension, True, name)
    if name in ("nontrapping-bump", "bump"):
        return CoefficientField(
            _one, _bump_profile, 1.0, 1.0, 1.0, 1.0 + NONTRAPPING_HEIGHT, 0.8, dimension, True,
            "nontrapping-bump",
        )
    if name == "trapping-well":
        return CoefficientField(
            _one, _well_profile, 1.0, 1.0, 1.0, 1.0 + TRAPPING_HEIGHT, 0.85, dimension, True, name
        )
    raise KeyError(f"unknown preset {name!r}; choose from {PRESETS}")


def from_knots(
    n_knots,
    n_values,
    a_knots=None,
    a_values=None,
    dimension: int = 1,
    name: str = "custom",
) -> CoefficientField:
    """Radial field from knot values, interpolated by monotone cubic Hermite pieces.

    Monotone interpolation never overshoots the knot values, so the stored
    bounds are exactly the knot extrema. The last knot value must be 1.
    """
    from scipy.interpolate import PchipInterpolator

    def build(knots, values):
        knots = np.asarray(knots, dtype=float)
        values = np.asarray(values, dtype=float)
        if knots.ndim != 1 or len(knots) < 2 or np.any(np.diff(knots) <= 0) or knots[0] < 0:
            raise ValueError("knots must be increasing, non-negative, at least two")
        if len(values) != len(knots):
            raise ValueError("knots and values differ in length")
        if not math.isclose(values[-1], 1.0):
            raise ValueError("coefficient must equal 1 at the last knot")
        interp = PchipInterpolator(knots, values, extrapolate=False)

        def profile(s):
            r = np.abs(np.asarray(s, dtype=float))
            out = interp(np.clip(r, knots[0], knots[-1]))
            return np.where(r >= knots[-1], 1.0, out)

        return profile, float(values.min()), float(values.max()), float(knots[-1])

    n_prof, n_lo, n_hi, n_sup = build(n_knots, n_values)
    if a_knots is None:
        a_prof, a_lo, a_hi, a_sup = _one, 1.0, 1.0, n_sup
    else:
        a_prof, a_lo, a_hi, a_sup = build(a_knots, a_values)
    field_ = CoefficientField(
        a_prof, n_prof, min(a_lo, 1.0), max(a_hi, 1.0), min(n_lo, 1.0), max(n_hi, 1.0),
        max(n_sup, a_sup), dimension, True, name,
    )
    validate_bounds(field_)
    return field_


# ---- symbol and constants -------------------------------------------------


def eval_symbol(coeffs: CoefficientField, x, xi) -> float:
    """<A(x) xi, xi> - n(x)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    if x.shape != (coeffs.dimension,) or xi.shape != (coeffs.dimension,):
        raise ValueError(f"x and xi must both have length {coeffs.dimension}")
    a = coeffs.a_eval(x[None])[0]
    return float(xi @ a @ xi - coeffs.n_eval(x[None])[0])


def eval_symbol_many(coeffs: CoefficientField, x, xi) -> np.ndarray:
    """Vectorised symbol over paired rows of x and xi."""
    a = coeffs.a_eval(x)
    n = coeffs.n_eval(x)
    xi = np.asarray(xi, dtype=float).reshape(len(n), coeffs.dimension)
    return np.einsum("pi,pij,pj->p", xi, a, xi) - n


def mu_zero(coeffs: CoefficientField) -> float:
    return 1.0 + 2.0 * coeffs.n_max / coeffs.a_min


@dataclass
class EllipticityReport:
    minimum: float
    passed: bool
    threshold: float
    samples: int


def verify_ellipticity(
    coeffs: CoefficientField, mu: float, sample_count: int = 64
) -> EllipticityReport:
    """Minimum of <xi>^{-2} (<A xi, xi> - n) over |xi|^2 in [mu, 100 mu], x in B_{R0}.

    Positions run over a uniform grid of B_{R0}; momenta over ``sample_count``
    radii (geometric in |xi|^2) times ``sample_count`` directions in 2D.
    """
    mu0 = mu_zero(coeffs)
    if mu < mu0 * (1 - 1e-14):
        raise ValueError(f"mu = {mu} is below mu_0 = {mu0}; the ellipticity guarantee does not apply")
    r0 = coeffs.support_radius
    line = np.linspace(-r0, r0, 2 * sample_count + 1)
    if coeffs.dimension == 1:
        xs = line[:, None]
        dirs = np.array([[1.0], [-1.0]])
    else:
        gx, gy = np.meshgrid(line, line, indexing="ij")
        xs = np.stack([gx.ravel(), gy.ravel()], axis=1)
        xs = xs[np.linalg.norm(xs, axis=1) <= r0]
        th = np.linspace(0, 2 * np.pi, sample_count, endpoint=False)
        dirs = np.stack([np.cos(th), np.sin(th)], axis=1)
    mags2 = np.geomspace(mu, 100 * mu, sample_count)
    minimum = math.inf
    a = coeffs.a_eval(xs)
    n = coeffs.n_eval(xs)
    for d in dirs:
        quad = np.einsum("i,pij,j->p", d, a, d)
        # <A xi, xi> = |xi|^2 <A d, d>
        vals = (mags2[None, :] * quad[:, None] - n[:, None]) / (1.0 + mags2[None, :])
        minimum = min(minimum, float(vals.min()))
    threshold = coeffs.a_min / 2.0 - ELLIPTICITY_TOL
    return EllipticityReport(minimum, minimum >= threshold, threshold, len(xs) * len(dirs) * len(mags2))


def garding_constants(coeffs: CoefficientField, k: float) -> tuple[float, float]:
    """(alpha, cv) with Re a(v,v) >= alpha ||v||_{H^1_k}^2 - cv ||v||_{L^2}^2."""
    if not k > 0:
        raise ValueError("k must be positive")
    return coeffs.a_min, 2.0 * k**2 * (coeffs.n_max + coeffs.a_min)


def c_cont_bound(coeffs: CoefficientField, c_dtn1: float) -> float:
    return max(coeffs.a_max, coeffs.n_max) + c_dtn1


def cqo(coeffs: CoefficientField, c_dtn1: float) -> float:
    if c_dtn1 < 0:
        raise ValueError("c_dtn1 must be non-negative")
    return 2.0 * c_cont_bound(coeffs, c_dtn1) / coeffs.a_min


def eta_threshold(coeffs: CoefficientField, c_dtn1: float) -> float:
    """Largest k*eta(V_N) for which the duality argument gives quasi-optimality."""
    c_cont = c_cont_bound(coeffs, c_dtn1)
    return math.sqrt(coeffs.a_min / (2.0 * (coeffs.n_max + coeffs.a_min))) / c_cont


@dataclass(frozen=True)
class ConstantsReport:
    mu0: float
    garding_alpha: float
    garding_cv: float
    c_cont_bound: float
    cqo: float

    def __post_init__(self):
        for name in ("mu0", "garding_alpha", "garding_cv", "c_cont_bound", "cqo"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


def constants_report(coeffs: CoefficientField, k: float, c_dtn1: float) -> ConstantsReport:
    alpha, cv = garding_constants(coeffs, k)
    return ConstantsReport(mu_zero(coeffs), alpha, cv, c_cont_bound(coeffs, c_dtn1), cqo(coeffs, c_dtn1))
