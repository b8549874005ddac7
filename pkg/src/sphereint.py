"""
Integration of u^s (optionally weighted by f(u)) over spherical regions.

Regions are pieces of the unit sphere of a subspace V of R^n (the "frame").
They arise as normal cones nu(P,F) of polytope faces, or as caps.

Exact paths: atoms (d=0), great-circle arcs (d=1) and whole spheres / caps
with weights that are polynomials in <u,c> restricted to {<u,c> > tau}.
Numeric paths: adaptive geodesic subdivision of spherical triangles (d=2)
and randomized quasi-Monte Carlo over spherical tetrahedra (d=3).
"""
import math
from dataclasses import dataclass
from itertools import product
from typing import Callable, Optional

import numpy as np
from numpy.polynomial import legendre as npleg
from numpy.polynomial import polynomial as nppoly
from pydantic import BaseModel, ConfigDict, Field
from scipy.integrate import quad_vec
from scipy.linalg import null_space, orth
from scipy.optimize import linprog, nnls
from scipy.spatial import ConvexHull, Delaunay, QhullError
from scipy.special import gamma
from scipy.stats import qmc

from .errors import UnsupportedError
from .logger import logger
from .symtensor import (
    SymTensor,
    multi_indices,
    power,
    projection_tensor,
    sym_product,
    vector_power,
)

DIRECTION_TOL = 1e-12


def omega(n: int) -> float:
    """(n-1)-dimensional measure of the unit sphere in R^n: 2 pi^{n/2} / Gamma(n/2)."""
    if n < 1:
        raise ValueError(f"omega(n) needs n >= 1, got {n}")
    return float(2.0 * math.pi ** (n / 2.0) / gamma(n / 2.0))


def kappa(n: int) -> float:
    """Volume of the unit ball in R^n (kappa_0 = 1)."""
    if n == 0:
        return 1.0
    return omega(n) / n


class QuadratureSpec(BaseModel):
    """Tolerances and sample sizes for the numeric integration paths."""
    model_config = ConfigDict(frozen=True)

    rel_tol: float = Field(1e-10, gt=0, description="Relative tolerance of adaptive paths")
    abs_tol: float = Field(1e-14, gt=0, description="Absolute tolerance floor")
    max_depth: int = Field(10, ge=1, description="Maximum geodesic subdivision depth")
    min_depth: int = Field(1, ge=0, description="Subdivisions applied before accepting any triangle")
    straddle_ratio: float = Field(0.25, gt=0, description="Triangles crossing a cap boundary are split until their radius is below this fraction of the cap radius")
    mc_samples: int = Field(1_000_000, ge=1, description="Monte Carlo oracle sample count")
    qmc_points_log2: int = Field(10, ge=4, le=20, description="log2 of Sobol points per tetrahedron and replicate")
    qmc_replicates: int = Field(8, ge=2, description="Independent scramblings for the QMC error estimate")
    seed: int = Field(12345, description="Seed for QMC scrambling and Monte Carlo oracles")


@dataclass(frozen=True)
class SphericalIntegral:
    tensor: SymTensor
    error: float = 0.0
    converged: bool = True


# Weights

class SphericalWeight:
    """Scalar function on the sphere; called on an (N, n) array of unit vectors."""

    def __call__(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def rotated(self, matrix: np.ndarray) -> "SphericalWeight":
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class CapPolynomial(SphericalWeight):
    """
    f(u) = sum_i coefficients[i] * <u, axis>^i on {<u, axis> > threshold}, else 0.

    threshold None means no cap. Constants, cap indicators and the bump
    (<u,c> - tau)^2 are all of this form.
    """
    axis: np.ndarray
    threshold: Optional[float]
    coefficients: tuple

    def __call__(self, u):
        pts = np.atleast_2d(np.asarray(u, dtype=float))
        t = pts @ np.asarray(self.axis, dtype=float)
        values = nppoly.polyval(t, np.asarray(self.coefficients, dtype=float))
        if self.threshold is None:
            return values
        return np.where(t > self.threshold, values, 0.0)

    def rotated(self, matrix):
        return CapPolynomial(np.asarray(matrix) @ np.asarray(self.axis, dtype=float),
                             self.threshold, tuple(self.coefficients))

    @property
    def is_zero(self) -> bool:
        return all(c == 0 for c in self.coefficients) or (
            self.threshold is not None and self.threshold >= 1.0
        )


@dataclass(frozen=True, eq=False)
class FunctionWeight(SphericalWeight):
    func: Callable[[np.ndarray], np.ndarray]

    def __call__(self, u):
        pts = np.atleast_2d(np.asarray(u, dtype=float))
        return np.asarray(self.func(pts), dtype=float).reshape(pts.shape[0])

    def rotated(self, matrix):
        mat = np.asarray(matrix, dtype=float)
        func = self.func
        return FunctionWeight(lambda u: func(np.atleast_2d(u) @ mat))


def constant_weight(n: int, value: float = 1.0) -> CapPolynomial:
    return CapPolynomial(np.eye(n)[0], None, (float(value),))


def cap_indicator(axis, threshold: float) -> CapPolynomial:
    return CapPolynomial(np.asarray(axis, dtype=float), float(threshold), (1.0,))


def as_weight(f, n: int) -> SphericalWeight:
    if f is None:
        return constant_weight(n)
    if isinstance(f, SphericalWeight):
        return f
    if callable(f):
        return FunctionWeight(f)
    raise TypeError(f"Cannot use {type(f).__name__} as a spherical weight")


# Regions

class SphericalRegion:
    """
    A subset of the unit sphere of the subspace spanned by `frame` rows.

    Exactly one representation is populated:
      points  (a, n)           atoms, d = 0
      arcs    starts/dirs/angles, u(theta) = cos(theta) A + sin(theta) B
      pieces  (T, d+1, n)      spherical simplices, d = 2 or 3
      cap     axis, threshold  {<u, axis> > threshold}
    Cone-derived regions also keep their generators and lineality basis.
    """

    def __init__(self, ambient: int, sphere_dim: int, frame, *, points=None,
                 arc_starts=None, arc_dirs=None, arc_angles=None, pieces=None,
                 cap_axis=None, cap_threshold=None, generators=None, lineality=None,
                 full: bool = False):
        self.ambient = int(ambient)
        self.sphere_dim = int(sphere_dim)
        self.frame = np.asarray(frame, dtype=float).reshape(-1, ambient)
        self.points = None if points is None else np.asarray(points, dtype=float).reshape(-1, ambient)
        if arc_starts is not None:
            self.arc_starts = np.asarray(arc_starts, dtype=float).reshape(-1, ambient)
            self.arc_dirs = np.asarray(arc_dirs, dtype=float).reshape(-1, ambient)
            self.arc_angles = np.asarray(arc_angles, dtype=float).reshape(-1)
        else:
            self.arc_starts = self.arc_dirs = self.arc_angles = None
        self.pieces = None if pieces is None else np.asarray(pieces, dtype=float).reshape(-1, sphere_dim + 1, ambient)
        self.cap_axis = None if cap_axis is None else np.asarray(cap_axis, dtype=float)
        self.cap_threshold = cap_threshold
        self.generators = np.zeros((0, ambient)) if generators is None else np.asarray(generators, dtype=float).reshape(-1, ambient)
        self.lineality = np.zeros((0, ambient)) if lineality is None else np.asarray(lineality, dtype=float).reshape(-1, ambient)
        self.full = bool(full)

    @property
    def kind(self) -> str:
        if self.cap_axis is not None:
            return "cap"
        if self.points is not None:
            return "point" if len(self.points) else "empty"
        if self.arc_starts is not None:
            return "arc" if len(self.arc_starts) else "empty"
        if self.pieces is not None:
            return "polytope" if len(self.pieces) else "empty"
        return "empty"

    @property
    def is_full_circle(self) -> bool:
        return self.kind == "arc" and len(self.arc_angles) == 1 and abs(self.arc_angles[0] - 2 * math.pi) < 1e-12

    # Constructors

    @classmethod
    def empty(cls, n: int, d: int) -> "SphericalRegion":
        return cls(n, d, np.zeros((0, n)), points=np.zeros((0, n)))

    @classmethod
    def point(cls, u) -> "SphericalRegion":
        vec = _unit(u)
        return cls(vec.size, 0, vec.reshape(1, -1), points=vec.reshape(1, -1), generators=vec.reshape(1, -1))

    @classmethod
    def arc(cls, start, end) -> "SphericalRegion":
        """Minor great-circle arc from start to end."""
        a, b = _unit(start), _unit(end)
        direction = b - np.dot(a, b) * a
        norm = np.linalg.norm(direction)
        if norm < DIRECTION_TOL:
            raise ValueError("Arc endpoints must not be parallel")
        direction /= norm
        angle = math.atan2(float(np.dot(b, direction)), float(np.dot(b, a)))
        frame = np.vstack([a, direction])
        return cls(a.size, 1, frame, arc_starts=a, arc_dirs=direction, arc_angles=[angle],
                   generators=np.vstack([a, b]))

    @classmethod
    def great_circle(cls, a, b) -> "SphericalRegion":
        """Full circle in span(a, b) (a, b orthonormal)."""
        a, b = _unit(a), _unit(b)
        frame = np.vstack([a, b])
        return cls(a.size, 1, frame, arc_starts=a, arc_dirs=b, arc_angles=[2 * math.pi],
                   lineality=frame, full=True)

    @classmethod
    def cap(cls, axis, mu: float, frame=None) -> "SphericalRegion":
        """Cap {u : <u, axis> > 1 - mu} on the sphere of span(frame) (default R^n)."""
        c = _unit(axis)
        if frame is None:
            frame = np.eye(c.size)
        frame = orth(np.asarray(frame, dtype=float).T).T
        return cls(c.size, frame.shape[0] - 1, frame, cap_axis=c, cap_threshold=1.0 - float(mu))

    @classmethod
    def full_sphere(cls, n: int) -> "SphericalRegion":
        return cls.cap(np.eye(n)[n - 1], 2.0)

    # Queries

    def rotated(self, matrix) -> "SphericalRegion":
        mat = np.asarray(matrix, dtype=float)

        def rot(arr):
            return None if arr is None else arr @ mat.T

        out = SphericalRegion.__new__(SphericalRegion)
        out.ambient = self.ambient
        out.sphere_dim = self.sphere_dim
        out.frame = rot(self.frame)
        out.points = rot(self.points)
        out.arc_starts = rot(self.arc_starts)
        out.arc_dirs = rot(self.arc_dirs)
        out.arc_angles = None if self.arc_angles is None else self.arc_angles.copy()
        out.pieces = rot(self.pieces)
        out.cap_axis = None if self.cap_axis is None else mat @ self.cap_axis
        out.cap_threshold = self.cap_threshold
        out.generators = rot(self.generators)
        out.lineality = rot(self.lineality)
        out.full = self.full
        return out

    def contains(self, u: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        """Membership of each row of u (assumed unit vectors in span(frame))."""
        pts = np.atleast_2d(np.asarray(u, dtype=float))
        kind = self.kind
        if kind == "empty":
            return np.zeros(len(pts), dtype=bool)
        if kind == "cap":
            return pts @ self.cap_axis > self.cap_threshold
        if kind == "point":
            dist = np.linalg.norm(pts[:, None, :] - self.points[None, :, :], axis=2)
            return np.any(dist < 1e-9, axis=1)
        if kind == "arc":
            inside = np.zeros(len(pts), dtype=bool)
            for a, b, angle in zip(self.arc_starts, self.arc_dirs, self.arc_angles):
                theta = np.mod(np.arctan2(pts @ b, pts @ a), 2 * math.pi)
                inside |= theta <= angle + tol
            return inside
        inside = np.zeros(len(pts), dtype=bool)
        for piece in self.pieces:
            lam = pts @ np.linalg.pinv(piece)
            inside |= np.all(lam >= -tol, axis=1)
        return inside

    def max_inner(self, c) -> float:
        """max <u, c> over the region (used to test whether it meets a cap)."""
        c = np.asarray(c, dtype=float)
        kind = self.kind
        if kind == "empty":
            return -math.inf
        if kind == "point":
            return float(np.max(self.points @ c))
        if kind == "cap":
            raise UnsupportedError("max_inner is not defined for cap regions")
        if kind == "arc":
            best = -math.inf
            for a, b, angle in zip(self.arc_starts, self.arc_dirs, self.arc_angles):
                alpha, beta = float(a @ c), float(b @ c)
                phi = math.atan2(beta, alpha) % (2 * math.pi)
                if phi <= angle:
                    best = max(best, math.hypot(alpha, beta))
                else:
                    best = max(best, alpha, math.cos(angle) * alpha + math.sin(angle) * beta)
            return best
        columns = np.vstack([self.generators, self.lineality, -self.lineality])
        if self.full or len(columns) == 0:
            proj = self.frame.T @ (self.frame @ c)
            return float(np.linalg.norm(proj))
        lam, _ = nnls(columns.T, c)
        y = columns.T @ lam
        norm = float(np.linalg.norm(y))
        if norm > 1e-14:
            return norm
        return float(np.max(columns @ c / np.linalg.norm(columns, axis=1)))


def _unit(u) -> np.ndarray:
    vec = np.asarray(u, dtype=float).reshape(-1)
    norm = np.linalg.norm(vec)
    if norm < DIRECTION_TOL:
        raise ValueError("Zero vector has no direction")
    return vec / norm


def _unique_directions(vectors) -> np.ndarray:
    arr = np.asarray(vectors, dtype=float)
    if arr.size == 0:
        return arr.reshape(0, arr.shape[-1] if arr.ndim > 1 else 0)
    arr = arr / np.linalg.norm(arr, axis=1, keepdims=True)
    kept = []
    for v in arr:
        if all(np.dot(v, w) < 1.0 - 1e-12 for w in kept):
            kept.append(v)
    return np.array(kept)


def _interior_direction(gens: np.ndarray, frame: np.ndarray) -> Optional[np.ndarray]:
    """A unit c in span(frame) with <c, g> > 0 for all generators, or None."""
    c = gens.sum(axis=0)
    norm = np.linalg.norm(c)
    if norm > DIRECTION_TOL:
        c = c / norm
        if np.min(gens @ c) > 1e-9:
            return c
    # maximize tau subject to <frame^T y, g> >= tau, |y_i| <= 1
    m = frame.shape[0]
    a_ub = np.hstack([-(gens @ frame.T), np.ones((len(gens), 1))])
    res = linprog(c=np.r_[np.zeros(m), -1.0], A_ub=a_ub, b_ub=np.zeros(len(gens)),
                  bounds=[(-1.0, 1.0)] * m + [(None, 1.0)], method="highs")
    if not res.success or res.x[-1] <= 1e-12:
        return None
    c = frame.T @ res.x[:m]
    return c / np.linalg.norm(c)


def _triangulate_pointed(gens: np.ndarray, frame: np.ndarray) -> list:
    """Split a pointed cone (full-dimensional in span(frame)) into simplicial cones."""
    m = frame.shape[0]
    if len(gens) < m:
        return []
    if len(gens) == m:
        gram = gens @ gens.T
        return [gens] if np.linalg.det(gram) > 1e-24 else []
    c = _interior_direction(gens, frame)
    if c is None:
        return []
    complement = null_space((frame @ c).reshape(1, -1)).T @ frame
    coords = (gens / (gens @ c)[:, None]) @ complement.T
    try:
        if m == 3:
            hull = ConvexHull(coords)
            ring = gens[hull.vertices]
            if len(ring) == 3:
                return [ring]
            return [np.vstack([c, ring[i], ring[(i + 1) % len(ring)]]) for i in range(len(ring))]
        tri = Delaunay(coords)
        return [gens[simplex] for simplex in tri.simplices]
    except QhullError:
        logger.debug("Degenerate normal cone skipped (zero solid angle)")
        return []


def region_from_cone(n: int, frame, generators=(), lineality=()) -> SphericalRegion:
    """
    Spherical image of the cone pos(generators) + span(lineality) inside span(frame).

    frame is an orthonormal basis (rows) of the cone's linear hull; the
    generators are the pointed part (orthogonal to the lineality space).
    """
    frame = np.asarray(frame, dtype=float).reshape(-1, n)
    m = frame.shape[0]
    d = m - 1
    gens = _unique_directions(np.asarray(generators, dtype=float).reshape(-1, n))
    lin_raw = np.asarray(lineality, dtype=float).reshape(-1, n)
    lin = orth(lin_raw.T).T if len(lin_raw) else np.zeros((0, n))
    full = len(gens) == 0 and len(lin) == m

    if m == 0:
        return SphericalRegion.empty(n, -1)

    if m == 1:
        if len(lin) == 1:
            pts = np.vstack([lin[0], -lin[0]])
        else:
            pts = gens[:1]
        return SphericalRegion(n, 0, frame, points=pts, generators=gens, lineality=lin, full=full)

    if m == 2:
        if len(lin) == 2:
            starts, dirs, angles = [lin[0]], [lin[1]], [2 * math.pi]
        elif len(lin) == 1:
            g = gens[0] - np.dot(gens[0], lin[0]) * lin[0]
            starts, dirs, angles = [lin[0]], [g / np.linalg.norm(g)], [math.pi]
        else:
            dots = gens @ gens.T
            i, j = np.unravel_index(np.argmin(dots), dots.shape)
            a, b = gens[i], gens[j]
            direction = b - np.dot(a, b) * a
            norm = np.linalg.norm(direction)
            if norm < DIRECTION_TOL:
                return SphericalRegion(n, 1, frame, arc_starts=np.zeros((0, n)), arc_dirs=np.zeros((0, n)),
                                       arc_angles=[], generators=gens, lineality=lin)
            direction /= norm
            starts, dirs = [a], [direction]
            angles = [math.atan2(float(np.dot(b, direction)), float(np.dot(b, a)))]
        return SphericalRegion(n, 1, frame, arc_starts=starts, arc_dirs=dirs, arc_angles=angles,
                               generators=gens, lineality=lin, full=full)

    pieces = []
    if full:
        for signs in product((1.0, -1.0), repeat=m):
            pieces.append(frame * np.asarray(signs)[:, None])
    else:
        for signs in product((1.0, -1.0), repeat=len(lin)):
            extra = lin * np.asarray(signs)[:, None] if len(lin) else np.zeros((0, n))
            pieces.extend(_triangulate_pointed(np.vstack([gens, extra]), frame))
    pieces = np.array(pieces) if pieces else np.zeros((0, m, n))
    return SphericalRegion(n, d, frame, pieces=pieces, generators=gens, lineality=lin, full=full)


# Trigonometric moments

def _cos_sin_integral(a: int, b: int, theta: float) -> float:
    """Integral of cos^a sin^b over [0, theta] by the standard reduction formulas."""
    if b >= 2:
        return (-math.cos(theta) ** (a + 1) * math.sin(theta) ** (b - 1) / (a + b)
                + (b - 1) / (a + b) * _cos_sin_integral(a, b - 2, theta))
    if a >= 2:
        return (math.cos(theta) ** (a - 1) * math.sin(theta) ** (b + 1) / (a + b)
                + (a - 1) / (a + b) * _cos_sin_integral(a - 2, b, theta))
    if a == 0 and b == 0:
        return theta
    if a == 1 and b == 0:
        return math.sin(theta)
    if a == 0 and b == 1:
        return 1.0 - math.cos(theta)
    return math.sin(theta) ** 2 / 2.0


def trig_moment(a: int, b: int, theta0: float, theta1: float) -> float:
    return _cos_sin_integral(a, b, theta1) - _cos_sin_integral(a, b, theta0)


def _support_intervals(alpha: float, beta: float, threshold: Optional[float], angle: float) -> list:
    """Sub-intervals of [0, angle] where alpha cos + beta sin > threshold."""
    if threshold is None:
        return [(0.0, angle)]
    radius = math.hypot(alpha, beta)
    if radius <= threshold:
        return []
    if threshold < -radius:
        return [(0.0, angle)]
    phi = math.atan2(beta, alpha)
    delta = math.acos(max(-1.0, min(1.0, threshold / radius)))
    intervals = []
    for k in (-1, 0, 1):
        lo = max(0.0, phi - delta + 2 * math.pi * k)
        hi = min(angle, phi + delta + 2 * math.pi * k)
        if hi > lo:
            intervals.append((lo, hi))
    return intervals


def _cos_sin_expansion(a_vec: np.ndarray, b_vec: np.ndarray, s: int) -> np.ndarray:
    """
    Coefficients e[I, i] with prod_k (cos A_{I_k} + sin B_{I_k}) = sum_i e[I, i] cos^i sin^{s-i}.
    """
    idx = multi_indices(a_vec.size, s)
    e = np.ones((idx.shape[0], 1))
    for k in range(s):
        a_k = a_vec[idx[:, k]][:, None]
        b_k = b_vec[idx[:, k]][:, None]
        grown = np.zeros((idx.shape[0], k + 2))
        grown[:, 1:] += e * a_k
        grown[:, :-1] += e * b_k
        e = grown
    return e


def _arc_exact(a_vec, b_vec, angle, s, weight: CapPolynomial) -> np.ndarray:
    alpha = float(a_vec @ weight.axis)
    beta = float(b_vec @ weight.axis)
    intervals = _support_intervals(alpha, beta, weight.threshold, angle)
    moments = np.zeros(s + 1)
    if not intervals:
        return np.zeros(multi_indices(a_vec.size, s).shape[0])
    for q, p_q in enumerate(weight.coefficients):
        if p_q == 0:
            continue
        for l in range(q + 1):
            factor = p_q * math.comb(q, l) * alpha ** l * beta ** (q - l)
            if factor == 0:
                continue
            for i in range(s + 1):
                moments[i] += factor * sum(trig_moment(i + l, s - i + q - l, lo, hi) for lo, hi in intervals)
    return _cos_sin_expansion(a_vec, b_vec, s) @ moments


def _arc_numeric(a_vec, b_vec, angle, s, weight: SphericalWeight, spec: QuadratureSpec):
    idx = multi_indices(a_vec.size, s)

    def integrand(theta):
        u = math.cos(theta) * a_vec + math.sin(theta) * b_vec
        return weight(u)[0] * u[idx].prod(axis=1)

    value, err = quad_vec(integrand, 0.0, angle, epsabs=spec.abs_tol, epsrel=spec.rel_tol)
    return np.asarray(value, dtype=float), float(err)


# Whole spheres and caps

def _zonal_integral(frame: np.ndarray, weight: CapPolynomial, s: int, extra_threshold: Optional[float] = None,
                    region_axis: Optional[np.ndarray] = None) -> SymTensor:
    """
    Exact integral of weight * u^s over the unit sphere of span(frame).

    Splits u = t c + sqrt(1-t^2) w with c the weight axis projected into the
    frame, integrates w over the equatorial sphere by the moment formula
    int w^{2l} = omega_D prod_{j<l} (2j+1)/(D+2j) Q_W^l, and t = cos(theta)
    by trigonometric moments.
    """
    n = frame.shape[1]
    m = frame.shape[0]
    axis = np.asarray(weight.axis, dtype=float)
    projected = frame.T @ (frame @ axis)
    nu = float(np.linalg.norm(projected))
    coeffs = np.asarray(weight.coefficients, dtype=float)
    threshold = weight.threshold
    if nu < 1e-14:
        active = threshold is None or threshold < 0.0
        value = coeffs[0] if active else 0.0
        c_hat = frame[0]
        coeffs = np.array([value])
        threshold = None
    else:
        c_hat = projected / nu
        coeffs = coeffs * nu ** np.arange(coeffs.size)
        threshold = None if threshold is None else threshold / nu
    if extra_threshold is not None:
        threshold = extra_threshold if threshold is None else max(threshold, extra_threshold)

    if threshold is not None and threshold >= 1.0:
        return SymTensor.zeros(n, s)
    if m == 1:
        total = SymTensor.zeros(n, s)
        for u in (c_hat, -c_hat):
            t = float(u @ c_hat)
            if threshold is None or t > threshold:
                total = total + vector_power(u, s) * float(nppoly.polyval(t, coeffs))
        return total

    theta_max = math.pi if threshold is None or threshold <= -1.0 else math.acos(threshold)
    q_frame = projection_tensor(frame, n)
    c_power = [vector_power(c_hat, k) for k in range(s + 1)]
    q_equator = q_frame - vector_power(c_hat, 2)
    dim_equator = m - 1
    total = SymTensor.zeros(n, s)
    for i in range(0, s + 1, 2):
        l = i // 2
        t_integral = sum(
            p * trig_moment(s - i + q, i + m - 2, 0.0, theta_max)
            for q, p in enumerate(coeffs) if p != 0
        )
        if t_integral == 0:
            continue
        sphere_moment = omega(dim_equator) * math.prod((2 * j + 1) / (dim_equator + 2 * j) for j in range(l))
        term = sym_product(c_power[s - i], power(q_equator, l))
        total = total + term * (math.comb(s, i) * t_integral * sphere_moment)
    return total


# Spherical triangles

def _triangle_rule(points_per_axis: int = 5):
    """Collapsed Gauss-Legendre rule on the unit triangle, exact to total degree 8."""
    x, w = npleg.leggauss(points_per_axis)
    x = (x + 1.0) / 2.0
    w = w / 2.0
    xi, eta = np.meshgrid(x, x, indexing="ij")
    wi, wj = np.meshgrid(w, w, indexing="ij")
    alpha = xi.ravel()
    beta = (eta * (1.0 - xi)).ravel()
    weights = (wi * wj * (1.0 - xi)).ravel()
    bary = np.stack([1.0 - alpha - beta, alpha, beta], axis=1)
    return bary, weights


_TRI_BARY, _TRI_WEIGHTS = _triangle_rule()


def _gram_volume(simplices: np.ndarray) -> np.ndarray:
    gram = simplices @ simplices.transpose(0, 2, 1)
    return np.sqrt(np.clip(np.linalg.det(gram), 0.0, None))


def _triangle_estimates(tris: np.ndarray, s: int, weight: SphericalWeight):
    """Per-triangle integral of f u^s (T, C) and of |f| (T,)."""
    n = tris.shape[2]
    idx = multi_indices(n, s)
    z = np.einsum("qk,tkn->tqn", _TRI_BARY, tris)
    norms = np.linalg.norm(z, axis=2)
    u = z / norms[..., None]
    jac = _gram_volume(tris)[:, None] / norms ** 3
    f_vals = weight(u.reshape(-1, n)).reshape(norms.shape)
    w = f_vals * jac * _TRI_WEIGHTS[None, :]
    monos = u[..., idx].prod(axis=3)
    return np.einsum("tq,tqc->tc", w, monos), np.abs(w).sum(axis=1)


def _split_triangles(tris: np.ndarray) -> np.ndarray:
    v0, v1, v2 = tris[:, 0], tris[:, 1], tris[:, 2]

    def mid(a, b):
        m = a + b
        return m / np.linalg.norm(m, axis=1, keepdims=True)

    m01, m12, m02 = mid(v0, v1), mid(v1, v2), mid(v0, v2)
    children = np.stack([
        np.stack([v0, m01, m02], axis=1),
        np.stack([m01, v1, m12], axis=1),
        np.stack([m02, m12, v2], axis=1),
        np.stack([m01, m12, m02], axis=1),
    ], axis=1)
    return children.reshape(-1, 3, tris.shape[2])


def _solid_angles(tris: np.ndarray) -> np.ndarray:
    v0, v1, v2 = tris[:, 0], tris[:, 1], tris[:, 2]
    denom = 1.0 + np.sum(v0 * v1, axis=1) + np.sum(v1 * v2, axis=1) + np.sum(v2 * v0, axis=1)
    return 2.0 * np.arctan2(_gram_volume(tris), denom)


def _cap_classification(tris: np.ndarray, weight: SphericalWeight, ratio: float):
    """(outside, coarse straddling) masks for cap-supported weights; conservative bounding caps."""
    if not isinstance(weight, CapPolynomial) or weight.threshold is None:
        return np.zeros(len(tris), dtype=bool), np.zeros(len(tris), dtype=bool)
    axis = np.asarray(weight.axis, dtype=float)
    centre = tris.sum(axis=1)
    centre /= np.linalg.norm(centre, axis=1, keepdims=True)
    radius = np.max(np.arccos(np.clip(np.einsum("tkn,tn->tk", tris, centre), -1.0, 1.0)), axis=1)
    distance = np.arccos(np.clip(centre @ axis, -1.0, 1.0))
    cap_radius = math.acos(max(-1.0, min(1.0, weight.threshold)))
    outside = distance - radius >= cap_radius
    inside = distance + radius < cap_radius
    coarse = radius > ratio * cap_radius
    return outside, ~outside & ~inside & coarse


def _adaptive_triangles(tris: np.ndarray, s: int, weight: SphericalWeight, spec: QuadratureSpec):
    n = tris.shape[2]
    size = multi_indices(n, s).shape[0]
    total = np.zeros(size)
    if len(tris) == 0:
        return total, 0.0, True
    estimates, magnitude = _triangle_estimates(tris, s, weight)
    area = _solid_angles(tris)
    total_area = float(area.sum())
    scale = max(float(magnitude.sum()), float(np.abs(estimates.sum(axis=0)).max()))
    tol = max(spec.abs_tol, spec.rel_tol * scale)
    error_total = 0.0
    converged = True
    depth = 0
    while len(tris):
        outside, straddle = _cap_classification(tris, weight, spec.straddle_ratio)
        keep = ~outside
        tris, estimates, area, straddle = tris[keep], estimates[keep], area[keep], straddle[keep]
        if not len(tris):
            break
        children = _split_triangles(tris)
        child_est, _ = _triangle_estimates(children, s, weight)
        child_est = child_est.reshape(len(tris), 4, size)
        refined = child_est.sum(axis=1)
        err = np.max(np.abs(refined - estimates), axis=1)
        allowed = tol * area / total_area
        force = (depth < spec.min_depth) | straddle
        accept = (err <= allowed) & ~force
        if depth + 1 >= spec.max_depth:
            if np.any(~accept & (err > allowed)):
                converged = False
            accept = np.ones(len(tris), dtype=bool)
        total += refined[accept].sum(axis=0)
        error_total += float(err[accept].sum())
        todo = ~accept
        tris = children.reshape(len(tris), 4, 3, n)[todo].reshape(-1, 3, n)
        estimates = child_est[todo].reshape(-1, size)
        area = _solid_angles(tris) if len(tris) else np.zeros(0)
        depth += 1
    return total, error_total, converged


# Spherical tetrahedra

def _qmc_tetrahedra(tets: np.ndarray, s: int, weight: SphericalWeight, spec: QuadratureSpec):
    """Randomized QMC over spherical tetrahedra; error is the replicate standard error."""
    n = tets.shape[2]
    idx = multi_indices(n, s)
    replicates = []
    volumes = _gram_volume(tets)
    for rep in range(spec.qmc_replicates):
        sampler = qmc.Sobol(d=3, scramble=True, seed=spec.seed + 7919 * rep)
        cube = sampler.random_base2(spec.qmc_points_log2)
        sorted_u = np.sort(cube, axis=1)
        edges = np.hstack([np.zeros((len(cube), 1)), sorted_u, np.ones((len(cube), 1))])
        bary = np.diff(edges, axis=1)
        total = np.zeros(idx.shape[0])
        for tet, vol in zip(tets, volumes):
            z = bary @ tet
            norms = np.linalg.norm(z, axis=1)
            u = z / norms[:, None]
            vals = weight(u) * vol / norms ** 4
            total += (vals[:, None] * u[:, idx].prod(axis=2)).mean(axis=0) / 6.0
        replicates.append(total)
    replicates = np.array(replicates)
    mean = replicates.mean(axis=0)
    stderr = replicates.std(axis=0, ddof=1) / math.sqrt(len(replicates))
    return mean, float(stderr.max()) if stderr.size else 0.0


# Public entry points

def integrate_monomial(region: SphericalRegion, s: int, f=None, spec: QuadratureSpec = None) -> SphericalIntegral:
    """
    Integral of f(u) u^s over the region with respect to H^d.

    f may be None (constant 1), a SphericalWeight, or a vectorised callable.
    """
    if s < 0:
        raise ValueError("Monomial degree must be nonnegative")
    spec = spec or QuadratureSpec()
    n = region.ambient
    weight = as_weight(f, n)
    kind = region.kind

    if kind == "empty" or (isinstance(weight, CapPolynomial) and weight.is_zero):
        return SphericalIntegral(SymTensor.zeros(n, s))

    if kind == "point":
        values = weight(region.points)
        idx = multi_indices(n, s)
        coeffs = (values[:, None] * region.points[:, idx].prod(axis=2)).sum(axis=0)
        return SphericalIntegral(SymTensor(n, s, coeffs))

    if kind == "arc":
        coeffs = np.zeros(multi_indices(n, s).shape[0])
        error = 0.0
        for a_vec, b_vec, angle in zip(region.arc_starts, region.arc_dirs, region.arc_angles):
            if isinstance(weight, CapPolynomial):
                coeffs += _arc_exact(a_vec, b_vec, angle, s, weight)
            else:
                value, err = _arc_numeric(a_vec, b_vec, angle, s, weight, spec)
                coeffs += value
                error += err
        return SphericalIntegral(SymTensor(n, s, coeffs), error)

    if kind == "cap":
        if not isinstance(weight, CapPolynomial):
            raise UnsupportedError("Cap regions integrate polynomial cap weights only")
        axis_gap = np.linalg.norm(np.cross(weight.axis, region.cap_axis)) if n == 3 else \
            np.linalg.norm(weight.axis - np.dot(weight.axis, region.cap_axis) * region.cap_axis)
        if weight.threshold is not None and axis_gap > 1e-12:
            raise UnsupportedError("Cap weight must share the region's axis")
        if weight.threshold is None and axis_gap > 1e-12 and len(weight.coefficients) > 1:
            raise UnsupportedError("Cap weight must share the region's axis")
        aligned = CapPolynomial(region.cap_axis, weight.threshold, tuple(weight.coefficients))
        return SphericalIntegral(_zonal_integral(region.frame, aligned, s, extra_threshold=region.cap_threshold))

    if region.full and isinstance(weight, CapPolynomial):
        return SphericalIntegral(_zonal_integral(region.frame, weight, s))

    if region.sphere_dim == 2:
        coeffs, error, converged = _adaptive_triangles(region.pieces, s, weight, spec)
        if not converged:
            logger.warning(f"Spherical triangle quadrature stopped at depth {spec.max_depth} (error {error:.2e})")
        return SphericalIntegral(SymTensor(n, s, coeffs), error, converged)

    if region.sphere_dim == 3:
        coeffs, error = _qmc_tetrahedra(region.pieces, s, weight, spec)
        return SphericalIntegral(SymTensor(n, s, coeffs), error)

    raise UnsupportedError(f"Spherical dimension {region.sphere_dim} not supported")


def monte_carlo_monomial(region: SphericalRegion, s: int, f=None, samples: int = 1_000_000,
                         seed: int = 0, chunk: int = 200_000):
    """
    Monte Carlo oracle: uniform samples on the sphere of span(frame).

    Returns (estimate tensor, componentwise standard error array).
    """
    n = region.ambient
    weight = as_weight(f, n)
    frame = region.frame
    m = frame.shape[0]
    rng = np.random.default_rng(seed)
    idx = multi_indices(n, s)
    total = np.zeros(idx.shape[0])
    total_sq = np.zeros(idx.shape[0])
    done = 0
    while done < samples:
        count = min(chunk, samples - done)
        y = rng.standard_normal((count, m))
        u = (y / np.linalg.norm(y, axis=1, keepdims=True)) @ frame
        values = np.where(region.contains(u, tol=0.0), weight(u), 0.0)
        contrib = values[:, None] * u[:, idx].prod(axis=2)
        total += contrib.sum(axis=0)
        total_sq += (contrib ** 2).sum(axis=0)
        done += count
    area = omega(m)
    mean = total / samples
    var = np.maximum(total_sq / samples - mean ** 2, 0.0)
    return SymTensor(n, s, area * mean), area * np.sqrt(var / samples)


def integrate_cap(axis, threshold: float, s: int, f=None, frame=None) -> SphericalIntegral:
    """Exact integral of f u^s over the cap {<u, axis> > threshold} of the sphere of span(frame)."""
    region = SphericalRegion.cap(axis, 1.0 - float(threshold), frame=frame)
    return integrate_monomial(region, s, f)
