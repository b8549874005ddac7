"""
C^2 convex surfaces in R^3 and their generalized curvature tensors.

For a smooth body the j = 1 tensor reduces to a surface integral

    phi_1^{r,s,1}(K, f) = C_{3,1}^{r,s} int_{bd K} f(u_x) x^r u_x^s (k_1 b_2^2 + k_2 b_1^2) dA

with principal curvatures k_i and principal directions b_i, evaluated by
tensor-product Gauss-Legendre quadrature over parameter charts.
"""
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from numpy.polynomial import legendre as npleg
from pydantic import BaseModel, ConfigDict, Field

from .errors import ConfigError, UnsupportedError
from .logger import logger
from .sphereint import CapPolynomial, QuadratureSpec, as_weight
from .symtensor import SymTensor
from .valuations import constant_C


@dataclass(frozen=True)
class PrincipalData:
    """Principal curvatures/directions at a batch of surface points."""
    point: np.ndarray
    normal: np.ndarray
    k1: np.ndarray
    k2: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    area_element: np.ndarray


class SmoothSurface:
    """A parametrised closed (or capped) convex surface with analytic derivatives."""

    name = "surface"
    # +1 if Xu x Xv points outward, -1 otherwise
    orientation = 1.0

    def domains(self, f=None) -> List[Tuple[float, float, float, float]]:
        raise NotImplementedError

    def derivatives(self, u: np.ndarray, v: np.ndarray):
        """(X, Xu, Xv, Xuu, Xuv, Xvv), each of shape (N, 3)."""
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.name})"


class Ellipsoid(SmoothSurface):
    """Semi-axes a, b, c; chart (theta, phi) in [0, pi] x [0, 2 pi]."""

    def __init__(self, a: float, b: float, c: float):
        if min(a, b, c) <= 0:
            raise ConfigError("Ellipsoid semi-axes must be positive")
        self.axes = np.array([a, b, c], dtype=float)
        self.name = f"ellipsoid:a={a:g},b={b:g},c={c:g}"

    def domains(self, f=None):
        return [(0.0, math.pi, 0.0, 2.0 * math.pi)]

    def derivatives(self, u, v):
        st, ct, sp, cp = np.sin(u), np.cos(u), np.sin(v), np.cos(v)
        a = self.axes
        X = np.stack([st * cp, st * sp, ct], axis=1) * a
        Xu = np.stack([ct * cp, ct * sp, -st], axis=1) * a
        Xv = np.stack([-st * sp, st * cp, np.zeros_like(u)], axis=1) * a
        Xuu = np.stack([-st * cp, -st * sp, -ct], axis=1) * a
        Xuv = np.stack([-ct * sp, ct * cp, np.zeros_like(u)], axis=1) * a
        Xvv = np.stack([-st * cp, -st * sp, np.zeros_like(u)], axis=1) * a
        return X, Xu, Xv, Xuu, Xuv, Xvv


class Ball(Ellipsoid):
    def __init__(self, radius: float = 1.0):
        super().__init__(radius, radius, radius)
        self.radius = float(radius)
        self.name = f"ball:R={radius:g}"


class Paraboloid(SmoothSurface):
    """
    Lower boundary of K_h = {y_3 >= y_1^2 + y_2^2, y_3 <= h}.

    Polar chart (rho, phi) in [0, sqrt h] x [0, 2 pi]; the rim rho = sqrt h is
    not C^2 and must stay outside the support of the weight.
    """
    orientation = -1.0

    def __init__(self, h: float):
        if h <= 0:
            raise ConfigError("Paraboloid height must be positive")
        self.h = float(h)
        self.name = f"paraboloid:h={h:g}"

    def support_radius(self, f) -> float:
        """Chart radius covering the support of f."""
        rim = math.sqrt(self.h)
        if isinstance(f, CapPolynomial) and f.threshold is not None and np.allclose(f.axis, [0.0, 0.0, -1.0]):
            if f.threshold <= 0:
                raise UnsupportedError("Weight support reaches the paraboloid rim")
            radius = 0.5 * math.sqrt(max(f.threshold ** -2 - 1.0, 0.0))
            if radius >= rim:
                raise UnsupportedError(f"Weight support radius {radius:.4g} reaches the rim sqrt(h) = {rim:.4g}")
            return radius
        phis = np.linspace(0.0, 2.0 * math.pi, 64, endpoint=False)
        X, Xu, Xv, *_ = self.derivatives(np.full_like(phis, rim), phis)
        normals = _unit_normals(Xu, Xv, self.orientation)
        if np.any(np.abs(as_weight(f, 3)(normals)) > 0):
            raise UnsupportedError("Weight does not vanish at the paraboloid rim")
        return rim

    def domains(self, f=None):
        return [(0.0, self.support_radius(f), 0.0, 2.0 * math.pi)]

    def derivatives(self, u, v):
        rho, sp, cp = u, np.sin(v), np.cos(v)
        zero = np.zeros_like(u)
        X = np.stack([rho * cp, rho * sp, rho ** 2], axis=1)
        Xu = np.stack([cp, sp, 2.0 * rho], axis=1)
        Xv = np.stack([-rho * sp, rho * cp, zero], axis=1)
        Xuu = np.stack([zero, zero, np.full_like(u, 2.0)], axis=1)
        Xuv = np.stack([-sp, cp, zero], axis=1)
        Xvv = np.stack([-rho * cp, -rho * sp, zero], axis=1)
        return X, Xu, Xv, Xuu, Xuv, Xvv


_SURFACES = {
    "ball": (Ball, ("R",)),
    "paraboloid": (Paraboloid, ("h",)),
    "ellipsoid": (Ellipsoid, ("a", "b", "c")),
}
SURFACE_NAMES = tuple(_SURFACES)


def surface_from_name(text: str) -> SmoothSurface:
    """Parse "ball:R=2", "paraboloid:h=0.02" or "ellipsoid:a=1,b=1,c=2"."""
    name, _, params = text.partition(":")
    if name not in _SURFACES:
        raise ConfigError(f"Unknown surface {name!r} (expected one of {sorted(_SURFACES)})")
    cls, keys = _SURFACES[name]
    values: Dict[str, float] = {}
    for item in filter(None, params.split(",")):
        key, _, value = item.partition("=")
        try:
            values[key.strip()] = float(value)
        except ValueError as e:
            raise ConfigError(f"Bad surface parameter {item!r}") from e
    missing = [k for k in keys if k not in values]
    if missing:
        raise ConfigError(f"Surface {name} needs parameters {missing}")
    return cls(*(values[k] for k in keys))


def _unit_normals(Xu, Xv, orientation):
    cross = np.cross(Xu, Xv) * orientation
    return cross / np.linalg.norm(cross, axis=1, keepdims=True)


def principal_at(surface: SmoothSurface, u, v) -> PrincipalData:
    """
    Principal data from the fundamental forms (shape operator I^{-1} II).

    At umbilics any orthonormal tangent pair is returned.

    Raises:
        UnsupportedError: If the metric is degenerate at a requested point
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    X, Xu, Xv, Xuu, Xuv, Xvv = surface.derivatives(u, v)
    normal = _unit_normals(Xu, Xv, surface.orientation)
    E, F, G = np.sum(Xu * Xu, axis=1), np.sum(Xu * Xv, axis=1), np.sum(Xv * Xv, axis=1)
    L, M, N = (-np.sum(Xuu * normal, axis=1), -np.sum(Xuv * normal, axis=1), -np.sum(Xvv * normal, axis=1))
    det = E * G - F ** 2
    if np.any(det <= 1e-300):
        raise UnsupportedError(f"Degenerate metric on {surface.name}")
    s00 = (G * L - F * M) / det
    s01 = (G * M - F * N) / det
    s10 = (E * M - F * L) / det
    s11 = (E * N - F * M) / det
    half_trace = (s00 + s11) / 2.0
    gap = np.sqrt(np.maximum(half_trace ** 2 - (s00 * s11 - s01 * s10), 0.0))
    k1, k2 = half_trace - gap, half_trace + gap

    first = np.stack([s01, k1 - s00], axis=1)
    second = np.stack([k1 - s11, s10], axis=1)
    use_first = np.linalg.norm(first, axis=1) >= np.linalg.norm(second, axis=1)
    w = np.where(use_first[:, None], first, second)
    b1 = w[:, :1] * Xu + w[:, 1:] * Xv
    length = np.linalg.norm(b1, axis=1, keepdims=True)
    umbilic = (gap <= 1e-12 * np.maximum(np.abs(half_trace), 1.0)) | (length[:, 0] < 1e-300)
    fallback = Xu / np.linalg.norm(Xu, axis=1, keepdims=True)
    b1 = np.where(umbilic[:, None], fallback, b1 / np.where(length > 0, length, 1.0))
    b2 = np.cross(normal, b1)
    return PrincipalData(X, normal, k1, k2, b1, b2, np.sqrt(det))


class SmoothValue(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    tensor: SymTensor
    error: float = Field(0.0, ge=0)
    converged: bool = True
    panels: int = 1


def _gauss_grid(domain, panels: int, order: int):
    x, w = npleg.leggauss(order)
    u0, u1, v0, v1 = domain
    edges_u = np.linspace(u0, u1, panels + 1)
    edges_v = np.linspace(v0, v1, 2 * panels + 1)

    def nodes(edges):
        mid = (edges[:-1] + edges[1:]) / 2.0
        half = (edges[1:] - edges[:-1]) / 2.0
        return (mid[:, None] + half[:, None] * x[None, :]).ravel(), (half[:, None] * w[None, :]).ravel()

    nu, wu = nodes(edges_u)
    nv, wv = nodes(edges_v)
    uu, vv = np.meshgrid(nu, nv, indexing="ij")
    ww = np.outer(wu, wv)
    return uu.ravel(), vv.ravel(), ww.ravel()


def _curvature_matrix(data: PrincipalData, k: int) -> np.ndarray:
    """sum_i b_i b_i^T sum_{|I| = 2-k, i not in I} prod_{l in I} k_l (per point, 3x3)."""
    curvatures = (data.k1, data.k2)
    directions = (data.b1, data.b2)
    size = 2 - k
    total = np.zeros((len(data.k1), 3, 3))
    for i in range(2):
        others = [l for l in range(2) if l != i]
        if size > len(others):
            continue
        weight = np.prod([curvatures[l] for l in others[:size]], axis=0) if size else np.ones(len(data.k1))
        total += weight[:, None, None] * np.einsum("pa,pb->pab", directions[i], directions[i])
    return total


def _j1_matrix(data: PrincipalData) -> np.ndarray:
    """k_1 b_2 b_2^T + k_2 b_1 b_1^T (per point, 3x3)."""
    b1b1 = data.b1[:, :, None] * data.b1[:, None, :]
    b2b2 = data.b2[:, :, None] * data.b2[:, None, :]
    return data.k1[:, None, None] * b2b2 + data.k2[:, None, None] * b1b1


def _surface_tensor(surface: SmoothSurface, matrix: Callable[[PrincipalData], np.ndarray], r: int, s: int,
                    f, panels: int, order: int, chunk: int = 20_000) -> SymTensor:
    """int f(u_x) x^r u_x^s matrix(x) dA by composite Gauss-Legendre, without the normalising constant."""
    weight = as_weight(f, 3)
    dense = np.zeros((3,) * (r + s + 2))
    for domain in surface.domains(weight):
        uu, vv, ww = _gauss_grid(domain, panels, order)
        for start in range(0, len(uu), chunk):
            sl = slice(start, start + chunk)
            data = principal_at(surface, uu[sl], vv[sl])
            scalar = weight(data.normal) * data.area_element * ww[sl]
            active = scalar != 0
            if not np.any(active):
                continue
            arr = matrix(data)[active] * scalar[active, None, None]
            for factor in [data.normal[active]] * s + [data.point[active]] * r:
                arr = arr[..., None] * factor.reshape((-1,) + (1,) * (arr.ndim - 1) + (3,))
            dense += arr.sum(axis=0)
    return SymTensor.from_dense(dense)


def _refine(surface: SmoothSurface, build: Callable[[int], SymTensor], quad: Optional[QuadratureSpec],
            max_panels: int) -> SmoothValue:
    """Double the panel count until two successive estimates agree to quad.rel_tol."""
    quad = quad or QuadratureSpec()
    panels = 1
    previous = build(panels)
    while True:
        panels *= 2
        current = build(panels)
        error = (current - previous).max_abs()
        scale = max(current.max_abs(), quad.abs_tol)
        if error <= max(quad.rel_tol * scale, quad.abs_tol):
            return SmoothValue(tensor=current, error=error, converged=True, panels=panels)
        if panels >= max_panels:
            logger.warning(f"Surface quadrature on {surface.name} stopped at {panels} panels (error {error:.2e})")
            return SmoothValue(tensor=current, error=error, converged=False, panels=panels)
        previous = current


def phi_general_curvature(surface: SmoothSurface, k: int, r: int, s: int, f=None,
                          quad: Optional[QuadratureSpec] = None, order: int = 8,
                          max_panels: int = 32) -> SmoothValue:
    """
    Generalized curvature tensor of rank r + s + 2 on a C^2 surface in R^3.

    The integrand weights each principal direction b_i b_i^T by the
    elementary symmetric polynomial of degree 2 - k in the remaining
    principal curvatures.

    Raises:
        UnsupportedError: For k other than 1
    """
    if k != 1:
        raise UnsupportedError("Smooth surfaces in R^3 support k = 1 only")
    constant = constant_C(3, k, r, s)
    value = _refine(surface, lambda panels: _surface_tensor(
        surface, lambda data: _curvature_matrix(data, k), r, s, f, panels, order) * constant, quad, max_panels)
    logger.debug(f"General curvature form on {surface.name}: {value.panels} panels, error {value.error:.2e}")
    return value


def phi_j1_smooth(surface: SmoothSurface, r: int = 0, s: int = 0, f=None,
                  quad: Optional[QuadratureSpec] = None, order: int = 8,
                  max_panels: int = 32) -> SmoothValue:
    """phi_1^{r,s,1}(K, f) from k_1 b_2^2 + k_2 b_1^2."""
    constant = constant_C(3, 1, r, s)
    return _refine(surface, lambda panels: _surface_tensor(surface, _j1_matrix, r, s, f, panels, order) * constant,
                   quad, max_panels)


class RichardsonReport(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    coarse: SymTensor
    fine: SymTensor
    extrapolated: SymTensor
    difference: float
    target: Optional[SymTensor] = None

    @property
    def target_error(self) -> Optional[float]:
        return None if self.target is None else (self.extrapolated - self.target).max_abs()


def richardson_check(surface: SmoothSurface, r: int = 0, s: int = 0, f=None, panels: int = 4,
                     order: int = 4, target: Optional[SymTensor] = None) -> RichardsonReport:
    """Values at panels and 2*panels, and the Richardson estimate for a rule of degree 2*order."""
    constant = constant_C(3, 1, r, s)
    coarse = _surface_tensor(surface, _j1_matrix, r, s, f, panels, order) * constant
    fine = _surface_tensor(surface, _j1_matrix, r, s, f, 2 * panels, order) * constant
    factor = 2.0 ** (2 * order) - 1.0
    extrapolated = fine + (fine - coarse) * (1.0 / factor)
    return RichardsonReport(coarse=coarse, fine=fine, extrapolated=extrapolated,
                            difference=(fine - coarse).max_abs(), target=target)
