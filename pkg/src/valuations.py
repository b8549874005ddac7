"""
Local, generalized local and global Minkowski tensors of polytopes.

    phi_k^{r,s,j}(P, eta) = C_{n,k}^{r,s} sum_{F in F_k(P)} Q_{L(F)}^j
                            int_F int_{nu(P,F)} 1_eta(x, u) x^r u^s

multiplied by Q^m. Test functions eta are Full, a ProductIndicator beta x omega
(polytope beta, cap omega) or a weight f(u) on the sphere.
"""
import math
from dataclasses import dataclass
from typing import List, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .errors import SpecError, UnsupportedError
from .geometry import Polytope, nearest_point, scale, simplex_moments, transform, translate
from .logger import logger
from .sphereint import (
    CapPolynomial,
    QuadratureSpec,
    SphericalRegion,
    SphericalWeight,
    as_weight,
    cap_indicator,
    integrate_monomial,
    kappa,
    omega,
)
from .symtensor import (
    Rotation,
    SymTensor,
    metric_tensor,
    multi_indices,
    power,
    projection_tensor,
    sym_product,
    vector_power,
)
from .validators import validate_spec_indices

__all__ = [
    "omega", "kappa", "constant_c", "constant_C", "LocalTensorSpec", "basis_specs",
    "Full", "ProductIndicator", "TensorMeasureValue", "local_tensor", "global_tensor",
    "moment_tensor", "intrinsic_volumes", "support_measure_eval", "theta_measure",
    "curvature_weight", "steiner_moment_check", "local_steiner_check", "reduce_phi_top",
    "reduced_top_tensor", "translation_expand", "translation_defect",
]


def constant_c(n: int, k: int, r: int, s: int) -> float:
    """c_{n,k}^{r,s} = omega_{n-k} / (r! s! omega_{n-k+s})."""
    _check_k(n, k)
    return omega(n - k) / (math.factorial(r) * math.factorial(s) * omega(n - k + s))


def constant_C(n: int, k: int, r: int, s: int) -> float:
    """C_{n,k}^{r,s} = 1 / (r! s! omega_{n-k+s})."""
    _check_k(n, k)
    return 1.0 / (math.factorial(r) * math.factorial(s) * omega(n - k + s))


def _check_k(n: int, k: int):
    if not 0 <= k <= n - 1:
        raise SpecError(f"Index k={k} outside 0..{n - 1}")


class LocalTensorSpec(BaseModel):
    """Index tuple of Q^m phi_k^{r,s,j}."""
    model_config = ConfigDict(frozen=True)

    k: int = Field(..., ge=0)
    r: int = Field(0, ge=0)
    s: int = Field(0, ge=0)
    j: int = Field(0, ge=0)
    m: int = Field(0, ge=0)

    @property
    def rank(self) -> int:
        return 2 * self.m + 2 * self.j + self.r + self.s

    @property
    def degree(self) -> int:
        """Homogeneity degree k + r."""
        return self.k + self.r

    def is_basis_member(self, n: int) -> bool:
        return self.k <= n - 1 and not (self.j >= 1 and self.k in (0, n - 1))

    def validate_for(self, n: int) -> "LocalTensorSpec":
        validate_spec_indices(n, self.k, self.r, self.s, self.j, self.m)
        return self

    @property
    def label(self) -> str:
        prefix = f"Q^{self.m} " if self.m else ""
        return f"{prefix}phi_{self.k}^{{{self.r},{self.s},{self.j}}}"


def basis_specs(p: int, n: int) -> List[LocalTensorSpec]:
    """All basis maps Q^m phi_k^{r,s,j} of rank p in R^n (j = 0 when k in {0, n-1})."""
    specs = []
    for m in range(p // 2 + 1):
        for j in range((p - 2 * m) // 2 + 1):
            rest = p - 2 * m - 2 * j
            for r in range(rest + 1):
                for k in range(n):
                    spec = LocalTensorSpec(k=k, r=r, s=rest - r, j=j, m=m)
                    if spec.is_basis_member(n):
                        specs.append(spec)
    return specs


# Test functions

@dataclass(frozen=True)
class Full:
    """eta = Sigma^n."""


@dataclass(frozen=True)
class ProductIndicator:
    """
    eta = beta x omega; beta None means R^n, omega None means the whole sphere.

    omega must be a cap (or empty). Other direction sets are expressed as a
    SphericalWeight instead.

    Raises:
        UnsupportedError: If omega is an arc, a point or a cone region
    """
    beta: Optional[Polytope] = None
    omega: Optional[SphericalRegion] = None

    def __post_init__(self):
        if self.omega is not None and self.omega.kind not in ("cap", "empty"):
            raise UnsupportedError("Direction sets of product indicators must be caps")


TestFunction = Union[Full, ProductIndicator, SphericalWeight]


def as_test_function(eta) -> TestFunction:
    if eta is None:
        return Full()
    if isinstance(eta, (Full, ProductIndicator, SphericalWeight)):
        return eta
    if callable(eta):
        return as_weight(eta, 0)
    raise TypeError(f"Cannot use {type(eta).__name__} as a test function")


def _direction_weight(eta: TestFunction, n: int):
    """(weight for the sphere integrals, beta inequalities or None)."""
    if isinstance(eta, Full):
        return None, None
    if isinstance(eta, ProductIndicator):
        ineq = None if eta.beta is None else eta.beta.inequalities()
        if eta.omega is None:
            return None, ineq
        if eta.omega.kind == "empty":
            return CapPolynomial(np.eye(n)[0], None, (0.0,)), ineq
        return cap_indicator(eta.omega.cap_axis, eta.omega.cap_threshold), ineq
    return eta, None


def translate_test_function(eta, t) -> TestFunction:
    """eta + t = {(x + t, u) : (x, u) in eta}."""
    eta = as_test_function(eta)
    if isinstance(eta, ProductIndicator) and eta.beta is not None:
        return ProductIndicator(translate(eta.beta, t), eta.omega)
    return eta


def scale_test_function(eta, factor: float) -> TestFunction:
    """lambda eta = {(lambda x, u) : (x, u) in eta}."""
    eta = as_test_function(eta)
    if isinstance(eta, ProductIndicator) and eta.beta is not None:
        return ProductIndicator(scale(eta.beta, factor), eta.omega)
    return eta


def rotate_test_function(eta, rotation: Rotation) -> TestFunction:
    """theta eta = {(theta x, theta u) : (x, u) in eta}."""
    eta = as_test_function(eta)
    if isinstance(eta, ProductIndicator):
        beta = None if eta.beta is None else transform(eta.beta, rotation)
        region = None if eta.omega is None else eta.omega.rotated(rotation.matrix)
        return ProductIndicator(beta, region)
    if isinstance(eta, SphericalWeight):
        return eta.rotated(rotation.matrix)
    return eta


# Evaluation

@dataclass(frozen=True)
class TensorMeasureValue:
    tensor: SymTensor
    error: float = 0.0
    converged: bool = True


def _x_integral(face, r: int, ineq, n: int) -> Optional[SymTensor]:
    if ineq is None:
        if r == 0:
            return SymTensor.scalar(face.measure, n)
        return simplex_moments(face.simplices, r)
    pieces = face.clip(ineq)
    if len(pieces) == 0:
        return None
    return simplex_moments(pieces, r)


def local_tensor(P: Polytope, spec: LocalTensorSpec, eta=None, quad: QuadratureSpec = None) -> TensorMeasureValue:
    """
    Q^m phi_k^{r,s,j}(P, eta).

    Args:
        P: Polytope with its face lattice
        spec: Index tuple
        eta: Full (default), ProductIndicator or a spherical weight f
        quad: Quadrature settings for numeric sphere integrals

    Returns:
        TensorMeasureValue of rank 2m + 2j + r + s

    Raises:
        SpecError: If the indices are invalid
    """
    n = P.dimension
    spec.validate_for(n)
    eta = as_test_function(eta)
    weight, ineq = _direction_weight(eta, n)
    total = SymTensor.zeros(n, spec.r + spec.s + 2 * spec.j)
    error = 0.0
    converged = True
    for face in P.face_list(spec.k):
        x_part = _x_integral(face, spec.r, ineq, n)
        if x_part is None:
            continue
        u_part = integrate_monomial(face.normal_cone, spec.s, weight, quad)
        error += u_part.error * float(np.max(np.abs(x_part.coefficients)))
        converged &= u_part.converged
        term = sym_product(x_part, u_part.tensor)
        if spec.j:
            term = sym_product(term, power(projection_tensor(face.direction_basis, n), spec.j))
        total = total + term
    factor = constant_C(n, spec.k, spec.r, spec.s)
    result = total * factor
    if spec.m:
        result = sym_product(power(metric_tensor(n), spec.m), result)
    logger.debug(f"{spec.label} over {len(P.face_list(spec.k))} faces (error {error * factor:.2e})")
    return TensorMeasureValue(result, error * factor, converged)


def global_tensor(P: Polytope, k: int, r: int, s: int) -> SymTensor:
    """
    Phi_k^{r,s}(P); k = n gives the moment tensor (s = 0 only).

    Equals phi_k^{r,s}(P, Sigma^n).
    """
    n = P.dimension
    if k == n:
        return moment_tensor(P, r) if s == 0 else SymTensor.zeros(n, r + s)
    return local_tensor(P, LocalTensorSpec(k=k, r=r, s=s)).tensor


def moment_tensor(P: Polytope, r: int) -> SymTensor:
    """Psi_r(P) = (1/r!) int_P x^r dx; zero for lower-dimensional P."""
    n = P.dimension
    if not P.is_full_dimensional:
        logger.debug("Moment tensor of a lower-dimensional polytope is zero")
        return SymTensor.zeros(n, r)
    return simplex_moments(P.faces[n][0].simplices, r) / math.factorial(r)


def intrinsic_volumes(P: Polytope) -> List[float]:
    """V_0..V_n with V_k = Lambda_k(P, Sigma^n) for k < n."""
    n = P.dimension
    values = [float(local_tensor(P, LocalTensorSpec(k=k)).tensor.coefficients[0]) for k in range(n)]
    return values + [P.volume]


def support_measure_eval(P: Polytope, k: int, eta=None) -> float:
    """Lambda_k(P, eta)."""
    n = P.dimension
    value = local_tensor(P, LocalTensorSpec(k=k), eta).tensor.coefficients[0]
    return float(value) / constant_c(n, k, 0, 0)


def theta_measure(P: Polytope, k: int, eta=None) -> float:
    """Theta_k = n kappa_{n-k} / binom(n, k) * Lambda_k."""
    n = P.dimension
    return n * kappa(n - k) / math.comb(n, k) * support_measure_eval(P, k, eta)


def curvature_weight(P: Polytope, k: int, f=None, quad: QuadratureSpec = None) -> float:
    """W_k(P, f) = sum_F H^k(F) int_{nu(P,F)} f."""
    total = 0.0
    for face in P.face_list(k):
        total += face.measure * float(integrate_monomial(face.normal_cone, 0, f, quad).tensor.coefficients[0])
    return total


# Steiner checks

class SteinerReport(BaseModel):
    """Monte Carlo left side against the exact expansion."""

    estimate: List[float]
    standard_error: List[float]
    exact: List[float]
    max_sigma: float
    samples: int

    @property
    def passed(self) -> bool:
        return self.max_sigma <= 3.0


def _sigma(estimate: np.ndarray, stderr: np.ndarray, exact: np.ndarray) -> float:
    gap = np.abs(estimate - exact)
    scale = np.where(stderr > 0, stderr, np.inf)
    ratios = np.where(gap > 1e-12, gap / scale, 0.0)
    return float(np.max(ratios)) if ratios.size else 0.0


def _mc_box(P: Polytope, rho: float, samples: int, seed: int, chunk: int = 200_000):
    rng = np.random.default_rng(seed)
    lo = P.vertices.min(axis=0) - rho
    hi = P.vertices.max(axis=0) + rho
    volume = float(np.prod(hi - lo))
    done = 0
    while done < samples:
        count = min(chunk, samples - done)
        x = lo + (hi - lo) * rng.random((count, P.dimension))
        done += count
        yield x, volume


def steiner_moment_check(P: Polytope, rho: float, r: int = 0, samples: int = 1_000_000, seed: int = 0) -> SteinerReport:
    """
    Psi_r(P + rho B) by Monte Carlo against
    sum_k rho^{n+r-k} kappa_{n+r-k} sum_s Phi_{k-r+s}^{r-s,s}(P).
    """
    if rho <= 0:
        raise ValueError("Parallel distance must be positive")
    if r > 2 or P.dimension > 3:
        raise UnsupportedError("Steiner checks cover r <= 2 and n <= 3")
    n = P.dimension
    exact = SymTensor.zeros(n, r)
    for k in range(n + r + 1):
        coefficient = rho ** (n + r - k) * kappa(n + r - k)
        for s in range(r + 1):
            index = k - r + s
            if 0 <= index <= n:
                exact = exact + sym_product(SymTensor.scalar(coefficient, n), global_tensor(P, index, r - s, s))

    idx = exact.coefficients.size
    total = np.zeros(idx)
    total_sq = np.zeros(idx)
    for x, volume in _mc_box(P, rho, samples, seed):
        _, _, dist, _ = nearest_point(P, x)
        inside = dist <= rho
        values = vector_power_rows(x, r) * inside[:, None] * volume / math.factorial(r)
        total += values.sum(axis=0)
        total_sq += (values ** 2).sum(axis=0)
    mean = total / samples
    stderr = np.sqrt(np.maximum(total_sq / samples - mean ** 2, 0.0) / samples)
    report = SteinerReport(estimate=mean.tolist(), standard_error=stderr.tolist(),
                           exact=exact.coefficients.tolist(), max_sigma=_sigma(mean, stderr, exact.coefficients),
                           samples=samples)
    logger.debug(f"Steiner check r={r}, rho={rho}: max deviation {report.max_sigma:.2f} sigma")
    return report


def vector_power_rows(x: np.ndarray, r: int) -> np.ndarray:
    """Compact coefficients of x^r for every row of x."""
    return x[:, multi_indices(x.shape[1], r)].prod(axis=2)


def local_steiner_check(P: Polytope, rho: float, eta: ProductIndicator, samples: int = 1_000_000,
                        seed: int = 0) -> SteinerReport:
    """H^n(M_rho(P, eta)) by Monte Carlo against sum_k rho^{n-k} kappa_{n-k} Lambda_k(P, eta)."""
    n = P.dimension
    exact = sum(rho ** (n - k) * kappa(n - k) * support_measure_eval(P, k, eta) for k in range(n))
    hits = 0.0
    for x, volume in _mc_box(P, rho, samples, seed):
        p, u, dist, _ = nearest_point(P, x)
        keep = (dist > 0) & (dist <= rho)
        if eta.beta is not None:
            keep &= eta.beta.contains(p)
        if eta.omega is not None:
            keep &= eta.omega.contains(u)
        hits += float(keep.sum())
    frac = hits / samples
    volume = float(np.prod(P.vertices.max(axis=0) - P.vertices.min(axis=0) + 2 * rho))
    estimate = frac * volume
    stderr = volume * math.sqrt(max(frac * (1 - frac), 0.0) / samples)
    return SteinerReport(estimate=[estimate], standard_error=[stderr], exact=[exact],
                         max_sigma=_sigma(np.array([estimate]), np.array([stderr]), np.array([exact])),
                         samples=samples)


# Reduction and translation

def reduce_phi_top(r: int, s: int, j: int) -> List[tuple]:
    """
    phi_{n-1}^{r,s,j} = sum_i coefficient_i Q^{m_i} phi_{n-1}^{r,s_i}.

    Returns:
        List of (coefficient, m_i, s_i) for i = 0..j
    """
    terms = []
    for i in range(j + 1):
        coefficient = ((-1) ** i * math.comb(j, i) * math.factorial(s + 2 * i) * omega(1 + s + 2 * i)
                       / (math.factorial(s) * omega(1 + s)))
        terms.append((coefficient, j - i, s + 2 * i))
    return terms


def reduced_top_tensor(P: Polytope, r: int, s: int, j: int, eta=None) -> SymTensor:
    """Right-hand side of the top-degree reduction evaluated on P."""
    n = P.dimension
    total = None
    for coefficient, m_i, s_i in reduce_phi_top(r, s, j):
        term = local_tensor(P, LocalTensorSpec(k=n - 1, r=r, s=s_i, m=m_i), eta).tensor * coefficient
        total = term if total is None else total + term
    return total


def _translation_parts(P: Polytope, spec: LocalTensorSpec, eta, quad: QuadratureSpec = None) -> List[SymTensor]:
    return [
        local_tensor(P, spec.model_copy(update={"r": spec.r - i}), eta, quad).tensor
        for i in range(spec.r + 1)
    ]


def _expansion_defect(P: Polytope, spec: LocalTensorSpec, eta, t, parts: List[SymTensor],
                      quad: QuadratureSpec = None) -> SymTensor:
    t = np.asarray(t, dtype=float)
    lhs = local_tensor(translate(P, t), spec, translate_test_function(eta, t), quad).tensor
    rhs = SymTensor.zeros(P.dimension, spec.rank)
    for i, part in enumerate(parts):
        rhs = rhs + sym_product(part, vector_power(t, i)) * (1.0 / math.factorial(i))
    return lhs - rhs


def translation_expand(P: Polytope, spec: LocalTensorSpec, eta, t, quad: QuadratureSpec = None,
                       tol: float = 1e-8) -> List[SymTensor]:
    """
    [phi_k^{r-i,s,j}(P, eta) for i = 0..r] (Q^m applied).

    The expansion phi(P + t, eta + t) = sum_i phi^{r-i}(P, eta) t^i / i! is
    checked at t; a relative defect above tol is logged as a warning.
    """
    parts = _translation_parts(P, spec, eta, quad)
    defect = _expansion_defect(P, spec, eta, t, parts, quad).max_abs()
    magnitude = max((part.max_abs() for part in parts), default=0.0)
    relative = defect / max(magnitude, 1.0)
    if relative > tol:
        logger.warning(f"Translation expansion of {spec.label} off by {relative:.2e} at t={np.round(t, 6).tolist()}")
    else:
        logger.debug(f"Translation expansion of {spec.label}: relative defect {relative:.2e}")
    return parts


def translation_defect(P: Polytope, spec: LocalTensorSpec, eta, t) -> SymTensor:
    """phi(P + t, eta + t) - sum_i phi^{r-i}(P, eta) t^i / i!."""
    return _expansion_defect(P, spec, eta, t, _translation_parts(P, spec, eta))
