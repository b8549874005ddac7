"""
Paraboloid lifting experiments.

Gamma = sum c Q^m phi_k^{0,s,j} is evaluated on polytopes P_{h,t} obtained by
lifting a lattice complex to the paraboloid x_n = |x|^2, with a bump weight f
supported in a small cap around -e_n. The rotation defect
|Gamma(P,f)(theta E) - Gamma(P,f)(E)| stays away from zero as t -> 0 when
Gamma has j >= 2 terms and vanishes for j = 1, where the values converge to
the smooth tensor of the paraboloid cap K_h.
"""
import csv
import hashlib
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from pathlib import Path
from typing import Dict, List, Literal, Mapping, Optional, Sequence, Tuple

import numpy as np
import sympy as sp
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .config import settings
from .errors import ConfigError, DimensionMismatchError, RegimeError, SpecError, UnsupportedError
from .geometry import (
    Polytope,
    cap_radius_in_plane,
    complex_circumradius,
    cut_lifted,
    filter_faces,
    lift_complex,
    minkowski_sum,
    scale,
    transform,
    truncate_and_filter,
)
from .logger import logger, result_logger
from .smoothbody import Paraboloid, phi_j1_smooth
from .sphereint import CapPolynomial, QuadratureSpec, SphericalRegion, integrate_monomial
from .symtensor import Rotation, SymTensor, metric_tensor, power, projection_tensor, sym_product
from .valuations import constant_C

CSV_COLUMNS = ("t", "W_k", "gamma_E", "gamma_thetaE", "defect", "delta_Eprime", "lemma51_ratio", "quad_err")
SUBSPACE_FAMILIES = ("coordinate", "coordinate_reduced", "polygon")


# Caps and weights

def mu_h(h: float) -> float:
    """Cap parameter 1 - 1/sqrt(1 + 2h) of omega_h."""
    if h <= 0:
        raise ConfigError("Cut height h must be positive")
    return 1.0 - 1.0 / math.sqrt(1.0 + 2.0 * h)


def omega_h_cap(h: float, n: int = 3, mu: Optional[float] = None) -> SphericalRegion:
    """
    Open cap about -e_n with parameter mu (default mu_h).

    Raises:
        ConfigError: If mu exceeds mu_h, so the cap reaches normals of the cut
    """
    limit = mu_h(h)
    mu = limit if mu is None else float(mu)
    if not 0 < mu <= limit * (1 + 1e-12):
        raise ConfigError(f"Cap parameter mu={mu:g} must lie in (0, {limit:.6g}] for h={h:g}")
    return SphericalRegion.cap(-np.eye(n)[n - 1], mu)


def eps_close_check(omega: SphericalRegion, eps: float) -> bool:
    """True iff <u, -e_n> > 1 - eps and |<u, a>| < eps |a| on the whole cap."""
    if omega.kind != "cap":
        return False
    n = omega.ambient
    if not np.allclose(omega.cap_axis, -np.eye(n)[n - 1]):
        return False
    tau = omega.cap_threshold
    if tau <= -1.0:
        return False
    return tau > 1.0 - eps and math.sqrt(max(1.0 - tau * tau, 0.0)) < eps


def largest_close_mu(eps: float, margin: float = 0.99) -> float:
    """A cap parameter that is eps-close with a small safety margin."""
    return 1.0 - math.sqrt(1.0 - (margin * eps) ** 2)


def bump_function(omega: SphericalRegion) -> CapPolynomial:
    """f(u) = max(0, <u, c> - tau)^2 on the cap {<u, c> > tau}."""
    if omega.kind != "cap":
        raise UnsupportedError("The bump weight is defined on caps")
    tau = float(omega.cap_threshold)
    return CapPolynomial(np.asarray(omega.cap_axis, dtype=float), tau, (tau * tau, -2.0 * tau, 1.0))


# Configuration

class GammaTerm(BaseModel):
    """One summand c Q^m phi_k^{0,s,j} of Gamma."""
    model_config = ConfigDict(frozen=True)

    m: int = Field(0, ge=0)
    j: int = Field(..., ge=0)
    s: int = Field(0, ge=0)
    coefficient: float

    @property
    def rank(self) -> int:
        return 2 * self.m + 2 * self.j + self.s


class LemmaCoefficients(BaseModel):
    """s_0, q = (p - s_0)/2, normalised c_j (2 <= j <= q, nonzero only) and d = max j."""
    s0: int
    q: int
    coefficients: Dict[int, float] = Field(default_factory=dict)
    d: Optional[int] = None


class ExperimentConfig(BaseModel):
    """Experiment file schema (JSON)."""
    model_config = ConfigDict(extra="forbid")

    name: str = "experiment"
    n: Literal[3, 4]
    k: int = Field(1, ge=1)
    terms: List[GammaTerm] = Field(..., min_length=1)
    h: float = Field(..., gt=0)
    eps: float = Field(..., gt=0, lt=1)
    mu: Optional[float] = Field(None, gt=0, lt=1)
    t_values: List[float] = Field(..., min_length=1)
    complex_kind: Literal["cube", "triangle"] = "cube"
    d: Optional[int] = Field(None, ge=2)
    average: bool = False
    a: Optional[List[float]] = None
    theta_angle: Optional[float] = None
    window_radius: Optional[float] = Field(None, gt=0)
    target: Literal["none", "smooth"] = "none"
    seed: int = 0
    quad_tol: float = Field(1e-10, gt=0)

    @field_validator("t_values")
    @classmethod
    def _decreasing(cls, v):
        if any(t <= 0 for t in v):
            raise ValueError("t_values must be positive")
        if any(b >= a for a, b in zip(v, v[1:])):
            raise ValueError("t_values must be strictly decreasing")
        return v

    @model_validator(mode="after")
    def _consistent(self):
        if self.k > self.n - 2:
            raise ValueError(f"k={self.k} must satisfy 1 <= k <= n - 2 = {self.n - 2}")
        ranks = {term.rank for term in self.terms}
        if len(ranks) != 1:
            raise ValueError(f"all terms must have the same rank, got {sorted(ranks)}")
        if self.complex_kind == "triangle" and (self.n != 3 or self.d is None):
            raise ValueError("triangle complexes need n = 3 and d")
        if self.average and self.complex_kind != "triangle":
            raise ValueError("Minkowski averaging is defined for the triangle complex")
        if self.target == "smooth" and (self.n != 3 or any(term.j != 1 for term in self.terms)):
            raise ValueError("a smooth target needs n = 3 and j = 1 terms only")
        if self.a is not None:
            if len(self.a) != self.n - 1 or not np.any(np.asarray(self.a, dtype=float)):
                raise ValueError(f"a must be a nonzero vector with {self.n - 1} coordinates")
        limit = mu_h(self.h)
        if self.mu is not None and self.mu > limit * (1 + 1e-12):
            raise ValueError(f"mu={self.mu:g} exceeds mu_h={limit:.6g}")
        if not eps_close_check(self.cap, self.eps):
            raise ValueError(f"cap with mu={self.cap_mu:.6g} is not eps-close for eps={self.eps:g}")
        return self

    @property
    def p(self) -> int:
        return self.terms[0].rank

    @property
    def cap_mu(self) -> float:
        return mu_h(self.h) if self.mu is None else self.mu

    @property
    def cap(self) -> SphericalRegion:
        return omega_h_cap(self.h, self.n, self.cap_mu)

    @property
    def bump(self) -> CapPolynomial:
        return bump_function(self.cap)

    @property
    def direction(self) -> np.ndarray:
        """a as a unit vector of R^n with last coordinate 0."""
        a = np.zeros(self.n)
        a[0] = 1.0
        if self.a is not None:
            a[:-1] = self.a
        return a / np.linalg.norm(a)

    @property
    def rotation(self) -> Rotation:
        if self.theta_angle is not None:
            angle = self.theta_angle
        elif self.n == 4:
            angle = math.pi / 4
        else:
            d = self.d or lemma_coefficients(self).d or 2
            angle = math.pi / (2 * d)
        return Rotation.plane(self.n, 0, 1, angle)

    def arguments(self) -> Tuple[List[np.ndarray], List[np.ndarray]]:
        """E = (a x 2q, -e_n x s_0) and theta E."""
        lemma = lemma_coefficients(self)
        down = -np.eye(self.n)[self.n - 1]
        E = [self.direction] * (2 * lemma.q) + [down] * lemma.s0
        return E, [self.rotation.apply(v) for v in E]

    def quadrature(self) -> QuadratureSpec:
        return QuadratureSpec(rel_tol=self.quad_tol, seed=self.seed)

    def window_for(self, t: float) -> float:
        if self.window_radius is not None:
            return self.window_radius
        cell_diameter = 2.0 * complex_circumradius(self.n, t, self.complex_kind, self.d)
        return cap_radius_in_plane(1.0 - self.cap_mu) + 4.0 * cell_diameter


def load_experiment_config(path) -> ExperimentConfig:
    """
    Load an experiment file.

    Raises:
        FileNotFoundError: If the file does not exist
        ConfigError: If the file does not match the schema
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Experiment config not found: {path}")
    try:
        return ExperimentConfig(**json.loads(path.read_text(encoding="utf-8")))
    except (json.JSONDecodeError, ValidationError, TypeError) as e:
        raise ConfigError(f"Invalid experiment config {path}: {e}") from e


def config_hash(config: ExperimentConfig) -> str:
    payload = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def lemma_coefficients(config: ExperimentConfig) -> LemmaCoefficients:
    """
    Coefficients of the approximation Delta.

    s_0 is the smallest s among nonzero j >= 2 terms (among all nonzero terms
    when there are none) and
        c_j = (2q)! s_0! / p! * c_{(q-j) j s_0} * C_{n,k}^{0,s_0}.
    """
    p = config.p
    active = [term for term in config.terms if term.coefficient != 0]
    high = [term for term in active if term.j >= 2]
    pool = high or active
    s0 = min((term.s for term in pool), default=0)
    q = (p - s0) // 2
    factor = math.factorial(2 * q) * math.factorial(s0) / math.factorial(p) * constant_C(config.n, config.k, 0, s0)
    coefficients: Dict[int, float] = {}
    for term in high:
        if term.s == s0 and term.m == q - term.j:
            coefficients[term.j] = coefficients.get(term.j, 0.0) + term.coefficient * factor
    coefficients = {j: c for j, c in sorted(coefficients.items()) if c != 0}
    return LemmaCoefficients(s0=s0, q=q, coefficients=coefficients, d=max(coefficients, default=None))


# Level polytopes

def minkowski_average(P: Polytope, d: int) -> Polytope:
    """(1/d) sum_{l<d} theta_d^l P with theta_d the rotation by pi/d about e_3."""
    step = Rotation.plane(3, 0, 1, math.pi / d)
    total, rotation = P, step
    for _ in range(1, d):
        total = minkowski_sum(total, transform(P, rotation))
        rotation = rotation.compose(step)
    return scale(total, 1.0 / d)


def averaged_polytope(t: float, h: float, d: int, omega: SphericalRegion, k: int = 1) -> Polytope:
    """
    Faces of the Minkowski average of P_{h,t} over the triangle complex that meet omega.

    Raises:
        RegimeError: A retained face reaches the cut plane
    """
    average = minkowski_average(cut_lifted(t, h, "triangle", d), d)
    faces = filter_faces(average, k, omega)
    for face in faces:
        if np.max(face.points[:, -1]) >= h * (1 - 1e-9):
            raise RegimeError(f"An averaged {k}-face meeting the cap reaches the cut plane x_3 = {h:g}; decrease t")
    info = dict(average.info, t=t, h=h, kind="triangle-average", d=d)
    return Polytope(average.vertices, {k: faces}, partial=True, info=info)


def level_polytope(config: ExperimentConfig, t: float) -> Polytope:
    """The k-faces of P_{h,t} (or its Minkowski average) whose normal cones meet the cap."""
    if config.average:
        return averaged_polytope(t, config.h, config.d, config.cap, config.k)
    lifted = lift_complex(config.n, t, config.complex_kind, window_radius=config.window_for(t),
                          d=config.d, dims=(config.k,))
    return truncate_and_filter(lifted, config.h, config.cap, dims=(config.k,))


# Evaluation

@dataclass(frozen=True)
class GammaValue:
    tensor: SymTensor
    at_e: float
    at_theta_e: float
    w_k: float
    delta: Optional[float]
    quad_err: float
    faces: int


@dataclass(frozen=True)
class DeltaValue:
    tensor: SymTensor
    at_e_prime: float


def gamma_eval(P: Polytope, config: ExperimentConfig, quad: Optional[QuadratureSpec] = None) -> GammaValue:
    """
    Gamma(P, f) with f the bump weight, in one pass over the k-faces.

    The same pass accumulates W_k(P, f) = sum_F H^k(F) int_{nu(P,F)} f and
    Delta(P, f)(E') = sum_j c_j sum_F |pi_{L(F)} a|^{2j} H^k(F) int f.
    """
    n, k = config.n, config.k
    if P.dimension != n:
        raise DimensionMismatchError(f"Polytope in R^{P.dimension}, experiment in R^{n}")
    quad = quad or config.quadrature()
    lemma = lemma_coefficients(config)
    weight = config.bump
    degrees = sorted({term.s for term in config.terms} | {0})
    a = config.direction

    parts: Dict[int, SymTensor] = {}
    w_k = delta = error = 0.0
    faces = P.face_list(k)
    for face in faces:
        integrals = {s: integrate_monomial(face.normal_cone, s, weight, quad) for s in degrees}
        base = float(integrals[0].tensor.coefficients[0])
        if base == 0.0:
            continue
        measure = face.measure
        w_k += measure * base
        proj = projection_tensor(face.direction_basis, n)
        spread = proj.evaluate([a, a])
        for j, c_j in lemma.coefficients.items():
            delta += c_j * spread ** j * measure * base
        for term in config.terms:
            factor = term.coefficient * constant_C(n, k, 0, term.s) * measure
            piece = integrals[term.s].tensor
            if term.j:
                piece = sym_product(piece, power(proj, term.j))
            piece = piece * factor
            parts[term.m] = parts[term.m] + piece if term.m in parts else piece
            error += abs(factor) * integrals[term.s].error

    tensor = SymTensor.zeros(n, config.p)
    for m, part in parts.items():
        tensor = tensor + (sym_product(power(metric_tensor(n), m), part) if m else part)
    E, theta_E = config.arguments()
    return GammaValue(
        tensor=tensor,
        at_e=tensor.evaluate(E),
        at_theta_e=tensor.evaluate(theta_E),
        w_k=w_k,
        delta=delta if lemma.coefficients else None,
        quad_err=error,
        faces=len(faces),
    )


def delta_eval(P: Polytope, config: ExperimentConfig, quad: Optional[QuadratureSpec] = None) -> DeltaValue:
    """Delta(P, f) = sum_j c_j Q^{q-j} sum_F Q_{L(F)}^j H^k(F) int_{nu(P,F)} f, and its value at E'."""
    n = config.n
    quad = quad or config.quadrature()
    lemma = lemma_coefficients(config)
    total = SymTensor.zeros(n, 2 * lemma.q)
    if not lemma.coefficients:
        return DeltaValue(total, 0.0)
    weight = config.bump
    sums = {j: SymTensor.zeros(n, 2 * j) for j in lemma.coefficients}
    for face in P.face_list(config.k):
        base = float(integrate_monomial(face.normal_cone, 0, weight, quad).tensor.coefficients[0])
        if base == 0.0:
            continue
        proj = projection_tensor(face.direction_basis, n)
        for j in sums:
            sums[j] = sums[j] + power(proj, j) * (face.measure * base)
    metric = metric_tensor(n)
    for j, c_j in lemma.coefficients.items():
        total = total + sym_product(power(metric, lemma.q - j), sums[j]) * c_j
    return DeltaValue(total, total.evaluate([config.direction] * (2 * lemma.q)))


def coordinate_weights(P: Polytope, k: int, f=None, quad: Optional[QuadratureSpec] = None) -> Dict[Tuple[int, ...], float]:
    """
    W_k^i(P, f) grouped by the coordinate subspace L_i spanned by the projected face.

    For the cube complex b(n,k) W_k^i = W_k for every i.
    """
    n = P.dimension
    weights: Dict[Tuple[int, ...], float] = {}
    for face in P.face_list(k):
        spread = np.ptp(face.points[:, : n - 1], axis=0)
        axes = tuple(int(i) for i in np.nonzero(spread > 1e-12)[0])
        if len(axes) != k:
            raise UnsupportedError(f"Face projects onto {len(axes)} coordinate axes, expected {k}")
        value = face.measure * float(integrate_monomial(face.normal_cone, 0, f, quad).tensor.coefficients[0])
        weights[axes] = weights.get(axes, 0.0) + value
    for axes in combinations(range(n - 1), k):
        weights.setdefault(axes, 0.0)
    return dict(sorted(weights.items()))


def smooth_target(config: ExperimentConfig, quad: Optional[QuadratureSpec] = None) -> Tuple[float, float]:
    """Gamma(K_h, f)(E) for j = 1 configs and its quadrature error."""
    if config.target != "smooth":
        raise UnsupportedError("Config has no smooth target")
    quad = quad or config.quadrature()
    surface = Paraboloid(config.h)
    weight = config.bump
    tensor = SymTensor.zeros(3, config.p)
    error = 0.0
    for term in config.terms:
        value = phi_j1_smooth(surface, 0, term.s, weight, quad)
        piece = value.tensor
        if term.m:
            piece = sym_product(power(metric_tensor(3), term.m), piece)
        tensor = tensor + piece * term.coefficient
        error += abs(term.coefficient) * value.error
    E, _ = config.arguments()
    return tensor.evaluate(E), error


# Study

class ExperimentRow(BaseModel):
    t: float
    w_k: float
    gamma_e: float
    gamma_theta_e: float
    defect: float
    delta_e_prime: Optional[float] = None
    residual_ratio: Optional[float] = None
    quad_err: float = 0.0
    faces: int = 0
    target_error: Optional[float] = None
    runtime: float = 0.0

    def csv_record(self) -> Dict[str, str]:
        values = (self.t, self.w_k, self.gamma_e, self.gamma_theta_e, self.defect,
                  self.delta_e_prime, self.residual_ratio, self.quad_err)
        return {column: ("" if value is None else repr(float(value))) for column, value in zip(CSV_COLUMNS, values)}


class ExperimentReport(BaseModel):
    name: str
    config_hash: str
    lemma: LemmaCoefficients
    rows: List[ExperimentRow]
    target: Optional[float] = None
    target_error: Optional[float] = None
    runtime: float = 0.0

    @field_validator("rows")
    @classmethod
    def _ordered(cls, v):
        if any(b.t >= a.t for a, b in zip(v, v[1:])):
            raise ValueError("rows must be ordered by decreasing t")
        return v


class Certificate(BaseModel):
    name: str
    passed: bool
    detail: str


def run_level(config: ExperimentConfig, t: float, quad: Optional[QuadratureSpec] = None,
              target: Optional[float] = None) -> ExperimentRow:
    started = time.perf_counter()
    P = level_polytope(config, t)
    value = gamma_eval(P, config, quad)
    defect = abs(value.at_theta_e - value.at_e)
    ratio = None
    if value.delta is not None and value.w_k > 0:
        ratio = abs(value.at_e - value.delta) / (value.w_k * config.eps)
    row = ExperimentRow(
        t=t,
        w_k=value.w_k,
        gamma_e=value.at_e,
        gamma_theta_e=value.at_theta_e,
        defect=defect,
        delta_e_prime=value.delta,
        residual_ratio=ratio,
        quad_err=value.quad_err,
        faces=value.faces,
        target_error=None if target is None else abs(value.at_e - target),
        runtime=time.perf_counter() - started,
    )
    logger.info(f"[{config.name}] t={t:g}: {value.faces} faces, W_k={value.w_k:.6g}, "
                f"defect={defect:.4e} ({row.runtime:.1f}s)")
    return row


def convergence_study(config: ExperimentConfig, quad: Optional[QuadratureSpec] = None,
                      threads: Optional[int] = None) -> ExperimentReport:
    """
    Run every t-level and collect the rows.

    Levels run in a thread pool of THREADS workers; rows keep the t order.

    Raises:
        RegimeError: If a level is too coarse for the cut
        WindowTooSmallError: If the window misses faces that meet the cap
    """
    started = time.perf_counter()
    quad = quad or config.quadrature()
    digest = config_hash(config)
    lemma = lemma_coefficients(config)
    if config.average and lemma.d is not None and lemma.d != config.d:
        logger.warning(f"Triangle parameter d={config.d} differs from the largest j={lemma.d} of Gamma")

    target = target_error = None
    if config.target == "smooth":
        target, target_error = smooth_target(config, quad)
        logger.info(f"[{config.name}] smooth target {target:.10g} (error {target_error:.1e})")

    workers = threads or settings.THREADS
    with ThreadPoolExecutor(max_workers=workers) as pool:
        rows = list(pool.map(lambda t: run_level(config, t, quad, target), config.t_values))

    report = ExperimentReport(name=config.name, config_hash=digest, lemma=lemma, rows=rows, target=target,
                              target_error=target_error, runtime=time.perf_counter() - started)
    for row in rows:
        result_logger.log_experiment_row(digest, row.model_dump())
    return report


def residual_scan(config: ExperimentConfig, eps_values: Sequence[float], t: Optional[float] = None,
                  quad: Optional[QuadratureSpec] = None) -> List[Tuple[float, Optional[float]]]:
    """Residual ratio |Gamma(E) - Delta(E')| / (W_k eps) at one level, with an eps-close cap per eps."""
    t = config.t_values[-1] if t is None else t
    results = []
    for eps in eps_values:
        scanned = config.model_copy(update={"eps": eps, "mu": min(largest_close_mu(eps), mu_h(config.h))})
        row = run_level(scanned, t, quad)
        results.append((eps, row.residual_ratio))
    return results


def certify_divergence(report: ExperimentReport, agreement: float = 0.2, margin: float = 10.0) -> Certificate:
    """Defects at the two smallest t agree within `agreement` and exceed `margin` x quadrature error."""
    name = f"divergence:{report.name}"
    if len(report.rows) < 2:
        return Certificate(name=name, passed=False, detail="needs at least two t-levels")
    prev, last = report.rows[-2], report.rows[-1]
    high = max(prev.defect, last.defect)
    gap = abs(prev.defect - last.defect)
    noise = max(prev.quad_err, last.quad_err)
    agrees = high > 0 and gap <= agreement * high
    clear = min(prev.defect, last.defect) > margin * noise
    detail = (f"defects {prev.defect:.4e} (t={prev.t:g}), {last.defect:.4e} (t={last.t:g}); "
              f"relative gap {gap / high if high else float('inf'):.3f}; quadrature error {noise:.2e}")
    return Certificate(name=name, passed=bool(agrees and clear), detail=detail)


def certify_convergence(report: ExperimentReport, rel_tol: float = 1e-2, defect_tol: float = 1e-3) -> Certificate:
    """
    Target errors shrink along the t-sequence, end below rel_tol |target|,
    and the last rotation defect is below defect_tol |Gamma(E)|.
    """
    name = f"convergence:{report.name}"
    errors = [row.target_error for row in report.rows]
    if report.target is None or any(e is None for e in errors):
        return Certificate(name=name, passed=False, detail="no smooth target")
    shrinking = errors[-1] < errors[0] and all(b <= 1.1 * a for a, b in zip(errors, errors[1:]))
    close = errors[-1] < rel_tol * abs(report.target)
    last = report.rows[-1]
    invariant = last.defect <= defect_tol * abs(last.gamma_e)
    detail = (f"target {report.target:.8g}; errors {', '.join(f'{e:.2e}' for e in errors)}; "
              f"last defect {last.defect:.2e}")
    return Certificate(name=name, passed=bool(shrinking and close and invariant), detail=detail)


def write_report_csv(report: ExperimentReport, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=list(CSV_COLUMNS), lineterminator="\n")
        writer.writeheader()
        for row in report.rows:
            writer.writerow(row.csv_record())
    return path


def write_run_summary(report: ExperimentReport, path, config: Optional[ExperimentConfig] = None,
                      certificates: Sequence[Certificate] = ()) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    summary = report.model_dump(mode="json")
    summary["certificates"] = [c.model_dump() for c in certificates]
    if config is not None:
        summary["config"] = config.model_dump(mode="json")
    path.write_text(json.dumps(summary, indent=2, sort_keys=True), encoding="utf-8")
    return path


# Upsilon

def upsilon_subspaces(n: int, k: int, family: str = "coordinate", d: Optional[int] = None) -> List[np.ndarray]:
    """
    Orthonormal bases (rows in R^n) of the subspaces summed in Upsilon.

    coordinate: k-dim coordinate subspaces of R^{n-1}
    coordinate_reduced: k-dim coordinate subspaces of R^{n-2}
    polygon: lines at angles r pi/d, r < d, in the e_1 e_2 plane (n = 3, k = 1)
    """
    if family in ("coordinate", "coordinate_reduced"):
        size = n - 1 if family == "coordinate" else n - 2
        if not 1 <= k <= size:
            raise SpecError(f"No {k}-dimensional coordinate subspaces of R^{size}")
        return [np.eye(n)[list(axes)] for axes in combinations(range(size), k)]
    if family == "polygon":
        if n != 3 or k != 1 or d is None or d < 2:
            raise SpecError("The polygon family needs n = 3, k = 1 and d >= 2")
        return [np.array([[math.cos(r * math.pi / d), math.sin(r * math.pi / d), 0.0]]) for r in range(d)]
    raise ConfigError(f"Unknown subspace family {family!r}; choose from {SUBSPACE_FAMILIES}")


def _check_upsilon_indices(coefficients: Mapping[int, float], q: int):
    for j in coefficients:
        if not 2 <= j <= q:
            raise SpecError(f"Upsilon coefficient index j={j} outside 2..{q}")


def upsilon_tensor(coefficients: Mapping[int, float], q: int, n: int, k: int, family: str = "coordinate",
                   d: Optional[int] = None) -> SymTensor:
    """Upsilon = sum_j c_j Q^{q-j} sum_i Q_{L_i}^j (rank 2q)."""
    _check_upsilon_indices(coefficients, q)
    subspaces = upsilon_subspaces(n, k, family, d)
    metric = metric_tensor(n)
    total = SymTensor.zeros(n, 2 * q)
    for j, c in coefficients.items():
        if c == 0:
            continue
        inner = SymTensor.zeros(n, 2 * j)
        for basis in subspaces:
            inner = inner + power(projection_tensor(basis, n), j)
        total = total + sym_product(power(metric, q - j), inner) * float(c)
    return total


@dataclass(frozen=True)
class UpsilonValue:
    tensor: SymTensor
    family: str

    def polynomial(self, x) -> np.ndarray:
        """p(x) = Upsilon(x, ..., x) for each row of x."""
        return self.tensor.polynomial(x)


def upsilon_family(config: ExperimentConfig) -> str:
    if config.average:
        return "polygon"
    if config.complex_kind == "cube":
        return "coordinate"
    raise UnsupportedError("Upsilon is defined for the cube complex and for Minkowski averages")


def upsilon(config: ExperimentConfig) -> UpsilonValue:
    lemma = lemma_coefficients(config)
    family = upsilon_family(config)
    tensor = upsilon_tensor(lemma.coefficients, lemma.q, config.n, config.k, family, config.d)
    return UpsilonValue(tensor, family)


def _exact(value) -> sp.Rational:
    if isinstance(value, sp.Basic):
        return sp.nsimplify(value)
    return sp.Rational(str(value))


@lru_cache(maxsize=None)
def _polygon_trig_sum(i: int, l: int, d: int) -> sp.Rational:
    """sum_{r<d} cos^i(r pi/d) sin^l(r pi/d) for i + l even, exactly."""
    if l % 2:
        return sp.Integer(0)
    total = 0
    for a in range(i + 1):
        for b in range(l + 1):
            if (2 * a - i + 2 * b - l) % (2 * d) == 0:
                total += math.comb(i, a) * math.comb(l, b) * (-1) ** (l - b)
    return sp.Rational(d * total * (-1) ** (l // 2), 2 ** (i + l))


def _power_sum(x: Sequence[sp.Symbol], j: int, n: int, k: int, family: str, d: Optional[int]) -> sp.Expr:
    """sum_i |pi_{L_i} x|^{2j} with exact coefficients."""
    if family == "polygon":
        if n != 3 or k != 1 or d is None:
            raise SpecError("The polygon family needs n = 3, k = 1 and d >= 2")
        return sp.Add(*[
            math.comb(2 * j, i) * _polygon_trig_sum(i, 2 * j - i, d) * x[0] ** i * x[1] ** (2 * j - i)
            for i in range(2 * j + 1)
        ])
    size = n - 1 if family == "coordinate" else n - 2
    upsilon_subspaces(n, k, family)
    return sp.Add(*[sp.Add(*[x[i] ** 2 for i in axes]) ** j for axes in combinations(range(size), k)])


def upsilon_symbolic(coefficients: Mapping[int, float], q: int, n: int, k: int, family: str = "coordinate",
                     d: Optional[int] = None) -> Tuple[sp.Expr, Tuple[sp.Symbol, ...]]:
    """p(x) = Upsilon(x, ..., x) as an exact polynomial in x_1..x_n."""
    _check_upsilon_indices(coefficients, q)
    x = sp.symbols(f"x1:{n + 1}")
    norm2 = sp.Add(*[xi ** 2 for xi in x])
    expr = sp.Integer(0)
    for j, c in coefficients.items():
        expr += _exact(c) * norm2 ** (q - j) * _power_sum(x, j, n, k, family, d)
    return sp.expand(expr), x


class UpsilonPolynomial(BaseModel):
    """p along x(lambda) = (lambda, sqrt(1 - lambda^2), 0, ...) or x(lambda, mu)."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    expression: sp.Expr
    variables: Tuple[sp.Symbol, ...]
    leading_monomial: sp.Expr
    leading_coefficient: sp.Expr
    expected_leading: Optional[sp.Expr] = None

    @property
    def is_constant(self) -> bool:
        return not (self.expression.free_symbols & set(self.variables))

    @property
    def matches_expected(self) -> bool:
        return self.expected_leading is not None and sp.simplify(self.leading_coefficient - self.expected_leading) == 0


def _expected_leading(c_d, d: int, n: int, k: int, family: str, two_parameter: bool, polygon_d: Optional[int]):
    if family == "polygon":
        return d * c_d if polygon_d == d else None
    size = n - 1 if family == "coordinate" else n - 2

    def binom(top, bottom):
        return math.comb(top, bottom) if top >= 0 and bottom >= 0 else 0

    if two_parameter:
        return d * c_d * (binom(size - 3, k - 2) - binom(size - 3, k - 1))
    return c_d * binom(size - 2, k - 1) * (1 + (-1) ** d)


def upsilon_polynomial(coefficients: Mapping[int, float], q: int, n: int, k: int, family: str = "coordinate",
                       d: Optional[int] = None) -> UpsilonPolynomial:
    """
    Exact restriction of p to a curve of unit vectors.

    The curve is x(lambda) for the polygon family, for even largest j and when
    fewer than three coordinates are available; otherwise x(lambda, mu) =
    (lambda, mu w, sqrt(1 - mu^2) w, 0, ...) with w = sqrt(1 - lambda^2). The
    leading monomial is lambda^{2d} (times mu^{2d-2} on the two-parameter curve).
    """
    active = {j: c for j, c in coefficients.items() if c != 0}
    expr_x, x = upsilon_symbolic(active, q, n, k, family, d)
    lam, mu, w_lam, w_mu = sp.symbols("lambda mu w_lambda w_mu")
    lead = max(active, default=0)
    size = 2 if family == "polygon" else (n - 1 if family == "coordinate" else n - 2)
    two_parameter = family != "polygon" and lead % 2 == 1 and size >= 3
    if two_parameter:
        curve = [lam, mu * w_lam, w_mu * w_lam] + [0] * (n - 3)
        variables = (lam, mu)
        monomial = lam ** (2 * lead) * mu ** max(2 * lead - 2, 0)
    else:
        curve = [lam, w_lam] + [0] * (n - 2)
        variables = (lam,)
        monomial = lam ** (2 * lead)

    expr = sp.expand(expr_x.subs(dict(zip(x, curve)), simultaneous=True))
    expr = sp.expand(sp.rem(expr, w_lam ** 2 - 1 + lam ** 2, w_lam))
    expr = sp.expand(sp.rem(expr, w_mu ** 2 - 1 + mu ** 2, w_mu))
    if expr.has(w_lam) or expr.has(w_mu):
        raise UnsupportedError("Square-root terms do not cancel on the chosen curve")

    coefficient = sp.Poly(expr, *variables).coeff_monomial(monomial) if lead else expr
    expected = None
    if lead:
        expected = _expected_leading(_exact(active[lead]), lead, n, k, family, two_parameter, d)
    return UpsilonPolynomial(expression=expr, variables=variables, leading_monomial=monomial,
                             leading_coefficient=sp.nsimplify(coefficient), expected_leading=expected)
