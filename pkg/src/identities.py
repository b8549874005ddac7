"""
Structural identities of local tensor valuations as executable checks.

Coefficient extraction from translates and dilates, the valuation property,
linear independence on a fixed probe family, the top-degree reduction and
the global identity phi_k^{0,s,1} = Q Phi_k^{0,s} - 2 pi (s+2) Phi_k^{0,s+2}.
"""
import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Dict, Iterable, List, Literal, Optional, Sequence, Tuple

import numpy as np
import sympy as sp
from pydantic import BaseModel, Field, ValidationError, model_validator

from .config import settings
from .errors import ConfigError, EmptyIntersectionError, SpecError, UnsupportedError
from .geometry import (
    Halfspace,
    Polytope,
    box,
    cube,
    hull,
    intersect_halfspace,
    random_polytope,
    scale,
    section,
    segment,
    simplex,
    transform,
    translate,
)
from .logger import logger, result_logger
from .sphereint import CapPolynomial, QuadratureSpec, SphericalRegion
from .symtensor import Rotation, SymTensor, metric_tensor, rotate, stack_coefficients, sym_product, vector_power
from .valuations import (
    Full,
    LocalTensorSpec,
    ProductIndicator,
    basis_specs,
    global_tensor,
    intrinsic_volumes,
    local_steiner_check,
    local_tensor,
    reduced_top_tensor,
    rotate_test_function,
    scale_test_function,
    steiner_moment_check,
    translate_test_function,
    translation_defect,
    translation_expand,
)

PROBE_FILE = Path(__file__).parent / "data" / "probes_n3.json"
SCOPES = ("intrinsic", "translation", "homogeneity", "rotation", "reduction",
          "valuation", "mcmullen", "independence", "steiner")
IDENTITY_COLUMNS = ("check", "case", "defect", "tolerance", "status")
MAX_TRANSLATION_DEGREE = 8


@dataclass(frozen=True)
class MappingHandle:
    """A map (P, eta) -> T^p given as a linear combination of basis maps Q^m phi_k^{r,s,j}."""
    name: str
    terms: Tuple[Tuple[float, LocalTensorSpec], ...]

    @classmethod
    def basis(cls, spec: LocalTensorSpec) -> "MappingHandle":
        return cls(spec.label, ((1.0, spec),))

    @classmethod
    def combination(cls, terms: Iterable[Tuple[float, LocalTensorSpec]], name: Optional[str] = None) -> "MappingHandle":
        terms = tuple((float(c), spec) for c, spec in terms)
        if not terms:
            raise SpecError("A combination needs at least one term")
        ranks = {spec.rank for _, spec in terms}
        if len(ranks) != 1:
            raise SpecError(f"Combined maps must share one rank, got {sorted(ranks)}")
        return cls(name or " + ".join(f"{c:g} {spec.label}" for c, spec in terms), terms)

    @property
    def rank(self) -> int:
        return self.terms[0][1].rank

    @property
    def translation_degree(self) -> int:
        return max(spec.r for _, spec in self.terms)

    @property
    def degrees(self) -> List[int]:
        return sorted({spec.degree for _, spec in self.terms})

    def __call__(self, P: Polytope, eta=None, quad: Optional[QuadratureSpec] = None) -> SymTensor:
        total = SymTensor.zeros(P.dimension, self.rank)
        for c, spec in self.terms:
            total = total + local_tensor(P, spec, eta, quad).tensor * c
        return total


@lru_cache(maxsize=None)
def _vandermonde_inverse(size: int) -> Tuple[Tuple[float, ...], ...]:
    """Inverse of (lambda^j), lambda = 1..size, j = 0..size-1, solved in rationals."""
    inverse = sp.Matrix(size, size, lambda i, j: sp.Integer(i + 1) ** j).inv()
    return tuple(tuple(float(inverse[i, j]) for j in range(size)) for i in range(size))


def _solve(values: Sequence[SymTensor]) -> List[SymTensor]:
    inverse = _vandermonde_inverse(len(values))
    components = []
    for row in inverse:
        total = values[0] * 0.0
        for a, value in zip(row, values):
            total = total + value * a
        components.append(total)
    return components


def translation_components(handle: MappingHandle, P: Polytope, eta, t,
                           quad: Optional[QuadratureSpec] = None) -> List[SymTensor]:
    """
    [Gamma_{p-j}(P, eta) t^j / j! for j = 0..q] from Gamma(P + m t, eta + m t), m = 1..q+1.

    q is the translation degree (largest r) of the handle.
    """
    q = handle.translation_degree
    if q > MAX_TRANSLATION_DEGREE:
        raise UnsupportedError(f"Translation degree {q} exceeds {MAX_TRANSLATION_DEGREE}")
    t = np.asarray(t, dtype=float)
    values = [handle(translate(P, m * t), translate_test_function(eta, m * t), quad) for m in range(1, q + 2)]
    return _solve(values)


class HomogeneityResult(BaseModel):
    model_config = {"arbitrary_types_allowed": True}

    components: List[SymTensor]
    check_defect: float = Field(..., ge=0)


def homogeneity_components(handle: MappingHandle, P: Polytope, eta=None,
                           quad: Optional[QuadratureSpec] = None) -> HomogeneityResult:
    """
    Gamma_0..Gamma_D with Gamma(lambda P, lambda eta) = sum_k lambda^k Gamma_k(P, eta).

    D = max(n - 1, largest degree of the handle); the split is checked at lambda = D + 2.
    """
    top = max(P.dimension - 1, max(handle.degrees))
    values = [handle(scale(P, lam), scale_test_function(eta, lam), quad) for lam in range(1, top + 2)]
    components = _solve(values)
    extra = top + 2
    predicted = values[0] * 0.0
    for k, component in enumerate(components):
        predicted = predicted + component * float(extra ** k)
    actual = handle(scale(P, extra), scale_test_function(eta, extra), quad)
    defect = (actual - predicted).max_abs() / max(1.0, actual.max_abs())
    return HomogeneityResult(components=components, check_defect=defect)


def valuation_defect(handle: MappingHandle, P: Polytope, H: Halfspace, eta=None,
                     quad: Optional[QuadratureSpec] = None) -> SymTensor:
    """Gamma(P ∩ H^-) + Gamma(P ∩ H^+) - Gamma(P) - Gamma(P ∩ H), with Gamma(empty) = 0."""
    zero = SymTensor.zeros(P.dimension, handle.rank)

    def side(halfspace: Halfspace) -> SymTensor:
        try:
            return handle(intersect_halfspace(P, halfspace), eta, quad)
        except EmptyIntersectionError:
            return zero

    cut = section(P, H)
    middle = zero if cut is None else handle(cut, eta, quad)
    return side(H) + side(H.complement()) - handle(P, eta, quad) - middle


def mcmullen_global(P: Polytope, k: int, s: int) -> SymTensor:
    """phi_k^{0,s,1}(P, Sigma) - [Q Phi_k^{0,s}(P) - 2 pi (s+2) Phi_k^{0,s+2}(P)]."""
    n = P.dimension
    if not 1 <= k <= n - 2:
        raise SpecError(f"The global identity needs 1 <= k <= n - 2, got k={k}")
    lhs = local_tensor(P, LocalTensorSpec(k=k, s=s, j=1)).tensor
    rhs = sym_product(metric_tensor(n), global_tensor(P, k, 0, s)) - global_tensor(P, k, 0, s + 2) * (2.0 * math.pi * (s + 2))
    return lhs - rhs


# Probe family

class BoxSpec(BaseModel):
    lo: List[float]
    hi: List[float]


class CapSpec(BaseModel):
    axis: List[float]
    mu: float = Field(..., gt=0, le=2)


class ProbeSpec(BaseModel):
    name: str
    vertices: List[List[float]] = Field(..., min_length=1)
    beta: Optional[BoxSpec] = None
    omega: Optional[CapSpec] = None


class ProbeFile(BaseModel):
    version: int
    dimension: int = Field(..., ge=1, le=4)
    probes: List[ProbeSpec] = Field(..., min_length=1)

    @model_validator(mode="after")
    def _consistent(self):
        for probe in self.probes:
            rows = probe.vertices + ([probe.beta.lo, probe.beta.hi] if probe.beta else []) + \
                ([probe.omega.axis] if probe.omega else [])
            if any(len(row) != self.dimension for row in rows):
                raise ValueError(f"probe {probe.name} has coordinates outside R^{self.dimension}")
        return self


def load_probes(path=PROBE_FILE) -> List[Tuple[str, Polytope, object]]:
    """
    (name, body, test function) triples from a probe file.

    Raises:
        FileNotFoundError: If the file does not exist
        ConfigError: If the file does not match the schema
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Probe file not found: {path}")
    try:
        spec = ProbeFile(**json.loads(path.read_text(encoding="utf-8")))
    except (json.JSONDecodeError, ValidationError, TypeError) as e:
        raise ConfigError(f"Invalid probe file {path}: {e}") from e
    probes = []
    for probe in spec.probes:
        body = hull(np.array(probe.vertices, dtype=float))
        beta = box(probe.beta.lo, probe.beta.hi) if probe.beta else None
        region = SphericalRegion.cap(probe.omega.axis, probe.omega.mu) if probe.omega else None
        eta = Full() if beta is None and region is None else ProductIndicator(beta, region)
        probes.append((probe.name, body, eta))
    return probes


class RankResult(BaseModel):
    model_config = {"arbitrary_types_allowed": True}

    rank: int
    columns: List[str]
    singular_values: List[float]
    matrix: np.ndarray

    @property
    def full(self) -> bool:
        return self.rank == len(self.columns)

    @property
    def smallest(self) -> float:
        return self.singular_values[-1] if self.singular_values else 0.0


def probe_matrix(handles: Sequence[MappingHandle], probes, quad: Optional[QuadratureSpec] = None) -> np.ndarray:
    """One column per handle: its tensors on every probe, flattened."""
    columns = []
    for handle in handles:
        columns.append(stack_coefficients([handle(body, eta, quad) for _, body, eta in probes]))
    return np.column_stack(columns)


def independence_rank(p: int, n: int = 3, probes=None, extra: Sequence[MappingHandle] = (),
                      quad: Optional[QuadratureSpec] = None, rank_tol: float = 1e-9) -> RankResult:
    """
    Numerical rank of the basis maps of rank p (plus `extra` columns) on the probes.

    Columns are normalised; singular values are reported relative to the largest.
    """
    probes = load_probes() if probes is None else probes
    if any(body.dimension != n for _, body, _ in probes):
        raise ConfigError(f"Probe family does not live in R^{n}")
    handles = [MappingHandle.basis(spec) for spec in basis_specs(p, n)] + list(extra)
    matrix = probe_matrix(handles, probes, quad)
    norms = np.linalg.norm(matrix, axis=0)
    normalised = matrix / np.where(norms > 0, norms, 1.0)
    singular = np.linalg.svd(normalised, compute_uv=False)
    relative = singular / singular[0] if singular.size and singular[0] > 0 else singular
    rank = int(np.sum(relative > rank_tol))
    logger.debug(f"Independence p={p}, n={n}: rank {rank} of {len(handles)} columns")
    return RankResult(rank=rank, columns=[h.name for h in handles], singular_values=relative.tolist(), matrix=matrix)


def recover_combination(handle: MappingHandle, n: int = 3, probes=None,
                        quad: Optional[QuadratureSpec] = None) -> Tuple[Dict[str, float], float]:
    """Least-squares coefficients of a handle in the rank-p basis on the probes, and the relative residual."""
    probes = load_probes() if probes is None else probes
    specs = basis_specs(handle.rank, n)
    matrix = probe_matrix([MappingHandle.basis(spec) for spec in specs], probes, quad)
    target = probe_matrix([handle], probes, quad)[:, 0]
    solution, *_ = np.linalg.lstsq(matrix, target, rcond=None)
    residual = float(np.linalg.norm(matrix @ solution - target) / max(1.0, np.linalg.norm(target)))
    return {spec.label: float(c) for spec, c in zip(specs, solution)}, residual


# Suite

class IdentityRow(BaseModel):
    check: str
    case: str
    defect: float
    tolerance: float
    status: Literal["pass", "fail", "error"]
    detail: Optional[str] = None

    def csv_record(self) -> Dict[str, str]:
        return {"check": self.check, "case": self.case, "defect": repr(float(self.defect)),
                "tolerance": repr(float(self.tolerance)), "status": self.status}


def _row(check: str, case: str, defect: float, tolerance: float, detail: Optional[str] = None,
         passed: Optional[bool] = None) -> IdentityRow:
    ok = defect <= tolerance if passed is None else passed
    return IdentityRow(check=check, case=case, defect=float(defect), tolerance=tolerance,
                       status="pass" if ok else "fail", detail=detail)


def _relative(defect: SymTensor, reference: SymTensor) -> float:
    return defect.max_abs() / max(1.0, reference.max_abs())


def _specs(max_rank: int, n: int = 3) -> List[LocalTensorSpec]:
    return [spec for p in range(max_rank + 1) for spec in basis_specs(p, n)]


def _unit(rng: np.random.Generator, n: int = 3) -> np.ndarray:
    v = rng.standard_normal(n)
    return v / np.linalg.norm(v)


def _random_weight(rng: np.random.Generator) -> CapPolynomial:
    """Smooth weight f(u) = a + b <u,c> + d <u,c>^2."""
    return CapPolynomial(_unit(rng), None, tuple(float(x) for x in rng.uniform(0.5, 1.5, 3)))


def _random_indicator(rng: np.random.Generator, P: Polytope) -> ProductIndicator:
    lo, hi = P.vertices.min(axis=0), P.vertices.max(axis=0)
    a, b = rng.uniform(0.0, 0.5, 3), rng.uniform(0.5, 1.0, 3)
    beta = box(lo + a * (hi - lo), lo + b * (hi - lo))
    return ProductIndicator(beta, SphericalRegion.cap(_unit(rng), float(rng.uniform(0.4, 1.6))))


def _check_intrinsic(rng, trials, quad, max_rank):
    rows = []
    cases = [("unit-cube", (1.0, 1.0, 1.0))] + [(f"box{i}", tuple(rng.uniform(0.2, 2.0, 3))) for i in range(trials)]
    for case, (a, b, c) in cases:
        values = intrinsic_volumes(box(np.zeros(3), [a, b, c]))
        expected = [1.0, a + b + c, a * b + b * c + c * a, a * b * c]
        defect = max(abs(v - e) / max(1.0, abs(e)) for v, e in zip(values, expected))
        rows.append(_row("intrinsic", case, defect, 1e-10))
    return rows


def _check_translation(rng, trials, quad, max_rank):
    rows = []
    for trial in range(trials):
        P = random_polytope(3, 8, rng)
        eta = _random_indicator(rng, P)
        t = rng.standard_normal(3)
        for spec in _specs(max_rank):
            defect = translation_defect(P, spec, eta, t)
            reference = local_tensor(P, spec, eta, quad).tensor
            rows.append(_row("translation", f"trial{trial}:{spec.label}", _relative(defect, reference), 1e-8))
        spec = LocalTensorSpec(k=1, r=min(2, max_rank), s=0)
        handle = MappingHandle.basis(spec)
        components = translation_components(handle, P, eta, t, quad)
        parts = translation_expand(P, spec, eta, t, quad)
        worst = max(_relative(c - sym_product(part, vector_power(t, i)) * (1.0 / math.factorial(i)), c)
                    for i, (c, part) in enumerate(zip(components, parts)))
        rows.append(_row("translation", f"trial{trial}:components:{spec.label}", worst, 1e-8))
    return rows


def _check_homogeneity(rng, trials, quad, max_rank):
    rows = []
    pieces = [LocalTensorSpec(k=k) for k in range(3)]
    weights = (1.0, 2.0, -0.5)
    handle = MappingHandle.combination(zip(weights, pieces))
    for trial in range(trials):
        P = random_polytope(3, 8, rng)
        eta = _random_indicator(rng, P)
        result = homogeneity_components(handle, P, eta, quad)
        worst = result.check_defect
        for k, component in enumerate(result.components):
            expected = local_tensor(P, pieces[k], eta, quad).tensor * weights[k]
            worst = max(worst, _relative(component - expected, expected))
        rows.append(_row("homogeneity", f"trial{trial}", worst, 1e-8))
    return rows


def _check_rotation(rng, trials, quad, max_rank):
    rows = []
    for trial in range(trials):
        P = random_polytope(3, 8, rng)
        f = _random_weight(rng)
        rotation = Rotation.random(3, rng)
        for spec in _specs(max_rank):
            value = local_tensor(P, spec, f, quad).tensor
            moved = local_tensor(transform(P, rotation), spec, rotate_test_function(f, rotation), quad).tensor
            rows.append(_row("rotation", f"trial{trial}:{spec.label}", _relative(moved - rotate(value, rotation), value), 1e-8))
    return rows


def _check_reduction(rng, trials, quad, max_rank):
    rows = []
    for trial in range(trials):
        P = random_polytope(3, 8, rng)
        eta = Full() if trial % 2 == 0 else _random_weight(rng)
        for r in range(2):
            for s in range(3):
                for j in (1, 2):
                    direct = local_tensor(P, LocalTensorSpec(k=2, r=r, s=s, j=j), eta, quad).tensor
                    reduced = reduced_top_tensor(P, r, s, j, eta)
                    rows.append(_row("reduction", f"trial{trial}:r{r}s{s}j{j}", _relative(direct - reduced, direct), 1e-10))
    return rows


def _hyperplanes(rng, P: Polytope, trials: int):
    """A facet plane, a plane through a vertex, a plane missing P, then random cuts through the interior."""
    planes = [("facet", Halfspace(P.facet_normals[0], P.facet_offsets[0]))]
    normal = _unit(rng)
    planes.append(("vertex", Halfspace(normal, float(P.vertices[0] @ normal))))
    planes.append(("miss", Halfspace(normal, float(np.max(P.vertices @ normal)) + 1.0)))
    for i in range(max(trials - 3, 0)):
        normal = _unit(rng)
        heights = P.vertices @ normal
        planes.append((f"cut{i}", Halfspace(normal, float(rng.uniform(heights.min(), heights.max())))))
    return planes[:max(trials, 1)]


def _check_valuation(rng, trials, quad, max_rank):
    rows = []
    P = random_polytope(3, 8, rng)
    for case, H in _hyperplanes(rng, P, trials):
        f = _random_weight(rng)
        for spec in _specs(max_rank):
            handle = MappingHandle.basis(spec)
            defect = valuation_defect(handle, P, H, f, quad)
            rows.append(_row("valuation", f"{case}:{spec.label}", _relative(defect, handle(P, f, quad)), 1e-8))
    return rows


def _check_mcmullen(rng, trials, quad, max_rank):
    rows = []
    bodies = [("unit-cube", cube(3)), ("segment", segment([0.0, 0.0, 0.0], [2.0, 0.0, 0.0]))]
    bodies += [(f"simplex{i}", simplex(rng.standard_normal((4, 3)))) for i in range(trials)]
    for case, P in bodies:
        for s in range(3):
            defect = mcmullen_global(P, 1, s)
            rows.append(_row("mcmullen", f"{case}:s{s}", _relative(defect, global_tensor(P, 1, 0, s)), 1e-8))
    return rows


def _check_independence(rng, trials, quad, max_rank):
    rows = []
    probes = load_probes()
    for p in range(max_rank + 1):
        result = independence_rank(p, 3, probes, quad=quad)
        detail = f"rank {result.rank}/{len(result.columns)}, smallest singular value {result.smallest:.3e}"
        rows.append(_row("independence", f"p={p}", float(len(result.columns) - result.rank), 0.0, detail,
                         passed=result.full and result.smallest > 1e-6))
    return rows


def _check_steiner(rng, trials, quad, max_rank, samples: int = 200_000):
    rows = []
    P = box([0.0, 0.0, 0.0], [1.0, 0.8, 0.6])
    for r in range(2):
        report = steiner_moment_check(P, 0.3, r, samples, seed=int(rng.integers(1 << 31)))
        rows.append(_row("steiner", f"global:r{r}", report.max_sigma, 3.0))
    eta = ProductIndicator(box([-1.0, -1.0, -1.0], [0.6, 2.0, 2.0]), SphericalRegion.cap([1.0, 0.3, 0.2], 1.2))
    report = local_steiner_check(P, 0.3, eta, samples, seed=int(rng.integers(1 << 31)))
    rows.append(_row("steiner", "local", report.max_sigma, 3.0))
    return rows


_CHECKS = {
    "intrinsic": _check_intrinsic,
    "translation": _check_translation,
    "homogeneity": _check_homogeneity,
    "rotation": _check_rotation,
    "reduction": _check_reduction,
    "valuation": _check_valuation,
    "mcmullen": _check_mcmullen,
    "independence": _check_independence,
    "steiner": _check_steiner,
}


def _run_scope(scope: str, seed: int, trials: int, quad, max_rank: int) -> List[IdentityRow]:
    rng = np.random.default_rng([seed, SCOPES.index(scope)])
    try:
        return _CHECKS[scope](rng, trials, quad, max_rank)
    except Exception as e:
        logger.error(f"Identity scope {scope} failed: {e}")
        return [IdentityRow(check=scope, case="all", defect=float("nan"), tolerance=0.0, status="error", detail=str(e))]


def run_identity_suite(scopes: Sequence[str] = SCOPES, quad: Optional[QuadratureSpec] = None, seed: int = 0,
                       trials: int = 3, max_rank: int = 2, threads: Optional[int] = None) -> List[IdentityRow]:
    """
    Run the selected identity checks.

    Each scope draws from its own seeded generator, so results do not depend
    on the thread count. Every row is appended to the result log.
    """
    unknown = [scope for scope in scopes if scope not in SCOPES]
    if unknown:
        raise ConfigError(f"Unknown identity scopes {unknown}; choose from {SCOPES}")
    quad = quad or QuadratureSpec(seed=seed)
    workers = threads or settings.THREADS
    with ThreadPoolExecutor(max_workers=workers) as pool:
        batches = list(pool.map(lambda scope: _run_scope(scope, seed, trials, quad, max_rank), scopes))
    rows = [row for batch in batches for row in batch]
    for row in rows:
        result_logger.log_check("identity-suite", f"{row.check}:{row.case}", row.status,
                                value=row.defect, tolerance=row.tolerance, detail=row.detail)
    failed = sum(row.status != "pass" for row in rows)
    logger.info(f"Identity suite: {len(rows) - failed}/{len(rows)} checks passed")
    return rows


def write_identity_csv(rows: Sequence[IdentityRow], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=list(IDENTITY_COLUMNS), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row.csv_record())
    return path
