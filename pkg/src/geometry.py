"""
Convex polytopes with explicit face lattices.

Hulls are computed with qhull for affine dimension <= 3 (points, segments,
polygons and solids, embedded in R^2..R^4). Lifted lattice polytopes are
built analytically by `lift_complex`; only the faces inside a window are
materialised.

Every Face carries its direction space L(F), the orthonormal frame of
L(F)^perp, and the generators/lineality of its normal cone N(P, F).
"""
import itertools
import json
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator
from scipy.linalg import null_space, orth
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, HalfspaceIntersection, QhullError, cKDTree

from .errors import (
    ConfigError,
    DimensionMismatchError,
    EmptyIntersectionError,
    HullError,
    RegimeError,
    UnsupportedError,
    WindowTooSmallError,
)
from .logger import logger
from .sphereint import SphericalRegion, region_from_cone
from .symtensor import SymTensor
from .validators import validate_dimension, validate_points, validate_unit_vector

COPLANAR_TOL = 1e-9
DUPLICATE_TOL = 1e-12


class Halfspace:
    """{y : <y, normal> <= offset} with a unit normal."""

    def __init__(self, normal, offset: float):
        self.normal = validate_unit_vector(normal)
        self.offset = float(offset)

    @classmethod
    def from_normal(cls, normal, offset: float) -> "Halfspace":
        """Normalise an arbitrary nonzero normal (offset scaled accordingly)."""
        vec = np.asarray(normal, dtype=float).reshape(-1)
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            raise ValueError("Halfspace normal must be nonzero")
        return cls(vec / norm, offset / norm)

    def values(self, points) -> np.ndarray:
        return np.atleast_2d(np.asarray(points, dtype=float)) @ self.normal - self.offset

    def contains(self, points, tol: float = 1e-12) -> np.ndarray:
        return self.values(points) <= tol

    def complement(self) -> "Halfspace":
        """The opposite closed halfspace H^+."""
        return Halfspace(-self.normal, -self.offset)

    def __repr__(self):
        return f"Halfspace(normal={self.normal.tolist()}, offset={self.offset:.6g})"


class Face:
    """
    A k-face F with vertex coordinates and the data of N(P, F).

    normal_generators are the outer normals of the (relative) facets
    containing F; normal_lineality spans the orthogonal complement of the
    polytope's affine hull.
    """

    def __init__(self, dim: int, vertex_ids: Sequence[int], points, normal_generators=(),
                 normal_lineality=(), direction_basis=None, measure: Optional[float] = None,
                 cell_centres=None):
        self.points = np.asarray(points, dtype=float)
        self.ambient = self.points.shape[1]
        self.dim = int(dim)
        self.vertex_ids = tuple(int(i) for i in vertex_ids)
        if direction_basis is None:
            direction_basis = _direction_basis(self.points, self.ambient)
        self.direction_basis = np.asarray(direction_basis, dtype=float).reshape(-1, self.ambient)
        if self.direction_basis.shape[0] != self.dim:
            raise HullError(f"Face of dimension {self.dim} has {self.direction_basis.shape[0]} direction vectors")
        if self.dim == 0:
            self.normal_frame = np.eye(self.ambient)
        else:
            self.normal_frame = null_space(self.direction_basis).T
        self.normal_generators = np.asarray(normal_generators, dtype=float).reshape(-1, self.ambient)
        self.normal_lineality = np.asarray(normal_lineality, dtype=float).reshape(-1, self.ambient)
        self.cell_centres = None if cell_centres is None else np.asarray(cell_centres, dtype=float)
        self._measure = measure
        self._simplices = None
        self._region = None
        self._local_halfspaces = None

    @property
    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    @property
    def simplices(self) -> np.ndarray:
        """Triangulation of F into k-simplices, shape (m, k+1, n)."""
        if self._simplices is None:
            self._simplices = _triangulate(self.points, self.dim, self.direction_basis)
        return self._simplices

    @property
    def measure(self) -> float:
        """H^k(F) (1 for vertices)."""
        if self._measure is None:
            self._measure = float(simplex_volumes(self.simplices).sum())
        return self._measure

    @property
    def normal_cone(self) -> SphericalRegion:
        """nu(P, F) = N(P, F) ∩ S^{n-1}."""
        if self._region is None:
            self._region = region_from_cone(self.ambient, self.normal_frame,
                                            self.normal_generators, self.normal_lineality)
        return self._region

    def clip(self, inequalities) -> np.ndarray:
        """
        Simplices of F ∩ {y : A y <= b}.

        Args:
            inequalities: Pair (A, b) describing a closed polyhedron in R^n

        Returns:
            Array (m, k+1, n); empty (0, k+1, n) when the intersection has no k-volume
        """
        a_mat, b_vec = inequalities
        a_mat = np.asarray(a_mat, dtype=float).reshape(-1, self.ambient)
        b_vec = np.asarray(b_vec, dtype=float).reshape(-1)
        empty = np.zeros((0, self.dim + 1, self.ambient))
        slack = self.points @ a_mat.T - b_vec
        scale = max(1.0, float(np.abs(self.points).max()))
        tol = 1e-12 * scale
        if np.all(slack <= tol):
            return self.simplices
        if self.dim == 0:
            return empty
        # a constraint that keeps at most a boundary piece of F
        if np.any(np.all(slack >= -tol, axis=0) & np.any(slack > tol, axis=0)):
            return empty

        origin = self.points[0]
        basis = self.direction_basis
        local_a = a_mat @ basis.T
        local_b = b_vec - a_mat @ origin
        norms = np.linalg.norm(local_a, axis=1)
        flat = norms < 1e-14
        if np.any(local_b[flat] < -tol):
            return empty
        local_a, local_b = local_a[~flat], local_b[~flat]
        own_a, own_b = self._face_halfspaces()
        all_a = np.vstack([own_a, local_a])
        all_b = np.concatenate([own_b, local_b])

        if self.dim == 1:
            lo, hi = -math.inf, math.inf
            for coef, bound in zip(all_a[:, 0], all_b):
                if coef > 0:
                    hi = min(hi, bound / coef)
                else:
                    lo = max(lo, bound / coef)
            if hi - lo <= tol:
                return empty
            pts = origin + np.array([[lo], [hi]]) * basis[0]
            return pts.reshape(1, 2, self.ambient)

        centre = _chebyshev_centre(all_a, all_b)
        if centre is None:
            return empty
        halfspaces = np.hstack([all_a, -all_b[:, None]])
        try:
            corners = HalfspaceIntersection(halfspaces, centre).intersections
        except QhullError:
            return empty
        corners = corners[np.all(np.isfinite(corners), axis=1)]
        ambient_pts = origin + corners @ basis
        return _triangulate(ambient_pts, self.dim, basis)

    def _face_halfspaces(self):
        """Inequalities of F inside its own affine hull (local coordinates)."""
        if self._local_halfspaces is None:
            local = (self.points - self.points[0]) @ self.direction_basis.T
            if self.dim == 1:
                lo, hi = float(local.min()), float(local.max())
                self._local_halfspaces = (np.array([[1.0], [-1.0]]), np.array([hi, -lo]))
            else:
                eqs = ConvexHull(local).equations
                self._local_halfspaces = (eqs[:, :-1], -eqs[:, -1])
        return self._local_halfspaces

    def __repr__(self):
        return f"Face(dim={self.dim}, vertices={len(self.vertex_ids)}, measure={self.measure:.6g})"


class Polytope:
    """
    A convex polytope (or the windowed part of a lifted polyhedral set).

    faces[k] lists the k-faces for k = 0..affine_dim; faces[affine_dim]
    is the polytope itself. For windowed polytopes (partial=True) only the
    faces that were requested are present.
    """

    def __init__(self, vertices, faces: Dict[int, List[Face]], origin=None, affine_basis=None,
                 facet_normals=None, facet_offsets=None, partial: bool = False, info: Optional[dict] = None):
        self.vertices = np.asarray(vertices, dtype=float)
        self.dimension = self.vertices.shape[1]
        self.faces = {int(k): list(v) for k, v in faces.items()}
        self.origin = self.vertices.mean(axis=0) if origin is None else np.asarray(origin, dtype=float)
        if affine_basis is None:
            affine_basis = np.eye(self.dimension)
        self.affine_basis = np.asarray(affine_basis, dtype=float).reshape(-1, self.dimension)
        self.facet_normals = np.zeros((0, self.dimension)) if facet_normals is None else np.asarray(facet_normals, dtype=float)
        self.facet_offsets = np.zeros(0) if facet_offsets is None else np.asarray(facet_offsets, dtype=float)
        self.partial = partial
        self.info = info or {}

    @property
    def affine_dim(self) -> int:
        return self.affine_basis.shape[0]

    @property
    def is_full_dimensional(self) -> bool:
        return self.affine_dim == self.dimension

    def face_list(self, k: int) -> List[Face]:
        return self.faces.get(k, [])

    def f_vector(self) -> List[int]:
        return [len(self.face_list(k)) for k in range(self.affine_dim + 1)]

    def euler_characteristic(self) -> int:
        """sum_k (-1)^k f_k over proper faces (k < affine_dim)."""
        return sum((-1) ** k * len(self.face_list(k)) for k in range(self.affine_dim))

    @property
    def volume(self) -> float:
        if not self.is_full_dimensional:
            return 0.0
        return self.faces[self.dimension][0].measure

    def inequalities(self):
        """(A, b) with P = {y : A y <= b}, including the affine-hull equations as inequality pairs."""
        complement = null_space(self.affine_basis).T if self.affine_dim < self.dimension else np.zeros((0, self.dimension))
        comp_off = complement @ self.origin
        a_mat = np.vstack([self.facet_normals, complement, -complement])
        b_vec = np.concatenate([self.facet_offsets, comp_off, -comp_off])
        return a_mat, b_vec

    def contains(self, points, tol: float = 1e-10) -> np.ndarray:
        a_mat, b_vec = self.inequalities()
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.all(pts @ a_mat.T <= b_vec + tol, axis=1)

    def __repr__(self):
        return f"Polytope(n={self.dimension}, affine_dim={self.affine_dim}, f={self.f_vector()}, partial={self.partial})"


# Helpers

def _direction_basis(points: np.ndarray, n: int) -> np.ndarray:
    if len(points) < 2:
        return np.zeros((0, n))
    diffs = points[1:] - points[0]
    return orth(diffs.T).T if np.any(diffs) else np.zeros((0, n))


def simplex_volumes(simplices: np.ndarray) -> np.ndarray:
    """k-volumes of an (m, k+1, n) array of simplices."""
    k = simplices.shape[1] - 1
    if k == 0:
        return np.ones(simplices.shape[0])
    edges = simplices[:, 1:, :] - simplices[:, :1, :]
    gram = edges @ edges.transpose(0, 2, 1)
    return np.sqrt(np.clip(np.linalg.det(gram), 0.0, None)) / math.factorial(k)


def simplex_moments(simplices: np.ndarray, r: int) -> SymTensor:
    """
    Sum over simplices S of int_S x^r dH^k.

    Closed form: vol(S) r! k! / (r+k)! sum_{|alpha|=r} v_0^{alpha_0} ⊙ ... ⊙ v_k^{alpha_k}.
    """
    n = simplices.shape[2]
    k = simplices.shape[1] - 1
    vols = simplex_volumes(simplices)
    if r == 0:
        return SymTensor.scalar(float(vols.sum()), n)
    if len(simplices) == 0:
        return SymTensor.zeros(n, r)
    factor = math.factorial(r) * math.factorial(k) / math.factorial(r + k)
    dense = np.zeros((n,) * r)
    for multiset in itertools.combinations_with_replacement(range(k + 1), r):
        arr = vols[:, None] * simplices[:, multiset[0], :]
        for vertex in multiset[1:]:
            arr = arr[..., None] * simplices[:, vertex, :].reshape((len(simplices),) + (1,) * (arr.ndim - 1) + (n,))
        dense += arr.sum(axis=0)
    return SymTensor.from_dense(dense) * factor


def _triangulate(points: np.ndarray, k: int, basis: np.ndarray) -> np.ndarray:
    """Cone the triangulated boundary of conv(points) from its centroid (k >= 2)."""
    n = points.shape[1]
    if k == 0:
        return points[:1].reshape(1, 1, n)
    origin = points.mean(axis=0)
    local = (points - origin) @ basis.T
    if k == 1:
        lo, hi = int(np.argmin(local[:, 0])), int(np.argmax(local[:, 0]))
        return np.stack([points[lo], points[hi]]).reshape(1, 2, n)
    try:
        hull_ = ConvexHull(local)
    except QhullError as e:
        raise HullError(f"Cannot triangulate a {k}-face: {e}") from e
    boundary = points[hull_.simplices]
    apex = np.broadcast_to(origin, (len(boundary), 1, n))
    return np.concatenate([apex, boundary], axis=1)


def _chebyshev_centre(a_mat: np.ndarray, b_vec: np.ndarray, min_radius: float = 1e-12):
    """Interior point of {A y <= b} via linprog, or None when it has empty interior."""
    norms = np.linalg.norm(a_mat, axis=1)
    dim = a_mat.shape[1]
    res = linprog(np.r_[np.zeros(dim), -1.0], A_ub=np.hstack([a_mat, norms[:, None]]), b_ub=b_vec,
                  bounds=[(None, None)] * dim + [(0.0, None)], method="highs")
    if not res.success or res.x[-1] <= min_radius:
        return None
    return res.x[:dim]


def _dedupe(points: np.ndarray) -> np.ndarray:
    scale = max(1.0, float(np.abs(points).max()))
    pairs = cKDTree(points).query_pairs(DUPLICATE_TOL * scale)
    if not pairs:
        return points
    drop = {max(i, j) for i, j in pairs}
    keep = [i for i in range(len(points)) if i not in drop]
    return points[keep]


def _ring_order(points: np.ndarray, basis: np.ndarray) -> np.ndarray:
    local = (points - points.mean(axis=0)) @ basis.T
    return np.argsort(np.arctan2(local[:, 1], local[:, 0]))


# Hull

def hull(points) -> Polytope:
    """
    Convex hull with full face lattice.

    Lower-dimensional inputs produce lower-dimensional polytopes whose
    normal cones contain the orthogonal complement of the affine hull.

    Raises:
        EmptyInputError: If no points are given
        UnsupportedError: If the affine hull has dimension > 3
    """
    pts = _dedupe(validate_points(points))
    n = pts.shape[1]
    origin = pts.mean(axis=0)
    centred = pts - origin
    if len(pts) == 1:
        d, basis, complement = 0, np.zeros((0, n)), np.eye(n)
    else:
        _, sv, vt = np.linalg.svd(centred, full_matrices=True)
        d = int(np.sum(sv > 1e-9 * sv[0]))
        basis, complement = vt[:d], vt[d:]
    if d > 3:
        raise UnsupportedError("Hulls are computed for affine dimension <= 3; use lift_complex for lifted lattices")
    if d == 0:
        vertex = pts[:1]
        faces = {0: [Face(0, (0,), vertex, normal_lineality=complement)]}
        return Polytope(vertex, faces, origin=vertex[0], affine_basis=basis)
    if d == 1:
        return _segment_polytope(pts, origin, basis, complement)
    return _hull_polytope(pts, origin, basis, complement, d)


def _segment_polytope(pts, origin, basis, complement) -> Polytope:
    coord = (pts - origin) @ basis[0]
    lo, hi = int(np.argmin(coord)), int(np.argmax(coord))
    vertices = np.stack([pts[lo], pts[hi]])
    direction = basis[0]
    normals = np.stack([-direction, direction])
    offsets = normals @ vertices.T
    offsets = np.array([offsets[0, 0], offsets[1, 1]])
    faces = {
        0: [Face(0, (0,), vertices[:1], [-direction], complement),
            Face(0, (1,), vertices[1:], [direction], complement)],
        1: [Face(1, (0, 1), vertices, (), complement, direction_basis=basis)],
    }
    return Polytope(vertices, faces, origin=origin, affine_basis=basis,
                    facet_normals=normals, facet_offsets=offsets)


def _merge_equations(eqs: np.ndarray, scale: float) -> np.ndarray:
    merged = []
    for eq in eqs:
        if not any(np.max(np.abs(eq[:-1] - m[:-1])) <= COPLANAR_TOL and abs(eq[-1] - m[-1]) <= COPLANAR_TOL * scale
                   for m in merged):
            merged.append(eq)
    return np.array(merged)


def _hull_polytope(pts, origin, basis, complement, d) -> Polytope:
    local = (pts - origin) @ basis.T
    try:
        qh = ConvexHull(local)
    except QhullError as e:
        raise HullError(f"qhull failed on {len(pts)} points: {e}") from e
    scale = max(1e-300, float(np.abs(local).max()))
    eqs = _merge_equations(qh.equations, scale)
    candidates = np.array(sorted(qh.vertices))
    on_facet = np.abs(local[candidates] @ eqs[:, :-1].T + eqs[:, -1]) <= 10 * COPLANAR_TOL * scale

    keep = [i for i, row in enumerate(on_facet) if np.linalg.matrix_rank(eqs[row, :-1]) == d]
    candidates, on_facet = candidates[keep], on_facet[keep]
    vertices = pts[candidates]
    nv = len(vertices)

    normals = eqs[:, :-1] @ basis
    offsets = -eqs[:, -1] + normals @ origin
    facet_ids = [tuple(np.nonzero(on_facet[:, f])[0]) for f in range(len(eqs))]
    vertex_facets = [tuple(np.nonzero(on_facet[v])[0]) for v in range(nv)]

    faces: Dict[int, List[Face]] = {k: [] for k in range(d + 1)}
    faces[d].append(Face(d, range(nv), vertices, (), complement, direction_basis=basis))
    for f, ids in enumerate(facet_ids):
        faces[d - 1].append(Face(d - 1, ids, vertices[list(ids)], normals[f:f + 1], complement))

    if d == 3:
        edge_facets: Dict[tuple, List[int]] = {}
        for f, ids in enumerate(facet_ids):
            ids = np.array(ids)
            ring = ids[_ring_order(vertices[ids], faces[2][f].direction_basis)]
            for a, b in zip(ring, np.roll(ring, -1)):
                edge_facets.setdefault(tuple(sorted((int(a), int(b)))), []).append(f)
        for edge, fs in sorted(edge_facets.items()):
            faces[1].append(Face(1, edge, vertices[list(edge)], normals[fs], complement))

    for v in range(nv):
        faces[0].append(Face(0, (v,), vertices[v:v + 1], normals[list(vertex_facets[v])], complement))

    logger.debug(f"Hull in R^{pts.shape[1]}: affine dim {d}, f-vector {[len(faces[k]) for k in range(d)]}")
    return Polytope(vertices, faces, origin=origin, affine_basis=basis,
                    facet_normals=normals, facet_offsets=offsets)


# Builders

def point(x) -> Polytope:
    return hull(np.atleast_2d(np.asarray(x, dtype=float)))


def segment(a, b) -> Polytope:
    return hull(np.vstack([np.asarray(a, dtype=float), np.asarray(b, dtype=float)]))


def simplex(points) -> Polytope:
    return hull(points)


def box(lo, hi) -> Polytope:
    """Axis-parallel box [lo_1, hi_1] x ... (degenerate sides allowed)."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if lo.shape != hi.shape or np.any(hi < lo):
        raise ValueError("Box needs lo <= hi componentwise")
    corners = np.array(list(itertools.product(*zip(lo, hi))))
    return hull(corners)


def cube(n: int = 3, side: float = 1.0) -> Polytope:
    return box(np.zeros(n), np.full(n, side))


def random_polytope(n: int, m: int, rng: np.random.Generator) -> Polytope:
    """Hull of m standard Gaussian points in R^n."""
    return hull(rng.standard_normal((m, n)))


def geodesic_sphere(radius: float = 1.0, level: int = 2) -> Polytope:
    """Hull of a subdivided icosahedron inscribed in the sphere of the given radius."""
    phi = (1.0 + math.sqrt(5.0)) / 2.0
    base = []
    for a, b in itertools.product((-1.0, 1.0), repeat=2):
        base += [(0.0, a, b * phi), (a, b * phi, 0.0), (b * phi, 0.0, a)]
    verts = [np.asarray(v) / np.linalg.norm(v) for v in base]
    triangles = ConvexHull(np.array(verts)).simplices.tolist()
    for _ in range(level):
        cache: Dict[tuple, int] = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        refined = []
        for a, b, c in triangles:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            refined += [[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]
        triangles = refined
    return hull(radius * np.array(verts))


def _standard_simplex(n: int = 3) -> Polytope:
    n = validate_dimension(n)
    return simplex(np.vstack([np.zeros(n), np.eye(n)]))


_BODIES = {
    "cube": (lambda n=3, side=1.0: cube(validate_dimension(n), side), ("n", "side")),
    "box": (lambda a=1.0, b=1.0, c=1.0: box(np.zeros(3), [a, b, c]), ("a", "b", "c")),
    "segment": (lambda L=1.0, n=3: segment(np.zeros(validate_dimension(n)), L * np.eye(int(n))[0]), ("L", "n")),
    "point": (lambda n=3: point(np.zeros(validate_dimension(n))), ("n",)),
    "simplex": (_standard_simplex, ("n",)),
    "geodesic": (lambda R=1.0, level=2: geodesic_sphere(R, int(level)), ("R", "level")),
}


def polytope_from_name(text: str) -> Polytope:
    """Parse builtin bodies such as "cube", "segment:L=2", "box:a=1,b=2,c=0.5" or "geodesic:R=1,level=3"."""
    name, _, params = text.partition(":")
    if name not in _BODIES:
        raise ConfigError(f"Unknown body {name!r} (expected one of {sorted(_BODIES)})")
    build, keys = _BODIES[name]
    values: Dict[str, float] = {}
    for item in filter(None, params.split(",")):
        key, _, value = item.partition("=")
        key = key.strip()
        if key not in keys:
            raise ConfigError(f"Body {name} has no parameter {key!r} (expected {list(keys)})")
        try:
            values[key] = float(value)
        except ValueError as e:
            raise ConfigError(f"Bad body parameter {item!r}") from e
    return build(**values)


def translate(P: Polytope, t) -> Polytope:
    return _remap(P, lambda v: v + np.asarray(t, dtype=float))


def scale(P: Polytope, factor: float) -> Polytope:
    if factor <= 0:
        raise ValueError("Scale factor must be positive")
    return _remap(P, lambda v: factor * v)


def transform(P: Polytope, rotation) -> Polytope:
    matrix = getattr(rotation, "matrix", rotation)
    return _remap(P, lambda v: v @ np.asarray(matrix, dtype=float).T)


def _remap(P: Polytope, fn) -> Polytope:
    if P.partial:
        raise UnsupportedError("Windowed lifted polytopes cannot be re-hulled")
    return hull(fn(P.vertices))


def face_measure(F: Face) -> float:
    return F.measure


def normal_cone_region(P: Polytope, F: Face) -> SphericalRegion:
    """nu(P, F): a point for facets, an arc for (n-2)-faces, a spherical polytope below."""
    if F.ambient != P.dimension:
        raise DimensionMismatchError(f"Face lives in R^{F.ambient}, polytope in R^{P.dimension}")
    return F.normal_cone


def support_function(P: Polytope, u) -> np.ndarray:
    """h_P(u) = max_v <v, u> for each row of u."""
    dirs = np.atleast_2d(np.asarray(u, dtype=float))
    return np.max(dirs @ P.vertices.T, axis=1)


def minkowski_sum(P: Polytope, R: Polytope) -> Polytope:
    """
    P + R as the hull of vertex sums.

    For large inputs only pairs whose vertex normal cones can overlap are
    summed; the candidate set still contains every vertex of P + R.
    """
    if P.dimension != R.dimension:
        raise DimensionMismatchError(f"Cannot add polytopes in R^{P.dimension} and R^{R.dimension}")
    vp, vr = P.vertices, R.vertices
    if len(vp) * len(vr) <= 40_000 or not (P.is_full_dimensional and R.is_full_dimensional):
        sums = (vp[:, None, :] + vr[None, :, :]).reshape(-1, P.dimension)
        return hull(sums)
    centres_p, radii_p = _vertex_cone_caps(P)
    centres_r, radii_r = _vertex_cone_caps(R)
    tree = cKDTree(centres_r)
    max_r = float(radii_r.max())
    pairs = []
    for i, (c, rad) in enumerate(zip(centres_p, radii_p)):
        reach = min(math.pi, rad + max_r)
        for j in tree.query_ball_point(c, 2.0 * math.sin(reach / 2.0) + 1e-12):
            angle = math.acos(max(-1.0, min(1.0, float(c @ centres_r[j]))))
            if angle <= rad + radii_r[j] + 1e-9:
                pairs.append((i, j))
    idx = np.array(pairs)
    logger.debug(f"Minkowski sum: {len(idx)} candidate pairs of {len(vp) * len(vr)}")
    return hull(vp[idx[:, 0]] + vr[idx[:, 1]])


def _vertex_cone_caps(P: Polytope):
    """Bounding cap (centre, angular radius) of every vertex normal cone, in vertex order."""
    centres = np.zeros((len(P.vertices), P.dimension))
    radii = np.zeros(len(P.vertices))
    for face in P.face_list(0):
        gens = face.normal_generators
        c = gens.sum(axis=0)
        c /= np.linalg.norm(c)
        centres[face.vertex_ids[0]] = c
        radii[face.vertex_ids[0]] = float(np.max(np.arccos(np.clip(gens @ c, -1.0, 1.0))))
    return centres, radii


# Cuts and sections

def _edge_crossings(P: Polytope, H: Halfspace, values: np.ndarray, tol: float) -> np.ndarray:
    crossings = []
    for edge in P.face_list(1):
        a, b = edge.vertex_ids[0], edge.vertex_ids[-1]
        va, vb = values[a], values[b]
        if (va < -tol and vb > tol) or (va > tol and vb < -tol):
            lam = va / (va - vb)
            crossings.append(P.vertices[a] + lam * (P.vertices[b] - P.vertices[a]))
    return np.array(crossings).reshape(-1, P.dimension)


def intersect_halfspace(P: Polytope, H: Halfspace) -> Polytope:
    """
    P ∩ H^- (hull of kept vertices and edge crossings).

    Raises:
        EmptyIntersectionError: If P lies strictly outside H^-
    """
    values = H.values(P.vertices)
    tol = 1e-12 * max(1.0, float(np.abs(P.vertices).max()))
    kept = values <= tol
    if not np.any(kept):
        raise EmptyIntersectionError("Polytope does not meet the halfspace")
    if np.all(kept):
        return P
    pts = np.vstack([P.vertices[kept], _edge_crossings(P, H, values, tol)])
    return hull(pts)


def section(P: Polytope, H: Halfspace) -> Optional[Polytope]:
    """P ∩ bd H, or None if empty."""
    values = H.values(P.vertices)
    tol = 1e-12 * max(1.0, float(np.abs(P.vertices).max()))
    on_plane = P.vertices[np.abs(values) <= tol]
    pts = np.vstack([on_plane, _edge_crossings(P, H, values, tol)])
    if len(pts) == 0:
        return None
    return hull(pts)


# Nearest point map

def nearest_point(P: Polytope, X, chunk: int = 100_000):
    """
    Metric projection onto P.

    Returns:
        (p, u, dist, face_index): nearest points, unit normals (zero inside P),
        distances and (k, i) keys of the face whose relative interior contains p
    """
    pts = np.atleast_2d(np.asarray(X, dtype=float))
    m = len(pts)
    proj = np.zeros_like(pts)
    dims = np.full(m, -1, dtype=int)
    index = np.full(m, -1, dtype=int)
    a_mat, b_vec = P.inequalities()
    scale = max(1.0, float(np.abs(P.vertices).max()))
    tol = 1e-10 * scale
    for start in range(0, m, chunk):
        block = pts[start:start + chunk]
        assigned = np.zeros(len(block), dtype=bool)
        for k in range(P.affine_dim + 1):
            for i, face in enumerate(P.face_list(k)):
                todo = ~assigned
                if not np.any(todo):
                    break
                x = block[todo]
                origin = face.points[0]
                y = origin + ((x - origin) @ face.direction_basis.T) @ face.direction_basis
                inside = np.all(y @ a_mat.T <= b_vec + tol, axis=1)
                offset = x - y
                normal_ok = np.all(np.einsum("mn,mvn->mv", offset, P.vertices[None, :, :] - y[:, None, :]) <= tol * np.maximum(1.0, np.linalg.norm(offset, axis=1))[:, None], axis=1)
                hit = inside & normal_ok
                rows = np.nonzero(todo)[0][hit]
                proj[start + rows] = y[hit]
                dims[start + rows] = k
                index[start + rows] = i
                assigned[rows] = True
    diff = pts - proj
    dist = np.linalg.norm(diff, axis=1)
    normals = np.where(dist[:, None] > 0, diff / np.where(dist > 0, dist, 1.0)[:, None], 0.0)
    return proj, normals, dist, np.stack([dims, index], axis=1)


# File format

class PolytopeFile(BaseModel):
    """Structured-text polytope: {"dimension": n, "vertices": [[..]], "faces": {"k": [[ids]]}}."""
    dimension: int = Field(..., ge=1, le=4)
    vertices: List[List[float]] = Field(..., min_length=1)
    faces: Optional[Dict[str, List[List[int]]]] = None

    @field_validator("vertices")
    @classmethod
    def _finite(cls, v):
        if not all(np.isfinite(c) for row in v for c in row):
            raise ValueError("vertices must be finite")
        return v

    @model_validator(mode="after")
    def _consistent(self):
        for row in self.vertices:
            if len(row) != self.dimension:
                raise ValueError(f"vertex {row} does not have {self.dimension} coordinates")
        if self.faces is None and self.dimension > 3:
            raise ValueError("faces are required when dimension > 3")
        if self.faces is not None:
            for key, lists in self.faces.items():
                if not key.isdigit():
                    raise ValueError(f"face key {key!r} must be a dimension")
                for ids in lists:
                    if any(i < 0 or i >= len(self.vertices) for i in ids):
                        raise ValueError(f"face {ids} references a missing vertex")
        return self


def polytope_from_file(path) -> Polytope:
    """
    Load a polytope file.

    Raises:
        FileNotFoundError: If the file does not exist
        ConfigError: If the file does not match the schema
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Polytope file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
        spec = PolytopeFile(**raw)
    except (json.JSONDecodeError, ValidationError, TypeError) as e:
        raise ConfigError(f"Invalid polytope file {path}: {e}") from e
    vertices = np.array(spec.vertices, dtype=float)
    if spec.faces is None:
        return hull(vertices)
    return polytope_from_faces(vertices, {int(k): v for k, v in spec.faces.items()})


def polytope_from_faces(vertices, faces: Dict[int, List[List[int]]]) -> Polytope:
    """
    Build a full-dimensional polytope from a given face lattice.

    Facets (k = n-1) must be listed; their outer normals orient away from
    the vertex centroid. Normal cones come from the facets containing each face.
    """
    vertices = validate_points(vertices)
    n = vertices.shape[1]
    if n - 1 not in faces:
        raise ConfigError("Face lattice must list the facets")
    centre = vertices.mean(axis=0)
    facet_sets, normals, offsets = [], [], []
    for ids in faces[n - 1]:
        pts = vertices[ids]
        normal = null_space((pts[1:] - pts[0]))[:, 0] if len(pts) > 1 else np.eye(n)[0]
        if normal @ (pts[0] - centre) < 0:
            normal = -normal
        facet_sets.append(set(ids))
        normals.append(normal)
        offsets.append(float(normal @ pts[0]))
    normals = np.array(normals)
    if not np.all(vertices @ normals.T <= np.array(offsets) + 1e-9 * max(1.0, np.abs(vertices).max())):
        raise ConfigError("Listed facets do not support the vertex set")
    built: Dict[int, List[Face]] = {n: [Face(n, range(len(vertices)), vertices, direction_basis=np.eye(n))]}
    for k, lists in faces.items():
        if k >= n:
            continue
        built[k] = []
        for ids in lists:
            containing = [f for f, s in enumerate(facet_sets) if set(ids) <= s]
            built[k].append(Face(k, ids, vertices[ids], normals[containing]))
    return Polytope(vertices, built, affine_basis=np.eye(n), facet_normals=normals, facet_offsets=np.array(offsets))


# Lifted lattice complexes

def lift(x) -> np.ndarray:
    """l(x) = x + |x|^2 e_n for points of R^{n-1}."""
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    return np.hstack([pts, np.sum(pts ** 2, axis=1, keepdims=True)])


def lifted_facet_normal(z) -> np.ndarray:
    """Outer unit normal (2z, -1)/sqrt(1 + 4|z|^2) of the lifted cell with centre z."""
    zs = np.atleast_2d(np.asarray(z, dtype=float))
    normals = np.hstack([2.0 * zs, -np.ones((len(zs), 1))])
    return normals / np.sqrt(1.0 + 4.0 * np.sum(zs ** 2, axis=1, keepdims=True))


def triangle_basis(t: float, d: int) -> np.ndarray:
    """Rows t*b_1, t*b_2 with b_1 = e_1, b_2 = (cos pi/d, sin pi/d)."""
    beta = math.pi / d
    return t * np.array([[1.0, 0.0], [math.cos(beta), math.sin(beta)]])


def complex_circumradius(n: int, t: float, kind: str, d: Optional[int] = None) -> float:
    if kind == "cube":
        return t * math.sqrt(n - 1)
    return t / (2.0 * math.sin((d - 1) * math.pi / (2.0 * d)))


def _circumcentre(tri: np.ndarray) -> np.ndarray:
    a, b, c = tri
    mat = 2.0 * np.array([b - a, c - a])
    rhs = np.array([b @ b - a @ a, c @ c - a @ a])
    return np.linalg.solve(mat, rhs)


def _cube_cells(n: int, t: float, window: float):
    dim = n - 1
    reach = int(math.ceil(window / (2.0 * t))) + 1
    for m in itertools.product(range(-reach, reach), repeat=dim):
        z = 2.0 * t * np.array(m, dtype=float) + t
        if z @ z <= window ** 2:
            yield m, z


def _cube_faces_of_cell(m: tuple, dims: Sequence[int]):
    dim = len(m)
    for k in dims:
        for free in itertools.combinations(range(dim), k):
            fixed = [i for i in range(dim) if i not in free]
            for bits in itertools.product((0, 1), repeat=len(fixed)):
                base = list(m)
                for i, b in zip(fixed, bits):
                    base[i] += b
                yield k, (tuple(base), free)


def _triangle_cells(t: float, d: int, window: float):
    lattice = triangle_basis(t, d)
    reach = int(math.ceil(2.0 * window / (t * math.sin(math.pi / d)))) + 2
    for i in range(-reach, reach):
        for j in range(-reach, reach):
            lower = ((i, j), (i + 1, j), (i, j + 1))
            upper = ((i + 1, j), (i + 1, j + 1), (i, j + 1))
            for keys in (lower, upper):
                coords = np.array(keys, dtype=float) @ lattice
                z = _circumcentre(coords)
                if z @ z <= window ** 2:
                    yield keys, z


def lift_complex(n: int, t: float, complex_kind: str = "cube", window_radius: float = 0.5,
                 d: Optional[int] = None, dims: Optional[Sequence[int]] = None) -> Polytope:
    """
    Faces of R_t = conv l(lattice) above the complex faces inside a window.

    Faces are built directly from the complex: each k-face G lifts to
    conv l(vertices of G) and its normal cone is generated by the lifted
    facet normals of the cells containing G. Faces with a containing cell
    outside the window are recorded in info["incomplete_centres"] only.

    Args:
        n: 3 or 4 (cube), 3 (triangle)
        t: Lattice parameter (cube side 2t, triangle sides t and t)
        complex_kind: "cube" or "triangle"
        window_radius: Cells with centre |z| <= window_radius are generated
        d: Triangle angle parameter, beta_d = pi/d
        dims: Face dimensions to build (default all 0..n-1)
    """
    if t <= 0:
        raise ValueError("Lattice parameter t must be positive")
    if complex_kind == "cube":
        validate_dimension(n, allowed=(3, 4))
        cells = list(_cube_cells(n, t, window_radius))
        expected = {k: 2 ** (n - 1 - k) for k in range(n)}
    elif complex_kind == "triangle":
        if n != 3 or d is None or d < 2:
            raise UnsupportedError("Triangle complexes need n = 3 and d >= 2")
        cells = list(_triangle_cells(t, d, window_radius))
        expected = {0: 6, 1: 2, 2: 1}
    else:
        raise ConfigError(f"Unknown complex kind {complex_kind!r}")
    dims = tuple(range(n)) if dims is None else tuple(dims)

    registry: Dict[tuple, dict] = {}
    if complex_kind == "cube":
        for m, z in cells:
            for k, key in _cube_faces_of_cell(m, dims):
                registry.setdefault((k, key), {"centres": []})["centres"].append(z)
    else:
        for keys, z in cells:
            for k in dims:
                for sub in itertools.combinations(keys, k + 1):
                    registry.setdefault((k, frozenset(sub)), {"centres": []})["centres"].append(z)

    lattice = triangle_basis(t, d) if complex_kind == "triangle" else None
    faces: Dict[int, List[Face]] = {k: [] for k in dims}
    incomplete = []
    vertex_rows: Dict[tuple, int] = {}
    vertex_list = []

    def vertex_id(key):
        if key not in vertex_rows:
            vertex_rows[key] = len(vertex_list)
            vertex_list.append(key)
        return vertex_rows[key]

    for (k, key), entry in registry.items():
        centres = np.array(entry["centres"])
        if len(centres) < expected[k]:
            incomplete.append(centres.mean(axis=0))
            continue
        if complex_kind == "cube":
            base, free = key
            offsets = list(itertools.product((0, 1), repeat=k))
            keys = []
            for bits in offsets:
                g = list(base)
                for i, b in zip(free, bits):
                    g[i] += b
                keys.append(tuple(g))
            flat = 2.0 * t * np.array(keys, dtype=float)
            z_free = centres[0][list(free)]
            measure = (2.0 * t) ** k * math.sqrt(1.0 + 4.0 * float(z_free @ z_free))
        else:
            keys = sorted(key)
            flat = np.array(keys, dtype=float) @ lattice
            measure = None
        lifted = lift(flat)
        ids = [vertex_id(kk) for kk in keys]
        face = Face(k, ids, lifted, lifted_facet_normal(centres), measure=measure, cell_centres=centres)
        faces[k].append(face)

    if vertex_list:
        flat_vertices = (np.array(vertex_list, dtype=float) * 2.0 * t) if complex_kind == "cube" \
            else np.array(vertex_list, dtype=float) @ lattice
        vertices = lift(flat_vertices)
    else:
        vertices = np.zeros((0, n))
    info = {
        "t": t,
        "kind": complex_kind,
        "d": d,
        "circumradius": complex_circumradius(n, t, complex_kind, d),
        "window_radius": window_radius,
        "cells": len(cells),
        "incomplete_centres": np.array(incomplete).reshape(-1, n - 1),
    }
    logger.debug(f"Lifted {complex_kind} complex n={n} t={t:g}: {len(cells)} cells, "
                 f"{ {k: len(v) for k, v in faces.items()} } complete faces")
    return Polytope(vertices.reshape(-1, n), faces, partial=True, info=info)


def cap_radius_in_plane(threshold: float) -> float:
    """Largest |z| with <n(z), -e_n> > threshold, where n(z) is the lifted cell normal."""
    if threshold <= 0:
        return math.inf
    return 0.5 * math.sqrt(max(threshold ** -2 - 1.0, 0.0))


def _meets_cap(face: Face, axis: np.ndarray, threshold: float) -> bool:
    gens = face.normal_generators
    if len(gens) and float(np.max(gens @ axis)) > threshold:
        return True
    return face.normal_cone.max_inner(axis) > threshold


def filter_faces(P: Polytope, k: int, omega: SphericalRegion) -> List[Face]:
    """k-faces F with nu(P, F) meeting the open cap omega."""
    if omega.kind == "empty":
        return []
    if omega.kind != "cap":
        raise UnsupportedError("Faces are filtered against cap regions")
    return [face for face in P.face_list(k) if _meets_cap(face, omega.cap_axis, omega.cap_threshold)]


def truncate_and_filter(lifted: Polytope, h: float, omega: SphericalRegion,
                        dims: Optional[Sequence[int]] = None) -> Polytope:
    """
    The faces of P_{h,t} = R_t ∩ H^-_h whose normal cones meet omega.

    In the small-t regime these are lifted faces lying strictly below the
    cut plane, above cells with |z|^2 <= h; anything else is reported.

    Raises:
        RegimeError: A retained face touches the cut plane or sits above a far cell
        WindowTooSmallError: A face with a missing containing cell could meet omega
    """
    n = lifted.dimension
    if omega.kind == "empty":
        return Polytope(np.zeros((0, n)), {}, partial=True, info=dict(lifted.info, h=h))
    axis, threshold = omega.cap_axis, omega.cap_threshold
    info = lifted.info
    cell_diameter = 2.0 * info.get("circumradius", 0.0)
    incomplete = info.get("incomplete_centres", np.zeros((0, n - 1)))
    if np.allclose(axis, -np.eye(n)[n - 1]) and len(incomplete):
        reach = cap_radius_in_plane(threshold) + 2.0 * cell_diameter
        if np.min(np.linalg.norm(incomplete, axis=1)) <= reach:
            raise WindowTooSmallError(
                f"Window radius {info.get('window_radius')} too small for the cap (needs > {reach:.4g})"
            )
    dims = sorted(lifted.faces) if dims is None else list(dims)
    kept: Dict[int, List[Face]] = {}
    for k in dims:
        kept[k] = []
        for face in lifted.face_list(k):
            if not _meets_cap(face, axis, threshold):
                continue
            if np.max(face.points[:, -1]) >= h:
                raise RegimeError(f"A {k}-face meeting the cap reaches the cut plane x_n = {h:g}; decrease t")
            if face.cell_centres is not None and np.max(np.sum(face.cell_centres ** 2, axis=1)) > h:
                raise RegimeError(f"A {k}-face meeting the cap lies above a cell with |z|^2 > {h:g}; decrease t")
            kept[k].append(face)
    logger.debug(f"Truncated lifted complex at h={h:g}: { {k: len(v) for k, v in kept.items()} } faces meet the cap")
    vertices = np.vstack([f.points for fs in kept.values() for f in fs]) if any(kept.values()) else np.zeros((0, n))
    return Polytope(vertices, kept, partial=True, info=dict(info, h=h))


def cut_lifted(t: float, h: float, complex_kind: str = "cube", d: Optional[int] = None, n: int = 3) -> Polytope:
    """
    P_{h,t} = R_t ∩ H^-_h as a full polytope (n = 3).

    Hull of the lifted lattice points below the cut and of the points where
    lifted complex edges cross the cut plane.
    """
    if n != 3:
        raise UnsupportedError("cut_lifted materialises polytopes in R^3 only")
    if complex_kind == "cube":
        lattice = 2.0 * t * np.eye(2)
        steps = [(1, 0), (0, 1)]
    elif complex_kind == "triangle":
        lattice = triangle_basis(t, d)
        steps = [(1, 0), (0, 1), (-1, 1)]
    else:
        raise ConfigError(f"Unknown complex kind {complex_kind!r}")
    radius = math.sqrt(h)
    short = min(np.linalg.norm(lattice, axis=1))
    reach = int(math.ceil(2.0 * radius / (short * math.sin(math.pi / (d or 2))))) + 2
    grid = np.array(list(itertools.product(range(-reach, reach + 1), repeat=2)), dtype=float)
    flat = grid @ lattice
    heights = np.sum(flat ** 2, axis=1)
    inside = heights <= h
    lookup = {tuple(map(int, g)): i for i, g in enumerate(grid)}
    crossings = []
    for i in np.nonzero(inside)[0]:
        key = tuple(map(int, grid[i]))
        for step in steps:
            for sign in (1, -1):
                other = (key[0] + sign * step[0], key[1] + sign * step[1])
                j = lookup.get(other)
                if j is None or inside[j]:
                    continue
                lam = (h - heights[i]) / (heights[j] - heights[i])
                a, b = lift(flat[i])[0], lift(flat[j])[0]
                crossings.append(a + lam * (b - a))
    pts = np.vstack([lift(flat[inside]), np.array(crossings).reshape(-1, 3)])
    polytope = hull(pts)
    polytope.info.update({"t": t, "h": h, "kind": complex_kind, "d": d})
    return polytope
