"""
Symmetric tensors on R^n stored by weakly increasing multi-indices.

A rank-p tensor keeps one coefficient per multi-index i_1 <= ... <= i_p
(0-based), i.e. C(n+p-1, p) numbers. The coefficient is the component
T(e_{i_1}, ..., e_{i_p}). Dense (n,)*p arrays are produced on demand for
contractions and symmetrised back by averaging over index orbits.
"""
import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations_with_replacement
from typing import Dict, Iterable, List, Sequence

import numpy as np
from scipy.stats import special_ortho_group

from .errors import ArityError, DimensionMismatchError
from .validators import validate_orthogonal_matrix, validate_orthonormal_basis


@lru_cache(maxsize=None)
def multi_indices(n: int, p: int) -> np.ndarray:
    """Weakly increasing multi-indices of length p over 0..n-1, lexicographic."""
    if p == 0:
        return np.zeros((1, 0), dtype=int)
    idx = np.array(list(combinations_with_replacement(range(n), p)), dtype=int)
    idx.setflags(write=False)
    return idx


@lru_cache(maxsize=None)
def _dense_positions(n: int, p: int) -> np.ndarray:
    """For every full index tuple, the position of its sorted multi-index."""
    if p == 0:
        return np.zeros((), dtype=int)
    grid = np.indices((n,) * p).reshape(p, -1).T
    weights = n ** np.arange(p - 1, -1, -1)
    codes = np.sort(grid, axis=1) @ weights
    compact_codes = multi_indices(n, p) @ weights
    positions = np.searchsorted(compact_codes, codes).reshape((n,) * p)
    positions.setflags(write=False)
    return positions


@lru_cache(maxsize=None)
def orbit_sizes(n: int, p: int) -> np.ndarray:
    """Number of distinct permutations of each multi-index."""
    if p == 0:
        return np.ones(1)
    sizes = []
    for row in multi_indices(n, p):
        _, counts = np.unique(row, return_counts=True)
        sizes.append(math.factorial(p) // math.prod(math.factorial(int(c)) for c in counts))
    out = np.array(sizes, dtype=float)
    out.setflags(write=False)
    return out


class SymTensor:
    """
    Immutable symmetric tensor of rank p on R^n.

    Supports +, -, negation and multiplication/division by scalars.
    The symmetric product is `sym_product` (or `A.sym(B)`).
    """

    def __init__(self, dimension: int, rank: int, coefficients):
        if dimension < 1 or rank < 0:
            raise DimensionMismatchError(f"Invalid tensor shape n={dimension}, p={rank}")
        coeffs = np.array(coefficients, dtype=float).reshape(-1)
        expected = math.comb(dimension + rank - 1, rank)
        if coeffs.size != expected:
            raise DimensionMismatchError(
                f"Rank-{rank} tensor on R^{dimension} needs {expected} coefficients, got {coeffs.size}"
            )
        coeffs.setflags(write=False)
        self.dimension = int(dimension)
        self.rank = int(rank)
        self.coefficients = coeffs
        self._dense = None

    # Construction

    @classmethod
    def zeros(cls, n: int, p: int) -> "SymTensor":
        return cls(n, p, np.zeros(math.comb(n + p - 1, p)))

    @classmethod
    def scalar(cls, value: float, n: int) -> "SymTensor":
        return cls(n, 0, [value])

    @classmethod
    def from_dense(cls, array) -> "SymTensor":
        """Symmetrise a dense (n,)*p array and store it compactly."""
        arr = np.asarray(array, dtype=float)
        p = arr.ndim
        if p == 0:
            raise DimensionMismatchError("Use SymTensor.scalar for rank-0 tensors")
        n = arr.shape[0]
        if any(dim != n for dim in arr.shape):
            raise DimensionMismatchError(f"Dense array must be cubic, got shape {arr.shape}")
        positions = _dense_positions(n, p).ravel()
        size = math.comb(n + p - 1, p)
        sums = np.bincount(positions, weights=arr.ravel(), minlength=size)
        return cls(n, p, sums / orbit_sizes(n, p))

    def to_dense(self) -> np.ndarray:
        if self._dense is None:
            if self.rank == 0:
                dense = np.array(self.coefficients[0])
            else:
                dense = self.coefficients[_dense_positions(self.dimension, self.rank)]
            dense.setflags(write=False)
            self._dense = dense
        return self._dense

    # Arithmetic

    def _check_compatible(self, other: "SymTensor"):
        if not isinstance(other, SymTensor):
            raise TypeError(f"Expected SymTensor, got {type(other).__name__}")
        if other.dimension != self.dimension or other.rank != self.rank:
            raise DimensionMismatchError(
                f"Cannot combine rank {self.rank}/n={self.dimension} with rank {other.rank}/n={other.dimension}"
            )

    def __add__(self, other):
        if isinstance(other, (int, float)) and other == 0:
            return self
        self._check_compatible(other)
        return SymTensor(self.dimension, self.rank, self.coefficients + other.coefficients)

    __radd__ = __add__

    def __sub__(self, other):
        self._check_compatible(other)
        return SymTensor(self.dimension, self.rank, self.coefficients - other.coefficients)

    def __neg__(self):
        return SymTensor(self.dimension, self.rank, -self.coefficients)

    def __mul__(self, factor):
        if isinstance(factor, SymTensor):
            raise TypeError("Use sym_product for tensor-tensor products")
        return SymTensor(self.dimension, self.rank, self.coefficients * float(factor))

    __rmul__ = __mul__

    def __truediv__(self, factor):
        return SymTensor(self.dimension, self.rank, self.coefficients / float(factor))

    def sym(self, other: "SymTensor") -> "SymTensor":
        return sym_product(self, other)

    # Queries

    def evaluate(self, args: Sequence) -> float:
        return evaluate(self, args)

    def polynomial(self, points) -> np.ndarray:
        """
        Values T(x, ..., x) for each row x of points.

        Uses the compact form sum_I |orbit(I)| T_I prod_k x_{I_k}.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != self.dimension:
            raise DimensionMismatchError(f"Points have dimension {pts.shape[1]}, tensor has {self.dimension}")
        if self.rank == 0:
            return np.full(pts.shape[0], self.coefficients[0])
        idx = multi_indices(self.dimension, self.rank)
        monomials = pts[:, idx].prod(axis=2)
        return monomials @ (orbit_sizes(self.dimension, self.rank) * self.coefficients)

    def trace(self) -> "SymTensor":
        """Contraction of two slots with the metric."""
        if self.rank < 2:
            raise ArityError("Trace needs rank >= 2")
        contracted = np.trace(self.to_dense(), axis1=0, axis2=1)
        if self.rank == 2:
            return SymTensor.scalar(float(contracted), self.dimension)
        return SymTensor.from_dense(contracted)

    def pushforward(self, matrix) -> "SymTensor":
        """
        Apply a linear map M (shape m x n) in every slot.

        Component i of the result is sum_j T_j prod_k M[i_k, j_k]; for a
        rotation matrix this is the action (theta T)(x) = T(theta^{-1} x).
        """
        mat = np.asarray(matrix, dtype=float)
        if mat.ndim != 2 or mat.shape[1] != self.dimension:
            raise DimensionMismatchError(f"Matrix of shape {mat.shape} cannot act on R^{self.dimension}")
        if self.rank == 0:
            return SymTensor.scalar(self.coefficients[0], mat.shape[0])
        arr = self.to_dense()
        for _ in range(self.rank):
            arr = np.tensordot(arr, mat, axes=([0], [1]))
        return SymTensor.from_dense(arr)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.coefficients))) if self.coefficients.size else 0.0

    def allclose(self, other: "SymTensor", atol: float = 1e-10, rtol: float = 0.0) -> bool:
        self._check_compatible(other)
        return bool(np.allclose(self.coefficients, other.coefficients, atol=atol, rtol=rtol))

    def items(self) -> Iterable:
        for index, value in zip(multi_indices(self.dimension, self.rank), self.coefficients):
            yield tuple(int(i) for i in index), float(value)

    def to_records(self) -> Dict:
        """Structured-text form: dimension, rank and 1-based multi-index/value pairs."""
        return {
            "dimension": self.dimension,
            "rank": self.rank,
            "components": [
                {"index": [i + 1 for i in index], "value": value}
                for index, value in self.items()
            ],
        }

    @classmethod
    def from_records(cls, record: Dict) -> "SymTensor":
        n, p = int(record["dimension"]), int(record["rank"])
        lookup = {tuple(row): pos for pos, row in enumerate(multi_indices(n, p).tolist())}
        coeffs = np.zeros(math.comb(n + p - 1, p))
        for component in record["components"]:
            key = tuple(sorted(int(i) - 1 for i in component["index"]))
            if key not in lookup:
                raise DimensionMismatchError(f"Index {component['index']} invalid for n={n}, p={p}")
            coeffs[lookup[key]] = float(component["value"])
        return cls(n, p, coeffs)

    def __repr__(self):
        return f"SymTensor(n={self.dimension}, p={self.rank}, coefficients={np.array2string(self.coefficients, precision=6)})"


def sym_product(a: SymTensor, b: SymTensor) -> SymTensor:
    """Symmetric tensor product a ⊙ b (rank p + q)."""
    if a.dimension != b.dimension:
        raise DimensionMismatchError(f"Dimension mismatch: {a.dimension} vs {b.dimension}")
    if a.rank == 0:
        return b * a.coefficients[0]
    if b.rank == 0:
        return a * b.coefficients[0]
    return SymTensor.from_dense(np.multiply.outer(a.to_dense(), b.to_dense()))


def sym_product_all(tensors: Iterable[SymTensor], n: int) -> SymTensor:
    result = SymTensor.scalar(1.0, n)
    for tensor in tensors:
        result = sym_product(result, tensor)
    return result


def power(t: SymTensor, m: int) -> SymTensor:
    """m-fold symmetric power; power(T, 0) is the scalar 1."""
    if m < 0:
        raise ValueError("Power must be nonnegative")
    return sym_product_all([t] * m, t.dimension)


def vector_power(x, r: int) -> SymTensor:
    """x^r with x^r(y_1..y_r) = prod <x, y_i>; x^0 = 1 even for x = 0."""
    vec = np.asarray(x, dtype=float).reshape(-1)
    if r < 0:
        raise ValueError("Power must be nonnegative")
    idx = multi_indices(vec.size, r)
    return SymTensor(vec.size, r, vec[idx].prod(axis=1))


def evaluate(t: SymTensor, args: Sequence) -> float:
    """Multilinear evaluation T(v_1, ..., v_p)."""
    if len(args) != t.rank:
        raise ArityError(f"Rank-{t.rank} tensor evaluated on {len(args)} arguments")
    arr = t.to_dense()
    for v in args:
        vec = np.asarray(v, dtype=float).reshape(-1)
        if vec.size != t.dimension:
            raise DimensionMismatchError(f"Argument of dimension {vec.size}, tensor has {t.dimension}")
        arr = np.tensordot(vec, arr, axes=([0], [0]))
    return float(arr)


def metric_tensor(n: int) -> SymTensor:
    """Q(x, y) = <x, y>."""
    return projection_tensor(np.eye(n), n)


def projection_tensor(basis, n: int = None) -> SymTensor:
    """
    Q_L(a, b) = <pi_L a, pi_L b> for L spanned by the orthonormal rows of basis.

    An empty basis (L = {0}) gives the zero tensor; n is then required.
    """
    arr = np.asarray(basis, dtype=float)
    if arr.size == 0:
        if n is None:
            raise DimensionMismatchError("Ambient dimension required for the zero subspace")
        return SymTensor.zeros(n, 2)
    arr = validate_orthonormal_basis(arr, n)
    dim = arr.shape[1]
    gram = arr.T @ arr
    idx = multi_indices(dim, 2)
    return SymTensor(dim, 2, gram[idx[:, 0], idx[:, 1]])


@dataclass(frozen=True)
class Rotation:
    """Orthogonal map of R^n (determinant ±1)."""
    matrix: np.ndarray

    def __post_init__(self):
        mat = validate_orthogonal_matrix(self.matrix)
        mat = np.array(mat, dtype=float)
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def identity(cls, n: int) -> "Rotation":
        return cls(np.eye(n))

    @classmethod
    def plane(cls, n: int, i: int, j: int, angle: float) -> "Rotation":
        """Rotation by angle in span(e_i, e_j) (0-based), fixing the complement."""
        mat = np.eye(n)
        c, s = np.cos(angle), np.sin(angle)
        mat[i, i], mat[i, j], mat[j, i], mat[j, j] = c, -s, s, c
        return cls(mat)

    @classmethod
    def random(cls, n: int, rng: np.random.Generator) -> "Rotation":
        if n == 1:
            return cls(np.eye(1))
        return cls(special_ortho_group.rvs(n, random_state=rng))

    def apply(self, points) -> np.ndarray:
        """Rotate a vector or the rows of a point array."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.matrix.T

    def compose(self, other: "Rotation") -> "Rotation":
        """self ∘ other."""
        return Rotation(self.matrix @ other.matrix)

    def inverse(self) -> "Rotation":
        return Rotation(self.matrix.T)


def rotate(t: SymTensor, rotation: Rotation) -> SymTensor:
    """(theta T)(x_1..x_p) = T(theta^{-1} x_1, ..., theta^{-1} x_p)."""
    if rotation.dimension != t.dimension:
        raise DimensionMismatchError(f"Rotation of R^{rotation.dimension} applied to tensor on R^{t.dimension}")
    return t.pushforward(rotation.matrix)


def stack_coefficients(tensors: List[SymTensor]) -> np.ndarray:
    """Flatten a list of tensors into one coefficient vector."""
    if not tensors:
        return np.zeros(0)
    return np.concatenate([t.coefficients for t in tensors])
