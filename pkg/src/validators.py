import numpy as np

from .errors import (
    BasisError,
    DimensionMismatchError,
    EmptyInputError,
    SpecError,
)

ORTHONORMAL_TOL = 1e-10
ROTATION_TOL = 1e-12


def validate_dimension(n: int, allowed=(1, 2, 3, 4)) -> int:
    """
    Check an ambient dimension.

    Args:
        n: Requested dimension
        allowed: Supported dimensions

    Returns:
        The dimension as int

    Raises:
        DimensionMismatchError: If n is not supported
    """
    if int(n) != n or int(n) not in allowed:
        raise DimensionMismatchError(f"Dimension {n} not supported (expected one of {tuple(allowed)})")
    return int(n)


def validate_points(points, n: int = None) -> np.ndarray:
    """
    Convert a point list to a float array of shape (m, n).

    Raises:
        EmptyInputError: If no points are given
        DimensionMismatchError: If rows have the wrong length
    """
    arr = np.asarray(points, dtype=float)
    if arr.size == 0:
        raise EmptyInputError("Point set is empty")
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise DimensionMismatchError(f"Expected a list of points, got array of shape {arr.shape}")
    if n is not None and arr.shape[1] != n:
        raise DimensionMismatchError(f"Points have dimension {arr.shape[1]}, expected {n}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("Points contain non-finite coordinates")
    return arr


def validate_unit_vector(u, tol: float = ORTHONORMAL_TOL) -> np.ndarray:
    """
    Check that u has unit length.

    Raises:
        BasisError: If |u| differs from 1 by more than tol
    """
    vec = np.asarray(u, dtype=float).reshape(-1)
    norm = float(np.linalg.norm(vec))
    if abs(norm - 1.0) > tol:
        raise BasisError(f"Vector {vec.tolist()} is not a unit vector (norm {norm:.3g})")
    return vec


def validate_orthonormal_basis(basis, n: int = None, tol: float = ORTHONORMAL_TOL) -> np.ndarray:
    """
    Check that the rows of basis are orthonormal.

    Args:
        basis: Array of shape (k, n) (k may be 0)
        n: Expected ambient dimension
        tol: Maximum deviation of the Gram matrix from the identity

    Returns:
        The basis as a (k, n) float array

    Raises:
        BasisError: If the Gram matrix is not the identity
    """
    arr = np.asarray(basis, dtype=float)
    if arr.size == 0:
        return np.zeros((0, n if n is not None else 0))
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if n is not None and arr.shape[1] != n:
        raise DimensionMismatchError(f"Basis vectors have dimension {arr.shape[1]}, expected {n}")
    gram = arr @ arr.T
    deviation = float(np.max(np.abs(gram - np.eye(arr.shape[0]))))
    if deviation > tol:
        raise BasisError(f"Basis is not orthonormal (Gram deviation {deviation:.3g})")
    return arr


def validate_orthogonal_matrix(matrix, tol: float = ROTATION_TOL) -> np.ndarray:
    """
    Check that a square matrix is orthogonal.

    Raises:
        BasisError: If the columns are not orthonormal
        DimensionMismatchError: If the matrix is not square
    """
    arr = np.asarray(matrix, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise DimensionMismatchError(f"Rotation matrix must be square, got shape {arr.shape}")
    deviation = float(np.max(np.abs(arr.T @ arr - np.eye(arr.shape[0]))))
    if deviation > tol:
        raise BasisError(f"Matrix is not orthogonal (deviation {deviation:.3g})")
    return arr


def validate_spec_indices(n: int, k: int, r: int, s: int, j: int, m: int) -> None:
    """
    Check an index tuple of Q^m phi_k^{r,s,j}.

    Raises:
        SpecError: If an index is negative, k is out of range, or j >= 1 with k = 0
    """
    for name, value in (("r", r), ("s", s), ("j", j), ("m", m)):
        if value < 0:
            raise SpecError(f"Index {name}={value} must be nonnegative")
    if not 0 <= k <= n - 1:
        raise SpecError(f"Index k={k} outside 0..{n - 1}")
    if k == 0 and j >= 1:
        raise SpecError("phi_0^{r,s,j} is undefined for j >= 1")


def validate_tolerance(tol: float) -> float:
    """Raise ValueError unless tol is a positive finite number."""
    if not np.isfinite(tol) or tol <= 0:
        raise ValueError(f"Tolerance must be positive, got {tol}")
    return float(tol)


def short_tensor(tensor, digits: int = 6) -> str:
    """
    Format a tensor for log lines.

    Shows the scalar for rank 0, otherwise rank, dimension and the largest
    absolute coefficient, e.g. "rank2/n3 max|c|=1.33".
    """
    if tensor is None:
        return "None"
    if tensor.rank == 0:
        return f"{float(tensor.coefficients[0]):.{digits}g}"
    return f"rank{tensor.rank}/n{tensor.dimension} max|c|={tensor.max_abs():.{digits}g}"
