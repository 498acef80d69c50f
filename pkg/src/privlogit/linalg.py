"""Dense real linear algebra used throughout the package.

Matrices are plain 2-D float64 ``numpy`` arrays.  Products and LU factorisation
go through numpy/scipy; reduced row echelon form and the general solution of
an underdetermined system are written out here because the attack analysis
needs their pivot structure, not just a least-squares answer.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Literal

import numpy as np
import scipy.linalg

PIVOT_RTOL = 1e-10


class DimensionError(ValueError):
    """Operands have incompatible shapes."""


class SingularMatrixError(np.linalg.LinAlgError):
    """Raised when elimination meets a pivot below the singularity threshold."""

    def __init__(self, pivot: float, threshold: float, message: str | None = None):
        self.pivot = pivot
        self.threshold = threshold
        super().__init__(
            message
            or f"matrix is singular to working precision (pivot {pivot:.3e} < {threshold:.3e})"
        )


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite 2-D float64 array (vectors become single columns)."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    if m.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains NaN or Inf")
    return m


def multiply(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def _pivot_threshold(a: np.ndarray, rtol: float) -> float:
    scale = float(np.max(np.abs(a))) if a.size else 0.0
    return rtol * scale


def solve(a, rhs, rtol: float = PIVOT_RTOL) -> np.ndarray:
    """Solve ``a @ s = rhs`` by row-pivoted LU.

    ``rhs`` may be a vector or a matrix; the result has the same shape.
    Raises :class:`SingularMatrixError` if any pivot of U falls below
    ``rtol * max|a|``.
    """
    a = as_matrix(a, "a")
    rhs_arr = np.asarray(rhs, dtype=np.float64)
    if a.shape[0] != a.shape[1]:
        raise DimensionError(f"solve needs a square matrix, got {a.shape}")
    if rhs_arr.shape[0] != a.shape[0]:
        raise DimensionError(f"rhs has {rhs_arr.shape[0]} rows, matrix has {a.shape[0]}")
    if not np.all(np.isfinite(rhs_arr)):
        raise ValueError("rhs contains NaN or Inf")
    threshold = _pivot_threshold(a, rtol)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(a, check_finite=False)
    pivots = np.abs(np.diag(lu))
    smallest = float(pivots.min()) if pivots.size else 0.0
    if smallest <= threshold or smallest == 0.0:
        raise SingularMatrixError(smallest, threshold)
    return scipy.linalg.lu_solve((lu, piv), rhs_arr, check_finite=False)


def solve_equilibrated(a, rhs, rtol: float = PIVOT_RTOL) -> np.ndarray:
    """:func:`solve` after symmetric diagonal scaling ``D a D``, ``D = |diag(a)|^-1/2``.

    For symmetric positive (semi)definite systems whose rows differ wildly in
    scale; the singularity threshold then applies to the scaled matrix.
    """
    a = as_matrix(a, "a")
    diag = np.abs(np.diag(a))
    d = 1.0 / np.sqrt(np.where(diag > 0, diag, 1.0))
    rhs = np.asarray(rhs, dtype=np.float64)
    scale = d if rhs.ndim == 1 else d[:, None]
    return scale * solve(a * np.outer(d, d), scale * rhs, rtol=rtol)


def inverse(a, rtol: float = PIVOT_RTOL) -> np.ndarray:
    a = as_matrix(a, "a")
    return solve(a, np.eye(a.shape[0]), rtol=rtol)


@dataclass(frozen=True, eq=False)
class RrefResult:
    reduced: np.ndarray
    rank: int
    pivot_columns: tuple[int, ...]


def rref(a, tol: float | None = None) -> RrefResult:
    """Gauss-Jordan elimination with partial pivoting.

    Entries with magnitude below ``tol`` count as zero.  The default is
    ``1e-10 * max|a|`` so the rank decision does not depend on scaling.
    """
    m = as_matrix(a, "a").copy()
    if tol is None:
        tol = _pivot_threshold(m, PIVOT_RTOL)
        if tol == 0.0:
            tol = np.finfo(float).tiny
    elif tol <= 0:
        raise ValueError("tol must be positive")
    rows, cols = m.shape
    pivots: list[int] = []
    r = 0
    for c in range(cols):
        if r == rows:
            break
        k = r + int(np.argmax(np.abs(m[r:, c])))
        if abs(m[k, c]) < tol:
            m[r:, c] = 0.0
            continue
        if k != r:
            m[[r, k]] = m[[k, r]]
        m[r] /= m[r, c]
        others = np.arange(rows) != r
        m[others] -= np.outer(m[others, c], m[r])
        m[others, c] = 0.0
        m[r, c] = 1.0
        pivots.append(c)
        r += 1
    m[np.abs(m) < tol] = 0.0
    return RrefResult(reduced=m, rank=len(pivots), pivot_columns=tuple(pivots))


def rank(a, tol: float | None = None) -> int:
    return rref(a, tol).rank


@dataclass(frozen=True, eq=False)
class GeneralSolution:
    """Solution set ``particular + null_basis @ t`` of a linear system.

    ``particular`` is ``None`` when the system is inconsistent.  ``null_basis``
    has one column per free variable.
    """

    particular: np.ndarray | None
    null_basis: np.ndarray
    rank_a: int
    rank_augmented: int
    free_columns: tuple[int, ...]

    @property
    def consistent(self) -> bool:
        return self.particular is not None

    @property
    def dimension(self) -> int:
        return self.null_basis.shape[1]


def general_solution(a, b, tol: float | None = None) -> GeneralSolution:
    """Row-reduce ``[a | b]`` and read off the affine solution set of ``a x = b``."""
    a = as_matrix(a, "a")
    b = np.asarray(b, dtype=np.float64).reshape(-1, 1)
    if b.shape[0] != a.shape[0]:
        raise DimensionError(f"rhs length {b.shape[0]} does not match {a.shape[0]} rows")
    aug = np.hstack([a, b])
    if tol is None:
        tol = _pivot_threshold(aug, PIVOT_RTOL) or np.finfo(float).tiny
    red = rref(aug, tol)
    n = a.shape[1]
    pivots_a = [c for c in red.pivot_columns if c < n]
    free = tuple(c for c in range(n) if c not in pivots_a)
    null = np.zeros((n, len(free)))
    for j, f in enumerate(free):
        null[f, j] = 1.0
        for row, pc in enumerate(pivots_a):
            null[pc, j] = -red.reduced[row, f]
    if n in red.pivot_columns:
        particular = None
    else:
        particular = np.zeros(n)
        for row, pc in enumerate(pivots_a):
            particular[pc] = red.reduced[row, n]
    return GeneralSolution(
        particular=particular,
        null_basis=null,
        rank_a=len(pivots_a),
        rank_augmented=red.rank,
        free_columns=free,
    )


@dataclass(frozen=True, eq=False)
class PermutationKey:
    """Row shuffle stored as an index map: source row ``i`` lands on ``image[i]``."""

    image: np.ndarray

    def __post_init__(self):
        image = np.array(self.image, dtype=np.int64)
        if image.ndim != 1 or not np.array_equal(np.sort(image), np.arange(image.size)):
            raise ValueError("permutation image must be a bijection on 0..size-1")
        image.setflags(write=False)
        object.__setattr__(self, "image", image)

    @property
    def size(self) -> int:
        return int(self.image.size)

    @classmethod
    def identity(cls, size: int) -> PermutationKey:
        return cls(np.arange(size))

    @classmethod
    def random(cls, size: int, rng: np.random.Generator) -> PermutationKey:
        return cls(rng.permutation(size))

    def inverse(self) -> PermutationKey:
        inv = np.empty_like(self.image)
        inv[self.image] = np.arange(self.size)
        return PermutationKey(inv)

    def then(self, other: PermutationKey) -> PermutationKey:
        """Composite of applying ``self`` first and ``other`` second."""
        if other.size != self.size:
            raise DimensionError("permutation sizes differ")
        return PermutationKey(other.image[self.image])

    def as_matrix(self) -> np.ndarray:
        p = np.zeros((self.size, self.size))
        p[self.image, np.arange(self.size)] = 1.0
        return p

    def __eq__(self, other) -> bool:
        return isinstance(other, PermutationKey) and np.array_equal(self.image, other.image)

    def __hash__(self) -> int:
        return hash(self.image.tobytes())


def apply_permutation(
    key: PermutationKey,
    m,
    side: Literal["rows", "cols"] = "rows",
    inverse: bool = False,
) -> np.ndarray:
    """Permute rows (``P @ m``) or columns (``m @ P.T``) of ``m``.

    With ``inverse=True`` the transpose of the permutation matrix is applied,
    undoing the forward call.
    """
    m = np.asarray(m, dtype=np.float64)
    axis = 0 if side == "rows" else 1
    if side not in ("rows", "cols"):
        raise ValueError(f"side must be 'rows' or 'cols', got {side!r}")
    if m.shape[axis] != key.size:
        raise DimensionError(f"permutation of size {key.size} cannot act on {side} of {m.shape}")
    if inverse:
        return np.take(m, key.image, axis=axis)
    out = np.empty_like(m)
    if axis == 0:
        out[key.image] = m
    else:
        out[:, key.image] = m
    return out
