"""Max-plus (tropical) linear algebra over R ∪ {-inf}.

``a ⊕ b = max(a, b)`` and ``a ⊗ b = a + b``.  The tropical zero is IEEE ``-inf``
(never a large negative float), which is absorbing under ``+`` and neutral under
``max`` without any special casing, as long as ``+inf`` never appears.
"""
from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch, PositiveEntryError, ValidationError

NEG_INF = -np.inf


class MaxPlusMatrix:
    """Square matrix over R ∪ {-inf}.  ``A @ B`` is the max-plus product."""

    __slots__ = ("entries",)

    def __init__(self, entries):
        a = np.array(entries, dtype=float, copy=True)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DimensionMismatch(f"max-plus matrix must be square, got shape {a.shape}")
        if np.any(np.isnan(a)) or np.any(a == np.inf):
            raise ValidationError("max-plus entries must be finite reals or -inf")
        a.setflags(write=False)
        self.entries = a

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @classmethod
    def identity(cls, n: int) -> "MaxPlusMatrix":
        e = np.full((n, n), NEG_INF)
        np.fill_diagonal(e, 0.0)
        return cls(e)

    @classmethod
    def zeros(cls, n: int) -> "MaxPlusMatrix":
        """The tropical zero matrix (all -inf)."""
        return cls(np.full((n, n), NEG_INF))

    def __matmul__(self, other):
        if isinstance(other, MaxPlusMatrix):
            return mp_matmul(self, other)
        return mp_matvec(self, other)

    def __or__(self, other):
        return mp_add(self, other)

    def __pow__(self, k: int) -> "MaxPlusMatrix":
        out = MaxPlusMatrix.identity(self.n)
        for _ in range(k):
            out = mp_matmul(out, self)
        return out

    def __eq__(self, other):
        return isinstance(other, MaxPlusMatrix) and np.array_equal(self.entries, other.entries)

    def __repr__(self):
        return f"MaxPlusMatrix({self.entries.tolist()!r})"

    def finite_entries(self) -> np.ndarray:
        return self.entries[np.isfinite(self.entries)]


def _entries(A) -> np.ndarray:
    return A.entries if isinstance(A, MaxPlusMatrix) else np.asarray(A, dtype=float)


def mp_matmul(A, B) -> MaxPlusMatrix:
    a, b = _entries(A), _entries(B)
    if a.shape[1] != b.shape[0]:
        raise DimensionMismatch(f"cannot multiply {a.shape} by {b.shape}")
    return MaxPlusMatrix(np.max(a[:, :, None] + b[None, :, :], axis=1))


def mp_add(A, B) -> MaxPlusMatrix:
    a, b = _entries(A), _entries(B)
    if a.shape != b.shape:
        raise DimensionMismatch(f"cannot add {a.shape} and {b.shape}")
    return MaxPlusMatrix(np.maximum(a, b))


def mp_matvec(A, v) -> np.ndarray:
    a = _entries(A)
    v = np.asarray(v, dtype=float)
    if v.shape != (a.shape[1],):
        raise DimensionMismatch(f"cannot multiply {a.shape} by vector of shape {v.shape}")
    if a.shape[1] == 0:
        return np.full(a.shape[0], NEG_INF)
    return np.max(a + v[None, :], axis=1)


def _checked_entries(A, tol: float) -> np.ndarray:
    a = np.array(_entries(A), dtype=float)
    finite = np.isfinite(a)
    if np.any(a[finite] > tol):
        worst = float(np.max(a[finite]))
        raise PositiveEntryError(
            f"max-plus matrix has a positive entry {worst:.3g} > tolerance {tol:.1e}; "
            "the Kleene star is only defined for nonpositive weights"
        )
    # entries in (0, tol] are rounding noise from upstream solves
    a[finite] = np.minimum(a[finite], 0.0)
    return a


def kleene_star(A, tol: float = 1e-8) -> MaxPlusMatrix:
    """A* = I ⊕ A ⊕ … ⊕ A^(n-1) via Floyd-Warshall longest-path closure."""
    d = _checked_entries(A, tol)
    n = d.shape[0]
    for k in range(n):
        d = np.maximum(d, d[:, k, None] + d[None, k, :])
    idx = np.arange(n)
    d[idx, idx] = np.maximum(d[idx, idx], 0.0)
    return MaxPlusMatrix(d)


def kleene_star_naive(A) -> MaxPlusMatrix:
    """Literal power sum I ⊕ A ⊕ … ⊕ A^(n-1)."""
    A = A if isinstance(A, MaxPlusMatrix) else MaxPlusMatrix(A)
    out = MaxPlusMatrix.identity(A.n)
    power = MaxPlusMatrix.identity(A.n)
    for _ in range(A.n - 1):
        power = mp_matmul(power, A)
        out = mp_add(out, power)
    return out


def min_solution(A, alpha, tol: float = 1e-8) -> np.ndarray:
    """Smallest solution of r = A ⊗ r ⊕ alpha, namely r = A* ⊗ alpha."""
    alpha = np.asarray(alpha, dtype=float)
    if not np.all(np.isfinite(alpha)):
        raise ValidationError("alpha must be finite")
    if np.any(alpha < 0):
        raise ValidationError("alpha must be nonnegative")
    return mp_matvec(kleene_star(A, tol), alpha)


def is_unique_solution(A, tol: float = 1e-8) -> bool:
    """True iff every finite entry of A is strictly below -tol."""
    f = _entries(A)
    f = f[np.isfinite(f)]
    return bool(np.all(f < -tol))
