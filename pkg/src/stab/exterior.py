"""Dense exterior algebra over R^n with the Euclidean metric.

Basis blades are addressed by bitmask: bit ``k`` set means ``e_{k+1}`` is a
factor, with factors always kept in increasing order.  A multivector of
dimension ``n`` stores all ``2**n`` coefficients.

The Hodge star follows ``e_I ^ *e_I = e_{1..n}``, so in the plane
``*e1 = e2`` and ``*e2 = -e1``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

MAX_DIM = 16
GRADE_TOL = 1e-14


class DimensionMismatch(ValueError):
    pass


class GradeError(ValueError):
    pass


def _reorder_sign(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Sign of the permutation sorting the concatenated factors of e_a e_b."""
    a = np.asarray(a, dtype=np.int64) >> 1
    b = np.asarray(b, dtype=np.int64)
    swaps = np.zeros(np.broadcast(a, b).shape, dtype=np.int64)
    while np.any(a):
        swaps += np.bitwise_count(a & b)
        a = a >> 1
    return np.where(swaps & 1, -1.0, 1.0)


@lru_cache(maxsize=None)
def _grades(dim: int) -> np.ndarray:
    return np.bitwise_count(np.arange(1 << dim, dtype=np.int64)).astype(np.int64)


TABLE_DIM = 8


@lru_cache(maxsize=None)
def _sign_table(dim: int) -> np.ndarray:
    """Product signs for every blade pair, zero where the blades overlap."""
    b = np.arange(1 << dim, dtype=np.int64)
    A, B = b[:, None], b[None, :]
    return np.where((A & B) == 0, _reorder_sign(A, B), 0.0)


DENSE_DIM = 4


@lru_cache(maxsize=None)
def _dense_product(dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Flattened target blade and sign for all blade pairs (small dims)."""
    b = np.arange(1 << dim, dtype=np.int64)
    return (b[:, None] | b[None, :]).ravel(), _sign_table(dim).ravel()


@lru_cache(maxsize=None)
def _hodge_table(dim: int) -> tuple[np.ndarray, np.ndarray]:
    blades = np.arange(1 << dim, dtype=np.int64)
    full = (1 << dim) - 1
    comp = full ^ blades
    return comp, _reorder_sign(blades, comp)


@lru_cache(maxsize=None)
def _hodge_gather(dim: int) -> tuple[np.ndarray, np.ndarray]:
    # complement is an involution, so *c can be read off as sign[comp] * c[comp]
    comp, sign = _hodge_table(dim)
    return comp, sign[comp]


@dataclass(frozen=True, eq=False)
class Multivector:
    dim: int
    coeffs: np.ndarray

    def __post_init__(self):
        if not 1 <= self.dim <= MAX_DIM:
            raise ValueError(f"dimension must be in 1..{MAX_DIM}, got {self.dim}")
        c = np.array(self.coeffs, dtype=float)
        if c.shape != (1 << self.dim,):
            raise ValueError(f"expected {1 << self.dim} coefficients, got shape {c.shape}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zero(cls, dim: int) -> Multivector:
        return cls(dim, np.zeros(1 << dim))

    @classmethod
    def scalar(cls, dim: int, value: float = 1.0) -> Multivector:
        c = np.zeros(1 << dim)
        c[0] = value
        return cls(dim, c)

    @classmethod
    def blade(cls, dim: int, indices, coeff: float = 1.0) -> Multivector:
        """``coeff * e_{i1} ^ e_{i2} ^ ...`` from 1-based indices, in the given order."""
        out = cls.scalar(dim, coeff)
        for i in indices:
            if not 1 <= i <= dim:
                raise ValueError(f"basis index {i} out of range for dim {dim}")
            c = np.zeros(1 << dim)
            c[1 << (i - 1)] = 1.0
            out = out ^ cls(dim, c)
        return out

    def grade_part(self, g: int) -> Multivector:
        return Multivector(self.dim, np.where(_grades(self.dim) == g, self.coeffs, 0.0))

    def grades(self) -> set[int]:
        return set(_grades(self.dim)[np.nonzero(self.coeffs)[0]].tolist())

    def _check(self, other: Multivector):
        if not isinstance(other, Multivector):
            raise TypeError(f"expected Multivector, got {type(other).__name__}")
        if other.dim != self.dim:
            raise DimensionMismatch(f"dimension mismatch: {self.dim} vs {other.dim}")

    def __add__(self, other: Multivector) -> Multivector:
        self._check(other)
        return Multivector(self.dim, self.coeffs + other.coeffs)

    def __sub__(self, other: Multivector) -> Multivector:
        self._check(other)
        return Multivector(self.dim, self.coeffs - other.coeffs)

    def __neg__(self) -> Multivector:
        return Multivector(self.dim, -self.coeffs)

    def __mul__(self, k: float) -> Multivector:
        return Multivector(self.dim, self.coeffs * float(k))

    __rmul__ = __mul__

    def __xor__(self, other: Multivector) -> Multivector:
        return wedge(self, other)

    def allclose(self, other: Multivector, rtol=1e-12, atol=1e-12) -> bool:
        self._check(other)
        return bool(np.allclose(self.coeffs, other.coeffs, rtol=rtol, atol=atol))

    def __repr__(self):
        terms = []
        for b in np.nonzero(self.coeffs)[0]:
            name = "".join(str(k + 1) for k in range(self.dim) if b >> k & 1)
            terms.append(f"{self.coeffs[b]:g}" + (f"*e{name}" if name else ""))
        return f"Multivector(dim={self.dim}, {' + '.join(terms) or '0'})"


def _make(dim: int, coeffs: np.ndarray) -> Multivector:
    # trusted internal constructor: skips validation and copying
    coeffs.setflags(write=False)
    mv = object.__new__(Multivector)
    object.__setattr__(mv, "dim", dim)
    object.__setattr__(mv, "coeffs", coeffs)
    return mv


@dataclass(frozen=True)
class GradeVector:
    """Homogeneous grade-``grade`` slice: coefficients over the blades of that grade."""

    dim: int
    grade: int
    blades: tuple[int, ...]
    values: np.ndarray

    @classmethod
    def of(cls, a: Multivector, grade: int) -> GradeVector:
        if not 0 <= grade <= a.dim:
            raise ValueError(f"grade {grade} out of range for dim {a.dim}")
        idx = np.nonzero(_grades(a.dim) == grade)[0]
        return cls(a.dim, grade, tuple(idx.tolist()), a.coeffs[idx].copy())

    def embed(self) -> Multivector:
        c = np.zeros(1 << self.dim)
        c[list(self.blades)] = self.values
        return Multivector(self.dim, c)


def wedge_coeffs(dim: int, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Wedge product on raw coefficient arrays of length ``2**dim``."""
    if dim <= DENSE_DIM:
        # fixed-size dense product beats sparse bookkeeping here
        target, sign = _dense_product(dim)
        vals = sign * np.multiply.outer(a, b).ravel()
        return np.bincount(target, weights=vals, minlength=1 << dim)
    ia = np.nonzero(a)[0]
    ib = np.nonzero(b)[0]
    if ia.size == 0 or ib.size == 0:
        return np.zeros(1 << dim)
    if ia.size == 1 and ia[0] == 0:
        return a[0] * b
    if ib.size == 1 and ib[0] == 0:
        return b[0] * a
    A = ia[:, None]
    B = ib[None, :]
    if dim <= TABLE_DIM:
        sign = _sign_table(dim)[A, B]
    else:
        sign = np.where((A & B) == 0, _reorder_sign(A, B), 0.0)
    vals = sign * np.outer(a[ia], b[ib])
    return np.bincount((A | B).ravel(), weights=vals.ravel(), minlength=1 << dim)


def hodge_coeffs(dim: int, c: np.ndarray) -> np.ndarray:
    comp, sign = _hodge_gather(dim)
    return sign * c[comp]


def wedge(a: Multivector, b: Multivector) -> Multivector:
    a._check(b)
    return _make(a.dim, wedge_coeffs(a.dim, a.coeffs, b.coeffs))


def wedge_all(factors, dim: int) -> Multivector:
    """Ordered wedge of ``factors``; the empty product is the unit scalar."""
    out = Multivector.scalar(dim, 1.0)
    for f in factors:
        out = wedge(out, f)
    return out


def hodge(a: Multivector) -> Multivector:
    return _make(a.dim, hodge_coeffs(a.dim, a.coeffs))


def norm_sq(a: Multivector) -> float:
    return float(np.dot(a.coeffs, a.coeffs))


def vector_embed(v) -> Multivector:
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("expected a non-empty 1-D array")
    dim = v.size
    c = np.zeros(1 << dim)
    c[1 << np.arange(dim)] = v
    return _make(dim, c)


def vector_extract(a: Multivector) -> np.ndarray:
    ones = 1 << np.arange(a.dim)
    mass = np.abs(a.coeffs)
    off = mass[_grades(a.dim) != 1].sum()
    if off > GRADE_TOL * mass.sum():
        raise GradeError(f"not a 1-vector: off-grade mass {off:.3e} of {mass.sum():.3e}")
    return a.coeffs[ones].copy()
