"""Control synthesis for driving a vector field onto a level set D(x) = d.

For constraints ``D = (D_1, ..., D_p)`` with target ``d`` and gain ``lam > 0``
the control is::

    u = |grad D_1 ^ ... ^ grad D_p|^-2 * sum_i (-1)^(n-i+1) [h_i + lam (D_i - d_i)] Theta_i
    Theta_i = *[ (^_{j != i} grad D_j) ^ *(^_j grad D_j) ]

with ``h_i = L_X D_i``.  Along ``X + u`` every residual obeys
``d/dt (D_i - d_i) = -lam (D_i - d_i)``, so the squared residual ``F`` decays
as ``exp(-2 lam t)``.  The formula only makes sense where the gradients are
linearly independent (the max-rank set); elsewhere :class:`NotInMrk` is raised.

Two evaluation paths are kept: :func:`control_hodge` evaluates the wedge/Hodge
formula literally, :func:`control_gram` solves the equivalent Gram system.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import exterior as ext
from .symexpr import (
    DomainFault,
    ScalarExpr,
    VectorFieldExpr,
    add,
    compile_expr,
    differentiate,
    iter_nodes,
    mul,
    parse,
    Var,
)

CONTROL_PATHS = ("hodge", "gram")


class NotInMrk(ValueError):
    """The constraint gradients are (numerically) dependent at ``point``."""

    def __init__(self, point, gram_det: float):
        self.point = tuple(float(v) for v in point)
        self.gram_det = gram_det
        super().__init__(f"constraint gradients not of maximal rank at {self.point} (gram det {gram_det:.3e})")


@dataclass(frozen=True)
class Guards:
    r_max: float = 1e6
    rank_tol: float = 1e-12


@dataclass(frozen=True)
class ProblemSpec:
    field: VectorFieldExpr
    constraints: tuple[ScalarExpr, ...]
    targets: tuple[float, ...]
    lam: float
    guards: Guards = field(default_factory=Guards)

    def __post_init__(self):
        object.__setattr__(self, "constraints", tuple(self.constraints))
        object.__setattr__(self, "targets", tuple(float(t) for t in self.targets))
        n, p = self.n, len(self.constraints)
        if not 1 <= p <= n:
            raise ValueError(f"need 1 <= p <= n constraints, got p={p}, n={n}")
        if len(self.targets) != p:
            raise ValueError(f"{p} constraints but {len(self.targets)} targets")
        if not self.lam > 0:
            raise ValueError("lambda must be > 0")
        if not self.guards.r_max > 0:
            raise ValueError("r_max must be > 0")
        if not 0 < self.guards.rank_tol < 1:
            raise ValueError("rank_tol must be in (0, 1)")
        for c in self.constraints:
            for node in iter_nodes(c):
                if isinstance(node, Var) and node.index >= n:
                    raise ValueError(f"constraint uses variable index {node.index} >= n={n}")

    @classmethod
    def from_text(cls, names, field, constraints, targets, lam, **guards) -> ProblemSpec:
        return cls(
            VectorFieldExpr.parse(field, names),
            tuple(parse(c, names) for c in constraints),
            tuple(targets),
            lam,
            Guards(**guards),
        )

    @property
    def names(self) -> tuple[str, ...]:
        return self.field.names

    @property
    def n(self) -> int:
        return self.field.dim

    @property
    def p(self) -> int:
        return len(self.constraints)

    @cached_property
    def gradients(self) -> tuple[VectorFieldExpr, ...]:
        return tuple(
            VectorFieldExpr(self.names, tuple(differentiate(c, k) for k in range(self.n)))
            for c in self.constraints
        )

    @cached_property
    def lie_terms(self) -> tuple[ScalarExpr, ...]:
        """``h_i = L_X D_i`` as expressions."""
        return tuple(lie_derivative(self.field, c) for c in self.constraints)

    @cached_property
    def _kernel(self) -> _Kernel:
        return _Kernel(self)


def lie_derivative(X: VectorFieldExpr, f: ScalarExpr) -> ScalarExpr:
    out: ScalarExpr = differentiate(f, 0)
    out = mul(X.components[0], out)
    for k in range(1, X.dim):
        out = add(out, mul(X.components[k], differentiate(f, k)))
    return out


class _Kernel:
    def __init__(self, spec: ProblemSpec):
        n = spec.n
        self.D = [compile_expr(c, n) for c in spec.constraints]
        self.grad = [[compile_expr(g, n) for g in gv.components] for gv in spec.gradients]
        self.h = [compile_expr(h, n) for h in spec.lie_terms]
        self.X = [compile_expr(c, n) for c in spec.field.components]
        self.targets = np.array(spec.targets)

    def residuals(self, x) -> np.ndarray:
        return np.array([f(x) for f in self.D]) - self.targets

    def gradients(self, x) -> np.ndarray:
        return np.array([[f(x) for f in row] for row in self.grad])

    def lie(self, x) -> np.ndarray:
        return np.array([f(x) for f in self.h])

    def drift(self, x) -> np.ndarray:
        return np.array([f(x) for f in self.X])


def _point(spec: ProblemSpec, point) -> list[float]:
    x = [float(v) for v in np.asarray(point, dtype=float).ravel()]
    if len(x) != spec.n:
        raise ValueError(f"point has length {len(x)}, expected {spec.n}")
    return x


def _rank_ok(gram: np.ndarray, gram_det: float, rank_tol: float) -> bool:
    return bool(np.isfinite(gram_det) and gram_det > 0 and gram_det > rank_tol * np.prod(np.diag(gram)))


@dataclass
class SynthesisAt:
    point: np.ndarray
    gradients: np.ndarray  # p x n
    h: np.ndarray
    residuals: np.ndarray  # D_i - d_i
    gram: np.ndarray
    gram_det: float
    in_mrk: bool
    theta: list[np.ndarray] | None = None
    control: np.ndarray | None = None

    @property
    def F(self) -> float:
        return float(self.residuals @ self.residuals)


def synthesize(spec: ProblemSpec, point, path: str = "hodge", lam: float | None = None) -> SynthesisAt:
    """Everything the control needs at one point; ``theta`` and ``control``
    stay ``None`` off the max-rank set instead of raising."""
    x = _point(spec, point)
    k = spec._kernel
    grads = k.gradients(x)
    gram = grads @ grads.T
    gram_det = float(np.linalg.det(gram))
    out = SynthesisAt(
        point=np.array(x),
        gradients=grads,
        h=k.lie(x),
        residuals=k.residuals(x),
        gram=gram,
        gram_det=gram_det,
        in_mrk=_rank_ok(gram, gram_det, spec.guards.rank_tol),
    )
    if out.in_mrk:
        bracket = out.h + (spec.lam if lam is None else lam) * out.residuals
        if path == "hodge":
            out.theta, scale = _thetas(grads)
            out.control = _combine_hodge(grads.shape[1], bracket, out.theta, scale)
        elif path == "gram":
            out.control = _solve_gram(grads, gram, bracket)
        else:
            raise ValueError(f"unknown control path {path!r}; expected one of {CONTROL_PATHS}")
    return out


def _thetas(grads: np.ndarray) -> tuple[list[np.ndarray], float]:
    """All ``Theta_i`` plus the squared norm of the full wedge.

    Works on raw coefficient arrays; the prefix/suffix products give every
    ``^_{j != i} grad D_j`` with ``2p`` wedges instead of ``p^2``.
    """
    p, n = grads.shape
    vs = [ext.vector_embed(g).coeffs for g in grads]
    unit = ext.Multivector.scalar(n).coeffs
    prefix = [unit]
    for v in vs:
        prefix.append(ext.wedge_coeffs(n, prefix[-1], v))
    suffix = [unit]
    for v in reversed(vs):
        suffix.append(ext.wedge_coeffs(n, v, suffix[-1]))
    suffix.reverse()
    full = prefix[-1]
    star_all = ext.hodge_coeffs(n, full)
    thetas = []
    for i in range(p):
        others = ext.wedge_coeffs(n, prefix[i], suffix[i + 1])
        star = ext.hodge_coeffs(n, ext.wedge_coeffs(n, others, star_all))
        thetas.append(ext.vector_extract(ext.Multivector(n, star)))
    return thetas, float(full @ full)


def _combine_hodge(n: int, bracket: np.ndarray, thetas, scale: float) -> np.ndarray:
    u = np.zeros(n)
    for i in range(1, len(thetas) + 1):
        u += (-1) ** (n - i + 1) * bracket[i - 1] * thetas[i - 1]
    return u / scale


def _solve_gram(grads: np.ndarray, gram: np.ndarray, bracket: np.ndarray) -> np.ndarray:
    # LAPACK gesv: LU with partial pivoting
    coef = np.linalg.solve(gram, -bracket)
    return grads.T @ coef


def max_rank_check(spec: ProblemSpec, point) -> tuple[bool, float]:
    x = _point(spec, point)
    grads = spec._kernel.gradients(x)
    if not np.all(np.isfinite(grads)):
        return False, float("nan")
    gram = grads @ grads.T
    det = float(np.linalg.det(gram))
    return _rank_ok(gram, det, spec.guards.rank_tol), det


def _require_mrk(spec, point, path, lam=None) -> SynthesisAt:
    s = synthesize(spec, point, path, lam)
    if not s.in_mrk:
        raise NotInMrk(point, s.gram_det)
    return s


def theta(spec: ProblemSpec, point, i: int) -> np.ndarray:
    """``Theta_i`` at ``point`` for 1-based ``i``."""
    if not 1 <= i <= spec.p:
        raise IndexError(f"theta index {i} outside 1..{spec.p}")
    return _require_mrk(spec, point, "hodge").theta[i - 1]


def control_hodge(spec: ProblemSpec, point, lam: float | None = None) -> np.ndarray:
    return _require_mrk(spec, point, "hodge", lam).control


def control_gram(spec: ProblemSpec, point, lam: float | None = None) -> np.ndarray:
    return _require_mrk(spec, point, "gram", lam).control


def control(spec: ProblemSpec, point, path: str = "hodge", lam: float | None = None) -> np.ndarray:
    return _require_mrk(spec, point, path, lam).control


def tangent_generators(spec: ProblemSpec, point) -> list[np.ndarray]:
    """Orthonormal basis of the directions annihilated by every constraint gradient.

    Each vector is signed so that its largest-magnitude entry is positive.
    """
    s = _require_mrk(spec, point, "gram")
    q, _ = np.linalg.qr(s.gradients.T, mode="complete")
    out = []
    for k in range(spec.p, spec.n):
        v = q[:, k]
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        out.append(v)
    return out


def squared_residual(spec: ProblemSpec, point) -> float:
    r = spec._kernel.residuals(_point(spec, point))
    return float(r @ r)


class PerturbedField:
    """``x -> X(x) + u(x)``, defined on the max-rank set only."""

    def __init__(self, spec: ProblemSpec, path: str = "hodge", lam: float | None = None):
        if path not in CONTROL_PATHS:
            raise ValueError(f"unknown control path {path!r}; expected one of {CONTROL_PATHS}")
        self.spec = spec
        self.path = path
        self.lam = spec.lam if lam is None else lam

    def __call__(self, x) -> np.ndarray:
        x = _point(self.spec, x)
        s = _require_mrk(self.spec, x, self.path, self.lam)
        return self.spec._kernel.drift(x) + s.control

    def contains(self, x) -> bool:
        try:
            return max_rank_check(self.spec, x)[0]
        except DomainFault:
            return False

    def diagnostics(self, x) -> tuple[float, np.ndarray]:
        r = self.spec._kernel.residuals(_point(self.spec, x))
        return float(r @ r), r


class DriftField(PerturbedField):
    """The uncontrolled field ``X``, defined wherever it evaluates."""

    def __init__(self, spec: ProblemSpec):
        self.spec = spec
        self.path = None
        self.lam = 0.0

    def __call__(self, x) -> np.ndarray:
        return self.spec._kernel.drift(_point(self.spec, x))

    def contains(self, x) -> bool:
        try:
            self(x)
        except DomainFault:
            return False
        return True


def perturbed_field(spec: ProblemSpec, path: str = "hodge", lam: float | None = None) -> PerturbedField:
    return PerturbedField(spec, path, lam)


def drift_field(spec: ProblemSpec) -> DriftField:
    return DriftField(spec)
