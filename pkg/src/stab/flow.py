"""Trajectory integration for the controlled system.

``integrate`` works with any callable field.  Fields that also provide
``contains(x)`` (domain test) and ``diagnostics(x) -> (F, residuals)``, such
as :class:`stab.synth.PerturbedField`, get domain-aware stepping: a step that
lands outside the domain (or whose stages cannot be evaluated there) is
halved, up to 40 times, before the run stops with ``left_mrk``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .symexpr import DomainFault
from .synth import NotInMrk

MAX_DOMAIN_HALVINGS = 40
MIN_STEP = 1e-14
MIN_SAMPLES = 50


class Termination(str, enum.Enum):
    REACHED_T_END = "reached_t_end"
    CONVERGED_F_FLOOR = "converged_f_floor"
    LEFT_MRK = "left_mrk"
    ESCAPED_R_MAX = "escaped_r_max"
    STEP_FAILURE = "step_failure"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class IntegratorOptions:
    method: str = "rk45"
    dt: float = 1e-3
    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    t_end: float = 10.0
    max_steps: int = 200_000
    r_max: float = 1e6
    f_floor: float = 1e-24
    max_step: float | None = None  # rk45 only; defaults to t_end / 200

    def __post_init__(self):
        if self.method not in ("rk45", "rk4"):
            raise ValueError(f"unknown method {self.method!r}; expected 'rk45' or 'rk4'")
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be > 0")
        if not self.t_end > 0:
            raise ValueError("t_end must be > 0")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if not self.r_max > 0:
            raise ValueError("r_max must be > 0")


@dataclass(frozen=True)
class Sample:
    t: float
    state: np.ndarray
    F: float
    residuals: np.ndarray


@dataclass
class Trajectory:
    samples: list[Sample] = field(default_factory=list)
    termination: Termination | None = None
    message: str = ""

    def __len__(self):
        return len(self.samples)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.samples])

    @property
    def states(self) -> np.ndarray:
        return np.array([s.state for s in self.samples])

    @property
    def F(self) -> np.ndarray:
        return np.array([s.F for s in self.samples])

    @property
    def final(self) -> Sample:
        return self.samples[-1]


# Dormand-Prince 5(4)
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4

_OUTSIDE = (NotInMrk, DomainFault, ArithmeticError)


class _OffDomain(Exception):
    pass


class _Stepper:
    def __init__(self, fld):
        self.f = fld
        self.contains = getattr(fld, "contains", None)
        self.diag = getattr(fld, "diagnostics", None)

    def eval(self, x) -> np.ndarray:
        try:
            v = np.asarray(self.f(x), dtype=float)
        except _OUTSIDE as exc:
            raise _OffDomain(str(exc)) from None
        if not np.all(np.isfinite(v)):
            raise _OffDomain("non-finite field value")
        return v

    def inside(self, x) -> bool:
        if not np.all(np.isfinite(x)):
            return False
        return True if self.contains is None else bool(self.contains(x))

    def sample(self, t, x) -> Sample:
        if self.diag is None:
            return Sample(t, x.copy(), math.nan, np.empty(0))
        F, r = self.diag(x)
        return Sample(t, x.copy(), float(F), np.asarray(r, dtype=float))

    def rk4(self, x, h, k1):
        k2 = self.eval(x + 0.5 * h * k1)
        k3 = self.eval(x + 0.5 * h * k2)
        k4 = self.eval(x + h * k3)
        return x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)

    def dp45(self, x, h, k1):
        ks = [k1]
        for i in range(1, 7):
            ks.append(self.eval(x + h * sum(a * k for a, k in zip(_A[i], ks))))
        K = np.array(ks)
        x5 = x + h * (_B5 @ K)
        err = h * (_E @ K)
        return x5, err, ks[-1]


def integrate(fld, x0, opts: IntegratorOptions | None = None) -> Trajectory:
    """Integrate ``dx/dt = fld(x)`` from ``x0`` until ``opts.t_end`` or an event.

    Events, checked after every accepted step: ``|x| > r_max`` (escaped),
    ``F < f_floor`` (converged; needs a ``diagnostics`` method).
    """
    opts = opts or IntegratorOptions()
    st = _Stepper(fld)
    x = np.array(x0, dtype=float).ravel()
    if not st.inside(x):
        raise NotInMrk(x, math.nan)
    traj = Trajectory([st.sample(0.0, x)])

    def done(reason, msg=""):
        traj.termination = Termination(reason)
        traj.message = msg
        return traj

    if np.linalg.norm(x) > opts.r_max:
        return done("escaped_r_max")
    if traj.final.F < opts.f_floor:
        return done("converged_f_floor")

    try:
        k1 = st.eval(x)
    except _OffDomain as exc:
        return done("left_mrk", str(exc))

    t = 0.0
    if opts.method == "rk4":
        h_nom = min(opts.dt, opts.t_end / MIN_SAMPLES)
    else:
        h_nom = opts.max_step or opts.t_end / 200
    h = h_nom if opts.method == "rk4" else min(h_nom, 1e-3 * opts.t_end)
    halvings = 0
    steps = 0

    while True:
        if steps >= opts.max_steps:
            return done("step_failure", f"max_steps={opts.max_steps} exhausted at t={t}")
        last = opts.t_end - t <= h * (1 + 1e-12)
        step = opts.t_end - t if last else h
        try:
            if opts.method == "rk4":
                cand, err_norm, k_new = st.rk4(x, step, k1), 0.0, None
            else:
                cand, err, k_new = st.dp45(x, step, k1)
                scale = opts.abs_tol + opts.rel_tol * np.maximum(np.abs(x), np.abs(cand))
                err_norm = float(np.sqrt(np.mean((err / scale) ** 2)))
            if not st.inside(cand):
                raise _OffDomain(f"candidate state {cand.tolist()} outside domain")
        except _OffDomain as exc:
            halvings += 1
            if halvings > MAX_DOMAIN_HALVINGS:
                return done("left_mrk", str(exc))
            h = step / 2
            if h < MIN_STEP:
                return done("left_mrk", f"domain boundary reached at t={t}: {exc}")
            continue

        if opts.method == "rk45" and err_norm > 1.0:
            h = step * max(0.2, 0.9 * err_norm ** -0.2)
            if h < MIN_STEP:
                return done("step_failure", f"step underflow at t={t}")
            continue

        steps += 1
        halvings = 0
        t = opts.t_end if last else t + step
        x = cand
        traj.samples.append(st.sample(t, x))
        if np.linalg.norm(x) > opts.r_max:
            return done("escaped_r_max")
        if traj.final.F < opts.f_floor:
            return done("converged_f_floor")
        if last:
            return done("reached_t_end")

        if opts.method == "rk4":
            try:
                k1 = st.eval(x)
            except _OffDomain as exc:
                return done("left_mrk", str(exc))
            h = h_nom
        else:
            k1 = k_new
            grow = 5.0 if err_norm == 0 else min(5.0, 0.9 * err_norm ** -0.2)
            h = min(h_nom, step * grow)


@dataclass
class ProbeResult:
    bounded_up_to_t_end: bool
    sup_norm: float
    trajectory: Trajectory


def bounded_orbit_probe(fld, x0, opts: IntegratorOptions | None = None) -> ProbeResult:
    """Finite-horizon boundedness test: did the orbit stay within ``r_max`` until
    ``t_end`` (or convergence)?  Says nothing about times beyond the horizon."""
    traj = integrate(fld, x0, opts)
    sup = float(np.max(np.linalg.norm(traj.states, axis=1)))
    ok = traj.termination in (Termination.REACHED_T_END, Termination.CONVERGED_F_FLOOR)
    return ProbeResult(ok, sup, traj)
