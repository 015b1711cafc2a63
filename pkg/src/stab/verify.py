"""Measured pass/fail checks for a synthesized controller.

Every check returns a :class:`CheckRecord`.  ``inconclusive`` is used only
where a finite horizon or finite sample cannot settle the question, and the
record says why.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .flow import IntegratorOptions, Termination, bounded_orbit_probe, integrate
from .symexpr import DomainFault
from .synth import (
    NotInMrk,
    ProblemSpec,
    max_rank_check,
    perturbed_field,
    synthesize,
)

DECAY_RTOL = 1e-6
INVARIANCE_TOL = 1e-9
PROJECTION_TOL = 1e-12
LIE_TOL = 1e-9
CONVERGENCE_TOL = 1e-6
EQUILIBRIUM_TOL = 1e-9

CHECK_NAMES = (
    "convergence",
    "decay_law",
    "invariance_X",
    "invariance_perturbed",
    "isolated_point_stability",
    "lie_identity",
)


class Status(str, enum.Enum):
    PASS = "pass"
    FAIL = "fail"
    INCONCLUSIVE = "inconclusive"

    def __str__(self):
        return self.value


class InsufficientSamples(ValueError):
    pass


class ProjectionError(ValueError):
    pass


class NonEquilibrium(ValueError):
    pass


@dataclass
class CheckRecord:
    name: str
    status: Status
    measured: float | None
    expected: float | None
    tolerance: float | None
    reason: str = ""
    index: int = 0
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.status is Status.PASS

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "index": self.index,
            "status": self.status.value,
            "measured": _num(self.measured),
            "expected": _num(self.expected),
            "tolerance": _num(self.tolerance),
            "reason": self.reason,
            "details": _jsonable(self.details),
        }


def _num(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _num(obj)
    return obj


@dataclass
class VerificationReport:
    records: list[CheckRecord] = field(default_factory=list)

    def add(self, record: CheckRecord) -> CheckRecord:
        self.records.append(record)
        return record

    @property
    def passed(self) -> bool:
        return bool(self.records) and all(r.passed for r in self.records)

    def failures(self) -> list[CheckRecord]:
        return [r for r in self.ordered() if not r.passed]

    def ordered(self) -> list[CheckRecord]:
        return sorted(self.records, key=lambda r: (r.name, r.index))

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "passed": self.passed,
            "checks": [r.to_dict() for r in self.ordered()],
        }


def _status(ok: bool) -> Status:
    return Status.PASS if ok else Status.FAIL


# -- decay law ---------------------------------------------------------------

def decay_law_check(spec: ProblemSpec, trajectory, f_floor: float = 1e-24,
                    lam: float | None = None, rtol: float = DECAY_RTOL) -> CheckRecord:
    """Fit ``ln F`` against ``t`` and compare with the predicted rate ``-2 lam``."""
    lam = spec.lam if lam is None else lam
    t = trajectory.times
    F = trajectory.F
    expected = -2.0 * lam
    if F[0] <= f_floor:
        worst = float(np.max(F))
        return CheckRecord(
            "decay_law", _status(worst <= 1e-20), worst, 0.0, 1e-20,
            reason="start on the level set; checked as invariance",
        )
    keep = F > f_floor
    if keep.sum() < 10:
        raise InsufficientSamples(f"need >= 10 samples with F > {f_floor}, have {int(keep.sum())}")
    tk, Fk = t[keep], F[keep]
    slope = float(np.polyfit(tk, np.log(Fk), 1)[0])
    predicted = np.exp(expected * tk) * F[0]
    pointwise = float(np.max(np.abs(Fk / predicted - 1.0)))
    tol = rtol * 2.0 * lam
    ok = abs(slope - expected) <= tol and pointwise <= rtol
    return CheckRecord(
        "decay_law", _status(ok), slope, expected, tol,
        details={"pointwise_max_rel_err": pointwise, "pointwise_tolerance": rtol,
                 "samples": int(keep.sum()), "t_max": float(tk[-1])},
    )


# -- level-set sampling ------------------------------------------------------

def project_to_level_set(spec: ProblemSpec, seed, tol: float = PROJECTION_TOL,
                         max_iter: int = 60) -> np.ndarray:
    """Damped Gauss-Newton (minimum-norm steps) onto ``D(x) = d``."""
    k = spec._kernel
    x = np.array(seed, dtype=float).ravel()
    try:
        r = k.residuals(list(x))
        for _ in range(max_iter):
            if np.max(np.abs(r)) <= tol:
                if not max_rank_check(spec, x)[0]:
                    raise ProjectionError(f"projected point {x.tolist()} is not a max-rank point")
                return x
            J = k.gradients(list(x))
            step = J.T @ np.linalg.solve(J @ J.T, r)
            norm0 = np.linalg.norm(r)
            alpha = 1.0
            for _ in range(30):
                trial = x - alpha * step
                try:
                    r_trial = k.residuals(list(trial))
                except DomainFault:
                    r_trial = None
                if r_trial is not None and np.linalg.norm(r_trial) < norm0:
                    break
                alpha /= 2
            else:
                raise ProjectionError(f"no descent from {x.tolist()}")
            x, r = trial, r_trial
    except (np.linalg.LinAlgError, DomainFault) as exc:
        raise ProjectionError(str(exc)) from None
    raise ProjectionError(f"no convergence within {max_iter} iterations from {list(seed)}")


def sample_level_set(spec: ProblemSpec, seeds) -> tuple[list[np.ndarray], list[tuple[int, str]]]:
    points, failures = [], []
    for i, s in enumerate(seeds):
        try:
            points.append(project_to_level_set(spec, s))
        except ProjectionError as exc:
            failures.append((i, str(exc)))
    return points, failures


# -- invariance --------------------------------------------------------------

def invariance_check(fld, spec: ProblemSpec, surface_samples, horizon: float = 1.0,
                     tol: float = INVARIANCE_TOL, name: str | None = None) -> CheckRecord:
    """Integrate from points of the level set and watch the residuals.

    Samples are first snapped onto the level set; those that cannot be
    projected are skipped and listed in the record.
    """
    if name is None:
        name = "invariance_perturbed" if getattr(fld, "path", None) else "invariance_X"
    points, failures = sample_level_set(spec, surface_samples)
    if not points:
        return CheckRecord(name, Status.INCONCLUSIVE, None, 0.0, tol,
                           reason="no sample could be projected onto the level set",
                           details={"skipped": failures})
    opts = IntegratorOptions(t_end=horizon, f_floor=0.0, r_max=spec.guards.r_max)
    k = spec._kernel
    worst = 0.0
    tangency = 0.0
    bad_runs = []
    for i, x in enumerate(points):
        try:
            v = np.asarray(fld(x))
            tangency = max(tangency, float(np.max(np.abs(k.gradients(list(x)) @ v))))
            traj = integrate(fld, x, opts)
        except (NotInMrk, DomainFault) as exc:
            bad_runs.append((i, str(exc)))
            continue
        if traj.termination is not Termination.REACHED_T_END:
            bad_runs.append((i, str(traj.termination)))
        worst = max(worst, max(float(np.max(np.abs(k.residuals(list(s.state))))) for s in traj.samples))
    ok = worst <= tol and tangency <= tol and not bad_runs
    return CheckRecord(
        name, _status(ok), worst, 0.0, tol,
        reason="" if not bad_runs else "some runs did not reach the horizon",
        details={"samples": len(points), "skipped": failures, "tangency_max": tangency,
                 "incomplete_runs": bad_runs, "horizon": horizon},
    )


# -- Lie-derivative identity -------------------------------------------------

def lie_identity_residuals(spec: ProblemSpec, point, path: str = "hodge",
                           lam: float | None = None) -> np.ndarray:
    """``|grad D_i . (X + u) + lam (D_i - d_i)| / (1 + |lam (D_i - d_i)|)`` per constraint."""
    lam = spec.lam if lam is None else lam
    s = synthesize(spec, point, path, lam)
    if not s.in_mrk:
        raise NotInMrk(point, s.gram_det)
    v = spec._kernel.drift(list(s.point)) + s.control
    target = lam * s.residuals
    return np.abs(s.gradients @ v + target) / (1.0 + np.abs(target))


def lie_identity_check(spec: ProblemSpec, points, path: str = "hodge",
                       lam: float | None = None, tol: float = LIE_TOL) -> CheckRecord:
    worst = 0.0
    used = 0
    skipped = 0
    for x in points:
        try:
            r = lie_identity_residuals(spec, x, path, lam)
        except (NotInMrk, DomainFault):
            skipped += 1
            continue
        used += 1
        worst = max(worst, float(np.max(r)))
    if not used:
        return CheckRecord("lie_identity", Status.INCONCLUSIVE, None, 0.0, tol,
                           reason="no max-rank point among the samples", details={"skipped": skipped})
    return CheckRecord("lie_identity", _status(worst <= tol), worst, 0.0, tol,
                       details={"points": used, "skipped": skipped})


# -- convergence -------------------------------------------------------------

def convergence_check(spec: ProblemSpec, x0_batch, opts: IntegratorOptions | None = None,
                      path: str = "hodge", tol: float = CONVERGENCE_TOL) -> CheckRecord:
    """Bounded orbits must end within ``tol`` (in residual norm) of the level set.

    Orbits that escape are excluded, since attraction is only claimed for
    bounded orbits.  A bounded orbit that has not converged counts as a failure
    only if the decay law says it should have by the end of the horizon.
    """
    # no early stop on F: an orbit on the level set can still be unbounded
    opts = replace(opts or IntegratorOptions(), f_floor=0.0)
    fld = perturbed_field(spec, path)
    entries = []
    for i, x0 in enumerate(x0_batch):
        probe = bounded_orbit_probe(fld, x0, opts)
        traj = probe.trajectory
        fin = traj.final
        res = math.sqrt(fin.F)
        try:
            final_in_mrk = max_rank_check(spec, fin.state)[0]
        except DomainFault:
            final_in_mrk = False
        entry = {
            "index": i,
            "x0": [float(v) for v in np.ravel(x0)],
            "termination": traj.termination.value,
            "final_state": fin.state.tolist(),
            "final_t": fin.t,
            "final_residual": res,
            "converged_at": next((t for t, F in zip(traj.times, traj.F) if math.sqrt(F) <= tol), None),
            "final_in_mrk": final_in_mrk,
            "sup_norm": probe.sup_norm,
        }
        if not probe.bounded_up_to_t_end:
            entry["status"] = Status.INCONCLUSIVE
            if traj.termination is Termination.LEFT_MRK:
                entry["reason"] = "orbit left the max-rank set"
            else:
                entry["reason"] = "excluded: orbit not bounded"
                entry["excluded"] = True
        elif res <= tol:
            entry["status"] = Status.PASS
        else:
            predicted = math.exp(-spec.lam * fin.t) * math.sqrt(traj.samples[0].F)
            if predicted <= tol:
                entry["status"] = Status.FAIL
                entry["reason"] = f"residual {res:.3e} but decay law predicts {predicted:.3e}"
            else:
                entry["status"] = Status.INCONCLUSIVE
                entry["reason"] = f"horizon too short: decay law predicts {predicted:.3e} at t={fin.t}"
        entries.append(entry)

    counted = [e for e in entries if not e.get("excluded")]
    bounded_pass = [e for e in counted if e["status"] is Status.PASS]
    if any(e["status"] is Status.FAIL for e in counted):
        status, reason = Status.FAIL, "a bounded orbit did not converge"
    elif any(e["status"] is Status.INCONCLUSIVE for e in counted):
        status, reason = Status.INCONCLUSIVE, "finite horizon or domain exit prevented a verdict"
    elif not bounded_pass:
        status, reason = Status.INCONCLUSIVE, "no bounded orbit in the batch"
    else:
        status, reason = Status.PASS, ""
    measured = max((e["final_residual"] for e in bounded_pass), default=None)
    return CheckRecord(
        "convergence", status, measured, 0.0, tol, reason=reason,
        details={"orbits": entries, "excluded": sum(bool(e.get("excluded")) for e in entries),
                 "horizon": opts.t_end},
    )


# -- isolated points ---------------------------------------------------------

def _unit_directions(n: int, rng: np.random.Generator, extra: int = 4) -> list[np.ndarray]:
    dirs = []
    for k in range(n):
        e = np.zeros(n)
        e[k] = 1.0
        dirs += [e, -e]
    for _ in range(extra):
        v = rng.standard_normal(n)
        dirs.append(v / np.linalg.norm(v))
    return dirs


def _ball(n: int, radius: float, count: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal((count, n))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * radius * rng.uniform(0.0, 1.0, (count, 1)) ** (1.0 / n)


def isolated_point_check(spec: ProblemSpec, point, radius: float, *, path: str = "hodge",
                         opts: IntegratorOptions | None = None, probes: int = 1000,
                         lyapunov_samples: int = 200, seed: int = 0) -> CheckRecord:
    """Asymptotic stability of an isolated point of the level set.

    Verifies the point is an equilibrium, corroborates isolation by projecting
    random seeds from the ball, checks that ``F > 0`` and ``dF/dt < 0`` on a
    sampled punctured ball, and integrates from starts at distance
    ``radius / 2`` expecting them to end within ``radius / 100``.
    """
    rng = np.random.default_rng(seed)
    xe = np.array(point, dtype=float).ravel()
    n = spec.n
    ok_rank, det = max_rank_check(spec, xe)
    if not ok_rank:
        raise NotInMrk(xe, det)
    fld = perturbed_field(spec, path)
    F_e = fld.diagnostics(xe)[0]
    if F_e > 1e-20:
        raise ValueError(f"{xe.tolist()} is not on the level set (F = {F_e:.3e})")
    speed = float(np.linalg.norm(fld(xe)))
    if speed > EQUILIBRIUM_TOL:
        raise NonEquilibrium(f"field has norm {speed:.3e} at {xe.tolist()}; not an equilibrium")

    details: dict = {"equilibrium_speed": speed}
    tol_dist = radius / 100

    others = []
    for off in _ball(n, radius, probes, rng):
        try:
            y = project_to_level_set(spec, xe + off)
        except ProjectionError:
            continue
        d = float(np.linalg.norm(y - xe))
        if 1e-6 * radius < d < radius:
            others.append(y.tolist())
    details["other_level_set_points"] = others[:5]
    if others:
        return CheckRecord("isolated_point_stability", Status.INCONCLUSIVE, None, 0.0, tol_dist,
                           reason="isolation not corroborated: other level-set points within radius",
                           details=details)

    k = spec._kernel
    lam = fld.lam
    worst_identity = 0.0
    bad = []
    for off in _ball(n, radius, lyapunov_samples, rng):
        x = xe + off
        if np.linalg.norm(off) == 0.0:
            continue
        try:
            r = k.residuals(list(x))
            v = fld(x)
        except (NotInMrk, DomainFault):
            bad.append((x.tolist(), "outside max-rank set"))
            continue
        F = float(r @ r)
        dF = float(2.0 * r @ (k.gradients(list(x)) @ v))
        if not (F > 0 and dF < 0):
            bad.append((x.tolist(), f"F={F:.3e}, dF/dt={dF:.3e}"))
        worst_identity = max(worst_identity, abs(dF + 2 * lam * F) / (1 + 2 * lam * F))
    details["lyapunov_identity_max"] = worst_identity
    if bad:
        details["lyapunov_violations"] = bad[:5]
        return CheckRecord("isolated_point_stability", Status.FAIL, None, 0.0, tol_dist,
                           reason="F is not a strict Lyapunov function on the sampled ball",
                           details=details)

    opts = opts or IntegratorOptions(t_end=20.0 / lam)
    finals = []
    for u in _unit_directions(n, rng):
        traj = integrate(fld, xe + 0.5 * radius * u, opts)
        finals.append(float(np.linalg.norm(traj.final.state - xe)))
    worst = max(finals)
    details["final_distances"] = finals
    return CheckRecord("isolated_point_stability", _status(worst <= tol_dist), worst, 0.0, tol_dist,
                       details=details)
