"""Acceptance criteria, one test each, at the stated tolerances.

Each test prints a single ``PASS``/``FAIL`` line; the lines are repeated in the
pytest terminal summary.  Run this file directly to see only those lines.
"""
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from stab.config import builtin_example
from stab.exterior import Multivector, _grades, hodge, norm_sq, vector_embed, wedge, wedge_all
from stab.flow import IntegratorOptions, Termination, integrate
from stab.synth import control_gram, control_hodge, drift_field, perturbed_field
from stab.verify import (
    decay_law_check,
    invariance_check,
    isolated_point_check,
    lie_identity_check,
    lie_identity_residuals,
)

from _support import (
    control_i,
    control_ii,
    derivative_errors,
    example_spec,
    grid,
    perturbed_iii,
    random_mrk_points,
    random_spec,
    rel_err,
)

EXAMPLES = ("paper-i", "paper-ii", "paper-iii")
GAINS = (0.5, 1.0, 2.0)


def verdict(number: int, ok: bool, summary: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {summary}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_criterion_01_closed_form_control_i():
    t0 = time.perf_counter()
    worst = 0.0
    for lam in GAINS:
        spec = example_spec("paper-i", lam)
        worst = max(worst, max(rel_err(control_hodge(spec, p), control_i(*p, lam)) for p in grid()))
    elapsed = time.perf_counter() - t0
    verdict(1, worst <= 1e-12 and elapsed < 1.0,
            f"one-constraint control x, max rel err {worst:.2e} (<= 1e-12), {elapsed:.2f}s (< 1s)")


def test_criterion_02_closed_form_control_ii():
    worst = 0.0
    for lam in GAINS:
        spec = example_spec("paper-ii", lam)
        pts = [p for p in grid() if np.hypot(*p) >= 0.1]
        worst = max(worst, max(rel_err(control_hodge(spec, p), control_ii(*p, lam)) for p in pts))
    verdict(2, worst <= 1e-10, f"circle control, max rel err {worst:.2e} (<= 1e-10)")


def test_criterion_03_perturbed_field_iii():
    worst = 0.0
    for lam in GAINS:
        fld = perturbed_field(example_spec("paper-iii", lam))
        pts = [p for p in grid() if abs(p[1]) >= 0.1]
        worst = max(worst, max(rel_err(fld(p), perturbed_iii(*p, lam)) for p in pts))
    verdict(3, worst <= 1e-10, f"two-constraint perturbed field, max rel err {worst:.2e} (<= 1e-10)")


def test_criterion_04_decay_law():
    t0 = time.perf_counter()
    worst_slope = worst_point = 0.0
    runs = 0
    for name in EXAMPLES:
        for lam in GAINS:
            cfg = builtin_example(name, lam=lam)
            fld = perturbed_field(cfg.spec)
            for x0 in cfg.initial_states:
                traj = integrate(fld, x0, IntegratorOptions(t_end=5.0, r_max=cfg.spec.guards.r_max))
                if traj.termination is not Termination.REACHED_T_END:
                    continue  # starts on the level set or unbounded
                rec = decay_law_check(cfg.spec, traj)
                runs += 1
                worst_slope = max(worst_slope, abs(rec.measured + 2 * lam) / (2 * lam))
                worst_point = max(worst_point, rec.details["pointwise_max_rel_err"])
    elapsed = time.perf_counter() - t0
    ok = worst_slope <= 1e-6 and worst_point <= 1e-6 and elapsed < 10.0 and runs > 0
    verdict(4, ok, f"{runs} runs, slope rel err {worst_slope:.2e}, pointwise {worst_point:.2e} "
                   f"(<= 1e-6), {elapsed:.1f}s (< 10s)")


def test_criterion_05_oracle_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    points = 0
    dims = set()
    while points < 1000:
        n = int(rng.integers(2, 7))
        p = int(rng.integers(1, n + 1))
        dims.add((n, p))
        spec = random_spec(rng, n, p)
        for x in random_mrk_points(rng, spec, 5):
            worst = max(worst, rel_err(control_hodge(spec, x), control_gram(spec, x)))
            points += 1
    elapsed = time.perf_counter() - t0
    verdict(5, worst <= 1e-9 and elapsed < 30.0,
            f"{points} points over {len(dims)} (n, p) shapes, max rel err {worst:.2e} (<= 1e-9), "
            f"{elapsed:.1f}s (< 30s)")


def test_criterion_06_lie_identity():
    rng = np.random.default_rng(6)
    worst = 0.0
    for name in EXAMPLES:
        spec = example_spec(name)
        pts = rng.uniform(-2, 2, (1000, 2))
        rec = lie_identity_check(spec, pts)
        worst = max(worst, rec.measured)
    for _ in range(20):
        n = int(rng.integers(2, 7))
        spec = random_spec(rng, n, int(rng.integers(1, n + 1)))
        for x in random_mrk_points(rng, spec, 50):
            worst = max(worst, float(np.max(lie_identity_residuals(spec, x))))
    verdict(6, worst <= 1e-9, f"max |L D_i + lam (D_i - d_i)| / (1 + |lam (D_i - d_i)|) = {worst:.2e} (<= 1e-9)")


def test_criterion_07_invariance():
    rng = np.random.default_rng(7)
    worst = 0.0
    ok = True
    for name in EXAMPLES:
        cfg = builtin_example(name)
        box = np.array(cfg.sampling_box())
        seeds = rng.uniform(box[:, 0], box[:, 1], (10, 2))
        for fld in (drift_field(cfg.spec), perturbed_field(cfg.spec)):
            rec = invariance_check(fld, cfg.spec, seeds, horizon=1.0)
            ok = ok and rec.passed
            worst = max(worst, rec.measured)
    verdict(7, ok and worst <= 1e-9, f"max residual after t=1 under X and X + u: {worst:.2e} (<= 1e-9)")


def test_criterion_08_isolated_points():
    spec = example_spec("paper-iii")
    records = [isolated_point_check(spec, pt, 0.5) for pt in ((0.0, 1.0), (0.0, -1.0))]
    worst = 0.0
    for lam in GAINS:
        fld = perturbed_field(example_spec("paper-iii", lam))
        for sx in (1, -1):
            for sy in (1, -1):
                traj = integrate(fld, (0.5 * sx, 0.5 * sy), IntegratorOptions(t_end=20.0 / lam))
                worst = max(worst, float(np.linalg.norm(traj.final.state - [0.0, sy])))
    ok = all(r.passed for r in records) and worst <= 1e-6
    verdict(8, ok, f"isolated-point checks {[r.status.value for r in records]}, "
                   f"worst final distance {worst:.2e} (<= 1e-6) at t = 20/lam")


def _homogeneous(rng, n, g):
    return Multivector(n, np.where(_grades(n) == g, rng.standard_normal(1 << n), 0.0))


def test_criterion_09_exterior_properties():
    rng = np.random.default_rng(9)
    cases = 10_000
    fails = {"double hodge": 0, "anticommutativity": 0, "gram norm": 0}
    for _ in range(cases):
        n = int(rng.integers(1, 9))
        g = int(rng.integers(0, n + 1))
        a = _homogeneous(rng, n, g)
        if not hodge(hodge(a)).allclose((-1) ** (g * (n - g)) * a):
            fails["double hodge"] += 1

        n = int(rng.integers(1, 9))
        j, k = int(rng.integers(0, n + 1)), int(rng.integers(0, n + 1))
        a, b = _homogeneous(rng, n, j), _homogeneous(rng, n, k)
        if not wedge(a, b).allclose((-1) ** (j * k) * wedge(b, a), rtol=1e-10, atol=1e-10):
            fails["anticommutativity"] += 1

        n = int(rng.integers(1, 9))
        k = int(rng.integers(1, n + 1))
        V = rng.standard_normal((k, n))
        det = float(np.linalg.det(V @ V.T))
        w = norm_sq(wedge_all([vector_embed(v) for v in V], n))
        # relative to the Hadamard bound prod |v_i|^2, the natural size of det G
        if not abs(w - det) <= 1e-12 * float(np.prod(np.sum(V * V, axis=1))):
            fails["gram norm"] += 1
    verdict(9, not any(fails.values()), f"{cases} cases per identity, failures {fails}")


def test_criterion_10_derivative_oracle():
    pairs = derivative_errors(np.random.default_rng(10), 200)
    worst = max(abs(d - fd) / abs(fd) for d, fd, *_ in pairs)
    verdict(10, len(pairs) == 200 and worst <= 1e-6,
            f"{len(pairs)} random expressions vs central differences, max rel err {worst:.2e} (<= 1e-6)")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-s", "-p", "no:cacheprovider"]))
