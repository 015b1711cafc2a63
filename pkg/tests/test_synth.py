import numpy as np
import pytest

from stab.symexpr import Const, evaluate, parse
from stab.synth import (
    Guards,
    NotInMrk,
    ProblemSpec,
    control,
    control_gram,
    control_hodge,
    drift_field,
    lie_derivative,
    max_rank_check,
    perturbed_field,
    squared_residual,
    synthesize,
    tangent_generators,
    theta,
)

from _support import (
    DRIFT,
    NAMES,
    control_i,
    control_ii,
    example_spec,
    perturbed_iii,
    random_mrk_points,
    random_spec,
    rel_err,
)

PT = (0.7, -0.4)


def test_lie_derivatives_of_worked_example():
    spec = example_spec("paper-iii")
    h1, h2 = spec.lie_terms
    for pt in [(0.7, -0.4), (1.3, 2.1), (-0.2, 0.9)]:
        x, y = pt
        assert evaluate(h1, pt) == pytest.approx(x * (x * x + y * y - 1), rel=1e-14)
        assert evaluate(h2, pt) == pytest.approx(2 * (x * x + y) * (x * x + y * y - 1), rel=1e-14)
    assert lie_derivative(spec.field, parse("4.5", NAMES)) == Const(0.0)


def test_max_rank_sets():
    assert max_rank_check(example_spec("paper-ii"), (0, 0))[0] is False
    ok, det = max_rank_check(example_spec("paper-iii"), (1, 0))
    assert ok is False and det == 0.0
    spec = example_spec("paper-i")
    assert all(max_rank_check(spec, (a, b))[0] for a in np.linspace(-3, 3, 7) for b in np.linspace(-3, 3, 7))


def test_thetas_of_worked_examples():
    x, y = PT
    spec = example_spec("paper-iii")
    np.testing.assert_allclose(theta(spec, PT, 1), [-4 * y * y, 4 * x * y], rtol=1e-14)
    np.testing.assert_allclose(theta(spec, PT, 2), [0.0, 2 * y], rtol=1e-14)
    np.testing.assert_allclose(theta(example_spec("paper-i"), PT, 1), [-1.0, 0.0])
    # single constraint x^2 + y^2: Theta_1 = -2x d/dx - 2y d/dy
    np.testing.assert_allclose(theta(example_spec("paper-ii"), PT, 1), [-2 * x, -2 * y], rtol=1e-14)
    with pytest.raises(IndexError):
        theta(spec, PT, 3)


@pytest.mark.parametrize("lam", [0.5, 1.0, 1.3, 2.0])
@pytest.mark.parametrize("path", ["hodge", "gram"])
def test_closed_forms(lam, path):
    x, y = PT
    assert rel_err(control(example_spec("paper-i", lam), PT, path), control_i(x, y, lam)) < 1e-14
    assert rel_err(control(example_spec("paper-ii", lam), PT, path), control_ii(x, y, lam)) < 1e-13
    f = perturbed_field(example_spec("paper-iii", lam), path)
    assert rel_err(f(PT), perturbed_iii(x, y, lam)) < 1e-13
    g = perturbed_field(example_spec("paper-i", lam), path)
    np.testing.assert_allclose(g(PT), [-lam * x, x * x + y * y - 1], rtol=1e-14)


def test_hand_solved_gram_system():
    spec = ProblemSpec.from_text(NAMES, ["0", "0"], ["x"], [0.0], 1.0)
    np.testing.assert_allclose(control_gram(spec, (2, 5)), [-2.0, 0.0])
    np.testing.assert_allclose(control_hodge(spec, (2, 5)), [-2.0, 0.0])


def test_control_vanishes_on_invariant_level_set():
    spec = example_spec("paper-i", 1.7)
    for y in (-0.9, 0.0, 3.0):
        np.testing.assert_array_equal(control_hodge(spec, (0.0, y)), [0.0, 0.0])


def test_equilibrium_of_example_iii():
    f = perturbed_field(example_spec("paper-iii"))
    np.testing.assert_allclose(f((0.0, 1.0)), [0.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(f((0.0, -1.0)), [0.0, 0.0], atol=1e-15)


def test_outside_max_rank_set():
    spec = example_spec("paper-ii")
    with pytest.raises(NotInMrk):
        control_hodge(spec, (0, 0))
    with pytest.raises(NotInMrk):
        perturbed_field(spec)((0.0, 0.0))
    s = synthesize(spec, (0, 0))
    assert not s.in_mrk and s.control is None and s.theta is None
    assert not perturbed_field(spec).contains((0.0, 0.0))


def test_gram_and_hodge_agree_on_random_specs():
    rng = np.random.default_rng(3)
    for _ in range(40):
        n = int(rng.integers(2, 7))
        spec = random_spec(rng, n, int(rng.integers(1, n + 1)))
        for x in random_mrk_points(rng, spec, 3):
            assert rel_err(control_hodge(spec, x), control_gram(spec, x)) <= 1e-9


def test_control_is_affine_in_gain():
    rng = np.random.default_rng(4)
    spec = random_spec(rng, 4, 2)
    x = random_mrk_points(rng, spec, 1)[0]
    u0, u1, u3 = (control_gram(spec, x, lam) for lam in (0.0, 1.0, 3.0))
    np.testing.assert_allclose(u3 - u0, 3 * (u1 - u0), rtol=1e-10, atol=1e-12)


def test_residual_dynamics_from_control():
    # grad D_i . (X + u) = -lam (D_i - d_i) at any max-rank point
    rng = np.random.default_rng(5)
    for _ in range(20):
        n = int(rng.integers(2, 6))
        spec = random_spec(rng, n, int(rng.integers(1, n + 1)))
        x = random_mrk_points(rng, spec, 1)[0]
        s = synthesize(spec, x, "hodge")
        rate = s.gradients @ perturbed_field(spec)(x)
        np.testing.assert_allclose(rate, -spec.lam * s.residuals, rtol=1e-8, atol=1e-9)


def test_tangent_generators():
    (v,) = tangent_generators(example_spec("paper-i"), PT)
    np.testing.assert_allclose(v, [0.0, 1.0], atol=1e-15)
    assert tangent_generators(example_spec("paper-iii"), PT) == []
    rng = np.random.default_rng(6)
    for _ in range(20):
        n = int(rng.integers(2, 7))
        spec = random_spec(rng, n, int(rng.integers(1, n + 1)))
        x = random_mrk_points(rng, spec, 1)[0]
        T = np.array(tangent_generators(spec, x)).reshape(-1, n)
        assert T.shape == (n - spec.p, n)
        grads = synthesize(spec, x, "gram").gradients
        assert np.max(np.abs(grads @ T.T), initial=0.0) <= 1e-10
        np.testing.assert_allclose(T @ T.T, np.eye(n - spec.p), atol=1e-12)


def test_problem_validation():
    with pytest.raises(ValueError, match="lambda must be > 0"):
        ProblemSpec.from_text(NAMES, DRIFT, ["x"], [0.0], 0.0)
    with pytest.raises(ValueError):
        ProblemSpec.from_text(NAMES, DRIFT, ["x", "y", "x+y"], [0, 0, 0], 1.0)
    with pytest.raises(ValueError):
        ProblemSpec.from_text(NAMES, DRIFT, ["x"], [0.0, 1.0], 1.0)
    with pytest.raises(ValueError):
        ProblemSpec.from_text(NAMES, DRIFT, ["x"], [0.0], 1.0, r_max=-1.0)
    with pytest.raises(ValueError):
        ProblemSpec.from_text(NAMES, DRIFT, ["x"], [0.0], 1.0, rank_tol=1.0)
    with pytest.raises(ValueError):
        perturbed_field(example_spec("paper-i"), "bogus")


def test_rank_tolerance_guard():
    # nearly parallel gradients are rejected once the Gram determinant is tiny
    spec = ProblemSpec.from_text(NAMES, DRIFT, ["x", "x + 1e-7*y"], [0, 0], 1.0)
    assert not max_rank_check(spec, PT)[0]
    loose = ProblemSpec(spec.field, spec.constraints, spec.targets, 1.0, Guards(rank_tol=1e-16))
    assert max_rank_check(loose, PT)[0]


def test_drift_field_and_residual():
    spec = example_spec("paper-ii")
    x, y = PT
    np.testing.assert_allclose(drift_field(spec)(PT), [x * (x * x + y * y - 1), x * x + y * y - 1])
    assert squared_residual(spec, PT) == pytest.approx((x * x + y * y - 1) ** 2)
    F, r = perturbed_field(spec).diagnostics(PT)
    assert F == pytest.approx(squared_residual(spec, PT)) and r.shape == (1,)
