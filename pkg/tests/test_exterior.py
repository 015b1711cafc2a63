import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stab.exterior import (
    DimensionMismatch,
    GradeError,
    GradeVector,
    Multivector,
    hodge,
    norm_sq,
    vector_embed,
    vector_extract,
    wedge,
    wedge_all,
)

E = Multivector.blade


def test_basis_wedge():
    assert wedge(E(2, [1]), E(2, [2])).allclose(E(2, [1, 2]))
    assert E(2, [1, 2]).coeffs[0b11] == 1.0
    assert norm_sq(wedge(E(2, [1]), E(2, [1]))) == 0.0
    assert E(2, [2, 1]).coeffs[0b11] == -1.0


def test_gradient_wedge_value():
    # grad x = (1, 0), grad (x^2 + y^2) = (2x, 2y) at (3, 4)
    w = wedge(vector_embed([1.0, 0.0]), vector_embed([6.0, 8.0]))
    assert w.allclose(E(2, [1, 2], 8.0))
    assert norm_sq(w) == pytest.approx(64.0)


def test_hodge_plane():
    assert hodge(E(2, [1])).allclose(E(2, [2]))
    assert hodge(E(2, [2])).allclose(-E(2, [1]))
    assert hodge(E(2, [1, 2])).allclose(Multivector.scalar(2))
    assert hodge(Multivector.scalar(2)).allclose(E(2, [1, 2]))
    v = vector_embed([0.3, -1.7])
    assert hodge(hodge(v)).allclose(-v)


def test_hodge_space():
    assert hodge(E(3, [1, 2])).allclose(E(3, [3]))
    assert hodge(E(3, [2, 3])).allclose(E(3, [1]))
    assert hodge(E(3, [1, 3])).allclose(-E(3, [2]))


def test_hodge_matches_definition():
    # a ^ *b = <a, b> vol for same-grade blades
    n = 4
    vol = E(n, range(1, n + 1))
    for g in range(n + 1):
        for idx in itertools.combinations(range(1, n + 1), g):
            a = E(n, idx)
            assert wedge(a, hodge(a)).allclose(vol)


def test_norms():
    assert norm_sq(E(3, [1], 3.0)) == 9.0
    assert norm_sq(E(2, []) * 0 + E(2, [1]) + E(2, [1, 2])) == 2.0


def test_embed_extract():
    np.testing.assert_array_equal(vector_extract(vector_embed([1.0, 2.0])), [1.0, 2.0])
    with pytest.raises(GradeError):
        vector_extract(E(2, [1, 2]))
    assert norm_sq(vector_embed(np.zeros(3))) == 0.0
    with pytest.raises(ValueError):
        vector_embed([])


def test_extract_tolerates_rounding_dust():
    c = vector_embed([1.0, 2.0, 3.0]).coeffs.copy()
    c[0b111] = 1e-16
    np.testing.assert_array_equal(vector_extract(Multivector(3, c)), [1.0, 2.0, 3.0])


def test_dimension_mixing_is_an_error():
    with pytest.raises(DimensionMismatch):
        wedge(E(2, [1]), E(3, [1]))
    with pytest.raises(DimensionMismatch):
        E(2, [1]) + E(3, [1])


def test_construction_validates():
    with pytest.raises(ValueError):
        Multivector(2, np.zeros(3))
    with pytest.raises(ValueError):
        Multivector(0, np.zeros(1))
    with pytest.raises(ValueError):
        E(2, [3])


def test_coefficients_are_immutable_copies():
    src = np.zeros(4)
    mv = Multivector(2, src)
    src[0] = 5.0
    assert mv.coeffs[0] == 0.0
    with pytest.raises(ValueError):
        mv.coeffs[0] = 1.0
    with pytest.raises(ValueError):
        wedge(mv, mv).coeffs[0] = 1.0


def test_grade_vector_roundtrip():
    a = Multivector(3, np.arange(8.0))
    g2 = GradeVector.of(a, 2)
    assert g2.blades == (3, 5, 6)
    assert g2.embed().allclose(a.grade_part(2))
    assert a.grade_part(2).grades() == {2}


def test_wedge_all_empty_is_unit():
    assert wedge_all([], 3).allclose(Multivector.scalar(3))


def _homogeneous(draw, n, g):
    vals = draw(st.lists(st.floats(-3, 3), min_size=1 << n, max_size=1 << n))
    return Multivector(n, vals).grade_part(g)


@st.composite
def graded_pair(draw):
    n = draw(st.integers(1, 6))
    j = draw(st.integers(0, n))
    k = draw(st.integers(0, n))
    return _homogeneous(draw, n, j), j, _homogeneous(draw, n, k), k


@settings(max_examples=200, deadline=None)
@given(graded_pair())
def test_graded_anticommutativity(case):
    a, j, b, k = case
    assert wedge(a, b).allclose((-1) ** (j * k) * wedge(b, a), rtol=1e-10, atol=1e-10)


@settings(max_examples=200, deadline=None)
@given(graded_pair())
def test_double_hodge_sign(case):
    a, g, _, _ = case
    n = a.dim
    assert hodge(hodge(a)).allclose((-1) ** (g * (n - g)) * a)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 6).flatmap(
    lambda n: st.tuples(st.just(n), st.integers(1, n)).flatmap(
        lambda nk: st.lists(st.lists(st.floats(-2, 2), min_size=nk[0], max_size=nk[0]),
                            min_size=nk[1], max_size=nk[1]))))
def test_gram_determinant_norm(rows):
    V = np.array(rows)
    w = wedge_all([vector_embed(v) for v in V], V.shape[1])
    det = float(np.linalg.det(V @ V.T))
    assert abs(norm_sq(w) - det) <= 1e-12 * max(float(np.prod(np.sum(V * V, axis=1))), 1e-300)


@settings(max_examples=100, deadline=None)
@given(graded_pair(), st.floats(-2, 2))
def test_bilinearity(case, k):
    a, _, b, _ = case
    assert wedge(a * k + b, b).allclose(wedge(a, b) * k + wedge(b, b), rtol=1e-10, atol=1e-9)


def test_large_dimension_uses_direct_signs():
    n = 10
    a, b = E(n, [1, 9]), E(n, [10, 2])
    assert wedge(a, b).allclose(E(n, [1, 9, 10, 2]))
    assert wedge(a, b).allclose(wedge(b, a))
