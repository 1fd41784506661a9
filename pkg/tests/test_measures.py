from math import comb

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import cdf_w1, lp_w1
from robust_mfc.lifted import JointDist
from robust_mfc.measures import (
    DimensionError, Dist, FiniteSpace, ValidationError, build_simplex_grid, grid_size, product_cost,
    project_to_grid, project_weights, w1_finite, w1_product, w1_weights,
)

LINE7 = FiniteSpace.from_coords(list(range(1, 8)))
LINE3 = FiniteSpace.from_coords([1, 2, 3])
ACTIONS = FiniteSpace.from_coords([-1, 0, 1])


def prob_vectors(n):
    return arrays(np.float64, n, elements=st.floats(0, 1)).filter(lambda w: w.sum() > 1e-3).map(lambda w: w / w.sum())


def test_space_validation():
    with pytest.raises(ValidationError):
        FiniteSpace.from_coords([1, 1, 2])
    with pytest.raises(ValidationError):
        FiniteSpace.from_coords([0, 1, 2], metric=[[0, 1, 5], [1, 0, 1], [5, 1, 0]])  # triangle
    with pytest.raises(ValidationError):
        FiniteSpace.from_coords([0, 1], metric=[[0, 1], [2, 0]])  # asymmetric
    with pytest.raises(ValidationError):
        FiniteSpace.from_coords([0, 1], metric=[[0, 0], [0, 0]])  # zero off the diagonal


def test_dist_validation():
    with pytest.raises(ValidationError):
        Dist(LINE3, [0.5, 0.5, 0.1])
    with pytest.raises(ValidationError):
        Dist(LINE3, [1.5, -0.5, 0.0])
    with pytest.raises(DimensionError):
        Dist(LINE3, [0.5, 0.5])


def test_w1_examples():
    mu = Dist(LINE7, np.random.default_rng(0).dirichlet(np.ones(7)))
    assert w1_finite(mu, mu) == 0.0
    assert w1_finite(Dist.dirac(LINE7, 1), Dist.dirac(LINE7, 4)) == pytest.approx(3.0, abs=1e-12)
    assert w1_finite(Dist(LINE3, [0.5, 0.5, 0]), Dist(LINE3, [0, 0.5, 0.5])) == pytest.approx(1.0, abs=1e-12)


def test_w1_errors():
    other = FiniteSpace.from_coords([1, 2, 4])
    with pytest.raises(DimensionError):
        w1_finite(Dist.uniform(LINE3), Dist.uniform(other))


def test_w1_product_examples():
    a = np.zeros((7, 3)); a[0, 0] = 1
    b = np.zeros((7, 3)); b[2, 2] = 1
    ja, jb = JointDist(LINE7, ACTIONS, a), JointDist(LINE7, ACTIONS, b)
    assert w1_product(ja, ja) == 0.0
    assert w1_product(ja, jb) == pytest.approx(4.0, abs=1e-12)
    with pytest.raises(DimensionError):
        w1_product(ja, JointDist(LINE3, ACTIONS, np.full((3, 3), 1 / 9)))


def test_w1_product_matches_lp():
    space_s = FiniteSpace.from_coords(list(range(7)))
    cost = product_cost(space_s, ACTIONS)
    gen = np.random.default_rng(1)
    for _ in range(10):
        a, b = gen.dirichlet(np.ones(21) * 0.5), gen.dirichlet(np.ones(21) * 0.5)
        got = w1_product(JointDist(space_s, ACTIONS, a.reshape(7, 3)), JointDist(space_s, ACTIONS, b.reshape(7, 3)))
        assert got == pytest.approx(lp_w1(a, b, cost), abs=1e-8)


@settings(max_examples=60, deadline=None)
@given(prob_vectors(5), prob_vectors(5), prob_vectors(5))
def test_w1_triangle_inequality(a, b, c):
    space = FiniteSpace.from_coords([0.0, 0.5, 2.0, 3.5, 4.0],)
    m, n, r = (Dist(space, x / x.sum()) for x in (a, b, c))
    assert w1_finite(m, r) <= w1_finite(m, n) + w1_finite(n, r) + 1e-9


@settings(max_examples=60, deadline=None)
@given(prob_vectors(6), prob_vectors(6), arrays(np.float64, 6, elements=st.floats(-5, 5), unique=True))
def test_w1_matches_cdf_formula(a, b, coords):
    space = FiniteSpace.from_coords(list(range(6)), coords[:, None])
    got = w1_finite(Dist(space, a / a.sum()), Dist(space, b / b.sum()))
    assert got == pytest.approx(cdf_w1(a / a.sum(), b / b.sum(), coords), abs=1e-10)


@settings(max_examples=40, deadline=None)
@given(prob_vectors(4), prob_vectors(4))
def test_w1_symmetric_and_general_metric(a, b):
    metric = np.array([[0, 1, 2, 2], [1, 0, 1, 2], [2, 1, 0, 1], [2, 2, 1, 0]], float)
    assert w1_weights(a, b, metric) == pytest.approx(w1_weights(b, a, metric), abs=1e-12)
    assert w1_weights(a, b, metric) == pytest.approx(lp_w1(a, b, metric), abs=1e-9)


def test_grid_examples():
    two = FiniteSpace.from_coords([0, 1])
    g = build_simplex_grid(two, 2)
    assert g.points.tolist() == [[0.0, 1.0], [0.5, 0.5], [1.0, 0.0]]
    assert len(build_simplex_grid(LINE3, 2)) == 6
    assert len(build_simplex_grid(LINE7, 10)) == 8008
    with pytest.raises(ValidationError):
        build_simplex_grid(LINE3, 0)


@pytest.mark.parametrize("n", range(1, 9))
def test_grid_size_closed_form(n):
    space = FiniteSpace.from_coords(list(range(n)))
    for k in range(1, 13):
        if comb(k + n - 1, n - 1) > 60000:
            continue
        g = build_simplex_grid(space, k)
        assert len(g) == comb(k + n - 1, n - 1) == grid_size(n, k)
        assert len(np.unique(g.counts, axis=0)) == len(g)
        # canonical order is lexicographic in the integer counts
        assert all(tuple(x) < tuple(y) for x, y in zip(g.counts[:-1], g.counts[1:]))
        assert np.array_equal(g.rank(g.counts), np.arange(len(g)))


@pytest.mark.parametrize("norm", ["W1", "L1"])
def test_projection_fixes_grid_points(norm):
    for space in (LINE3, FiniteSpace.from_coords([0, 1, 2, 3], metric=[[0, 1, 2, 1], [1, 0, 1, 2],
                                                                       [2, 1, 0, 1], [1, 2, 1, 0]])):
        g = build_simplex_grid(space, 4)
        assert np.array_equal(project_weights(g.points, g, norm), np.arange(len(g)))


def test_projection_examples():
    two = FiniteSpace.from_coords([0, 1])
    g = build_simplex_grid(two, 2)
    assert project_to_grid(Dist(two, [0.7, 0.3]), g, "L1") == 1
    g1 = build_simplex_grid(two, 1)
    assert project_to_grid(Dist(two, [0.5, 0.5]), g1, "L1") == 0
    assert project_to_grid(Dist(two, [0.5, 0.5]), g1, "W1") == 0
    with pytest.raises(DimensionError):
        project_to_grid(Dist.uniform(LINE3), g)


def _brute_nearest(w, grid, metric):
    d = np.array([w1_weights(w, p, metric) for p in grid.points])
    return int(np.argmax(d <= d.min() + 1e-12)), d.min()


@settings(max_examples=40, deadline=None)
@given(prob_vectors(4), st.integers(1, 5))
def test_line_projection_is_nearest(w, k):
    space = FiniteSpace.from_coords([0.0, 1.0, 3.0, 4.0])
    g = build_simplex_grid(space, k)
    got = int(project_weights(w, g, "W1"))
    best, dmin = _brute_nearest(w, g, space.metric)
    assert w1_weights(w, g.points[got], space.metric) <= dmin + 1e-9


def test_line_projection_ties_go_to_lowest_index():
    # every grid point at distance 1/4 from (1/2, 1/2) with k=2 is on the line
    space = FiniteSpace.from_coords([0, 1, 2])
    g = build_simplex_grid(space, 2)
    w = np.array([0.25, 0.5, 0.25])
    got = int(project_weights(w, g, "W1"))
    best, _ = _brute_nearest(w, g, space.metric)
    assert got == best
