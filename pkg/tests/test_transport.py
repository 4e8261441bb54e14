import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kinlab import transport as T
from kinlab.errors import ArgumentError, SizeError
from kinlab.model import LabelSpace
from kinlab.pde import Grid1D, GridDensity

BERN = LabelSpace.bernoulli(0.5)


def brute_force_w2(x1, s1, x2, s2):
    """Minimum over all n! matchings of the mean squared product cost."""
    C = (np.sum((x1[:, None] - x2[None]) ** 2, axis=-1)
         + np.sum((s1[:, None] - s2[None]) ** 2, axis=-1))
    n = len(x1)
    best = min(C[np.arange(n), list(p)].sum() for p in itertools.permutations(range(n)))
    return math.sqrt(best / n)


def _random_measure(rng, n, d=1, labels=(1.0, 2.0)):
    x = rng.normal(size=(n, d))
    s = rng.choice(labels, size=(n, 1))
    return T.DiscreteMeasure(x, s)


# ---------------------------------------------------------------- DiscreteMeasure

@pytest.mark.parametrize("kw", [dict(x=[0.0, 1.0], s=[1.0]), dict(x=[0.0], s=[1.0], weights=[0.5]),
                                dict(x=[0.0, 1.0], s=[1.0, 1.0], weights=[0.7, 0.7]),
                                dict(x=[np.nan], s=[1.0])])
def test_discrete_measure_rejects_invalid(kw):
    with pytest.raises(ArgumentError):
        T.DiscreteMeasure(**kw)


# ---------------------------------------------------------------- 1D

def test_w2_1d_trivial():
    v = np.random.default_rng(0).random(50)
    assert T.w2_1d(v, v) == 0.0
    assert T.w2_1d([1.5], [-0.5]) == pytest.approx(2.0)


def test_w2_1d_six_points_brute_force():
    rng = np.random.default_rng(1)
    for _ in range(10):
        a, b = rng.normal(size=6), rng.normal(size=6)
        one = np.ones((6, 1))
        assert T.w2_1d(a, b) == pytest.approx(
            brute_force_w2(a[:, None], one, b[:, None], one), abs=1e-12)


def test_w2_1d_weighted_quantile_oracle():
    rng = np.random.default_rng(2)
    v1, v2 = rng.normal(size=7), rng.normal(size=5) + 0.5
    w1, w2 = rng.random(7), rng.random(5)
    w1, w2 = w1 / w1.sum(), w2 / w2.sum()
    u = (np.arange(10 ** 6) + 0.5) / 10 ** 6

    def q(v, w):
        o = np.argsort(v)
        return v[o][np.minimum(np.searchsorted(np.cumsum(w[o]), u), len(v) - 1)]

    oracle = math.sqrt(np.mean((q(v1, w1) - q(v2, w2)) ** 2))
    assert T.w2_1d((v1, w1), (v2, w2)) == pytest.approx(oracle, abs=1e-5)


# ---------------------------------------------------------------- assignment

def test_w2_product_identical_is_zero():
    m = _random_measure(np.random.default_rng(3), 30, d=2)
    assert T.w2_product(m, m) == pytest.approx(0.0, abs=1e-12)


def test_w2_product_single_label_matches_1d():
    rng = np.random.default_rng(4)
    a, b = rng.normal(size=200), rng.normal(size=200)
    ma, mb = T.DiscreteMeasure(a, np.ones(200)), T.DiscreteMeasure(b, np.ones(200))
    assert T.w2_product(ma, mb) == pytest.approx(T.w2_1d(a, b), abs=1e-10)


def test_w2_product_eight_points_brute_force():
    rng = np.random.default_rng(5)
    m1, m2 = _random_measure(rng, 8, d=2), _random_measure(rng, 8, d=2)
    assert T.w2_product(m1, m2) == pytest.approx(brute_force_w2(m1.x, m1.s, m2.x, m2.s),
                                                 abs=1e-12)


def test_w2_product_preconditions():
    rng = np.random.default_rng(6)
    with pytest.raises(ArgumentError):
        T.w2_product(_random_measure(rng, 5), _random_measure(rng, 6))
    w = np.array([0.1, 0.2, 0.7])
    with pytest.raises(ArgumentError):
        T.w2_product(T.DiscreteMeasure([0, 1, 2], [1, 1, 1], w), _random_measure(rng, 3))
    with pytest.raises(SizeError, match="subsample"):
        T.w2_product(_random_measure(rng, 20), _random_measure(rng, 20), max_n=10)


def test_resample_to_match():
    rng = np.random.default_rng(7)
    m = T.DiscreteMeasure(rng.normal(size=50), np.ones(50), np.full(50, 0.02))
    r = T.resample_to_match(m, 2000, rng=1)
    assert r.n == 2000 and r.uniform
    assert T.w2_discrete(m, r) <= 3 * T.mc_floor(2000)


def test_mc_floor():
    assert T.mc_floor(10 ** 4) == pytest.approx(0.1)
    assert T.mc_floor(10 ** 6, d=6) == pytest.approx(0.1)
    with pytest.raises(ArgumentError):
        T.mc_floor(0)


# ---------------------------------------------------------------- labelled and general solvers

@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(1, 6))
def test_labelled_solver_brute_force(seed, n):
    rng = np.random.default_rng(seed)
    m1, m2 = _random_measure(rng, n), _random_measure(rng, n)
    assert T.w2_discrete(m1, m2) == pytest.approx(brute_force_w2(m1.x, m1.s, m2.x, m2.s),
                                                  abs=1e-9)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_label_preserving_shortcut_agrees_with_network_simplex(seed):
    rng = np.random.default_rng(seed)
    n = 40
    x1, x2 = rng.normal(size=n), rng.normal(size=n) + rng.normal()
    lab = np.repeat([0, 1], n // 2)
    w = np.full(n, 1.0 / n)
    D = BERN.sq_dist()
    fast = T._w2sq_labeled(x1, lab, w, x2, lab, w, D)
    C = (x1[:, None] - x2[None]) ** 2 + D[lab[:, None], lab[None]]
    assert fast == pytest.approx(T._emd(w, w, C), abs=1e-10)


def test_general_solver_three_labels_2d():
    rng = np.random.default_rng(8)
    m1 = _random_measure(rng, 6, d=2, labels=(0.0, 1.0, 3.0))
    m2 = _random_measure(rng, 6, d=2, labels=(0.0, 1.0, 3.0))
    assert T.w2_discrete(m1, m2) == pytest.approx(brute_force_w2(m1.x, m1.s, m2.x, m2.s),
                                                  abs=1e-9)


def test_general_solver_size_guard(monkeypatch):
    monkeypatch.setattr(T, "MAX_DENSE", 100)
    rng = np.random.default_rng(9)
    with pytest.raises(SizeError):
        T.w2_discrete(_random_measure(rng, 20, d=2), _random_measure(rng, 21, d=2))


def test_binned_error_bound():
    rng = np.random.default_rng(10)
    m1, m2 = _random_measure(rng, 300), _random_measure(rng, 250)
    exact = T.w2_discrete(m1, m2)
    for dx in (0.1, 0.01):
        b1, b2 = T.binned(m1, dx), T.binned(m2, dx)
        assert b1.n <= m1.n and b1.weights.sum() == pytest.approx(1.0)
        assert abs(T.w2_discrete(b1, b2) - exact) <= dx
    with pytest.raises(ArgumentError):
        T.binned(m1, 0.0)


def test_w2_to_point_product_matches_general_solver():
    rng = np.random.default_rng(11)
    x, lab = rng.normal(size=40), rng.integers(0, 2, size=40)
    fast = T.w2_to_point_product(x, lab, 0.3, BERN)
    pts = T.DiscreteMeasure([0.3, 0.3], [1.0, 2.0], [0.5, 0.5])
    assert fast == pytest.approx(T.w2_discrete(T.DiscreteMeasure.from_labels(x, lab, BERN), pts),
                                 abs=1e-10)
    ls3 = LabelSpace([0.0, 1.0, 3.0], [0.2, 0.3, 0.5])
    lab3 = rng.integers(0, 3, size=40)
    pts3 = T.DiscreteMeasure([0.3] * 3, [0.0, 1.0, 3.0], [0.2, 0.3, 0.5])
    assert T.w2_to_point_product(x, lab3, 0.3, ls3) == pytest.approx(
        T.w2_discrete(T.DiscreteMeasure.from_labels(x, lab3, ls3), pts3), abs=1e-9)


# ---------------------------------------------------------------- metric properties

@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(1, 64), d=st.sampled_from([1, 2]))
def test_metric_axioms(seed, n, d):
    rng = np.random.default_rng(seed)
    a, b, c = (_random_measure(rng, n, d) for _ in range(3))
    ab, ba = T.w2_discrete(a, b), T.w2_discrete(b, a)
    assert abs(ab - ba) <= 1e-10
    assert ab <= T.w2_discrete(a, c) + T.w2_discrete(c, b) + 1e-9
    assert T.w2_discrete(a, a) <= 1e-12


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), lam=st.floats(0.1, 10.0))
def test_scaling(seed, lam):
    rng = np.random.default_rng(seed)
    a, b = _random_measure(rng, 12, 2), _random_measure(rng, 12, 2)
    sa, sb = (T.DiscreteMeasure(lam * m.x, lam * m.s) for m in (a, b))
    assert T.w2_product(sa, sb) == pytest.approx(lam * T.w2_product(a, b), abs=1e-10 * lam)
    assert T.w2_discrete(sa, sb) == pytest.approx(lam * T.w2_discrete(a, b), abs=1e-9 * lam)


# ---------------------------------------------------------------- grid densities

GRID = Grid1D(0.0, 1.0, 40)


def _grid_density(vals, ls=BERN, grid=GRID):
    return GridDensity(vals, grid, ls, mass_tol=None).normalized()


def test_w2_grid_identical():
    nu = _grid_density(np.random.default_rng(12).random((2, 40)))
    assert T.w2_grid(nu, nu) == pytest.approx(0.0, abs=1e-12)


def test_w2_grid_label_uniform_reduces_to_marginals():
    rng = np.random.default_rng(13)
    a = _grid_density(np.tile(rng.random(40), (2, 1)))
    b = _grid_density(np.tile(rng.random(40), (2, 1)))
    c = GRID.centers
    red = T.w2_1d((c, a.marginal()), (c, b.marginal()))
    assert T.w2_grid(a, b) == pytest.approx(red, abs=1e-10)
    full = T.w2_discrete(T.DiscreteMeasure.from_grid(a), T.DiscreteMeasure.from_grid(b))
    assert full == pytest.approx(red, abs=1e-9)


def test_w2_grid_general_pair_matches_discrete_solver():
    rng = np.random.default_rng(14)
    a, b = _grid_density(rng.random((2, 40))), _grid_density(rng.random((2, 40)))
    ref = math.sqrt(T._emd(*[np.asarray(m.weights) for m in
                             (T.DiscreteMeasure.from_grid(a), T.DiscreteMeasure.from_grid(b))],
                           T._cost_matrix(T.DiscreteMeasure.from_grid(a),
                                          T.DiscreteMeasure.from_grid(b))))
    assert T.w2_grid(a, b) == pytest.approx(ref, abs=1e-9)


def test_w2_grid_single_label_indicators():
    grid = Grid1D(-0.05, 1.05, 110)
    one = LabelSpace.single(1.0)
    v0, v1 = np.zeros(110), np.zeros(110)
    v0[np.argmin(np.abs(grid.centers - 0.0))] = 1.0
    v1[np.argmin(np.abs(grid.centers - 1.0))] = 1.0
    d = T.w2_grid(_grid_density(v0, one, grid), _grid_density(v1, one, grid))
    assert d == pytest.approx(1.0, abs=grid.dx)


def test_w2_grid_mismatch():
    a = _grid_density(np.ones((2, 40)))
    with pytest.raises(ArgumentError):
        T.w2_grid(a, _grid_density(np.ones((2, 50)), grid=Grid1D(0.0, 1.0, 50)))
    with pytest.raises(ArgumentError):
        T.w2_grid(a, _grid_density(np.ones((2, 40)), ls=LabelSpace.bernoulli(0.3)))


def test_w2_to_grid_binning_bound():
    rng = np.random.default_rng(15)
    nu = _grid_density(rng.random((2, 40)))
    x, lab = rng.random(300), rng.integers(0, 2, 300)
    exact = T.w2_discrete(T.DiscreteMeasure.from_labels(x, lab, BERN),
                          T.DiscreteMeasure.from_grid(nu))
    assert abs(T.w2_to_grid(x, lab, nu) - exact) <= GRID.dx / 2
