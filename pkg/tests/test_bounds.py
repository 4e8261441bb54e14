import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kinlab import bounds as B
from kinlab.errors import ArgumentError, ScheduleError
from kinlab.model import KSchedule, LabelSpace, Potential

mp.mp.dps = 50


# ---------------------------------------------------------------- 50-digit references

def mp_stability(t, L, K, a, b):
    t, L, K, a, b = map(mp.mpf, (t, L, K, a, b))
    return mp.e ** (1.5 * L * t) * a + mp.sqrt(K * (mp.e ** (3 * L * t) - 1) / (3 * L)) * b


def mp_convex_decay(t, c, alpha, a, K, b):
    t, c, alpha, a, K, b = map(mp.mpf, (t, c, alpha, a, K, b))
    lo, hi = min(1, alpha), max(1, alpha)
    return (mp.sqrt(hi / lo) * mp.e ** (-c * t / 2) * a
            + mp.sqrt(alpha * K * (1 - mp.e ** (-c * t)) / (c * lo)) * b)


def mp_grazing(t, m, K, s2, a):
    t, m, K, s2, a = map(mp.mpf, (t, m, K, s2, a))
    return a * mp.e ** (max(-m, -K) * t / 2) + mp.sqrt(s2 / m * (1 - mp.e ** (-m * t)) / m)


def mp_grazing_rate(t, m, K, L, C):
    t, m, K, L, C = map(mp.mpf, (t, m, K, L, C))
    return C * (L * mp.sqrt((mp.e ** (-m * t) - mp.e ** (-K * t)) / (m * K - m ** 2))
                + mp.e ** (-K * t / 2))


def mp_gronwall(t, m2, L, C):
    t, m2, L, C = map(mp.mpf, (t, m2, L, C))
    r = 2 * L + 1
    return m2 * mp.e ** (r * t) + C * (mp.e ** (r * t) - 1) / r


def _rel(a, b):
    return abs(mp.mpf(a) - b) / abs(b)


RNG = np.random.default_rng(20)
POINTS = [tuple(RNG.uniform(0.1, 3.0, size=6)) for _ in range(20)]


@pytest.mark.parametrize("p", POINTS)
def test_evaluators_match_high_precision(p):
    t, L, K, a, b, c = p
    assert _rel(B.stability_bound(t, L, K, a, b), mp_stability(t, L, K, a, b)) <= 1e-12
    assert _rel(B.convex_decay_bound(t, c, L, a, K, b), mp_convex_decay(t, c, L, a, K, b)) <= 1e-12
    assert _rel(B.grazing_bound(t, c, K, b, a), mp_grazing(t, c, K, b, a)) <= 1e-12
    m, KK = min(c, K), max(c, K) + 0.1
    assert _rel(B.grazing_rate(t, m, KK, L, a), mp_grazing_rate(t, m, KK, L, a)) <= 1e-12
    assert _rel(B.gronwall_second_moment_bound(t, a, L, b), mp_gronwall(t, a, L, b)) <= 1e-12


# ---------------------------------------------------------------- stability

def test_stability_examples():
    assert B.stability_bound(0.0, 1.0, 4.0, 0.1, 0.2) == pytest.approx(0.1, abs=1e-15)
    assert B.stability_bound(2.0, 1.5, 4.0, 0.1, 0.0) == pytest.approx(0.1 * math.exp(4.5))
    val = B.stability_bound(1.0, 1.0, 4.0, 0.1, 0.2)
    assert _rel(val, mp_stability(1, 1, 4, 0.1, 0.2)) <= 1e-14
    assert val == pytest.approx(1.45707688230708, rel=1e-12)
    with pytest.raises(ArgumentError):
        B.stability_bound(1.0, 0.0, 4.0, 0.1, 0.2)


# ---------------------------------------------------------------- convex rate

def test_convex_rate_examples():
    c, alpha, eps = B.convex_rate(0.5, 1.0, 10.0, 2.0)
    assert c == 1.5
    c2, _, _ = B.convex_rate(0.5, 10.0, 1.0, 2.0)
    assert c2 == 0.5


@settings(max_examples=100, deadline=None)
@given(m=st.floats(0.1, 10), K=st.floats(0.1, 50), L=st.floats(0.1, 20), frac=st.floats(0.01, 0.99))
def test_convex_rate_feasible(m, K, L, frac):
    delta = frac * min(2 * m, K)
    c, alpha, eps = B.convex_rate(delta, m, K, L)
    assert c == pytest.approx(min(2 * m - delta, K - delta))
    assert eps * L - 2 * m < 0
    assert L / eps - alpha * K < 0
    assert K - L / (alpha * eps) >= K - delta - 1e-12 * K


@pytest.mark.parametrize("delta, m, K", [(2.0, 1.0, 10.0), (1.0, 10.0, 1.0), (0.0, 1.0, 1.0),
                                         (-0.1, 1.0, 1.0)])
def test_convex_rate_infeasible(delta, m, K):
    with pytest.raises(ArgumentError):
        B.convex_rate(delta, m, K, 1.0)


def test_convex_decay_examples():
    assert B.convex_decay_bound(0.0, 1.5, 1.0, 0.3) == pytest.approx(0.3)
    t = np.linspace(0, 10, 41)
    cur = B.curve("decay", B.convex_decay_bound, t, c=1.5, alpha=3.0, w2_init=0.3)
    assert cur.log_slope() == pytest.approx(-0.75, abs=1e-12)
    assert np.all(np.diff(cur.values) < 0)
    with pytest.raises(ArgumentError):
        B.convex_decay_bound(1.0, 0.0, 1.0, 0.3)


# ---------------------------------------------------------------- grazing

def test_grazing_bound_examples():
    assert B.grazing_bound(0.0, 1.0, 100.0, 1.0, 0.4) == pytest.approx(0.4)
    assert B.grazing_bound(200.0, 2.0, 100.0, 0.25, 0.4) == pytest.approx(0.25, rel=1e-12)
    v = B.grazing_bound(2.0, 1.0, 100.0, 1.0, 0.4)
    assert _rel(v, mp_grazing(2, 1, 100, 1, 0.4)) <= 1e-14
    # channel options pick the decay exponent explicitly
    assert B.grazing_bound(2.0, 1.0, 0.5, 0.0, 1.0, channel="K") == pytest.approx(math.exp(-0.5))
    assert B.grazing_bound(2.0, 1.0, 0.5, 0.0, 1.0, channel="m") == pytest.approx(math.exp(-1.0))
    assert B.grazing_bound(2.0, 1.0, 0.5, 0.0, 1.0) == pytest.approx(math.exp(-0.5))
    with pytest.raises(ArgumentError):
        B.grazing_bound(1.0, 1.0, 1.0, -1.0, 0.1)
    with pytest.raises(ArgumentError):
        B.grazing_bound(1.0, 1.0, 1.0, 1.0, 0.1, channel="both")


def test_grazing_rate_examples():
    assert B.grazing_rate(0.0, 1.0, 10.0, 2.0, 0.7) == pytest.approx(0.7)
    assert B.grazing_rate(1.0, 1.0, 1e12, 2.0, 0.7) < 1e-5
    ratio = B.grazing_rate(1.0, 1.0, 10.0, 2.0, 1.0) / B.grazing_rate(1.0, 1.0, 1000.0, 2.0, 1.0)
    assert 10 / 1.5 <= ratio <= 10 * 1.5
    with pytest.raises(ArgumentError):
        B.grazing_rate(1.0, 2.0, 2.0, 1.0, 1.0)


@settings(max_examples=50, deadline=None)
@given(t=st.floats(0.01, 20), m=st.floats(0.1, 5), k1=st.floats(0.2, 50), dk=st.floats(0.1, 50))
def test_grazing_rate_decreasing_in_K(t, m, k1, dk):
    K1 = m + k1
    K2 = K1 + dk
    assert B.grazing_rate(t, m, K2, 2.0, 1.0) <= B.grazing_rate(t, m, K1, 2.0, 1.0) * (1 + 1e-12)


# ---------------------------------------------------------------- variable K

def test_check_schedule():
    B.check_schedule(KSchedule.affine(1.0, 1.0))
    for s in (KSchedule.constant(3.0), KSchedule.affine(1.0, 0.0)):
        with pytest.raises(ScheduleError):
            B.check_schedule(s)
    with pytest.raises(ScheduleError):
        B.variable_rate_bound(1.0, 1.0, 1.0, KSchedule.constant(1.0), 0.5)


@pytest.mark.parametrize("m", [0.5, 1.0, 3.0])
def test_variable_rate_integral_closed_form(m):
    t = np.array([0.5, 2.0, 7.0])
    got = B.variable_rate_integral(t, m, lambda u: u)
    a = 0.5 * m - 1.0
    ref = np.exp(-0.5 * m * t) * (t if a == 0 else np.expm1(a * t) / a)
    np.testing.assert_allclose(got, ref, rtol=1e-8, atol=0)


def test_variable_rate_bound_affine_schedule():
    sched = KSchedule.affine(1.0, 1.0)
    t = np.array([0.0, 1.0, 5.0, 20.0, 60.0])
    v = B.variable_rate_bound(t, 2.0, 0.3, sched, 0.5)
    assert v[0] == pytest.approx(0.5)
    assert np.all(np.diff(v) < 0) and v[-1] < 1e-10
    # quadrature against the 50-digit integral, Lambda(u) = u + u^2 / 2
    mref = mp.sqrt(0.25 * mp.e ** (-5) + 0.3 * mp.e ** (-5)
                   * mp.quad(lambda u: mp.e ** (u - u - u ** 2 / 2), [0, 5]))
    assert _rel(v[2], mref) <= 1e-10
    with pytest.raises(ArgumentError):
        B.variable_rate_bound(1.0, 2.0, -1.0, sched, 0.5)


# ---------------------------------------------------------------- concentration functional

def test_concentration_at_common_minimizer():
    p = Potential.scaled_quadratic()
    ls = LabelSpace.bernoulli(0.5)
    x = np.zeros(50)
    lab = np.repeat([0, 1], 25)
    assert B.concentration_functional((x, lab), p, ls, 3.0, 1.0) == 0.0
    one = LabelSpace.single(1.0)
    qw = Potential.quadratic_well()
    assert B.concentration_functional((np.ones(10), np.zeros(10, int)), qw, one, 2.0, 1.0) == \
        pytest.approx(0.0, abs=1e-16)


def test_concentration_large_K_limit():
    rng = np.random.default_rng(21)
    p, ls = Potential.quadratic_well(), LabelSpace.bernoulli(0.5)
    x, lab = rng.uniform(1, 2, 400), rng.integers(0, 2, 400)
    xs = 5.0 / 3.0
    target = np.mean((x - xs) ** 2)
    for K in (1e2, 1e4):
        val = B.concentration_functional((x, lab), p, ls, K, 1.0)
        assert abs(val - target) <= 10.0 / K
    sched = KSchedule.affine(1.0, 1.0)
    assert B.concentration_functional((x, lab), p, ls, sched, 1.0) == \
        pytest.approx(B.concentration_functional((x, lab), p, ls, 1.0, 1.0))


def test_concentration_manual_formula():
    p, ls = Potential.quadratic_well(), LabelSpace.bernoulli(0.5)
    x = np.array([1.2, 1.9, 1.5])
    lab = np.array([0, 1, 1])
    s = np.array([1.0, 2.0, 2.0])
    gf = s * (x - s)
    gF = 0.5 * (x - 1) + 0.5 * 2 * (x - 2)
    K, C = 4.0, 2.0
    ref = np.mean((x - 5 / 3 - (gf - gF) / K) ** 2) + C / K ** 2 * np.mean((gf - gF) ** 2)
    assert B.concentration_functional((x, lab), p, ls, K, C, x_star=[5 / 3]) == \
        pytest.approx(ref, rel=1e-12)
    # default x* comes from the iterative minimiser of F
    assert B.concentration_functional((x, lab), p, ls, K, C) == pytest.approx(ref, rel=1e-8)


# ---------------------------------------------------------------- curves

def test_bound_curve_invariants():
    with pytest.raises(ArgumentError):
        B.BoundCurve("x", [0, 1], [1.0])
    with pytest.raises(ArgumentError):
        B.BoundCurve("x", [1, 0], [1.0, 1.0])
    with pytest.raises(ArgumentError):
        B.BoundCurve("x", [0, 1], [1.0, -1.0])
    c = B.curve("g", B.gronwall_second_moment_bound, [0.0, 1.0], m2_0=1.0, L=1.0, C=0.0)
    assert c.rows() == [(0.0, "g", 1.0), (1.0, "g", pytest.approx(math.exp(3)))]
    assert len(c) == 2 and c.params["L"] == 1.0


def test_concentration_on_variable_rate_run():
    from kinlab.experiments import fig4
    rep = fig4()
    times = np.asarray(rep.results["times"])
    for name in ("quadratic_well", "scaled_quadratic"):
        conc = np.asarray(rep.results[name]["concentration"])
        late = conc[times >= times[-1] / 2]
        assert np.all(np.diff(late) <= 0), name
        assert conc[-1] <= 1e-2, (name, conc[-1])
