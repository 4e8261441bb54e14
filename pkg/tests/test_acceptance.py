"""End-to-end acceptance criteria 1-10.

Each test prints one ``CRITERION n PASS|FAIL`` line with the measured values,
then asserts the same condition.  Tolerances are the stated ones; criteria
that the methods cannot meet are left failing rather than relaxed.
"""
import itertools
import math
import time

import mpmath as mp
import numpy as np
import pytest

from kinlab import bounds as B, experiments as E, stationary as S, transport as T
from kinlab.model import InitialLaw, KSchedule, LabelSpace, Potential, ProblemSpec
from kinlab.particles import label_chi2_pvalue, simulate
from kinlab.pde import Grid1D, admissible_dt, solve

QW = Potential.quadratic_well()
BERN = LabelSpace.bernoulli(0.5)


@pytest.fixture
def emit(capsys):
    def _emit(n, ok, detail):
        with capsys.disabled():
            print("\nCRITERION %d %s: %s" % (n, "PASS" if ok else "FAIL", detail))
        return ok
    return _emit


def _fig1_spec(T_end, record_times=()):
    return ProblemSpec(QW, BERN, KSchedule.constant(5.0), InitialLaw.uniform([0.5], [2.5]),
                       horizon=T_end, seed=1, record_times=tuple(record_times))


def _checks(rep):
    return {c.name: c for c in rep.checks}


# ---------------------------------------------------------------- 1

def test_criterion_01_mass_conservation(emit):
    t0 = time.perf_counter()
    grid = Grid1D(0.0, 3.0, 2000)
    dt = 0.9 * admissible_dt(grid, QW, BERN)
    T_end = 1e4 * dt
    sol = solve(_fig1_spec(T_end, np.linspace(0, T_end, 101)), grid, dt=dt)
    wall = time.perf_counter() - t0
    ok = sol.n_steps >= 10 ** 4 and sol.max_mass_error <= 1e-8 and wall < 30
    assert emit(1, ok, "steps=%d max|mass-1|=%.2e runtime=%.1fs"
                % (sol.n_steps, sol.max_mass_error, wall))


# ---------------------------------------------------------------- 2

def test_criterion_02_exponential_convergence(emit):
    t0 = time.perf_counter()
    rep = E.fig1()
    wall = time.perf_counter() - t0
    c, _, _ = B.convex_rate(0.1, 1.0, 5.0, rep.results["L"])
    thr = -c / 2 + 0.05
    slope = rep.results["slope"]
    ok = slope <= thr and wall < 60
    assert emit(2, ok, "slope=%.4f threshold=%.4f (c=%.3f) runtime=%.1fs"
                % (slope, thr, c, wall))


# ---------------------------------------------------------------- 3

def test_criterion_03_stationary_cross_validation(emit):
    t0 = time.perf_counter()
    K = 8.0
    eps = [0.4, 0.2, 0.1, 0.05, 0.025]
    spec = ProblemSpec(QW, BERN, KSchedule.constant(K), InitialLaw.uniform([0.5], [2.5]),
                       horizon=50.0, seed=1)

    def states(n):
        g = Grid1D(0.0, 3.0, n)
        return {"analytic": S.analytic_quadratic_stationary(K, g),
                "eigensolver": S.vanishing_viscosity(eps, g, QW, BERN, K),
                "pde_longrun": S.pde_longrun(spec, g, T=50.0)}

    fine, coarse = states(2000), states(1000)
    wall = time.perf_counter() - t0
    pair = {(a, b): T.w2_grid(fine[a].density, fine[b].density)
            for a, b in itertools.combinations(fine, 2)}
    res = {k: fine[k].residual for k in fine}
    ratio = {k: fine[k].residual / coarse[k].residual for k in fine}
    # first-order halving, with 20% slack on the factor 1/2
    ok = (all(v <= 0.03 for v in pair.values()) and all(v <= 1e-3 * K for v in res.values())
          and all(v <= 0.6 for v in ratio.values()) and wall < 120)
    detail = ("W2 " + ", ".join("%s/%s=%.4f" % (a, b, v) for (a, b), v in pair.items())
              + "; residual " + ", ".join("%s=%.2e" % kv for kv in res.items())
              + " (limit %.0e)" % (1e-3 * K)
              + "; halving ratio " + ", ".join("%s=%.2f" % kv for kv in ratio.items())
              + "; runtime=%.1fs" % wall)
    assert emit(3, ok, detail)


# ---------------------------------------------------------------- 4

def test_criterion_04_grazing_limit(emit):
    t0 = time.perf_counter()
    rep = E.fig3()
    wall = time.perf_counter() - t0
    ck = _checks(rep)
    at1 = ck["decreasing_in_K"].value
    ok = rep.passed and wall < 120
    assert emit(4, ok, "W2(t=1) for K=10,1e3,1e9: %s; ratio=%.2f in [5, 20]; floor+0.02=%.4f; "
                "runtime=%.1fs" % (", ".join("%.4f" % v for v in at1), rep.results["ratio"],
                                   rep.results["mc_floor"] + 0.02, wall))


# ---------------------------------------------------------------- 5

def test_criterion_05_variable_learning_rate(emit):
    t0 = time.perf_counter()
    rep = E.fig4()
    wall = time.perf_counter() - t0
    ck = _checks(rep)
    ok = rep.passed and wall < 60
    assert emit(5, ok, "final W2 QuadraticWell=%.4f ScaledQuadratic=%.4f (limit 0.05); "
                "concentration decreasing: %s/%s; runtime=%.1fs"
                % (ck["final_w2_quadratic_well"].value, ck["final_w2_scaled_quadratic"].value,
                   ck["concentration_decreasing_quadratic_well"].passed,
                   ck["concentration_decreasing_scaled_quadratic"].passed, wall))


# ---------------------------------------------------------------- 6

def test_criterion_06_support_geometry(emit):
    t0 = time.perf_counter()
    rep = E.ex48()
    wall = time.perf_counter() - t0
    ck = _checks(rep)
    ok = ck["v01_near_segment"].passed and ck["v11_off_hull"].passed and wall < 120
    assert emit(6, ok, "v=(0,1) near fraction=%.4f (>=0.99); v=(1,1) far fraction=%.4f "
                "(>=0.05); runtime=%.1fs" % (ck["v01_near_segment"].value,
                                            ck["v11_off_hull"].value, wall))


# ---------------------------------------------------------------- 7

def _brute_force(m1, m2):
    C = (np.sum((m1.x[:, None] - m2.x[None]) ** 2, axis=-1)
         + np.sum((m1.s[:, None] - m2.s[None]) ** 2, axis=-1))
    n = m1.n
    perms = np.array(list(itertools.permutations(range(n))))
    return math.sqrt(C[np.arange(n), perms].sum(axis=1).min() / n)


def test_criterion_07_ot_exactness(emit):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)

    def meas(n, d):
        return T.DiscreteMeasure(rng.normal(size=(n, d)), rng.choice([1.0, 2.0], size=n))

    worst = 0.0
    for _ in range(200):
        n, d = int(rng.integers(1, 9)), int(rng.integers(1, 3))
        a, b = meas(n, d), meas(n, d)
        worst = max(worst, abs(T.w2_product(a, b) - _brute_force(a, b)))
    sym = tri = ident = 0.0
    for _ in range(1000):
        n, d = int(rng.integers(1, 65)), int(rng.integers(1, 3))
        a, b, c = meas(n, d), meas(n, d), meas(n, d)
        ab = T.w2_discrete(a, b)
        sym = max(sym, abs(ab - T.w2_discrete(b, a)))
        tri = max(tri, ab - T.w2_discrete(a, c) - T.w2_discrete(c, b))
        ident = max(ident, T.w2_discrete(a, a))
    wall = time.perf_counter() - t0
    ok = worst <= 1e-12 and sym <= 1e-10 and tri <= 1e-9 and ident <= 1e-12 and wall < 60
    assert emit(7, ok, "max |assignment - brute force|=%.1e; symmetry=%.1e triangle excess=%.1e "
                "identity=%.1e; runtime=%.1fs" % (worst, sym, tri, ident, wall))


# ---------------------------------------------------------------- 8

def test_criterion_08_bound_fidelity(emit):
    t0 = time.perf_counter()
    mp.mp.dps = 50
    rng = np.random.default_rng(8)
    e = mp.e
    worst = {}

    def rel(name, got, ref):
        worst[name] = max(worst.get(name, 0.0), float(abs(mp.mpf(got) - ref) / abs(ref)))

    for _ in range(20):
        t, L, K, a, b, m = rng.uniform(0.1, 3.0, size=6)
        alpha, c = rng.uniform(0.2, 5.0, size=2)
        T_, L_, K_, a_, b_, m_, al_, c_ = map(mp.mpf, (t, L, K, a, b, m, alpha, c))
        rel("stability", B.stability_bound(t, L, K, a, b),
            e ** (1.5 * L_ * T_) * a_ + mp.sqrt(K_ * (e ** (3 * L_ * T_) - 1) / (3 * L_)) * b_)
        lo, hi = min(1, al_), max(1, al_)
        rel("convex_decay", B.convex_decay_bound(t, c, alpha, a, K, b),
            mp.sqrt(hi / lo) * e ** (-c_ * T_ / 2) * a_
            + mp.sqrt(al_ * K_ * (1 - e ** (-c_ * T_)) / (c_ * lo)) * b_)
        rel("grazing_bound", B.grazing_bound(t, m, K, b, a),
            a_ * e ** (max(-m_, -K_) * T_ / 2) + mp.sqrt(b_ / m_ * (1 - e ** (-m_ * T_)) / m_))
        KK = m_ + K_
        rel("grazing_rate", B.grazing_rate(t, m, float(KK), L, a),
            a_ * (L_ * mp.sqrt((e ** (-m_ * T_) - e ** (-KK * T_)) / (m_ * KK - m_ ** 2))
                  + e ** (-KK * T_ / 2)))
        sched = KSchedule.affine(K, alpha)
        integral = mp.quad(lambda u: e ** (m_ * u / 2 - K_ * u - al_ * u ** 2 / 2), [0, T_])
        rel("variable_rate", B.variable_rate_bound(t, m, c, sched, a),
            mp.sqrt(a_ ** 2 * e ** (-m_ * T_ / 2) + c_ * e ** (-m_ * T_ / 2) * integral))
        r = 2 * L_ + 1
        rel("gronwall", B.gronwall_second_moment_bound(t, a, L, b),
            a_ * e ** (r * T_) + b_ * (e ** (r * T_) - 1) / r)
    wall = time.perf_counter() - t0
    ok = len(worst) == 6 and max(worst.values()) <= 1e-12 and wall < 5
    assert emit(8, ok, "max relative error " + ", ".join("%s=%.1e" % kv for kv in worst.items())
                + "; runtime=%.1fs" % wall)


# ---------------------------------------------------------------- 9

def test_criterion_09_label_marginal_invariance(emit):
    times = np.linspace(0.0, 10.0, 11)
    spec = _fig1_spec(10.0, times)
    rec = simulate(spec, 10 ** 5)
    pv = [label_chi2_pvalue(lab, BERN) for lab in rec.label_indices]
    sol = solve(spec, Grid1D(0.0, 3.0, 1000))
    lm = np.array([s.label_masses() for s in sol])
    dev = float(np.max(np.abs(lm - lm[0])))
    ok = min(pv) >= 1e-3 and dev <= 1e-12
    assert emit(9, ok, "min chi-square p-value=%.4f over %d record times (>=1e-3); "
                "pde label-mass drift=%.1e (<=1e-12)" % (min(pv), len(pv), dev))


# ---------------------------------------------------------------- 10

def _box_lipschitz(lo, hi):
    # |D(s (x - s))| = sqrt(s^2 + (x - 2s)^2) is convex, so its box maximum sits at a corner
    return max(math.hypot(s, x - 2 * s) for x in (lo, hi) for s in (1.0, 2.0))


def test_criterion_10_gronwall_envelope(emit):
    rng = np.random.default_rng(10)
    worst = worst_pos = -np.inf
    for i in range(10):
        lo = float(rng.uniform(-3.0, 1.5))
        hi = lo + float(rng.uniform(0.1, 3.0))
        ls = LabelSpace.bernoulli(float(rng.uniform(0.1, 0.9)))
        spec = ProblemSpec(QW, ls, KSchedule.constant(float(rng.uniform(0.5, 20.0))),
                           InitialLaw.uniform([lo], [hi]), horizon=3.0, seed=100 + i,
                           record_times=tuple(np.linspace(0.0, 3.0, 16)))
        rec = simulate(spec, 5000)
        # the flow never leaves the hull of the initial support and the minimisers {1, 2}
        L = _box_lipschitz(min(lo, 1.0), max(hi, 2.0))
        C = 4.0  # sup_s |grad f(0, s)| = max s^2
        m2 = np.asarray(rec.second_moments)
        env = B.gronwall_second_moment_bound(np.asarray(rec.times), m2[0], L, C)
        worst = max(worst, float(np.max(m2 / env)))
        worst_pos = max(worst_pos, float(np.max(m2[1:] / env[1:])))
    ok = worst <= 1.0
    assert emit(10, ok, "max second moment / envelope=%.3e over 10 runs (<=1; t=0 is equality), "
                "%.3e for t>0" % (worst, worst_pos))
