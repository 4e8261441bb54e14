"""Exact Wasserstein-2 distances on R^d x S.

The ground cost is |x1 - x2|^2 + |s1 - s2|^2.  Three exact solvers are used:

* 1D measures: monotone rearrangement of step quantile functions.
* Equal-weight point sets: linear assignment (scipy).
* 1D positions with finitely many labels (grid densities, binned
  ensembles): the label-preserving monotone plan is tried first and
  certified optimal by an explicit dual solution; otherwise the dense
  transportation problem is solved by network simplex.
* General discrete measures: network simplex on the full cost matrix.
"""
from __future__ import annotations

import math
import os

import numpy as np
import scipy.sparse as sps
from scipy.optimize import linear_sum_assignment, linprog

from .errors import ArgumentError, NumericError, SizeError

__all__ = [
    "DiscreteMeasure", "w2_1d", "w2_product", "w2_discrete", "w2_grid",
    "w2_to_grid", "w2_to_point_product", "resample_to_match", "mc_floor", "binned",
]

MAX_ASSIGNMENT = 4096
MAX_DENSE = 16_000_000
EMD_MAX_ITER = 10 ** 9


class DiscreteMeasure:
    """Weighted atoms (x_i, s_i) in R^d x R^m."""

    def __init__(self, x, s, weights=None):
        x = np.asarray(x, float)
        if x.ndim == 1:
            x = x[:, None]
        s = np.asarray(s, float)
        if s.ndim == 1:
            s = s[:, None]
        n = x.shape[0]
        if s.shape[0] != n:
            raise ArgumentError("x and s must have the same number of points")
        if weights is None:
            w = np.full(n, 1.0 / n)
        else:
            w = np.asarray(weights, float).ravel()
            if w.shape[0] != n:
                raise ArgumentError("weights have the wrong length")
            if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
                raise ArgumentError("weights must be nonnegative and sum to 1")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(s))):
            raise ArgumentError("points must be finite")
        self.x, self.s, self.weights = x, s, w

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def uniform(self):
        return np.all(self.weights == self.weights[0])

    @classmethod
    def from_labels(cls, x, label_index, ls, weights=None):
        label_index = np.asarray(label_index, int)
        return cls(x, ls.labels[label_index], weights)

    @classmethod
    def from_grid(cls, nu):
        """Cell centres x labels, weights dx mu_j nu_ij (zero cells dropped)."""
        w = nu.grid.dx * nu.labels.weights[:, None] * nu.values
        j, i = np.nonzero(w > 0)
        ww = w[j, i]
        return cls(nu.grid.centers[i], nu.labels.labels[j], ww / ww.sum())


def mc_floor(n, d=1):
    """Statistical floor of empirical W2 on R^d x S for n samples.

    The label histogram of n samples deviates from mu by O(n^{-1/2}); that
    mass must change label, which costs O(n^{-1/4}) in W2.  This term
    dominates for d <= 4; beyond that the spatial n^{-1/d} rate takes over.
    """
    if n < 1:
        raise ArgumentError("n must be positive")
    return float(n) ** (-1.0 / max(4, d))


# ---------------------------------------------------------------------------
# 1D

def _as_1d(q):
    if isinstance(q, DiscreteMeasure):
        if q.x.shape[1] != 1:
            raise ArgumentError("w2_1d needs one spatial dimension")
        return q.x[:, 0], q.weights
    if isinstance(q, tuple) and len(q) == 2:
        v = np.asarray(q[0], float).ravel()
        w = np.asarray(q[1], float).ravel()
        if v.shape != w.shape:
            raise ArgumentError("values and weights differ in shape")
        return v, w
    v = np.asarray(q, float).ravel()
    return v, np.full(v.shape[0], 1.0 / max(v.shape[0], 1))


def _sorted_cdf(v, w):
    keep = w > 0
    v, w = v[keep], w[keep]
    order = np.argsort(v, kind="stable")
    v, w = v[order], w[order]
    c = np.cumsum(w)
    c /= c[-1]
    c[-1] = 1.0
    return v, c


def _w2sq_1d(v1, w1, v2, w2):
    v1, c1 = _sorted_cdf(v1, w1)
    v2, c2 = _sorted_cdf(v2, w2)
    u = np.union1d(c1, c2)
    du = np.diff(np.concatenate([[0.0], u]))
    i1 = np.minimum(np.searchsorted(c1, u, side="left"), v1.size - 1)
    i2 = np.minimum(np.searchsorted(c2, u, side="left"), v2.size - 1)
    return float(np.sum(du * (v1[i1] - v2[i2]) ** 2))


def w2_1d(q1, q2):
    """W2 between two 1D measures given as samples, (values, weights) or
    one-dimensional DiscreteMeasures (labels ignored)."""
    v1, w1 = _as_1d(q1)
    v2, w2 = _as_1d(q2)
    if v1.size == 0 or v2.size == 0:
        raise ArgumentError("empty measure")
    return math.sqrt(max(_w2sq_1d(v1, w1, v2, w2), 0.0))


# ---------------------------------------------------------------------------
# assignment

def _cost_matrix(m1, m2):
    cx = np.sum((m1.x[:, None, :] - m2.x[None, :, :]) ** 2, axis=-1)
    cs = np.sum((m1.s[:, None, :] - m2.s[None, :, :]) ** 2, axis=-1)
    return cx + cs


def w2_product(m1: DiscreteMeasure, m2: DiscreteMeasure, max_n=MAX_ASSIGNMENT):
    """Exact W2 between equal-size, equal-weight point sets (assignment)."""
    if m1.n != m2.n:
        raise ArgumentError("point counts differ; use resample_to_match")
    if not (m1.uniform and m2.uniform):
        raise ArgumentError("w2_product needs uniform weights")
    if m1.n > max_n:
        raise SizeError("n=%d exceeds %d; subsample (Monte Carlo floor %.3g at n=%d)"
                        % (m1.n, max_n, mc_floor(max_n, m1.x.shape[1]), max_n))
    C = _cost_matrix(m1, m2)
    r, c = linear_sum_assignment(C)
    return math.sqrt(max(float(C[r, c].sum()) / m1.n, 0.0))


def resample_to_match(m: DiscreteMeasure, n, rng=None):
    """Systematic resampling of m to n equal-weight points.

    Adds a resampling error of the order of mc_floor(n, d) in W2.
    """
    rng = np.random.default_rng(rng)
    c = np.cumsum(m.weights)
    c[-1] = 1.0
    u = (np.arange(n) + rng.random()) / n
    idx = np.minimum(np.searchsorted(c, u, side="right"), m.n - 1)
    return DiscreteMeasure(m.x[idx], m.s[idx])


# ---------------------------------------------------------------------------
# 1D x finite labels

def _envelope_min(slope, icpt, q):
    """min_l (slope_l q + icpt_l) and the argmin, for every query q."""
    order = np.lexsort((icpt, -slope))
    a, b = slope[order], icpt[order]
    hull = []
    for k in range(a.size):
        if hull and a[hull[-1]] == a[k]:
            continue
        while len(hull) >= 2:
            h1, h2 = hull[-2], hull[-1]
            # drop h2 if the new line overtakes h1 before h2 does
            if (b[k] - b[h1]) * (a[h1] - a[h2]) <= (b[h2] - b[h1]) * (a[h1] - a[k]):
                hull.pop()
            else:
                break
        hull.append(k)
    hull = np.asarray(hull)
    ha, hb = a[hull], b[hull]
    bp = (hb[1:] - hb[:-1]) / (ha[:-1] - ha[1:])
    pos = np.searchsorted(bp, q, side="right")
    val = ha[pos] * q + hb[pos]
    return val, order[hull[pos]]


def _nw_corner(a, b):
    """North-west corner plan for sorted atoms; returns edges and flows."""
    na, nb = a.size, b.size
    ei = np.empty(na + nb - 1, int)
    el = np.empty(na + nb - 1, int)
    fl = np.empty(na + nb - 1)
    ra, rb = a[0], b[0]
    i = l = 0
    k = 0
    while True:
        f = min(ra, rb)
        ei[k], el[k], fl[k] = i, l, f
        k += 1
        if i == na - 1 and l == nb - 1:
            break
        if (ra <= rb and i < na - 1) or l == nb - 1:
            rb -= f
            i += 1
            ra = a[i]
        else:
            ra -= f
            l += 1
            rb = b[l]
    return ei[:k], el[:k], fl[:k]


def _staircase_potentials(x, y, ei, el):
    """Potentials u, v with u_i + v_l = (x_i - y_l)^2 on the staircase."""
    u = np.zeros(x.size)
    v = np.zeros(y.size)
    v[el[0]] = (x[ei[0]] - y[el[0]]) ** 2
    for k in range(1, ei.size):
        i, l = ei[k], el[k]
        c = (x[i] - y[l]) ** 2
        if i != ei[k - 1]:
            u[i] = c - v[l]
        else:
            v[l] = c - u[i]
    return u, v


class _Labeled1D:
    """Atoms on R with finitely many labels, grouped and sorted per label."""

    def __init__(self, x, lab, w, M):
        self.M = M
        self.x, self.w, self.off = [], [], [0]
        for j in range(M):
            sel = (lab == j) & (w > 0)
            xj, wj = x[sel], w[sel]
            o = np.argsort(xj, kind="stable")
            self.x.append(xj[o])
            self.w.append(wj[o])
            self.off.append(self.off[-1] + xj.size)

    @property
    def mass(self):
        return np.array([wj.sum() for wj in self.w])

    def label_array(self):
        return np.repeat(np.arange(self.M), [a.size for a in self.x])


def _label_preserving(P, Q, D, tol):
    """Try the label-preserving monotone plan; return cost if certified."""
    M = P.M
    cost = 0.0
    pots = []
    for j in range(M):
        if P.x[j].size == 0:
            pots.append((np.zeros(0), np.zeros(0)))
            continue
        a = P.w[j]
        b = Q.w[j] * (a.sum() / Q.w[j].sum())
        ei, el, fl = _nw_corner(a, b)
        cost += float(np.sum(fl * (P.x[j][ei] - Q.x[j][el]) ** 2))
        pots.append(_staircase_potentials(P.x[j], Q.x[j], ei, el))
    # slack matrix between labels, shifts solve x_j - x_k <= w_jk
    W = np.zeros((M, M))
    for j in range(M):
        if P.x[j].size == 0:
            continue
        u = pots[j][0]
        for k in range(M):
            if Q.x[k].size == 0:
                continue
            v = pots[k][1]
            val, arg = _envelope_min(-2.0 * Q.x[k], Q.x[k] ** 2 - v, P.x[j])
            W[j, k] = float(np.min(P.x[j] ** 2 + val + D[j, k] - u))
    if np.any(np.diag(W) < -tol):
        return None
    dist = W.copy()
    np.fill_diagonal(dist, 0.0)
    for k in range(M):
        dist = np.minimum(dist, dist[:, k:k + 1] + dist[k:k + 1, :])
    if np.any(np.diag(dist) < -tol):
        return None
    return cost


def _emd(a, b, C):
    """Exact transport cost by network simplex (POT)."""
    os.environ.setdefault("POT_BACKEND_DISABLE_PYTORCH", "1")
    os.environ.setdefault("POT_BACKEND_DISABLE_TENSORFLOW", "1")
    os.environ.setdefault("POT_BACKEND_DISABLE_JAX", "1")
    os.environ.setdefault("POT_BACKEND_DISABLE_CUPY", "1")
    import ot
    a = np.ascontiguousarray(a / a.sum())
    b = np.ascontiguousarray(b / b.sum())
    G, log = ot.emd(a, b, np.ascontiguousarray(C), numItermax=EMD_MAX_ITER, log=True)
    if log.get("warning"):
        raise NumericError("network simplex did not finish: %s" % log["warning"])
    return max(float(np.sum(G * C)), 0.0)


def _check_size(ns, nt):
    if ns * nt > MAX_DENSE:
        raise SizeError("transport problem too large (%d x %d atoms); bin the measures "
                        "first, e.g. with transport.binned" % (ns, nt))


def _dense_labeled(P, Q, D):
    xs, ws, ls_ = np.concatenate(P.x), np.concatenate(P.w), P.label_array()
    ys, wt, lt = np.concatenate(Q.x), np.concatenate(Q.w), Q.label_array()
    _check_size(xs.size, ys.size)
    C = (xs[:, None] - ys[None, :]) ** 2 + D[ls_[:, None], lt[None, :]]
    return _emd(ws, wt, C)


def _w2sq_labeled(x1, l1, w1, x2, l2, w2, D):
    M = D.shape[0]
    P = _Labeled1D(x1, l1, w1 / w1.sum(), M)
    Q = _Labeled1D(x2, l2, w2 / w2.sum(), M)
    scale = max(1.0, float(np.max(np.abs(np.concatenate([x1, x2])))) ** 2, float(D.max()))
    tol = 1e-9 * scale
    pm, qm = P.mass, Q.mass
    if np.all(np.abs(pm - qm) <= 1e-10) and np.all((pm > 0) == (qm > 0)):
        c = _label_preserving(P, Q, D, tol)
        if c is not None:
            return c
    return _dense_labeled(P, Q, D)


def _label_index(m: DiscreteMeasure, labels):
    idx = np.full(m.n, -1)
    for j, s in enumerate(labels):
        idx[np.all(m.s == s, axis=1)] = j
    return idx


def w2_discrete(m1: DiscreteMeasure, m2: DiscreteMeasure):
    """Exact W2 between general discrete measures.

    One spatial dimension with finitely many distinct labels uses the
    labelled solver; otherwise equal-weight sets use assignment and the
    rest the network simplex on the dense cost matrix.
    """
    if m1.x.shape[1] != m2.x.shape[1] or m1.s.shape[1] != m2.s.shape[1]:
        raise ArgumentError("dimension mismatch")
    if m1.x.shape[1] == 1:
        labels = np.unique(np.concatenate([m1.s, m2.s]), axis=0)
        if labels.shape[0] <= 16:
            D = np.sum((labels[:, None, :] - labels[None, :, :]) ** 2, axis=-1)
            c = _w2sq_labeled(m1.x[:, 0], _label_index(m1, labels), m1.weights,
                              m2.x[:, 0], _label_index(m2, labels), m2.weights, D)
            return math.sqrt(max(c, 0.0))
    if m1.n == m2.n and m1.uniform and m2.uniform and m1.n <= MAX_ASSIGNMENT:
        return w2_product(m1, m2)
    _check_size(m1.n, m2.n)
    return math.sqrt(_emd(m1.weights, m2.weights, _cost_matrix(m1, m2)))


def binned(m: DiscreteMeasure, dx, origin=0.0):
    """Merge atoms into cells of width dx (per label), placed at cell centres.

    Each atom moves by at most dx/2 (in every coordinate), so
    |W2(binned(m1), binned(m2)) - W2(m1, m2)| <= sqrt(d) * dx.
    """
    if not dx > 0:
        raise ArgumentError("dx must be positive")
    cell = np.floor((m.x - origin) / dx)
    key = np.concatenate([cell, m.s], axis=1)
    uniq, inv = np.unique(key, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    w = np.bincount(inv, weights=m.weights, minlength=uniq.shape[0])
    d = m.x.shape[1]
    return DiscreteMeasure(origin + (uniq[:, :d] + 0.5) * dx, uniq[:, d:], w)


def _same_grid(g1, g2):
    return g1.a == g2.a and g1.b == g2.b and g1.n_cells == g2.n_cells


def _is_label_uniform(nu):
    nb = nu.labels.weights @ nu.values
    return np.all(np.abs(nu.values - nb) <= 1e-12 * max(1.0, float(nb.max())))


def w2_grid(nu1, nu2):
    """Exact product-space W2 between two GridDensities on the same grid."""
    if not _same_grid(nu1.grid, nu2.grid):
        raise ArgumentError("grids differ")
    if nu1.labels != nu2.labels:
        raise ArgumentError("label spaces differ")
    g, ls = nu1.grid, nu1.labels
    if _is_label_uniform(nu1) and _is_label_uniform(nu2):
        m1 = ls.weights @ nu1.values
        m2 = ls.weights @ nu2.values
        return w2_1d((g.centers, m1), (g.centers, m2))
    M = ls.M
    lab = np.repeat(np.arange(M), g.n_cells)
    x = np.tile(g.centers, M)
    w1 = (g.dx * ls.weights[:, None] * nu1.values).ravel()
    w2 = (g.dx * ls.weights[:, None] * nu2.values).ravel()
    c = _w2sq_labeled(x, lab, w1, x, lab, w2, ls.sq_dist())
    return math.sqrt(max(c, 0.0))


def w2_to_grid(x, label_index, nu, weights=None):
    """W2 between weighted particles (1D positions) and a GridDensity.

    Particles are first binned to the cell centres of ``nu``'s grid, which
    moves each by at most dx/2 and so changes W2 by at most dx/2.
    """
    g, ls = nu.grid, nu.labels
    x = np.asarray(x, float).reshape(-1)
    label_index = np.asarray(label_index, int)
    w = np.full(x.size, 1.0 / x.size) if weights is None else np.asarray(weights, float)
    cell = np.clip(np.floor((x - g.a) / g.dx).astype(int), 0, g.n_cells - 1)
    M = ls.M
    hist = np.zeros(M * g.n_cells)
    np.add.at(hist, label_index * g.n_cells + cell, w)
    lab = np.repeat(np.arange(M), g.n_cells)
    xc = np.tile(g.centers, M)
    w2 = (g.dx * ls.weights[:, None] * nu.values).ravel()
    c = _w2sq_labeled(xc, lab, hist, xc, lab, w2, ls.sq_dist())
    return math.sqrt(max(c, 0.0))


def _label_ot(p, q, D):
    """Optimal transport cost between two label distributions."""
    M = p.size
    if M == 1:
        return 0.0
    if M == 2:
        return abs(p[0] - q[0]) * D[0, 1]
    rows = np.concatenate([np.repeat(np.arange(M), M), M + np.tile(np.arange(M), M)])
    A = sps.csc_matrix((np.ones(2 * M * M), (rows, np.concatenate([np.arange(M * M)] * 2))),
                       shape=(2 * M, M * M))
    res = linprog(D.ravel(), A_eq=A, b_eq=np.concatenate([p, q]), bounds=(0, None),
                  method="highs-ds")
    return float(res.fun)


def w2_to_point_product(x, label_index, y0, ls, weights=None):
    """Exact W2 between weighted particles and delta_{y0} x mu.

    All target mass sits at y0, so the spatial and label parts decouple:
    W2^2 = E|X - y0|^2 + OT cost between the label histogram and mu.
    """
    x = np.asarray(x, float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, float)
    label_index = np.asarray(label_index, int)
    spatial = float(np.sum(w * np.sum((x - np.asarray(y0, float)) ** 2, axis=1)))
    hist = np.bincount(label_index, weights=w, minlength=ls.M)
    return math.sqrt(spatial + _label_ot(hist / hist.sum(), np.asarray(ls.weights),
                                         ls.sq_dist()))
