"""Closed-form stability and convergence estimates, evaluated as curves in t.

Symbols: m strong-convexity modulus, L Lipschitz constant of grad f, K
switching rate, c contraction rate, alpha label weight in the coupling cost,
sigma2 gradient variance sup_x E_s|grad f - grad F|^2, C the initial label
coupling cost (int |s1 - s2|^2 dPi_0)^(1/2).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .errors import ArgumentError, ScheduleError
from .model import (KSchedule, LabelSpace, Potential, argmin_mean_potential,
                    mean_potential_gradient)

__all__ = ["BoundCurve", "stability_bound", "convex_rate", "convex_decay_bound",
           "grazing_bound", "grazing_rate", "concentration_functional",
           "variable_rate_integral", "variable_rate_bound", "check_schedule",
           "gronwall_second_moment_bound", "curve"]


@dataclass
class BoundCurve:
    name: str
    t: np.ndarray
    values: np.ndarray
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float).reshape(-1)
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if self.t.shape != self.values.shape:
            raise ArgumentError("t and values differ in length")
        if np.any(np.diff(self.t) <= 0):
            raise ArgumentError("t must be strictly increasing")
        if np.any(self.values < 0) or not np.all(np.isfinite(self.values)):
            raise ArgumentError("bound values must be finite and nonnegative")

    def __len__(self):
        return self.t.size

    def rows(self):
        return [(float(a), self.name, float(b)) for a, b in zip(self.t, self.values)]

    def log_slope(self, t0=None, t1=None):
        """Least-squares slope of log(value) against t on [t0, t1]."""
        m = np.ones_like(self.t, dtype=bool)
        if t0 is not None:
            m &= self.t >= t0
        if t1 is not None:
            m &= self.t <= t1
        return float(np.polyfit(self.t[m], np.log(self.values[m]), 1)[0])


def curve(name, fn, t, **params):
    """Evaluate ``fn(t, **params)`` on an array of times as a BoundCurve."""
    t = np.asarray(t, dtype=float)
    return BoundCurve(name, t, np.asarray(fn(t, **params), float) * np.ones_like(t), dict(params))


def _scalar_or_array(v):
    v = np.asarray(v, dtype=float)
    return float(v) if v.ndim == 0 else v


def _positive(**kw):
    for k, v in kw.items():
        if not (np.isfinite(v) and v > 0):
            raise ArgumentError("%s must be positive, got %r" % (k, v))


# ------------------------------------------------------------ constant K

def stability_bound(t, L, K, w2_init, w2_mu):
    """W2(rho1(t), rho2(t)) for solutions with different switching laws.

    exp(1.5 L t) W2(rho1(0), rho2(0)) + sqrt(K (exp(3 L t) - 1) / (3 L)) W2(mu1, mu2)
    """
    _positive(L=L)
    t = np.asarray(t, dtype=float)
    out = np.exp(1.5 * L * t) * w2_init + np.sqrt(K * np.expm1(3 * L * t) / (3 * L)) * w2_mu
    return _scalar_or_array(out)


def convex_rate(delta, m, K, L):
    """Rate c = min(2m - delta, K - delta) with one feasible (alpha, eps).

    eps = delta / L, alpha = n L / (eps K) with the smallest integer n > 1
    such that K - L / (alpha eps) >= K - delta.  Returns (c, alpha, eps).
    """
    _positive(delta=delta, m=m, K=K, L=L)
    if not delta < min(2 * m, K):
        raise ArgumentError("need 0 < delta < min(2m, K)")
    c = min(2 * m - delta, K - delta)
    eps = delta / L
    n = max(2, math.ceil(K / delta))
    while K - L / (n * L / (eps * K) * eps) < K - delta:
        n += 1
    alpha = n * L / (eps * K)
    return c, alpha, eps


def convex_decay_bound(t, c, alpha, w2_init, K=0.0, w2_mu=0.0):
    """Contraction estimate for strongly convex f.

    sqrt(max(1,a)/min(1,a)) exp(-c t / 2) w2_init
        + sqrt(a K (1 - exp(-c t)) / (c min(1,a))) w2_mu
    """
    _positive(c=c, alpha=alpha)
    t = np.asarray(t, dtype=float)
    lo, hi = min(1.0, alpha), max(1.0, alpha)
    out = math.sqrt(hi / lo) * np.exp(-0.5 * c * t) * w2_init
    if w2_mu:
        out = out + np.sqrt(alpha * K * -np.expm1(-c * t) / (c * lo)) * w2_mu
    return _scalar_or_array(out)


def grazing_bound(t, m, K, sigma2, w2_init, channel="max"):
    """Distance to the gradient flow of F times mu for F m-strongly convex.

    w2_init exp(r t / 2) + sqrt(sigma2 (1 - exp(-m t)) / m^2), where r is
    max(-m, -K) by default; ``channel`` 'm' or 'K' forces -m or -K.
    """
    _positive(m=m, K=K)
    if sigma2 < 0:
        raise ArgumentError("sigma2 must be nonnegative")
    r = {"max": max(-m, -K), "m": -m, "K": -K}.get(channel)
    if r is None:
        raise ArgumentError("channel must be 'max', 'm' or 'K'")
    t = np.asarray(t, dtype=float)
    out = w2_init * np.exp(0.5 * r * t) + np.sqrt(sigma2 / m * -np.expm1(-m * t) / m)
    return _scalar_or_array(out)


def grazing_rate(t, m, K, L, C):
    """C (L sqrt((exp(-m t) - exp(-K t)) / (m K - m^2)) + exp(-K t / 2)), K > m."""
    _positive(m=m, L=L)
    if not K > m:
        raise ArgumentError("grazing rate needs K > m")
    t = np.asarray(t, dtype=float)
    # exp(-m t) - exp(-K t) = exp(-m t) (1 - exp(-(K - m) t))
    diff = np.exp(-m * t) * -np.expm1(-(K - m) * t)
    out = C * (L * np.sqrt(diff / (m * (K - m))) + np.exp(-0.5 * K * t))
    return _scalar_or_array(out)


# ------------------------------------------------------------ variable K

def check_schedule(schedule: KSchedule):
    """Require int 1/K = inf and int 1/K^2 < inf (affine K with b > 0)."""
    if schedule.kind == "constant" or schedule.b == 0:
        raise ScheduleError("constant K has a divergent integral of 1/K^2")
    if schedule.b < 0:
        raise ScheduleError("decreasing K eventually vanishes")
    if schedule.a <= 0:
        raise ScheduleError("K(0) must be positive")


def variable_rate_integral(t, m, Lambda, epsrel=1e-13):
    """exp(-m t / 2) int_0^t exp(m u / 2 - Lambda(u)) du, by adaptive quadrature."""
    def one(tt):
        if tt <= 0:
            return 0.0
        f = lambda u: math.exp(0.5 * m * (u - tt) - Lambda(u))
        val, _ = integrate.quad(f, 0.0, tt, epsabs=0.0, epsrel=epsrel, limit=500)
        return val
    t = np.asarray(t, dtype=float)
    out = np.vectorize(one, otypes=[float])(t)
    return _scalar_or_array(out)


def variable_rate_bound(t, m, c_const, schedule: KSchedule, w2_init):
    """sqrt(w2_init^2 exp(-m t / 2) + c exp(-m t / 2) int_0^t exp(m u/2 - Lambda(u)) du).

    Lambda(u) = int_0^u K.  The constant c is not determined by the theory
    and must be supplied (the experiments fit it at one early time).
    """
    _positive(m=m)
    if c_const < 0:
        raise ArgumentError("c must be nonnegative")
    check_schedule(schedule)
    t = np.asarray(t, dtype=float)
    I = variable_rate_integral(t, m, lambda u: float(schedule.Lambda(u)))
    out = np.sqrt(w2_init ** 2 * np.exp(-0.5 * m * t) + c_const * I)
    return _scalar_or_array(out)


def concentration_functional(e, p: Potential, ls: LabelSpace, K, C, x_star=None):
    """Empirical E|X - x* - (grad f - grad F)/K|^2 + C/K^2 E|grad f - grad F|^2.

    ``e`` is an Ensemble (or (x, label_index)); K may be a KSchedule, in
    which case it is evaluated at the ensemble time.
    """
    if isinstance(e, tuple):
        x, lab, t = np.asarray(e[0], float), np.asarray(e[1], int), 0.0
    else:
        x, lab, t = e.x, e.label_index, e.time
    if x.ndim == 1:
        x = x[:, None]
    if isinstance(K, KSchedule):
        K = float(K.rate(t))
    _positive(K=K)
    xs = argmin_mean_potential(p, ls) if x_star is None else np.asarray(x_star, float)
    gF = mean_potential_gradient(p, ls, x)
    gf = np.empty_like(x)
    for j in range(ls.M):
        mk = lab == j
        if np.any(mk):
            gf[mk] = p.grad(x[mk], ls.labels[j])
    dev = gf - gF
    a = np.sum((x - xs - dev / K) ** 2, axis=1)
    b = np.sum(dev ** 2, axis=1)
    return float(np.mean(a) + C / K ** 2 * np.mean(b))


# ------------------------------------------------------------ second moments

def gronwall_second_moment_bound(t, m2_0, L, C):
    """m2(0) exp((2L+1) t) + C (exp((2L+1) t) - 1) / (2L + 1).

    C is sup_s |grad f(0, s)| and L a Lipschitz constant of grad f on the
    region the run visits.
    """
    _positive(L=L)
    if C < 0 or m2_0 < 0:
        raise ArgumentError("C and m2_0 must be nonnegative")
    t = np.asarray(t, dtype=float)
    r = 2 * L + 1
    out = m2_0 * np.exp(r * t) + C * np.expm1(r * t) / r
    return _scalar_or_array(out)
