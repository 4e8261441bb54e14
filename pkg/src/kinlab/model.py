"""Potentials, label spaces, switching schedules and problem specifications.

Conventions
-----------
* Points ``x`` live in R^d and labels ``s`` in R^m.  Vectorised calls take
  ``x`` with shape ``(..., d)`` and ``s`` with shape ``(..., m)``.
* ``LabelSpace.bernoulli(p)`` puts weight ``p`` on the label ``s = 2`` and
  ``1 - p`` on ``s = 1``.  With the quadratic well this is the orientation
  for which the mean potential at ``p = 0.5`` is minimised at ``x = 5/3``.
"""
from __future__ import annotations

import importlib
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ArgumentError, ConfigError, ConvergenceError, NumericError

__all__ = [
    "LabelSpace", "Potential", "KSchedule", "InitialLaw", "ProblemSpec",
    "mean_potential", "mean_potential_gradient", "argmin_mean_potential",
    "estimate_lipschitz", "estimate_sigma2", "resolve_callable",
]


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


class LabelSpace:
    """Finite label set ``s_1..s_M`` in R^m with probability weights ``mu``."""

    def __init__(self, labels, weights):
        lab = np.asarray(labels, dtype=float)
        if lab.ndim == 1:
            lab = lab[:, None]
        w = np.asarray(weights, dtype=float).ravel()
        if lab.ndim != 2 or lab.shape[0] < 1:
            raise ArgumentError("need at least one label")
        if w.shape[0] != lab.shape[0]:
            raise ArgumentError("labels and weights differ in length")
        if not np.all(np.isfinite(lab)):
            raise ArgumentError("labels must be finite")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ArgumentError("weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ArgumentError("weights sum to %r, not 1" % w.sum())
        M = lab.shape[0]
        for i in range(M):
            for j in range(i + 1, M):
                if np.array_equal(lab[i], lab[j]):
                    raise ArgumentError("labels must be pairwise distinct")
        self._labels = _frozen(lab)
        self._weights = _frozen(w)

    @classmethod
    def bernoulli(cls, p):
        """Labels (1, 2) with weights (1 - p, p)."""
        if not 0.0 <= p <= 1.0:
            raise ArgumentError("p must lie in [0, 1]")
        return cls([1.0, 2.0], [1.0 - p, p])

    @classmethod
    def single(cls, s):
        return cls([s], [1.0])

    @property
    def labels(self):
        return self._labels

    @property
    def weights(self):
        return self._weights

    @property
    def M(self):
        return self._labels.shape[0]

    @property
    def m(self):
        return self._labels.shape[1]

    def sq_dist(self):
        """Matrix of squared label distances |s_j - s_k|^2."""
        diff = self._labels[:, None, :] - self._labels[None, :, :]
        return np.sum(diff ** 2, axis=-1)

    def permuted(self, perm):
        perm = np.asarray(perm)
        return LabelSpace(self._labels[perm], self._weights[perm])

    def to_dict(self):
        lab = self._labels[:, 0].tolist() if self.m == 1 else self._labels.tolist()
        return {"labels": lab, "weights": self._weights.tolist()}

    @classmethod
    def from_dict(cls, d):
        if "bernoulli" in d:
            return cls.bernoulli(float(d["bernoulli"]))
        return cls(d["labels"], d["weights"])

    def __eq__(self, other):
        return (isinstance(other, LabelSpace)
                and np.array_equal(self._labels, other._labels)
                and np.array_equal(self._weights, other._weights))

    def __hash__(self):
        return hash((self._labels.tobytes(), self._weights.tobytes()))

    def __repr__(self):
        return "LabelSpace(labels=%s, weights=%s)" % (
            self._labels.tolist(), self._weights.tolist())


def resolve_callable(path):
    """Import ``"package.module:attr"`` and return the attribute."""
    if callable(path):
        return path
    if not isinstance(path, str) or ":" not in path:
        raise ConfigError("expected an import path 'module:function', got %r" % (path,))
    mod, attr = path.split(":", 1)
    try:
        obj = importlib.import_module(mod)
        for part in attr.split("."):
            obj = getattr(obj, part)
    except (ImportError, AttributeError) as exc:
        raise ConfigError("cannot resolve %r: %s" % (path, exc)) from exc
    if not callable(obj):
        raise ConfigError("%r is not callable" % (path,))
    return obj


_KINDS = ("QuadraticWell", "ScaledQuadratic", "AnisotropicQuadratic2D", "Custom")


class Potential:
    """Label-dependent potential f(x, s) with its x-gradient.

    Built-in kinds have gradients of the form ``H(s) * (x - c(s))`` with a
    diagonal ``H``; ``linear_structure`` exposes ``(H, c)`` so that flows can
    be integrated exactly.  ``AnisotropicQuadratic2D`` is defined for
    ``s in [1, 2]`` by linear interpolation between its two labels, which is
    only needed for Lipschitz estimates over conv(S).
    """

    def __init__(self, kind, params=None, f=None, grad=None):
        if kind not in _KINDS:
            raise ArgumentError("unknown potential kind %r" % (kind,))
        self.kind = kind
        self.params = dict(params or {})
        if kind == "AnisotropicQuadratic2D":
            a = np.asarray(self.params.get("A_diag", [1 / math.sqrt(2), 1.0]), float)
            v = np.asarray(self.params.get("v", [1.0, 1.0]), float)
            if a.shape != (2,) or v.shape != (2,):
                raise ArgumentError("A_diag and v must have length 2")
            self.params["A_diag"] = a.tolist()
            self.params["v"] = v.tolist()
            self._a2 = a ** 2
            self._v = v
            self.dim, self.label_dim = 2, 1
        elif kind == "Custom":
            f = f if f is not None else self.params.get("f")
            grad = grad if grad is not None else self.params.get("grad")
            if f is None or grad is None:
                raise ArgumentError("Custom potential needs f and grad")
            self._f = resolve_callable(f)
            self._g = resolve_callable(grad)
            self.dim = int(self.params.get("dim", 1))
            self.label_dim = int(self.params.get("label_dim", 1))
        else:
            self.dim, self.label_dim = 1, 1

    # constructors
    @classmethod
    def quadratic_well(cls):
        """f = (s/2)|x - s|^2."""
        return cls("QuadraticWell")

    @classmethod
    def scaled_quadratic(cls):
        """f = s x^2."""
        return cls("ScaledQuadratic")

    @classmethod
    def anisotropic_2d(cls, v=(1.0, 1.0), A_diag=(1 / math.sqrt(2), 1.0)):
        """f(x,1) = |x|^2, f(x,2) = |A(x - v)|^2 with diagonal A."""
        return cls("AnisotropicQuadratic2D", {"A_diag": list(A_diag), "v": list(v)})

    @classmethod
    def custom(cls, f, grad, dim=1, label_dim=1):
        params = {"dim": dim, "label_dim": label_dim}
        if isinstance(f, str):
            params["f"] = f
        if isinstance(grad, str):
            params["grad"] = grad
        return cls("Custom", params, f=f, grad=grad)

    @property
    def has_linear_flow(self):
        return self.kind != "Custom"

    def _prep(self, x, s):
        x = np.asarray(x, dtype=float)
        s = np.asarray(s, dtype=float)
        if x.ndim == 0 or (x.shape[-1] != self.dim):
            x = x[..., None] if self.dim == 1 else x
        if s.ndim == 0 or (s.shape[-1] != self.label_dim):
            s = s[..., None] if self.label_dim == 1 else s
        return x, s

    def linear_structure(self, s):
        """Return ``(H, c)`` with ``grad f(x, s) = H * (x - c)``.

        ``s`` has shape ``(..., m)``; outputs have shape ``(..., d)``.
        """
        s = np.asarray(s, dtype=float)
        if self.kind == "QuadraticWell":
            return s.copy(), s.copy()
        if self.kind == "ScaledQuadratic":
            return 2.0 * s, np.zeros_like(s)
        if self.kind == "AnisotropicQuadratic2D":
            lam = s[..., :1] - 1.0
            H = 2.0 * (1.0 - lam) + 2.0 * lam * self._a2
            with np.errstate(divide="ignore", invalid="ignore"):
                c = np.where(H != 0, 2.0 * lam * self._a2 * self._v / H, 0.0)
            return H, c
        raise ArgumentError("Custom potentials have no linear structure")

    def value(self, x, s):
        x, s = self._prep(x, s)
        if self.kind == "QuadraticWell":
            out = 0.5 * s[..., 0] * (x[..., 0] - s[..., 0]) ** 2
        elif self.kind == "ScaledQuadratic":
            out = s[..., 0] * x[..., 0] ** 2
        elif self.kind == "AnisotropicQuadratic2D":
            lam = s[..., 0] - 1.0
            f1 = np.sum(x ** 2, axis=-1)
            f2 = np.sum(self._a2 * (x - self._v) ** 2, axis=-1)
            out = (1.0 - lam) * f1 + lam * f2
        else:
            out = np.asarray(self._f(x, s), dtype=float)
        return out

    def grad(self, x, s):
        x, s = self._prep(x, s)
        if self.kind == "Custom":
            g = np.asarray(self._g(x, s), dtype=float)
            return np.broadcast_to(g, np.broadcast_shapes(g.shape, x.shape)).copy()
        H, c = self.linear_structure(s)
        return H * (x - c)

    def minimizers(self, labels):
        """Label-wise minimisers, shape (M, d); None for Custom kinds."""
        labels = np.asarray(labels, dtype=float)
        if labels.ndim == 1:
            labels = labels[:, None]
        if self.kind == "Custom":
            return None
        return self.linear_structure(labels)[1]

    def to_dict(self):
        d = {"kind": self.kind}
        params = {k: v for k, v in self.params.items()}
        if self.kind == "Custom":
            for k in ("f", "grad"):
                if not isinstance(params.get(k), str):
                    params.pop(k, None)
        if params:
            d["params"] = params
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], d.get("params", {}))

    def __repr__(self):
        return "Potential(%r, %r)" % (self.kind, self.params)


class KSchedule:
    """Switching rate K(t): ``Constant(K)`` or ``Affine(a, b)`` with K = a + b t."""

    def __init__(self, kind, a, b=0.0):
        a, b = float(a), float(b)
        if kind not in ("constant", "affine"):
            raise ArgumentError("schedule kind must be 'constant' or 'affine'")
        if not (math.isfinite(a) and math.isfinite(b)):
            raise ArgumentError("schedule parameters must be finite")
        if a <= 0:
            raise ArgumentError("K(0) must be positive")
        if kind == "constant":
            b = 0.0
        if b < 0:
            raise ArgumentError("affine slope must be nonnegative")
        self.kind, self.a, self.b = kind, a, b

    @classmethod
    def constant(cls, K):
        return cls("constant", K)

    @classmethod
    def affine(cls, a, b):
        return cls("affine", a, b)

    def rate(self, t):
        return self.a + self.b * np.asarray(t, dtype=float)

    def Lambda(self, t):
        """Cumulative rate integral from 0 to t."""
        t = np.asarray(t, dtype=float)
        return self.a * t + 0.5 * self.b * t * t

    def increment(self, t, dt):
        """Lambda(t + dt) - Lambda(t) without cancellation."""
        t = np.asarray(t, dtype=float)
        return dt * (self.a + self.b * (t + 0.5 * dt))

    def invert(self, t, E):
        """Duration tau >= 0 with Lambda(t + tau) - Lambda(t) = E."""
        t = np.asarray(t, dtype=float)
        E = np.asarray(E, dtype=float)
        k = self.a + self.b * t
        if self.b == 0.0:
            return E / k
        # rationalised root of b tau^2 / 2 + k tau - E = 0
        return 2.0 * E / (k + np.sqrt(k * k + 2.0 * self.b * E))

    def to_dict(self):
        if self.kind == "constant":
            return {"kind": "constant", "K": self.a}
        return {"kind": "affine", "a": self.a, "b": self.b}

    @classmethod
    def from_dict(cls, d):
        if d["kind"] == "constant":
            return cls.constant(d["K"])
        return cls.affine(d["a"], d["b"])

    def __repr__(self):
        return "KSchedule(%r, a=%r, b=%r)" % (self.kind, self.a, self.b)


@dataclass(frozen=True)
class InitialLaw:
    """Initial law descriptor.

    kind ``point``: all mass at ``x``; ``uniform``: uniform on the box
    ``[low, high]``; ``grid``: a tabulated density (``values`` of shape
    (M, n_cells) on ``[a, b]``, or a ``path`` to a grid CSV).  For point and
    uniform laws ``label_weights`` defaults to the label weights mu.
    """
    kind: str
    x: Optional[tuple] = None
    low: Optional[tuple] = None
    high: Optional[tuple] = None
    label_weights: Optional[tuple] = None
    domain: Optional[tuple] = None
    values: Optional[tuple] = None
    path: Optional[str] = None

    def __post_init__(self):
        if self.kind not in ("point", "uniform", "grid"):
            raise ArgumentError("initial kind must be point, uniform or grid")
        if self.kind == "point" and self.x is None:
            raise ArgumentError("point initial law needs x")
        if self.kind == "uniform":
            if self.low is None or self.high is None:
                raise ArgumentError("uniform initial law needs low and high")
            if np.any(np.asarray(self.high, float) <= np.asarray(self.low, float)):
                raise ArgumentError("uniform box must have high > low")
        if self.kind == "grid" and self.values is None and self.path is None:
            raise ArgumentError("grid initial law needs values or path")
        if self.label_weights is not None:
            w = np.asarray(self.label_weights, float)
            if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
                raise ArgumentError("initial label marginal must sum to 1")

    @classmethod
    def point(cls, x, label_weights=None):
        return cls("point", x=tuple(np.atleast_1d(np.asarray(x, float)).tolist()),
                   label_weights=None if label_weights is None else tuple(label_weights))

    @classmethod
    def uniform(cls, low, high, label_weights=None):
        return cls("uniform", low=tuple(np.atleast_1d(np.asarray(low, float)).tolist()),
                   high=tuple(np.atleast_1d(np.asarray(high, float)).tolist()),
                   label_weights=None if label_weights is None else tuple(label_weights))

    @classmethod
    def grid(cls, domain, values):
        vals = np.asarray(values, float)
        return cls("grid", domain=tuple(float(v) for v in domain),
                   values=tuple(map(tuple, vals.tolist())))

    def grid_table(self):
        """Return (a, b, values[M, n]) for grid laws."""
        if self.values is not None:
            return self.domain[0], self.domain[1], np.asarray(self.values, float)
        from .io import read_grid_csv
        return read_grid_csv(self.path)

    def resolved_label_weights(self, ls: LabelSpace):
        if self.kind == "grid":
            a, b, vals = self.grid_table()
            if vals.shape[0] != ls.M:
                raise ArgumentError("grid initial law has wrong number of labels")
            dx = (b - a) / vals.shape[1]
            w = dx * ls.weights * vals.sum(axis=1)
            return w / w.sum()
        if self.label_weights is None:
            return np.array(ls.weights)
        w = np.asarray(self.label_weights, float)
        if w.shape[0] != ls.M:
            raise ArgumentError("initial label marginal has wrong length")
        return w

    def sample(self, n, rng, ls: LabelSpace, dim=1):
        """Draw n iid (x, label_index) pairs."""
        w = self.resolved_label_weights(ls)
        cdf = np.cumsum(w)
        cdf[-1] = 1.0
        lab = np.searchsorted(cdf, rng.random(n), side="right")
        lab = np.minimum(lab, ls.M - 1)
        if self.kind == "point":
            x = np.broadcast_to(np.asarray(self.x, float), (n, dim)).copy()
        elif self.kind == "uniform":
            lo = np.asarray(self.low, float)
            hi = np.asarray(self.high, float)
            x = lo + (hi - lo) * rng.random((n, dim))
        else:
            a, b, vals = self.grid_table()
            ncell = vals.shape[1]
            dx = (b - a) / ncell
            x = np.empty((n, 1))
            u = rng.random(n)
            v = rng.random(n)
            for j in range(ls.M):
                idx = np.nonzero(lab == j)[0]
                if idx.size == 0:
                    continue
                c = np.cumsum(vals[j])
                if c[-1] <= 0:
                    raise ArgumentError("label %d has zero initial mass" % j)
                c = c / c[-1]
                cell = np.minimum(np.searchsorted(c, u[idx], side="right"), ncell - 1)
                x[idx, 0] = a + dx * (cell + v[idx])
        return x, lab

    def to_dict(self):
        d = {"kind": self.kind}
        for k in ("x", "low", "high", "label_weights", "domain", "path"):
            v = getattr(self, k)
            if v is not None:
                d[k] = list(v) if isinstance(v, tuple) else v
        if self.values is not None:
            d["values"] = [list(r) for r in self.values]
        return d

    @classmethod
    def from_dict(cls, d):
        kind = d["kind"]
        lw = d.get("label_weights")
        if kind == "point":
            return cls.point(d["x"], lw)
        if kind == "uniform":
            return cls.uniform(d["low"], d["high"], lw)
        if "values" in d:
            return cls.grid(d["domain"], d["values"])
        return cls("grid", path=d["path"])


@dataclass(frozen=True)
class ProblemSpec:
    potential: Potential
    labels: LabelSpace
    schedule: KSchedule
    initial: InitialLaw
    horizon: float
    seed: int = 0
    record_times: tuple = field(default=())
    dimension: Optional[int] = None

    def __post_init__(self):
        d = self.potential.dim
        if self.dimension is None:
            object.__setattr__(self, "dimension", d)
        elif int(self.dimension) != d:
            raise ArgumentError("dimension %r does not match the potential (d=%d)"
                                % (self.dimension, d))
        if self.labels.m != self.potential.label_dim:
            raise ArgumentError("label dimension does not match the potential")
        T = float(self.horizon)
        if not (math.isfinite(T) and T >= 0):
            raise ArgumentError("horizon must be finite and nonnegative")
        object.__setattr__(self, "horizon", T)
        rt = tuple(float(t) for t in (self.record_times if len(self.record_times) else (T,)))
        if any(b <= a for a, b in zip(rt, rt[1:])):
            raise ArgumentError("record_times must be strictly increasing")
        if rt[0] < 0 or rt[-1] > T * (1 + 1e-12):
            raise ArgumentError("record_times must lie in [0, T]")
        object.__setattr__(self, "record_times", rt)
        seed = int(self.seed)
        if not 0 <= seed < 2 ** 64:
            raise ArgumentError("seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "seed", seed)
        if self.initial.kind in ("point", "uniform"):
            pt = self.initial.x if self.initial.kind == "point" else self.initial.low
            if len(pt) != d:
                raise ArgumentError("initial law dimension does not match d=%d" % d)
        self.initial.resolved_label_weights(self.labels)

    def replace(self, **kw):
        cur = {k: getattr(self, k) for k in ("potential", "labels", "schedule", "initial",
                                              "horizon", "seed", "record_times")}
        cur.update(kw)
        return ProblemSpec(**cur)

    def to_dict(self):
        return {
            "dimension": self.dimension,
            "potential": self.potential.to_dict(),
            "labels": self.labels.to_dict(),
            "schedule": self.schedule.to_dict(),
            "initial": self.initial.to_dict(),
            "horizon": self.horizon,
            "seed": self.seed,
            "record_times": list(self.record_times),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(potential=Potential.from_dict(d["potential"]),
                   labels=LabelSpace.from_dict(d["labels"]),
                   schedule=KSchedule.from_dict(d["schedule"]),
                   initial=InitialLaw.from_dict(d["initial"]),
                   horizon=d["horizon"], seed=d.get("seed", 0),
                   record_times=tuple(d.get("record_times", ())),
                   dimension=d.get("dimension"))

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


# --------------------------------------------------------------------------
# operations

def _check_finite(arr, what, x=None):
    if not np.all(np.isfinite(arr)):
        raise NumericError("non-finite %s" % what, x=x)
    return arr


def mean_potential(p: Potential, ls: LabelSpace, x):
    x = np.asarray(x, float)
    out = 0.0
    for s, w in zip(ls.labels, ls.weights):
        if w > 0:
            out = out + w * p.value(x, s)
    return _check_finite(np.asarray(out), "mean potential", x)


def mean_potential_gradient(p: Potential, ls: LabelSpace, x):
    """grad F(x) = sum_j mu_j grad_x f(x, s_j)."""
    x = np.asarray(x, float)
    if not np.all(np.isfinite(x)):
        raise NumericError("x must be finite", x=x)
    out = None
    for sj, w in zip(ls.labels, ls.weights):
        if w > 0:
            g = w * p.grad(x, sj)
            out = g if out is None else out + g
    return _check_finite(out, "mean gradient", x)


def _convexity_probe(p, ls, x0, scale):
    d = p.dim
    offsets = np.array([-2.0, -1.0, 0.0, 1.0, 2.0]) * scale
    if d <= 2:
        mesh = np.stack(np.meshgrid(*([offsets] * d), indexing="ij"), -1).reshape(-1, d)
    else:
        mesh = np.concatenate([np.eye(d) * o for o in offsets])
    pts = x0 + mesh
    h = 0.25 * scale
    for k in range(d):
        e = np.zeros(d)
        e[k] = h
        sd = (mean_potential(p, ls, pts + e) - 2 * mean_potential(p, ls, pts)
              + mean_potential(p, ls, pts - e))
        if np.any(sd <= 0):
            raise ArgumentError("mean potential is not strongly convex on the probe grid")


def argmin_mean_potential(p: Potential, ls: LabelSpace, tol=1e-10, max_iter=10000):
    """Minimiser of F by damped gradient descent with Armijo backtracking."""
    mins = p.minimizers(ls.labels)
    if mins is None:
        x = np.zeros(p.dim)
    else:
        x = np.asarray(ls.weights @ mins, float)
    spread = 1.0 if mins is None else max(1.0, float(np.ptp(mins, axis=0).max()))
    _convexity_probe(p, ls, x, spread)
    step = 1.0
    Fx = float(mean_potential(p, ls, x))
    for _ in range(max_iter):
        g = mean_potential_gradient(p, ls, x)
        gn = float(np.linalg.norm(g))
        if gn <= tol:
            return x
        # Armijo test on F, trusted only above roundoff; a step that cuts
        # |grad F| by 10% keeps the iteration moving near the optimum
        slack = 64 * np.finfo(float).eps * max(1.0, abs(Fx))
        while True:
            xn = x - step * g
            Fn = float(mean_potential(p, ls, xn))
            if Fn <= Fx - 0.5 * step * gn * gn and Fx - Fn > slack:
                break
            if np.linalg.norm(mean_potential_gradient(p, ls, xn)) < 0.9 * gn:
                break
            step *= 0.5
            if step < 1e-30:
                raise ConvergenceError("line search failed", x=x)
        x, Fx = xn, Fn
        step = min(step * 2.0, 1e6)
    raise ConvergenceError("gradient descent did not reach |grad F| <= %g" % tol, x=x)


def _box_arrays(box, p):
    box = np.asarray(box, float)
    if box.ndim != 2 or box.shape[1] != 2:
        raise ArgumentError("box must be a sequence of (lo, hi) pairs")
    if not np.all(np.isfinite(box)) or np.any(box[:, 1] < box[:, 0]):
        raise ArgumentError("box must be bounded with lo <= hi")
    return box


def estimate_lipschitz(p: Potential, box, n_samples=2000, rng=None):
    """Lower estimate of the Lipschitz constant of (x, s) -> grad_x f.

    ``box`` lists (lo, hi) for the d spatial coordinates followed by the m
    label coordinates.  The estimate is the largest difference quotient over
    all pairs of ``n_samples`` uniform points plus one close partner per
    point, so it converges to L from below.
    """
    if n_samples < 2:
        raise ArgumentError("need at least two samples")
    box = _box_arrays(box, p)
    d, m = p.dim, p.label_dim
    if box.shape[0] != d + m:
        raise ArgumentError("box needs %d intervals (x then s)" % (d + m))
    rng = np.random.default_rng(rng)
    lo, hi = box[:, 0], box[:, 1]
    z = lo + (hi - lo) * rng.random((n_samples, d + m))
    # close partners probe the local Jacobian
    width = np.where(hi > lo, hi - lo, 0.0)
    dirs = rng.standard_normal((n_samples, d + m)) * width
    z2 = np.clip(z + 1e-4 * dirs, lo, hi)
    g1 = p.grad(z[:, :d], z[:, d:])
    g2 = p.grad(z2[:, :d], z2[:, d:])
    _check_finite(g1, "gradient")
    best = 0.0
    dz = np.linalg.norm(z2 - z, axis=1)
    ok = dz > 1e-12 * max(1.0, float(np.abs(box).max()))
    if np.any(ok):
        best = float(np.max(np.linalg.norm(g2 - g1, axis=1)[ok] / dz[ok]))
    chunk = max(1, 4_000_000 // n_samples)
    for i0 in range(0, n_samples, chunk):
        zi = z[i0:i0 + chunk]
        gi = g1[i0:i0 + chunk]
        num = np.linalg.norm(gi[:, None, :] - g1[None, :, :], axis=-1)
        den = np.linalg.norm(zi[:, None, :] - z[None, :, :], axis=-1)
        mask = den > 0
        if np.any(mask):
            best = max(best, float(np.max(num[mask] / den[mask])))
    return best


def estimate_sigma2(p: Potential, ls: LabelSpace, box, n_grid=201):
    """Box-restricted variance term sup_x sum_j mu_j |grad f(x,s_j) - grad F(x)|^2."""
    box = _box_arrays(box, p)
    if n_grid < 1:
        raise ArgumentError("empty grid")
    if box.shape[0] < p.dim:
        raise ArgumentError("box needs %d spatial intervals" % p.dim)
    axes = [np.linspace(lo, hi, n_grid) for lo, hi in box[:p.dim]]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, p.dim)
    gF = mean_potential_gradient(p, ls, pts)
    var = np.zeros(pts.shape[0])
    for s, w in zip(ls.labels, ls.weights):
        if w > 0:
            var += w * np.sum((p.grad(pts, s) - gF) ** 2, axis=-1)
    return float(var.max())
