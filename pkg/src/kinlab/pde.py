"""Finite-volume solver for the density form on a 1D grid with finite labels.

The unknown is nu[j, i], the density of label j in cell i with respect to
Lebesgue x mu, so the mass is dx * sum_j mu_j sum_i nu[j, i].

Transport uses first-order upwind fluxes with face velocities
v = -d_x f(x_face, s_j) and zero flux through the two boundary faces.  The
jump term is integrated exactly,

    nu_j <- nubar + (nu_j - nubar) * exp(-(Lambda(t + dt) - Lambda(t))),

which is stable for any K.  A kinetic step is Strang split
(relax dt/2, advect dt, relax dt/2); consecutive half relaxations are merged
because the relaxation is a semigroup.
"""
from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, DomainError, NumericError, StepSizeError
from .model import KSchedule, LabelSpace, Potential, ProblemSpec, mean_potential_gradient

__all__ = ["Grid1D", "GridDensity", "PDESolution", "advect_step", "relax_step", "solve",
           "marginal_x", "initial_density", "confinement_check", "admissible_dt"]


@dataclass(frozen=True)
class Grid1D:
    a: float
    b: float
    n_cells: int

    def __post_init__(self):
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "b", float(self.b))
        object.__setattr__(self, "n_cells", int(self.n_cells))
        if not (math.isfinite(self.a) and math.isfinite(self.b) and self.a < self.b):
            raise ArgumentError("grid needs finite a < b")
        if self.n_cells < 8:
            raise ArgumentError("grid needs at least 8 cells")

    @property
    def dx(self):
        return (self.b - self.a) / self.n_cells

    @property
    def centers(self):
        return self.a + self.dx * (np.arange(self.n_cells) + 0.5)

    @property
    def faces(self):
        return self.a + self.dx * np.arange(self.n_cells + 1)

    def refine(self, factor=2):
        return Grid1D(self.a, self.b, self.n_cells * factor)

    def to_dict(self):
        return {"a": self.a, "b": self.b, "n_cells": self.n_cells}


class GridDensity:
    """Cell densities nu[j, i] >= 0 with respect to Lebesgue x mu."""

    def __init__(self, values, grid: Grid1D, labels: LabelSpace, t=0.0, mass_tol=1e-10):
        v = np.array(values, dtype=float)
        if v.ndim == 1:
            v = v[None, :]
        if v.shape != (labels.M, grid.n_cells):
            raise ArgumentError("values must have shape (M, n_cells)")
        if not np.all(np.isfinite(v)):
            raise NumericError("non-finite density")
        if np.any(v < 0):
            raise NumericError("negative density (min %g)" % v.min())
        self.values = v
        self.grid = grid
        self.labels = labels
        self.t = float(t)
        if mass_tol is not None and abs(self.mass() - 1.0) > mass_tol:
            raise NumericError("density mass %r is not 1" % self.mass())

    def mass(self):
        return float(self.grid.dx * np.sum(self.labels.weights @ self.values))

    def label_masses(self):
        return self.grid.dx * self.labels.weights * self.values.sum(axis=1)

    def marginal(self):
        return self.labels.weights @ self.values

    def mean(self):
        return float(self.grid.dx * np.sum(self.marginal() * self.grid.centers))

    def second_moment(self):
        return float(self.grid.dx * np.sum(self.marginal() * self.grid.centers ** 2))

    def with_values(self, values, t=None, mass_tol=1e-10):
        return GridDensity(values, self.grid, self.labels, self.t if t is None else t,
                           mass_tol=mass_tol)

    def normalized(self):
        return self.with_values(self.values / self.mass(), mass_tol=1e-10)

    def label_uniform(self):
        nb = self.marginal()
        return bool(np.all(np.abs(self.values - nb) <= 1e-12 * max(1.0, float(nb.max()))))


def marginal_x(nu: GridDensity):
    """Spatial marginal nubar_i = sum_j mu_j nu[j, i]."""
    return nu.marginal()


class _Advector:
    """Upwind transport for fixed face velocities v[j, i+1/2]."""

    def __init__(self, grid, vface):
        self.grid = grid
        self.vp = np.maximum(vface, 0.0)
        self.vm = np.minimum(vface, 0.0)
        M = vface.shape[0]
        zero = np.zeros((M, 1))
        # outflow rate of each cell through its right and left faces
        self.out = np.hstack([self.vp, zero]) - np.hstack([zero, self.vm])
        self._h = None

    def admissible(self, vcell):
        vmax = max(float(np.abs(vcell).max()), float(self.out.max()))
        return math.inf if vmax == 0 else self.grid.dx / vmax

    def prepare(self, h):
        if h != self._h:
            lam = h / self.grid.dx
            self.stay = 1.0 - lam * self.out
            self.in_left = lam * self.vp
            self.in_right = -lam * self.vm
            self._h = h

    def __call__(self, vals, h):
        self.prepare(h)
        out = self.stay * vals
        out[:, 1:] += self.in_left * vals[:, :-1]
        out[:, :-1] += self.in_right * vals[:, 1:]
        return out


def _face_velocity(p: Potential, ls: LabelSpace, x):
    return np.stack([-p.grad(x, s)[..., 0] for s in ls.labels])


def _mean_face_velocity(p, ls, x):
    return -mean_potential_gradient(p, ls, x[:, None])[:, 0][None, :]


def admissible_dt(grid, p, ls, gradient_flow=False):
    """Largest dt for which upwind transport stays monotone."""
    vel = _mean_face_velocity if gradient_flow else _face_velocity
    adv = _Advector(grid, vel(p, ls, grid.faces[1:-1]))
    return adv.admissible(vel(p, ls, grid.centers))


def advect_step(nu: GridDensity, p: Potential, dt):
    """One conservative upwind step with zero boundary flux."""
    if dt < 0:
        raise ArgumentError("dt must be nonnegative")
    if dt == 0:
        return nu.with_values(nu.values)
    g = nu.grid
    adv = _Advector(g, _face_velocity(p, nu.labels, g.faces[1:-1]))
    adm = adv.admissible(_face_velocity(p, nu.labels, g.centers))
    if dt > adm * (1 + 1e-12):
        raise StepSizeError("dt=%g violates the CFL condition" % dt, admissible_dt=adm)
    return nu.with_values(adv(nu.values, dt), t=nu.t + dt)


def _relax(vals, weights, theta):
    nb = weights @ vals
    return nb + (vals - nb) * theta


def relax_step(nu: GridDensity, sched: KSchedule, t, dt):
    """Exact relaxation towards the label-uniform state over [t, t + dt]."""
    if dt < 0:
        raise ArgumentError("dt must be nonnegative")
    if dt == 0:
        return nu.with_values(nu.values)
    theta = math.exp(-float(sched.increment(t, dt)))
    return nu.with_values(_relax(nu.values, nu.labels.weights, theta), t=nu.t + dt)


def _cells_of_interval(grid, lo, hi):
    f = grid.faces
    overlap = np.clip(np.minimum(f[1:], hi) - np.maximum(f[:-1], lo), 0.0, None)
    return overlap


def initial_density(spec: ProblemSpec, grid: Grid1D, point_width_cells=1):
    """Initial GridDensity of spec on grid.

    Point masses become a uniform density on ``point_width_cells`` cells
    around the cell containing the point.
    """
    if spec.dimension != 1:
        raise ArgumentError("the grid solver is one-dimensional")
    law, ls = spec.initial, spec.labels
    n, dx = grid.n_cells, grid.dx
    if law.kind == "grid":
        a, b, vals = law.grid_table()
        if vals.shape != (ls.M, n) or abs(a - grid.a) > 1e-12 or abs(b - grid.b) > 1e-12:
            raise ArgumentError("grid initial law does not match the solver grid")
        return GridDensity(vals, grid, ls, 0.0).normalized()
    if law.kind == "point":
        x0 = law.x[0]
        if not grid.a <= x0 <= grid.b:
            raise DomainError("initial point outside the domain")
        i0 = min(int((x0 - grid.a) / dx), n - 1)
        w = int(point_width_cells)
        lo = max(0, min(i0 - (w - 1) // 2, n - w))
        eta = np.zeros(n)
        eta[lo:lo + w] = 1.0 / (w * dx)
    else:
        lo, hi = law.low[0], law.high[0]
        ov = _cells_of_interval(grid, lo, hi)
        if ov.sum() <= 0:
            raise DomainError("initial support outside the domain")
        eta = ov / (ov.sum() * dx)
    w = law.resolved_label_weights(ls)
    mu = np.asarray(ls.weights)
    if np.any((mu == 0) & (w > 0)):
        raise ArgumentError("initial label weight on a label with mu = 0")
    ratio = np.divide(w, mu, out=np.zeros_like(w), where=mu > 0)
    return GridDensity(ratio[:, None] * eta[None, :], grid, ls, 0.0, mass_tol=1e-10)


def confinement_check(grid, p, ls=None, gradient_flow=False):
    """Raise DomainError unless the drift points inward at both ends."""
    ends = np.array([grid.a, grid.b])
    if gradient_flow:
        v = _mean_face_velocity(p, ls, ends)
    else:
        v = _face_velocity(p, ls, ends)
    if np.any(v[:, 0] < 0) or np.any(v[:, 1] > 0):
        raise DomainError("drift points outward at the boundary of [%g, %g]; "
                          "use a larger domain" % (grid.a, grid.b))


class PDESolution(Sequence):
    """Snapshots at the record times plus run diagnostics."""

    def __init__(self, snapshots, dt, n_steps, max_mass_error, mode):
        self.snapshots = snapshots
        self.dt = dt
        self.n_steps = n_steps
        self.max_mass_error = max_mass_error
        self.mode = mode

    def __getitem__(self, i):
        return self.snapshots[i]

    def __len__(self):
        return len(self.snapshots)

    @property
    def times(self):
        return np.array([s.t for s in self.snapshots])


def solve(spec: ProblemSpec, grid: Grid1D, mode="kinetic", cfl=0.9, dt=None,
          point_width_cells=1, track_mass=True, initial=None):
    """Evolve the initial law of spec and return snapshots at record_times."""
    if mode not in ("kinetic", "gradient_flow"):
        raise ArgumentError("mode must be 'kinetic' or 'gradient_flow'")
    p, ls, sched = spec.potential, spec.labels, spec.schedule
    gf = mode == "gradient_flow"
    confinement_check(grid, p, ls, gradient_flow=gf)
    nu0 = initial if initial is not None else initial_density(spec, grid, point_width_cells)
    if gf:
        vals = nu0.marginal()[None, :].copy()
        w = np.ones(1)
        vel = _mean_face_velocity
    else:
        vals = nu0.values.copy()
        w = np.asarray(ls.weights)
        vel = _face_velocity
    adv = _Advector(grid, vel(p, ls, grid.faces[1:-1]))
    adm = adv.admissible(vel(p, ls, grid.centers))
    if dt is None:
        dt = cfl * adm
    elif dt > adm * (1 + 1e-12):
        raise StepSizeError("dt=%g violates the CFL condition" % dt, admissible_dt=adm)
    relax = (not gf) and ls.M > 1
    dx = grid.dx
    M = ls.M
    snaps = []
    t = 0.0
    steps = 0
    max_err = 0.0

    def snap(v, tt):
        full = np.repeat(v, M, axis=0) if gf else v
        return GridDensity(full, grid, ls, tt, mass_tol=1e-8)

    for r in spec.record_times:
        if r > t:
            n = max(1, int(math.ceil((r - t) / dt - 1e-9)))
            h = (r - t) / n
            if relax:
                vals = _relax(vals, w, math.exp(-float(sched.increment(t, 0.5 * h))))
            for k in range(n):
                vals = adv(vals, h)
                if relax:
                    tm = t + (k + 0.5) * h
                    span = h if k < n - 1 else 0.5 * h
                    vals = _relax(vals, w, math.exp(-float(sched.increment(tm, span))))
                if track_mass:
                    max_err = max(max_err, abs(dx * float(np.sum(w @ vals)) - 1.0))
            steps += n
            t = r
        snaps.append(snap(vals, r))
    return PDESolution(snaps, dt, steps, max_err, mode)
