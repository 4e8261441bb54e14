"""Stationary states: closed-form quadratic-well densities, the eps-regularised
eigenproblem with vanishing-viscosity continuation, long-run references and
support certificates.

A stationary state solves, in weak form,

    int (grad f . grad phi + K phi) d rho = K int phi d(rhobar x mu),

equivalently div(rho grad g) - rho = -rhobar x mu with g = f / K.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla
from scipy import integrate, optimize, special

from .errors import (ArgumentError, ContinuationError, ConvergenceError,
                     FormulaValidationError, LinearSolveError, NumericError,
                     SpectralAnomalyError)
from .model import LabelSpace, Potential, ProblemSpec
from .pde import Grid1D, GridDensity, solve as pde_solve
from . import transport

__all__ = ["StationaryDensity", "RegularizedOperator", "CertificatePair",
           "analytic_quadratic_stationary", "stationary_residual", "assemble_regularized",
           "leading_eigenpair", "vanishing_viscosity", "pde_longrun", "particle_longrun",
           "support_certificate", "moment_bound", "confinement_radius",
           "hull_pair_1d", "ball_pair", "axis_hull_pair", "distance_to_segment"]

METHODS = ("analytic", "eigensolver", "particle_longrun", "pde_longrun")


@dataclass
class StationaryDensity:
    """Grid density or weighted point set, with the producing method and residual."""

    method: str
    density: GridDensity | None = None
    x: np.ndarray | None = None
    label_index: np.ndarray | None = None
    weights: np.ndarray | None = None
    labels: LabelSpace | None = None
    residual: float = math.nan
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ArgumentError("unknown method %r" % self.method)
        if (self.density is None) == (self.x is None):
            raise ArgumentError("give exactly one of density or point set")
        if self.density is not None:
            self.labels = self.density.labels
        else:
            self.x = np.asarray(self.x, dtype=float)
            if self.x.ndim == 1:
                self.x = self.x[:, None]
            self.label_index = np.asarray(self.label_index, dtype=np.int64)
            n = len(self.label_index)
            if self.weights is None:
                self.weights = np.full(n, 1.0 / n)
            self.weights = np.asarray(self.weights, dtype=float)
            if self.labels is None:
                raise ArgumentError("point sets need a LabelSpace")
        if abs(self.mass() - 1.0) > 1e-8:
            raise NumericError("stationary mass %r is not 1" % self.mass())

    @property
    def is_grid(self):
        return self.density is not None

    def mass(self):
        if self.is_grid:
            return self.density.mass()
        return float(self.weights.sum())

    def quadrature(self):
        """Points, label indices and weights for integrating against rho."""
        if self.is_grid:
            d = self.density
            M, n = d.values.shape
            x = np.tile(d.grid.centers, M)[:, None]
            lab = np.repeat(np.arange(M), n)
            w = (d.grid.dx * d.labels.weights[:, None] * d.values).ravel()
            return x, lab, w
        return self.x, self.label_index, self.weights

    def label_masses(self):
        _, lab, w = self.quadrature()
        return np.bincount(lab, weights=w, minlength=self.labels.M)

    def second_moment(self):
        x, _, w = self.quadrature()
        return float(np.sum(w * np.sum(x * x, axis=1)))

    def w2(self, other: "StationaryDensity"):
        """W2 between two states with the same label space."""
        if self.is_grid and other.is_grid:
            return transport.w2_grid(self.density, other.density)
        xa, la, wa = self.quadrature()
        xb, lb, wb = other.quadrature()
        P = transport.DiscreteMeasure(xa, self.labels.labels[la], wa)
        Q = transport.DiscreteMeasure(xb, other.labels.labels[lb], wb)
        return transport.w2_discrete(P, Q)


# ----------------------------------------------------------------- residual

def _bump(u):
    v = np.clip(1.0 - u * u, 0.0, None)
    return v ** 3, -6.0 * u * v ** 2


def _bump_box(sd: StationaryDensity):
    if sd.is_grid:
        g = sd.density.grid
        return np.array([g.a]), np.array([g.b])
    x = sd.x
    lo, hi = x.min(axis=0), x.max(axis=0)
    pad = np.maximum(0.25 * (hi - lo), 0.5)
    return lo - pad, hi + pad


def stationary_residual(rho: StationaryDensity, p: Potential, ls: LabelSpace | None = None,
                        K=1.0, n_centers=None, box=None, return_all=False):
    """Max weak-form defect over bump test functions times label indicators.

    The dictionary is a tensor grid of bumps (1 - u^2)^3 with half-width a
    quarter of the box per axis; 16 centres in 1D, 4 per axis otherwise.
    """
    ls = rho.labels if ls is None else ls
    x, lab, w = rho.quadrature()
    d = x.shape[1]
    lo, hi = (_bump_box(rho) if box is None else (np.atleast_1d(box[0]), np.atleast_1d(box[1])))
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    if n_centers is None:
        n_centers = 16 if d == 1 else 4
    h = (hi - lo) / 4.0
    axes = [np.linspace(lo[k] + h[k], hi[k] - h[k], n_centers) for k in range(d)]
    centers = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    # phi[k, i] and grad phi[k, i, :]
    U = (x[None, :, :] - centers[:, None, :]) / h
    val, der = _bump(U)
    phi = np.prod(val, axis=2)
    grad = np.empty_like(U)
    for k in range(d):
        others = np.prod(np.delete(val, k, axis=2), axis=2) if d > 1 else 1.0
        grad[:, :, k] = der[:, :, k] / h[k] * others
    gf = np.empty_like(x)
    for j in range(ls.M):
        m = lab == j
        if np.any(m):
            gf[m] = p.grad(x[m], ls.labels[j])
    drive = np.einsum("kid,id->ki", grad, gf) + K * phi
    R = np.empty((len(centers), ls.M))
    total = phi @ w
    for j in range(ls.M):
        m = lab == j
        R[:, j] = drive[:, m] @ w[m] - K * ls.weights[j] * total
    R = np.abs(R)
    return R if return_all else float(R.max())


# ----------------------------------------------------------------- closed form

def analytic_quadratic_stationary(K, grid: Grid1D, p=0.5, threshold=None, validate=True):
    """Diffused stationary state of f = (s/2)|x - s|^2 on S = {1, 2}, mu = Bern(p).

    On 1 < x < 2 (u = x - 1),

        rho(x, 2) = c2 (2 - x)^(K(1-p)/2 - 1) (x - 1)^(K p),
        rho(x, 1) = c1 (2 - x) / (x - 1) rho(x, 2),

    which for p = 0.5 is (2 - x)^((K-4)/4) (x - 1)^(K/2).  Cell averages come
    from the regularised incomplete beta function; c1 and c2 come from
    adaptive quadrature, so the returned mass is a check on both.
    """
    K = float(K)
    p = float(p)
    if not 0 < p < 1:
        raise ArgumentError("p must lie in (0, 1)")
    beta2 = K * (1 - p) / 2
    if not beta2 > 1:
        raise ArgumentError("need K(1-p)/2 > 1 (K > 4 for p = 0.5)")
    if grid.a > 1 or grid.b < 2:
        raise ArgumentError("grid must cover [1, 2]")
    ls = LabelSpace.bernoulli(p)
    # (alpha, beta) of u^(alpha-1) (1-u)^(beta-1) for labels 1 and 2
    ab = [(K * p, beta2 + 1), (K * p + 1, beta2)]
    u = np.clip(grid.faces - 1.0, 0.0, 1.0)
    vals = np.empty((2, grid.n_cells))
    norms = []
    for j, (al, be) in enumerate(ab):
        Z, _ = integrate.quad(lambda t: t ** (al - 1) * (1 - t) ** (be - 1), 0.0, 1.0,
                              epsabs=0.0, epsrel=1e-13, limit=200)
        cdf = special.betainc(al, be, u)
        cell = special.beta(al, be) * np.diff(cdf)
        # nu_j = rho_j / mu_j and rho_j has mass mu_j
        vals[j] = cell / (Z * grid.dx)
        norms.append(Z)
    cw = [ls.weights[j] / norms[j] for j in range(2)]
    dens = GridDensity(np.clip(vals, 0.0, None), grid, ls, t=math.inf, mass_tol=1e-8)
    sd = StationaryDensity("analytic", density=dens,
                           info={"K": K, "p": p, "c1": cw[0], "c2": cw[1],
                                 "c1_over_c2": cw[0] / cw[1]})
    pot = Potential.quadratic_well()
    sd.residual = stationary_residual(sd, pot, ls, K)
    if threshold is None:
        threshold = 1e-3 * K
    if validate and sd.residual > threshold:
        raise FormulaValidationError("closed-form state has residual %.3g > %.3g"
                                     % (sd.residual, threshold), residual=sd.residual)
    return sd


# ----------------------------------------------------------------- regularised operator

def _bernoulli_fn(z):
    """B(z) = z / (exp(z) - 1), accurate near 0 and without overflow."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    small = np.abs(z) < 1e-6
    zs = z[small]
    out[small] = 1.0 - zs / 2.0 + zs * zs / 12.0
    big = ~small
    with np.errstate(over="ignore"):
        out[big] = z[big] / np.expm1(z[big])
    return out


class RegularizedOperator:
    """L = A o B for the eps-regularised stationary problem on a 1D grid.

    In density form the fixed-point equation is

        nu_j - div(eps grad nu_j + nu_j grad g_j) = nubar,   g_j = f(., s_j) / K,

    with no-flux faces.  Writing nu = exp(-g/eps) w turns the flux into
    eps exp(-g/eps) grad w; the Scharfetter-Gummel face flux is the exact
    two-point discretisation of that weighted form, so neither exp(g/eps) nor
    exp(-g/eps) is ever formed in the solve.  Each M_j = I - G_j is an
    M-matrix with unit column sums, hence L is positive and mass preserving.
    """

    def __init__(self, eps, grid: Grid1D, p: Potential, ls: LabelSpace, K,
                 max_cell_jump=math.log(10.0)):
        eps = float(eps)
        if not eps > 0:
            raise ArgumentError("eps must be positive")
        if not K > 0:
            raise ArgumentError("K must be positive")
        if p.dim != 1:
            raise ArgumentError("the regularised operator is one-dimensional")
        self.eps, self.grid, self.potential, self.labels, self.K = eps, grid, p, ls, float(K)
        n, dx = grid.n_cells, grid.dx
        x = grid.centers
        self.g = np.stack([np.asarray(p.value(x[:, None], s), float) / self.K
                           for s in ls.labels])
        jumps = np.diff(self.g, axis=1) / eps
        self.max_jump = float(np.abs(jumps).max())
        # at most one decade of exp(-g/eps) per cell
        if self.max_jump > max_cell_jump:
            raise ArgumentError("grid under-resolves exp(-g/eps): %.3g decades per cell"
                                % (self.max_jump / math.log(10.0)))
        c = eps / dx ** 2
        self.mats, self._lu = [], []
        eye = sps.identity(n, format="csc")
        for D in jumps:
            up, dn = c * _bernoulli_fn(D), c * _bernoulli_fn(-D)
            main = np.zeros(n)
            main[:-1] -= up
            main[1:] -= dn
            G = sps.diags([main, dn, up], [0, 1, -1], format="csc")
            Mj = (eye - G).tocsc()
            try:
                lu = spla.splu(Mj)
            except RuntimeError as e:
                raise LinearSolveError("factorisation failed: %s" % e) from e
            self.mats.append(Mj)
            self._lu.append(lu)
        # one probe solve to confirm the factorisation is usable
        rhs = np.ones(n)
        for Mj, lu in zip(self.mats, self._lu):
            y = lu.solve(rhs)
            if not np.all(np.isfinite(y)) or np.abs(Mj @ y - rhs).max() > 1e-12 * n:
                raise LinearSolveError("inner solve residual too large")

    @property
    def shape(self):
        return (self.labels.M, self.grid.n_cells)

    def B(self, rho):
        """w = exp(g/eps) rho, shifted per label so the exponent stays <= 0."""
        z = self.g / self.eps
        z = z - z.max(axis=1, keepdims=True)
        return np.exp(z) * rho

    def apply(self, nu):
        nu = np.asarray(nu, dtype=float).reshape(self.shape)
        nb = self.labels.weights @ nu
        return np.stack([lu.solve(nb) for lu in self._lu])

    def apply_adjoint(self, phi):
        """Adjoint in the (dx x mu) inner product."""
        phi = np.asarray(phi, dtype=float).reshape(self.shape)
        acc = np.zeros(self.grid.n_cells)
        for j, lu in enumerate(self._lu):
            acc += self.labels.weights[j] * lu.solve(phi[j], trans="T")
        return np.tile(acc, (self.labels.M, 1))

    def inner(self, a, b):
        return float(self.grid.dx * np.sum(self.labels.weights[:, None] * a * b))

    def mass(self, nu):
        return float(self.grid.dx * np.sum(self.labels.weights @ nu))


def assemble_regularized(eps, grid, p, ls, K, **kw) -> RegularizedOperator:
    return RegularizedOperator(eps, grid, p, ls, K, **kw)


def leading_eigenpair(L: RegularizedOperator, tol=1e-12, max_iter=20000, tol_lambda=1e-6,
                      init=None, return_info=False):
    """Power iteration with mass renormalisation.

    Returns (lambda, GridDensity); lambda is the Rayleigh quotient in the
    dx x mu inner product.
    """
    g = L.grid
    if init is None:
        v = np.ones(L.shape)
    else:
        v = np.array(init.values if isinstance(init, GridDensity) else init, dtype=float)
        v = v.reshape(L.shape)
        if np.any(v < 0):
            raise ArgumentError("initial vector must be nonnegative")
    m = L.mass(v)
    if not m > 0:
        raise ArgumentError("initial vector has zero mass")
    v = v / m
    worst = 0.0
    lam = math.nan
    for it in range(1, max_iter + 1):
        w = L.apply(v)
        lam = L.inner(v, w) / L.inner(v, v)
        top = float(w.max())
        low = float(w.min())
        worst = min(worst, low / top if top > 0 else 0.0)
        if low < -1e-14 * top:
            raise SpectralAnomalyError("iterate lost nonnegativity (min %g)" % low, eigenvalue=lam)
        w = np.clip(w, 0.0, None)
        w /= L.mass(w)
        diff = float(np.abs(w - v).max()) / float(w.max())
        v = w
        if diff <= tol:
            break
    else:
        raise ConvergenceError("power iteration did not converge in %d sweeps" % max_iter)
    if abs(lam - 1.0) > tol_lambda:
        raise SpectralAnomalyError("leading eigenvalue %.12g is not 1" % lam, eigenvalue=lam)
    rho = GridDensity(v, g, L.labels, t=math.inf, mass_tol=1e-12)
    if return_info:
        return lam, rho, {"iterations": it, "min_ratio_before_clip": worst, "last_change": diff}
    return lam, rho


# ----------------------------------------------------------------- moment bound

def confinement_radius(p: Potential, ls: LabelSpace, K=1.0, R_max=None, n_probe=2001,
                       factor=1.5):
    """Smallest probe radius beyond which grad g . x > 0, times ``factor``.

    Returns (R_bar, c) with c the smallest ratio grad g . x / |x|^2 on the
    probe shell R_bar <= |x| <= R_max.  One-dimensional potentials only.
    """
    if p.dim != 1:
        raise ArgumentError("confinement probing is one-dimensional")
    R_max = 10.0 if R_max is None else float(R_max)
    r = np.linspace(-R_max, R_max, n_probe)
    r = r[r != 0]
    q = np.min([np.asarray(p.grad(r[:, None], s))[:, 0] * r for s in ls.labels], axis=0) / K
    bad = np.abs(r[q <= 0])
    R0 = float(bad.max()) if bad.size else float(np.abs(r).min())
    R_bar = factor * R0
    shell = np.abs(r) >= R_bar
    if not np.any(shell):
        raise ArgumentError("probe radius too small for the confinement radius")
    c = float(np.min(q[shell] / r[shell] ** 2))
    return R_bar, c


def moment_bound(p: Potential, ls: LabelSpace, K, R_bar=None, c=None, dim=1, n_probe=2001):
    """Uniform second-moment bound (R G + c R^2 + d) / c for the eps-states.

    G is the sup of |grad g| on the ball of radius R_bar, g = f / K.
    """
    if R_bar is None or c is None:
        R_bar, c = confinement_radius(p, ls, K)
    if not c > 0:
        raise ArgumentError("confinement constant must be positive")
    r = np.linspace(-R_bar, R_bar, n_probe)[:, None]
    G = max(float(np.max(np.abs(np.asarray(p.grad(r, s))))) for s in ls.labels) / K
    return (R_bar * G + c * R_bar ** 2 + dim) / c


# ----------------------------------------------------------------- continuation

def vanishing_viscosity(eps_sequence, grid: Grid1D, p: Potential, ls: LabelSpace, K,
                        tol=1e-12, max_iter=20000, tol_lambda=1e-6, init=None, growth=1.0):
    """Leading eigenvectors along a decreasing eps sequence, warm started.

    The consecutive W2 gaps must settle: the last gap may not exceed
    ``growth`` times the largest earlier gap, otherwise ContinuationError.
    """
    eps = [float(e) for e in eps_sequence]
    if len(eps) < 4:
        raise ArgumentError("need at least 4 values of eps")
    if any(b >= a for a, b in zip(eps, eps[1:])) or eps[-1] <= 0:
        raise ArgumentError("eps sequence must be positive and strictly decreasing")
    states, lams, iters = [], [], []
    v = init
    for e in eps:
        L = assemble_regularized(e, grid, p, ls, K)
        lam, rho, inf = leading_eigenpair(L, tol=tol, max_iter=max_iter,
                                          tol_lambda=tol_lambda, init=v, return_info=True)
        states.append(rho)
        lams.append(lam)
        iters.append(inf["iterations"])
        v = rho
    gaps = [transport.w2_grid(a, b) for a, b in zip(states, states[1:])]
    if gaps[-1] > growth * max(gaps[:-1]) + 1e-15:
        raise ContinuationError("eps continuation is not settling: gaps %s" % gaps)
    moments = [s.second_moment() for s in states]
    try:
        bound = moment_bound(p, ls, K)
    except ArgumentError:
        bound = math.nan
    sd = StationaryDensity("eigensolver", density=states[-1],
                           info={"lambda": lams[-1], "lambdas": lams, "eps_sequence": eps,
                                 "gaps": gaps, "extrapolation_gap": gaps[-1],
                                 "second_moments": moments, "moment_bound": bound,
                                 "iterations": iters, "states": states})
    sd.residual = stationary_residual(sd, p, ls, K)
    return sd


# ----------------------------------------------------------------- long-run references

def pde_longrun(spec: ProblemSpec, grid: Grid1D, T=50.0, **solve_kw):
    """Long-time kinetic solution as a stationary reference.

    info['w2_half'] is W2 between the T/2 and T snapshots.
    """
    sched = spec.schedule
    if sched.kind != "constant":
        raise ArgumentError("long-run reference needs a constant K")
    run = spec.replace(horizon=float(T), record_times=(0.5 * T, float(T)))
    sol = pde_solve(run, grid, mode="kinetic", **solve_kw)
    last = sol[-1].normalized()
    sd = StationaryDensity("pde_longrun", density=last,
                           info={"T": float(T), "w2_half": transport.w2_grid(sol[0], sol[-1]),
                                 "dt": sol.dt, "n_steps": sol.n_steps,
                                 "max_mass_error": sol.max_mass_error})
    sd.residual = stationary_residual(sd, spec.potential, spec.labels, sched.a)
    return sd


def particle_longrun(spec: ProblemSpec, n_particles, T=None, residual=True, **sim_kw):
    """Particle ensemble at time T (default: the horizon) as a weighted point set."""
    from .particles import simulate
    T = spec.horizon if T is None else float(T)
    run = spec.replace(horizon=T, record_times=(T,))
    rec = simulate(run, n_particles, **sim_kw)
    ens = rec.final
    sd = StationaryDensity("particle_longrun", x=ens.x, label_index=ens.label_index,
                           labels=spec.labels, info={"T": T, "n_particles": int(n_particles)})
    if residual and spec.schedule.kind == "constant":
        sd.residual = stationary_residual(sd, spec.potential, spec.labels, spec.schedule.a)
    return sd


# ----------------------------------------------------------------- support certificates

@dataclass
class CertificatePair:
    """Test functions with grad f(x, s) . grad psi(x) >= phi(x) >= 0 for all s.

    Then the x-marginal of any stationary state lives in closure{phi = 0}.
    """

    psi_grad: object
    phi: object
    name: str = ""

    def defect(self, p: Potential, ls: LabelSpace, x):
        """min over points and labels of grad f . grad psi - phi (>= 0 if valid)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        gp = self.psi_grad(x)
        ph = self.phi(x)
        return float(min(np.min(np.sum(p.grad(x, s) * gp, axis=1) - ph) for s in ls.labels))


def support_certificate(samples, phi, weights=None):
    """Estimate int phi d rhobar from samples of the x-marginal."""
    if isinstance(samples, StationaryDensity):
        x, _, w = samples.quadrature()
    else:
        x = np.asarray(samples, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        w = np.full(len(x), 1.0 / len(x)) if weights is None else np.asarray(weights, float)
    f = phi.phi if isinstance(phi, CertificatePair) else phi
    vals = np.asarray(f(x), dtype=float)
    if np.any(vals < 0):
        raise ArgumentError("phi must be nonnegative")
    return float(np.sum(w * vals) / np.sum(w))


def _hull_parts(grad1d, minimizers, s0):
    x0, x1 = float(np.min(minimizers)), float(np.max(minimizers))
    inside = lambda x: (x >= x0) & (x <= x1)

    def psi_grad(x):
        return np.where(inside(x), 0.0, grad1d(x, s0))

    return x0, x1, inside, psi_grad


def hull_pair_1d(p: Potential, ls: LabelSpace, s0_index=0, box=(-10.0, 10.0)):
    """Pair certifying that the support lies in the hull of the minimizers (d = 1).

    psi follows f(., s0) outside [x0, x1] and is flat inside; phi is
    inf_s f'(x, s) f'(x, s0) outside and 0 inside.
    """
    if p.dim != 1:
        raise ArgumentError("hull pair is one-dimensional")
    mins = p.minimizers(ls.labels)
    if mins is None:
        mins = np.array([optimize.minimize_scalar(
            lambda t, s=s: float(np.asarray(p.value(np.array([[t]]), s)).ravel()[0]),
            bounds=box, method="bounded", options={"xatol": 1e-12}).x for s in ls.labels])
    mins = np.asarray(mins, float).reshape(-1)
    s0 = ls.labels[s0_index]
    g1 = lambda x, s: np.asarray(p.grad(x.reshape(-1, 1), s))[:, 0]
    x0, x1, inside, pg = _hull_parts(g1, mins, s0)

    def psi_grad(x):
        x = np.asarray(x, float).reshape(-1)
        return pg(x)[:, None]

    def phi(x):
        x = np.asarray(x, float).reshape(-1)
        v = np.min([g1(x, s) * g1(x, s0) for s in ls.labels], axis=0)
        return np.where(inside(x), 0.0, np.clip(v, 0.0, None))

    return CertificatePair(psi_grad, phi, "hull [%g, %g]" % (x0, x1))


def ball_pair(R_bar, c, center=None):
    """Pair for the confinement case: support inside the closed ball B(center, R_bar)."""
    def _r(x):
        x = np.atleast_2d(np.asarray(x, float))
        return x - (0.0 if center is None else np.asarray(center, float))

    def psi_grad(x):
        y = _r(x)
        out = np.linalg.norm(y, axis=1) > R_bar
        return np.where(out[:, None], y, 0.0)

    def phi(x):
        y = _r(x)
        r2 = np.sum(y * y, axis=1)
        return np.where(r2 > R_bar ** 2, c * r2, 0.0)

    return CertificatePair(psi_grad, phi, "ball R=%g" % R_bar)


def axis_hull_pair(p: Potential, ls: LabelSpace):
    """Pair for 2D potentials of the anisotropic kind with all minimizers on x1 = 0.

    psi = x1^2 / 2 + psi_1d(x2) and phi = min_s H_s[0] x1^2 + phi_1d(x2), where
    the one-dimensional part is the hull construction on x2.  Certifies that
    the support lies on the segment {x1 = 0} between the minimizers.
    """
    if not p.has_linear_flow or p.dim != 2:
        raise ArgumentError("axis pair needs a 2D potential with linear gradients")
    Hs, cs = zip(*(p.linear_structure(s) for s in ls.labels))
    Hs = [np.broadcast_to(np.asarray(H, float), (2,)) for H in Hs]
    cs = [np.broadcast_to(np.asarray(c, float), (2,)) for c in cs]
    if any(abs(c[0]) > 1e-12 for c in cs):
        raise ArgumentError("minimizers must lie on x1 = 0")
    h1 = min(H[0] for H in Hs)
    mins = np.array([c[1] for c in cs])
    x0, x1 = mins.min(), mins.max()
    inside = lambda y: (y >= x0) & (y <= x1)
    g2 = [lambda y, H=H, c=c: H[1] * (y - c[1]) for H, c in zip(Hs, cs)]

    def psi_grad(x):
        x = np.atleast_2d(np.asarray(x, float))
        y = x[:, 1]
        return np.stack([x[:, 0], np.where(inside(y), 0.0, g2[0](y))], axis=1)

    def phi(x):
        x = np.atleast_2d(np.asarray(x, float))
        y = x[:, 1]
        v = np.clip(np.min([g(y) * g2[0](y) for g in g2], axis=0), 0.0, None)
        return h1 * x[:, 0] ** 2 + np.where(inside(y), 0.0, v)

    return CertificatePair(psi_grad, phi, "segment x1=0, x2 in [%g, %g]" % (x0, x1))


def distance_to_segment(points, a, b):
    """Euclidean distance of each point to the segment [a, b]."""
    P = np.atleast_2d(np.asarray(points, float))
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    d = b - a
    L2 = float(d @ d)
    if L2 == 0:
        return np.linalg.norm(P - a, axis=1)
    t = np.clip((P - a) @ d / L2, 0.0, 1.0)
    return np.linalg.norm(P - (a + t[:, None] * d), axis=1)
