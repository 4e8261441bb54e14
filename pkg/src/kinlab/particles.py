"""Particle engine for the label-switching process.

Each particle follows x' = -grad_x f(x, s) and, at the jump times of a
Poisson clock with intensity K(t), replaces its label by a fresh draw from
mu.  Two modes are provided:

``event_driven``
    exact switch times from the inverse of the cumulative rate, exact flows
    for built-in potentials (RK4 otherwise).
``uniformized``
    fixed substeps of length dt.  Each substep flows with the current label
    and then redraws the label with probability 1 - exp(-(Lambda(t+dt) -
    Lambda(t))), which is exact for the label law because the post-jump
    label does not depend on the pre-jump one.  The flow error from
    ignoring the jump time within a substep is O(dt).

Randomness: particles are processed in fixed blocks of ``block_size``; block
b draws from a Philox generator keyed by SeedSequence(seed,
spawn_key=(b,)).  Results depend only on (seed, N, block_size, mode) and
never on the number of worker threads.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import stats

from .errors import ArgumentError, NumericError, StepSizeError
from .model import KSchedule, LabelSpace, Potential, ProblemSpec

__all__ = [
    "Particle", "Ensemble", "TrajectoryRecord", "flow_step", "flow",
    "next_switch_time", "resample_label", "simulate", "empirical_second_moment",
    "label_chi2_pvalue", "block_generator", "worker_count",
]

BLOCK_SIZE = 4096
RK4_STEP = 1e-2


@dataclass(frozen=True)
class Particle:
    x: tuple
    label_index: int
    stream_id: int


class Ensemble:
    """N particles at a common time; arrays are read-only views."""

    def __init__(self, x, label_index, time, spec=None, block_size=BLOCK_SIZE):
        x = np.asarray(x, float)
        if x.ndim == 1:
            x = x[:, None]
        self.x = x
        self.label_index = np.asarray(label_index, int)
        self.time = float(time)
        self.spec = spec
        self.block_size = block_size

    @property
    def N(self):
        return self.x.shape[0]

    def __len__(self):
        return self.N

    def __getitem__(self, i):
        return Particle(tuple(self.x[i].tolist()), int(self.label_index[i]),
                        int(i) // self.block_size)

    @property
    def particles(self):
        return [self[i] for i in range(self.N)]

    def labels(self):
        """Label coordinates s of every particle, shape (N, m)."""
        return self.spec.labels.labels[self.label_index]


class TrajectoryRecord:
    """Snapshots of an ensemble at the record times."""

    def __init__(self, spec, times, positions, labels, mode, dt, n_particles, block_size):
        self.spec = spec
        self.times = np.asarray(times, float)
        self.positions = positions
        self.label_indices = labels
        self.mode = mode
        self.dt = dt
        self.n_particles = n_particles
        self.block_size = block_size
        M = spec.labels.M
        self.second_moments = np.array([float(np.mean(np.sum(x ** 2, axis=1)))
                                        for x in positions])
        self.label_histograms = np.array([np.bincount(l, minlength=M) / l.size
                                          for l in labels])

    def __len__(self):
        return self.times.size

    def ensemble(self, i):
        return Ensemble(self.positions[i], self.label_indices[i], self.times[i],
                        self.spec, self.block_size)

    @property
    def final(self):
        return self.ensemble(len(self) - 1)

    def mode_dict(self):
        d = {"mode": self.mode, "n_particles": self.n_particles,
             "block_size": self.block_size}
        if self.dt is not None:
            d["dt"] = self.dt
        return d


def worker_count(n_tasks=None):
    env = os.environ.get("KINLAB_THREADS")
    n = int(env) if env else (os.cpu_count() or 1)
    n = max(1, n)
    if n_tasks is not None:
        n = min(n, max(1, n_tasks))
    return n


def block_generator(seed, block):
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(block),))
    return np.random.Generator(np.random.Philox(ss))


# ---------------------------------------------------------------------------
# flows

def _rk4(p, x, s, dt, rk4_step):
    dt = np.broadcast_to(np.asarray(dt, float), (x.shape[0],))
    tmax = float(dt.max()) if dt.size else 0.0
    n = max(1, int(math.ceil(tmax / rk4_step)))
    h = (dt / n)[:, None]
    for _ in range(n):
        k1 = -p.grad(x, s)
        k2 = -p.grad(x + 0.5 * h * k1, s)
        k3 = -p.grad(x + 0.5 * h * k2, s)
        k4 = -p.grad(x + h * k3, s)
        x = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


def flow(p: Potential, x, s, dt, t=None, rk4_step=RK4_STEP):
    """Vectorised gradient flow of points x (n, d) with labels s (n, m)."""
    x = np.asarray(x, float)
    s = np.asarray(s, float)
    dt = np.asarray(dt, float)
    if np.any(dt < 0):
        raise ArgumentError("dt must be nonnegative")
    if p.has_linear_flow:
        H, c = p.linear_structure(s)
        out = c + (x - c) * np.exp(-H * (dt[..., None] if dt.ndim else dt))
    else:
        out = _rk4(p, x, s, dt, rk4_step)
    if not np.all(np.isfinite(out)):
        bad = np.nonzero(~np.all(np.isfinite(out), axis=-1))[0][0]
        raise NumericError("non-finite state during flow", t=t, x=x[bad], s=s[bad])
    return out


def flow_step(x, s, dt, p: Potential, t=None, rk4_step=RK4_STEP):
    """Advance one point by x' = -grad f(x, s) over a duration dt."""
    dt = float(dt)
    if dt < 0:
        raise ArgumentError("dt must be nonnegative")
    xa = np.atleast_1d(np.asarray(x, float)).reshape(1, p.dim)
    sa = np.atleast_1d(np.asarray(s, float)).reshape(1, p.label_dim)
    out = flow(p, xa, sa, np.array([dt]), t=t, rk4_step=rk4_step)[0]
    return out if np.ndim(x) else float(out[0])


def next_switch_time(t, sched: KSchedule, rng):
    """Waiting time to the next jump after t: Lambda(t + tau) - Lambda(t) = Exp(1)."""
    return float(sched.invert(t, rng.exponential()))


def resample_label(ls: LabelSpace, rng, size=None):
    """Label index drawn from mu by CDF inversion."""
    cdf = np.cumsum(ls.weights)
    cdf[-1] = 1.0
    u = rng.random(size)
    out = np.minimum(np.searchsorted(cdf, u, side="right"), ls.M - 1)
    return int(out) if size is None else out


def _resampler(ls):
    cdf = np.cumsum(ls.weights)
    cdf[-1] = 1.0
    M = ls.M

    def draw(rng, n):
        return np.minimum(np.searchsorted(cdf, rng.random(n), side="right"), M - 1)
    return draw


# ---------------------------------------------------------------------------
# simulation

class _Kernel:
    """Per-label flow data shared by the blocks of one run."""

    def __init__(self, spec, rk4_step):
        self.p = spec.potential
        self.S = np.asarray(spec.labels.labels)
        self.rk4_step = rk4_step
        self.linear = self.p.has_linear_flow
        if self.linear:
            self.H, self.c = self.p.linear_structure(self.S)

    def flow(self, x, lab, dt, t=None):
        if self.linear:
            H, c = self.H[lab], self.c[lab]
            dt = np.asarray(dt, float)
            out = c + (x - c) * np.exp(-H * (dt[:, None] if dt.ndim else dt))
            if not np.all(np.isfinite(out)):
                bad = np.nonzero(~np.all(np.isfinite(out), axis=-1))[0][0]
                raise NumericError("non-finite state during flow", t=t, x=x[bad],
                                   s=self.S[lab[bad]])
            return out
        return flow(self.p, x, self.S[lab], np.broadcast_to(dt, (x.shape[0],)), t=t,
                    rk4_step=self.rk4_step)

    def sup_grad(self, x):
        """sup of |grad f| over the bounding box of x and all labels."""
        lo, hi = x.min(axis=0), x.max(axis=0)
        d = x.shape[1]
        if self.linear:
            corners = np.stack(np.meshgrid(*[[lo[k], hi[k]] for k in range(d)],
                                           indexing="ij"), -1).reshape(-1, d)
            g = self.H[:, None, :] * (corners[None] - self.c[:, None, :])
        else:
            g = np.stack([self.p.grad(x, s) for s in self.S])
        return float(np.sqrt(np.sum(g ** 2, axis=-1)).max()), float(np.linalg.norm(hi - lo))


def _run_block(spec: ProblemSpec, kern, block, n, mode, dt, guard_every):
    rng = block_generator(spec.seed, block)
    ls = spec.labels
    sched = spec.schedule
    draw = _resampler(ls)
    x, lab = spec.initial.sample(n, rng, ls, spec.dimension)
    pos, labs = [], []
    if mode == "event_driven":
        t = np.zeros(n)
        nxt = sched.invert(t, rng.exponential(size=n))
        for r in spec.record_times:
            while True:
                act = np.nonzero(nxt < r)[0]
                if act.size == 0:
                    break
                x[act] = kern.flow(x[act], lab[act], nxt[act] - t[act], t=r)
                t[act] = nxt[act]
                lab[act] = draw(rng, act.size)
                nxt[act] = t[act] + sched.invert(t[act], rng.exponential(size=act.size))
            x = kern.flow(x, lab, r - t, t=r)
            t[:] = r
            pos.append(x.copy())
            labs.append(lab.copy())
        return pos, labs
    # uniformized
    t = 0.0
    for r in spec.record_times:
        nsteps = int(math.ceil((r - t) / dt - 1e-9)) if r > t else 0
        h = (r - t) / nsteps if nsteps else 0.0
        for k in range(nsteps):
            if k % guard_every == 0:
                sup, diam = kern.sup_grad(x)
                room = 0.5 * max(diam, 1.0)
                if h * sup > room:
                    raise StepSizeError("uniformized dt=%g too large: dt*sup|grad f|=%g > %g"
                                        % (h, h * sup, room), admissible_dt=room / sup)
            tk = t + k * h
            x = kern.flow(x, lab, h, t=tk)
            pj = -math.expm1(-float(sched.increment(tk, h)))
            if pj >= 1.0:
                lab = draw(rng, n)
            else:
                jump = np.nonzero(rng.random(n) < pj)[0]
                lab[jump] = draw(rng, jump.size)
        t = r
        pos.append(x.copy())
        labs.append(lab.copy())
    return pos, labs


def simulate(spec: ProblemSpec, n_particles, mode="event_driven", dt=None,
             block_size=BLOCK_SIZE, workers=None, rk4_step=RK4_STEP, guard_every=256):
    """Simulate n_particles independent particles and record snapshots.

    mode is ``"event_driven"`` or ``"uniformized"`` (which needs ``dt``).
    """
    n_particles = int(n_particles)
    if n_particles < 1:
        raise ArgumentError("n_particles must be at least 1")
    if mode not in ("event_driven", "uniformized"):
        raise ArgumentError("unknown mode %r" % (mode,))
    if mode == "uniformized":
        if dt is None or not dt > 0:
            raise ArgumentError("uniformized mode needs dt > 0")
        dt = float(dt)
    else:
        dt = None
    kern = _Kernel(spec, rk4_step)
    nblocks = (n_particles + block_size - 1) // block_size
    sizes = [min(block_size, n_particles - b * block_size) for b in range(nblocks)]

    def job(b):
        return _run_block(spec, kern, b, sizes[b], mode, dt, guard_every)

    nw = worker_count(nblocks) if workers is None else max(1, min(workers, nblocks))
    if nw == 1:
        results = [job(b) for b in range(nblocks)]
    else:
        with ThreadPoolExecutor(max_workers=nw) as ex:
            results = list(ex.map(job, range(nblocks)))
    nrec = len(spec.record_times)
    positions = [np.concatenate([r[0][i] for r in results]) for i in range(nrec)]
    labels = [np.concatenate([r[1][i] for r in results]) for i in range(nrec)]
    return TrajectoryRecord(spec, spec.record_times, positions, labels, mode, dt,
                            n_particles, block_size)


def empirical_second_moment(e):
    """(1/N) sum_i |x_i|^2 for an Ensemble or an array of positions."""
    x = e.x if isinstance(e, Ensemble) else np.asarray(e, float)
    if x.ndim == 1:
        x = x[:, None]
    return float(np.mean(np.sum(x ** 2, axis=1)))


def label_chi2_pvalue(label_index, ls: LabelSpace):
    """Chi-square goodness-of-fit p-value of the label counts against mu."""
    counts = np.bincount(np.asarray(label_index, int), minlength=ls.M)
    w = np.asarray(ls.weights)
    pos = w > 0
    if np.any(counts[~pos] > 0):
        return 0.0
    if pos.sum() < 2:
        return 1.0
    n = counts.sum()
    return float(stats.chisquare(counts[pos], n * w[pos] / w[pos].sum()).pvalue)
