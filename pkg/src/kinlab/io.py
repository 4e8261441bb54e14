"""CSV/JSON/SVG output with atomic writes.

CSV files are UTF-8, comma separated, one header row.  Floats are written
with repr, which round-trips exactly and is byte-stable across runs.
"""
from __future__ import annotations

import csv
import io as _io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import ArgumentError

__all__ = ["atomic_write", "write_json", "to_jsonable", "write_particles_csv",
           "write_grid_csv", "read_grid_csv", "write_bounds_csv", "read_csv",
           "svg_line_plot", "sidecar_path", "write_points_csv"]


def atomic_write(path, data):
    """Write text or bytes to path via a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix="." + path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if hasattr(obj, "to_dict"):
        return to_jsonable(obj.to_dict())
    return obj


def write_json(path, obj):
    return atomic_write(path, json.dumps(to_jsonable(obj), indent=2, sort_keys=True) + "\n")


def sidecar_path(path):
    path = Path(path)
    return path.with_suffix(path.suffix + ".json")


def _fmt(v):
    return repr(float(v))


def _csv_text(header, rows):
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def write_particles_csv(path, record, meta=None):
    """Columns t, particle_id, x_0..x_{d-1}, label_index; one row per particle and time."""
    d = record.positions[0].shape[1]
    header = ["t", "particle_id"] + ["x_%d" % k for k in range(d)] + ["label_index"]
    buf = _io.StringIO()
    buf.write(",".join(header) + "\n")
    for t, x, lab in zip(record.times, record.positions, record.label_indices):
        ts = _fmt(t)
        cols = [[repr(v) for v in x[:, k].astype(float).tolist()] for k in range(d)]
        for i in range(x.shape[0]):
            buf.write(ts + "," + str(i) + "," + ",".join(c[i] for c in cols)
                      + "," + str(int(lab[i])) + "\n")
    atomic_write(path, buf.getvalue())
    side = {"format": "particles", "spec": record.spec.to_dict(), **record.mode_dict()}
    side.update(meta or {})
    write_json(sidecar_path(path), side)
    return Path(path)


def write_grid_csv(path, snapshots, meta=None):
    """Columns t, x, label_index, nu for a sequence of GridDensity snapshots."""
    if not len(snapshots):
        raise ArgumentError("no snapshots to write")
    g = snapshots[0].grid
    xs = [_fmt(v) for v in g.centers]
    rows = []
    for s in snapshots:
        ts = _fmt(s.t)
        for j in range(s.values.shape[0]):
            rows.extend((ts, xs[i], j, _fmt(s.values[j, i])) for i in range(g.n_cells))
    atomic_write(path, _csv_text(["t", "x", "label_index", "nu"], rows))
    side = {"format": "grid", "grid": g.to_dict(), "labels": snapshots[0].labels.to_dict()}
    side.update(meta or {})
    write_json(sidecar_path(path), side)
    return Path(path)


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = list(r)
    return header, rows


def read_grid_csv(path, t=None):
    """Return (a, b, values[M, n]) for the snapshot at time t (default: last)."""
    header, rows = read_csv(path)
    if header[:4] != ["t", "x", "label_index", "nu"]:
        raise ArgumentError("%s is not a grid CSV" % path)
    arr = np.array([[float(r[0]), float(r[1]), float(r[2]), float(r[3])] for r in rows])
    times = np.unique(arr[:, 0])
    tt = times[-1] if t is None else float(t)
    sel = arr[arr[:, 0] == tt]
    if sel.size == 0:
        raise ArgumentError("no snapshot at t=%r" % t)
    xs = np.unique(sel[:, 1])
    M = int(sel[:, 2].max()) + 1
    vals = np.zeros((M, xs.size))
    idx = np.searchsorted(xs, sel[:, 1])
    vals[sel[:, 2].astype(int), idx] = sel[:, 3]
    side = sidecar_path(path)
    if side.exists():
        gd = json.loads(side.read_text())["grid"]
        a, b = float(gd["a"]), float(gd["b"])
    else:
        dx = (xs[-1] - xs[0]) / (xs.size - 1)
        a, b = xs[0] - dx / 2, xs[-1] + dx / 2
    return a, b, vals


def write_points_csv(path, x, label_index, weights=None, meta=None):
    """Columns x_0..x_{d-1}, label_index, weight for a weighted point set."""
    x = np.asarray(x, float)
    if x.ndim == 1:
        x = x[:, None]
    n, d = x.shape
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, float)
    lab = np.asarray(label_index, int)
    rows = ([_fmt(v) for v in x[i]] + [int(lab[i]), _fmt(w[i])] for i in range(n))
    header = ["x_%d" % k for k in range(d)] + ["label_index", "weight"]
    atomic_write(path, _csv_text(header, rows))
    side = {"format": "points"}
    side.update(meta or {})
    write_json(sidecar_path(path), side)
    return Path(path)


def write_bounds_csv(path, curves, meta=None):
    """Columns t, bound_name, value; sidecar echoes each curve's parameters."""
    rows = []
    for c in curves:
        rows.extend((_fmt(t), c.name, _fmt(v)) for t, v in zip(c.t, c.values))
    atomic_write(path, _csv_text(["t", "bound_name", "value"], rows))
    side = {"format": "bounds", "curves": {c.name: c.params for c in curves}}
    side.update(meta or {})
    write_json(sidecar_path(path), side)
    return Path(path)


_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"]


def svg_line_plot(path, series, title="", xlabel="t", ylabel="", logy=True,
                  width=640, height=420):
    """Self-contained SVG with one polyline per (name, t, y) series."""
    pad_l, pad_r, pad_t, pad_b = 70, 160, 36, 48
    pts = []
    for name, t, y in series:
        t = np.asarray(t, float)
        y = np.asarray(y, float)
        ok = np.isfinite(t) & np.isfinite(y) & ((y > 0) if logy else True)
        pts.append((name, t[ok], np.log10(y[ok]) if logy else y[ok]))
    allt = np.concatenate([p[1] for p in pts if p[1].size] or [np.array([0.0, 1.0])])
    ally = np.concatenate([p[2] for p in pts if p[2].size] or [np.array([0.0, 1.0])])
    t0, t1 = float(allt.min()), float(allt.max())
    y0, y1 = float(ally.min()), float(ally.max())
    if t1 == t0:
        t1 = t0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    W, H = width - pad_l - pad_r, height - pad_t - pad_b
    X = lambda v: pad_l + (v - t0) / (t1 - t0) * W
    Y = lambda v: pad_t + (1 - (v - y0) / (y1 - y0)) * H
    out = ['<svg xmlns="http://www.w3.org/2000/svg" width="%d" height="%d" '
           'font-family="sans-serif" font-size="12">' % (width, height),
           '<rect width="100%" height="100%" fill="white"/>',
           '<rect x="%d" y="%d" width="%d" height="%d" fill="none" stroke="black"/>'
           % (pad_l, pad_t, W, H)]
    for k in range(5):
        tv = t0 + (t1 - t0) * k / 4
        yv = y0 + (y1 - y0) * k / 4
        ylab = ("1e%.2g" % yv) if logy else "%.3g" % yv
        out.append('<text x="%.1f" y="%d" text-anchor="middle">%.3g</text>'
                   % (X(tv), pad_t + H + 16, tv))
        out.append('<text x="%d" y="%.1f" text-anchor="end">%s</text>'
                   % (pad_l - 6, Y(yv) + 4, ylab))
    for i, (name, t, y) in enumerate(pts):
        col = _COLORS[i % len(_COLORS)]
        if t.size:
            coords = " ".join("%.2f,%.2f" % (X(a), Y(b)) for a, b in zip(t, y))
            out.append('<polyline fill="none" stroke="%s" stroke-width="1.5" points="%s"/>'
                       % (col, coords))
        ly = pad_t + 14 + 18 * i
        out.append('<line x1="%d" y1="%d" x2="%d" y2="%d" stroke="%s" stroke-width="2"/>'
                   % (pad_l + W + 10, ly - 4, pad_l + W + 30, ly - 4, col))
        out.append('<text x="%d" y="%d">%s</text>' % (pad_l + W + 34, ly, _esc(name)))
    out.append('<text x="%d" y="20" font-size="14">%s</text>' % (pad_l, _esc(title)))
    out.append('<text x="%.1f" y="%d" text-anchor="middle">%s</text>'
               % (pad_l + W / 2, height - 10, _esc(xlabel)))
    out.append('<text x="16" y="%.1f" transform="rotate(-90 16 %.1f)" text-anchor="middle">%s</text>'
               % (pad_t + H / 2, pad_t + H / 2, _esc(ylabel + (" (log10)" if logy else ""))))
    out.append("</svg>")
    return atomic_write(path, "\n".join(out) + "\n")


def _esc(s):
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
