"""Run artifacts: atomic file writes, CSV tables and analytic density slices."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from math import erf
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.integrate import trapezoid

from .mixture import MixtureState
from .oracle import Moments


def atomic_write(path, text: str) -> None:
    """Write ``text`` to ``path`` through a temporary file and a rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf)  # RFC 4180: CRLF line ends, minimal quoting
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    atomic_write(path, buf.getvalue())


def read_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)
    return rows[0], data.reshape(-1, len(rows[0]))


def write_json(path, obj) -> None:
    atomic_write(path, json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    raise TypeError(f"not JSON serializable: {type(v).__name__}")


# ---------------------------------------------------------------------------
# tables


def parameter_header(theta: MixtureState) -> list[str]:
    cols = []
    for i in range(theta.terms):
        cols += [f"A{i}", f"L{i}"] + [f"c{i}_{j}" for j in range(theta.dim)]
    return cols


def _pairs(d: int):
    return [(i, j) for i in range(d) for j in range(i, d)]


def moment_header(d: int, with_se: bool = False) -> list[str]:
    cols = ["t"] + [f"mean_{i}" for i in range(d)] + [f"second_{i}_{j}" for i, j in _pairs(d)]
    if with_se:
        cols += ["count"] + [f"se_mean_{i}" for i in range(d)]
        cols += [f"se_second_{i}_{j}" for i, j in _pairs(d)]
    return cols


def moment_row(t: float, m: Moments, with_se: bool = False) -> list:
    d = m.mean.shape[0]
    row = [t] + list(m.mean) + [m.second[i, j] for i, j in _pairs(d)]
    if with_se:
        row += [m.count] + list(m.se_mean) + [m.se_second[i, j] for i, j in _pairs(d)]
    return row


def read_moments(path) -> dict:
    """Moment table as arrays: ``t``, ``mean`` (n, d), ``second`` (n, d, d) and
    standard errors when present (zeros otherwise)."""
    header, data = read_csv(path)
    if not header or header[0] != "t":
        raise ValueError(f"{path}: not a moment table")
    d = sum(1 for h in header if h.startswith("mean_"))
    col = {h: k for k, h in enumerate(header)}
    n = data.shape[0]
    out = {"t": data[:, 0], "mean": np.zeros((n, d)), "second": np.zeros((n, d, d)),
           "se_mean": np.zeros((n, d)), "se_second": np.zeros((n, d, d))}
    for i in range(d):
        out["mean"][:, i] = data[:, col[f"mean_{i}"]]
        if f"se_mean_{i}" in col:
            out["se_mean"][:, i] = data[:, col[f"se_mean_{i}"]]
    for i, j in _pairs(d):
        for key in ("second", "se_second"):
            name = f"{key}_{i}_{j}"
            if name in col:
                out[key][:, i, j] = out[key][:, j, i] = data[:, col[name]]
    return out


# ---------------------------------------------------------------------------
# marginal densities along chosen axes


def marginal_density(theta: MixtureState, axes: Sequence[int], pts) -> np.ndarray:
    """Exact marginal of the mixture on ``axes`` at ``pts`` (shape (n, len(axes))).

    Integrating out an axis of an isotropic term multiplies it by ``sqrt(pi) L``.
    """
    axes = list(axes)
    pts = np.asarray(pts, dtype=float).reshape(-1, len(axes))
    k = theta.dim - len(axes)
    c = theta.centers[:, axes]
    L2 = theta.widths**2
    scale = theta.amps**2 * (np.pi * L2) ** (k / 2)
    d2 = np.sum((pts[:, None, :] - c[None, :, :]) ** 2, axis=2)
    return np.exp(-d2 / L2[None, :]) @ scale


def box_mass(theta: MixtureState, axes: Sequence[int], lo: Sequence[float],
             hi: Sequence[float]) -> float:
    """Mixture mass inside the box ``[lo, hi]`` on ``axes`` (other axes free)."""
    total = 0.0
    for A, L, c in zip(theta.amps, theta.widths, theta.centers):
        m = A**2 * (np.pi * L**2) ** (theta.dim / 2)
        for a, l, h in zip(axes, lo, hi):
            m *= 0.5 * (erf((h - c[a]) / L) - erf((l - c[a]) / L))
        total += m
    return float(total)


def slice_grid(lo: Sequence[float], hi: Sequence[float], points: int) -> list[np.ndarray]:
    return [np.linspace(l, h, points) for l, h in zip(lo, hi)]


def slice_values(theta: MixtureState, axes: Sequence[int], grids: list[np.ndarray]):
    """Marginal on the tensor grid; returns (points, values, trapezoid mass)."""
    mesh = np.meshgrid(*grids, indexing="ij")
    pts = np.column_stack([m.ravel() for m in mesh])
    vals = marginal_density(theta, axes, pts)
    cube = vals.reshape([g.size for g in grids])
    for g in reversed(grids):
        cube = trapezoid(cube, g, axis=-1)
    return pts, vals, float(cube)
