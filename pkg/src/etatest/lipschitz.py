"""Local rate-constant estimation.

At every sample the smallest constants (L_x, L_u) satisfying the local rate
condition ``d(y_j, y_k) <= L_x d(x_j, x_k) + L_u d(u_j, u_k)`` over all pairs
of samples inside the delta-neighborhood are found by an exact two-variable
QP (objective ``lam*L_x^2 + L_u^2``), solved by vertex enumeration in the
kernels module.  Fitting on every in-ball pair rather than only pairs through
the center is what makes the constants usable on queries that are near, but
not at, the sample.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import kernels
from .dataset import ConflictingDataError, Dataset, NeighborIndex

FLAG_OK = 0
FLAG_UNCONSTRAINED = 1
FLAG_CONFLICT = 2


class LocalEstimate(NamedTuple):
    l_x: float
    l_u: float
    unconstrained: bool


@dataclass
class LipschitzField:
    """Per-sample local constants plus the neighborhood radius and QP weight
    they were fitted with.  ``unconstrained[i]`` marks samples whose only
    neighbor was themselves; their constants are (0, 0) and must not be used
    to build verification constraints."""

    l_x: np.ndarray
    l_u: np.ndarray
    unconstrained: np.ndarray
    delta: float
    lam: float

    def __post_init__(self):
        self.l_x = np.asarray(self.l_x, dtype=np.float64)
        self.l_u = np.asarray(self.l_u, dtype=np.float64)
        self.unconstrained = np.asarray(self.unconstrained, dtype=bool)
        if not (len(self.l_x) == len(self.l_u) == len(self.unconstrained)):
            raise ValueError("field arrays must have equal length")
        ok = ~self.unconstrained
        if np.any(self.l_x[ok] < 0) or np.any(self.l_u[ok] < 0):
            raise ValueError("rate constants must be nonnegative")

    def __len__(self):
        return len(self.l_x)


def solve_rate_qp(dx, du, dy, lam: float):
    """Minimizer of ``lam*L_x**2 + L_u**2`` subject to
    ``dx[k]*L_x + du[k]*L_u >= dy[k]`` and nonnegativity, for an explicit
    constraint list.  Raises on an unsatisfiable zero-distance constraint."""
    dx = np.asarray(dx, dtype=np.float64).ravel()
    du = np.asarray(du, dtype=np.float64).ravel()
    dy = np.asarray(dy, dtype=np.float64).ravel()
    if lam <= 0:
        raise ValueError("lam must be > 0")
    l_x, l_u = kernels.lipschitz_qp(dx, du, dy, float(lam))
    if l_x < 0:
        raise ConflictingDataError(
            "constraints demand d(y) > 0 at zero (x, u) distance")
    return float(l_x), float(l_u)


def estimate_local(dataset: Dataset, index: NeighborIndex, i: int,
                   delta: float, lam: float) -> LocalEstimate:
    """Fit (L_x, L_u) at sample ``i`` from all pairs in its delta-neighborhood.

    A sample whose neighborhood holds nothing but itself gets (0, 0) with the
    ``unconstrained`` flag set.
    """
    if lam <= 0:
        raise ValueError("lam must be > 0")
    if delta <= 0:
        raise ValueError("delta must be > 0")
    idx = index.query(dataset.xs[i], dataset.us[i], delta)
    if idx.size <= 1:
        return LocalEstimate(0.0, 0.0, True)
    a, b, c, conflict = kernels.pair_constraints(idx, dataset.xs, dataset.us,
                                                 dataset.ys)
    if conflict:
        raise ConflictingDataError(
            f"sample {i}: neighborhood contains conflicting duplicates")
    l_x, l_u = kernels.lipschitz_qp(a, b, c, float(lam))
    if l_x < 0:
        raise ConflictingDataError(
            f"sample {i}: neighborhood contains conflicting duplicates")
    return LocalEstimate(float(l_x), float(l_u), False)


def estimate_all(dataset: Dataset, index: NeighborIndex, delta: float,
                 lam: float) -> LipschitzField:
    """Fit the constants at every sample (order-independent)."""
    if lam <= 0:
        raise ValueError("lam must be > 0")
    if delta <= 0:
        raise ValueError("delta must be > 0")
    if len(dataset) == 0:
        return LipschitzField(np.zeros(0), np.zeros(0), np.zeros(0, bool),
                              float(delta), float(lam))
    indptr, indices = index.self_neighbors(float(delta))
    l_x, l_u, flags = kernels.lipschitz_batch(
        indptr, indices, dataset.xs, dataset.us, dataset.ys, float(lam))
    bad = np.nonzero(flags == FLAG_CONFLICT)[0]
    if bad.size:
        raise ConflictingDataError(
            f"sample {int(bad[0])}: neighborhood contains conflicting duplicates")
    return LipschitzField(l_x, l_u, flags == FLAG_UNCONSTRAINED,
                          float(delta), float(lam))


def save_field(field: LipschitzField, path) -> None:
    """CSV export ``i,L_x,L_u,unconstrained`` plus a JSON manifest sidecar."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["i", "L_x", "L_u", "unconstrained"])
        for i in range(len(field)):
            writer.writerow([i, format(field.l_x[i], ".17g"),
                             format(field.l_u[i], ".17g"),
                             int(field.unconstrained[i])])
    with open(path.with_suffix(".manifest.json"), "w") as fh:
        json.dump({"delta": field.delta, "lambda": field.lam, "N": len(field)},
                  fh, indent=2)
        fh.write("\n")


def load_field(path) -> LipschitzField:
    path = Path(path)
    with open(path.with_suffix(".manifest.json")) as fh:
        manifest = json.load(fh)
    rows = np.loadtxt(path, delimiter=",", skiprows=1,
                      ndmin=2) if path.stat().st_size else np.zeros((0, 4))
    if rows.size == 0:
        rows = rows.reshape(0, 4)
    return LipschitzField(rows[:, 1], rows[:, 2], rows[:, 3] != 0,
                          float(manifest["delta"]), float(manifest["lambda"]))
