"""Sample storage for systems described only by data.

A dataset is a finite set of (x, u, y) triples where y is either the state
derivative (continuous time) or the successor state (discrete time).  The
module owns synthetic collection from a plant + policy, neighbor queries over
concatenated (x, u) vectors, and CSV/JSON file round-trips.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import kernels

# Two samples with (x, u) closer than this must agree on y to the same
# tolerance, otherwise the local rate-constant fit downstream is infeasible.
DUPLICATE_TOL = 1e-9

# Grid bucketing degrades past a handful of dimensions; scan linearly there.
_GRID_MAX_DIM = 6


class DatasetError(ValueError):
    """Malformed dataset content or file."""


class ConflictingDataError(DatasetError):
    """Identical (x, u) measured with different outputs."""


class TimeKind(str, Enum):
    CONTINUOUS = "continuous"
    DISCRETE = "discrete"


@dataclass(frozen=True)
class Sample:
    x: np.ndarray
    u: np.ndarray
    y: np.ndarray


@dataclass
class DatasetMeta:
    """Provenance of a synthetic dataset."""

    system: str | None = None
    policy: str | None = None
    seed: int | None = None
    bounds: list[tuple[float, float]] | None = None
    noise_amp: float | None = None

    def to_dict(self):
        return {
            "system": self.system,
            "policy": self.policy,
            "seed": self.seed,
            "bounds": None if self.bounds is None else [list(b) for b in self.bounds],
            "noise_amp": self.noise_amp,
        }

    @classmethod
    def from_dict(cls, d):
        bounds = d.get("bounds")
        if bounds is not None:
            bounds = [tuple(b) for b in bounds]
        return cls(
            system=d.get("system"),
            policy=d.get("policy"),
            seed=d.get("seed"),
            bounds=bounds,
            noise_amp=d.get("noise_amp"),
        )


def _as_columns(arr, name):
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    elif arr.ndim != 2:
        raise DatasetError(f"{name} must be a 1-D or 2-D array, got ndim={arr.ndim}")
    return np.ascontiguousarray(arr)


class Dataset:
    """Immutable column store of N samples with state dim n and action dim m.

    ``xs``, ``us``, ``ys`` are float64 arrays of shape (N, n), (N, m), (N, n).
    """

    def __init__(self, xs, us, ys, time_kind=TimeKind.CONTINUOUS, meta=None,
                 validate=True):
        xs = _as_columns(xs, "x")
        us = _as_columns(us, "u")
        ys = _as_columns(ys, "y")
        if xs.shape[0] != us.shape[0] or xs.shape[0] != ys.shape[0]:
            raise DatasetError(
                f"row mismatch: x has {xs.shape[0]}, u has {us.shape[0]}, "
                f"y has {ys.shape[0]}")
        if xs.shape[1] != ys.shape[1]:
            raise DatasetError(
                f"state dim {xs.shape[1]} != output dim {ys.shape[1]}")
        self.xs = xs
        self.us = us
        self.ys = ys
        self.time_kind = TimeKind(time_kind)
        self.meta = meta if meta is not None else DatasetMeta()
        if validate:
            self._validate()
        self.xs.setflags(write=False)
        self.us.setflags(write=False)
        self.ys.setflags(write=False)

    def _validate(self):
        for name, arr in (("x", self.xs), ("u", self.us), ("y", self.ys)):
            if not np.all(np.isfinite(arr)):
                bad = int(np.argwhere(~np.isfinite(arr).all(axis=1))[0, 0])
                raise DatasetError(f"non-finite {name} value in sample {bad}")
        self._check_duplicates()

    def _check_duplicates(self):
        if len(self) < 2:
            return
        xu = np.hstack([self.xs, self.us])
        order = np.lexsort(xu.T[::-1])
        s_xu = xu[order]
        s_y = self.ys[order]
        same = np.all(np.abs(np.diff(s_xu, axis=0)) <= DUPLICATE_TOL, axis=1)
        ydiff = np.any(np.abs(np.diff(s_y, axis=0)) > DUPLICATE_TOL, axis=1)
        bad = np.nonzero(same & ydiff)[0]
        if bad.size:
            i, j = int(order[bad[0]]), int(order[bad[0] + 1])
            raise ConflictingDataError(
                f"samples {min(i, j)} and {max(i, j)} share (x, u) but disagree on y")

    @property
    def n(self) -> int:
        return self.xs.shape[1]

    @property
    def m(self) -> int:
        return self.us.shape[1]

    def __len__(self) -> int:
        return self.xs.shape[0]

    def sample(self, i: int) -> Sample:
        return Sample(self.xs[i], self.us[i], self.ys[i])

    def __iter__(self):
        for i in range(len(self)):
            yield self.sample(i)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.time_kind == other.time_kind
                and self.xs.shape == other.xs.shape
                and self.us.shape == other.us.shape
                and np.array_equal(self.xs, other.xs)
                and np.array_equal(self.us, other.us)
                and np.array_equal(self.ys, other.ys))

    def points(self) -> np.ndarray:
        """Concatenated (x, u) rows, the space neighbor queries live in."""
        return np.hstack([self.xs, self.us])


def collect(system, data_policy, n_samples, bounds, noise_amp, seed) -> Dataset:
    """Sample a dataset from a plant under a data-collecting policy.

    States are drawn uniformly and independently per dimension from ``bounds``
    with a generator seeded by ``seed``; actions are the policy output plus
    componentwise uniform noise on [-noise_amp, +noise_amp]; outputs are the
    exact plant response.  The same seed reproduces the dataset bit for bit.
    """
    n_samples = int(n_samples)
    if n_samples < 0:
        raise ValueError("n_samples must be >= 0")
    if noise_amp < 0:
        raise ValueError("noise_amp must be >= 0")
    if len(bounds) != system.n:
        raise DatasetError(
            f"bounds has {len(bounds)} intervals, system state dim is {system.n}")
    if data_policy.m != system.m:
        raise DatasetError(
            f"policy output dim {data_policy.m} != system action dim {system.m}")
    rng = np.random.default_rng(seed)
    lo = np.array([b[0] for b in bounds], dtype=np.float64)
    hi = np.array([b[1] for b in bounds], dtype=np.float64)
    xs = lo + (hi - lo) * rng.random((n_samples, system.n))
    noise = rng.uniform(-noise_amp, noise_amp, (n_samples, system.m))
    us = data_policy(xs) + noise
    ys = system(xs, us)
    meta = DatasetMeta(system=system.name, policy=data_policy.name,
                       seed=int(seed), bounds=[tuple(map(float, b)) for b in bounds],
                       noise_amp=float(noise_amp))
    return Dataset(xs.reshape(n_samples, system.n), us.reshape(n_samples, system.m),
                   ys.reshape(n_samples, system.n), system.time_kind, meta)


class NeighborIndex:
    """Spatial index over a dataset's (x, u) rows.

    Uniform grid buckets with a fixed cell edge; queries of any radius scan
    the overlapping cells and filter exactly, so results always equal the
    brute-force linear scan.  Falls back to the scan when the concatenated
    dimension is large or the dataset tiny.
    """

    def __init__(self, dataset: Dataset, cell_edge: float = 0.1):
        if cell_edge <= 0:
            raise ValueError("cell_edge must be > 0")
        self.dataset = dataset
        self._pts = dataset.points()
        npts, d = self._pts.shape
        self._use_grid = d <= _GRID_MAX_DIM and npts >= 2
        if not self._use_grid:
            return
        mins = self._pts.min(axis=0)
        spans = self._pts.max(axis=0) - mins
        self._edge = float(cell_edge)
        ncells = np.maximum(1, np.floor(spans / self._edge).astype(np.int64) + 1)
        cells = np.floor((self._pts - mins) / self._edge).astype(np.int64)
        np.clip(cells, 0, ncells - 1, out=cells)
        radix = np.ones(d, dtype=np.int64)
        for k in range(1, d):
            radix[k] = radix[k - 1] * ncells[k - 1]
        flat = cells @ radix
        order = np.argsort(flat, kind="stable").astype(np.int64)
        sorted_flat = flat[order]
        uniq, first = np.unique(sorted_flat, return_index=True)
        starts = np.empty(uniq.size + 1, dtype=np.int64)
        starts[:-1] = first
        starts[-1] = npts
        self._mins = mins
        self._ncells = ncells
        self._radix = radix
        self._uniq = uniq
        self._starts = starts
        self._order = order

    def query_batch(self, queries: np.ndarray, delta: float):
        """CSR (indptr, indices) of dataset rows within ``delta`` of each query."""
        if delta < 0:
            raise ValueError("delta must be >= 0")
        queries = np.ascontiguousarray(np.atleast_2d(queries), dtype=np.float64)
        if queries.shape[1] != self._pts.shape[1]:
            raise DatasetError(
                f"query dim {queries.shape[1]} != index dim {self._pts.shape[1]}")
        if len(self.dataset) == 0:
            return (np.zeros(queries.shape[0] + 1, np.int64),
                    np.zeros(0, np.int64))
        if not self._use_grid:
            return kernels.brute_neighbor_csr(self._pts, queries, float(delta))
        return kernels.grid_neighbor_csr(
            self._pts, queries, float(delta), self._mins, 1.0 / self._edge,
            self._ncells, self._radix, self._uniq, self._starts, self._order)

    def query(self, x, u, delta: float) -> np.ndarray:
        """Sorted indices of samples with ``||(x,u) - (x_j,u_j)|| <= delta``."""
        q = np.concatenate([np.atleast_1d(np.asarray(x, dtype=np.float64)).ravel(),
                            np.atleast_1d(np.asarray(u, dtype=np.float64)).ravel()])
        indptr, idx = self.query_batch(q.reshape(1, -1), delta)
        return idx[indptr[0]:indptr[1]]

    def self_neighbors(self, delta: float):
        """CSR neighbor lists of every sample around its own (x, u) point."""
        return self.query_batch(self._pts, delta)


def neighbors(index: NeighborIndex, x, u, delta: float) -> np.ndarray:
    return index.query(x, u, delta)


def _manifest_path(path: Path) -> Path:
    return path.with_suffix(".manifest.json")


def save(dataset: Dataset, path) -> None:
    """Write ``<path>`` as CSV plus a ``<stem>.manifest.json`` sidecar."""
    path = Path(path)
    n, m = dataset.n, dataset.m
    header = ([f"x{k}" for k in range(n)] + [f"u{k}" for k in range(m)]
              + [f"y{k}" for k in range(n)])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(len(dataset)):
            row = np.concatenate([dataset.xs[i], dataset.us[i], dataset.ys[i]])
            writer.writerow([format(v, ".17g") for v in row])
    manifest = {
        "n": n,
        "m": m,
        "time_kind": dataset.time_kind.value,
        "N": len(dataset),
        **dataset.meta.to_dict(),
    }
    with open(_manifest_path(path), "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def load(path) -> Dataset:
    """Read a dataset written by :func:`save`, validating the header against
    the manifest and every value for finiteness."""
    path = Path(path)
    manifest = None
    mpath = _manifest_path(path)
    if mpath.exists():
        with open(mpath) as fh:
            manifest = json.load(fh)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        n = sum(1 for c in header if c.startswith("x"))
        m = sum(1 for c in header if c.startswith("u"))
        ny = sum(1 for c in header if c.startswith("y"))
        expected = ([f"x{k}" for k in range(n)] + [f"u{k}" for k in range(m)]
                    + [f"y{k}" for k in range(ny)])
        if header != expected or n == 0 or ny != n:
            raise DatasetError(f"{path}: malformed header {header}")
        if manifest is not None:
            if manifest.get("n") != n or manifest.get("m") != m:
                raise DatasetError(
                    f"{path}: manifest declares n={manifest.get('n')}, "
                    f"m={manifest.get('m')} but header has n={n}, m={m}")
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != n + m + ny:
                raise DatasetError(
                    f"{path}: row {lineno} has {len(rec)} fields, expected {n + m + ny}")
            try:
                vals = [float(v) for v in rec]
            except ValueError:
                raise DatasetError(f"{path}: row {lineno} has a non-numeric token") from None
            if not all(np.isfinite(vals)):
                raise DatasetError(f"{path}: row {lineno} contains a non-finite value")
            rows.append(vals)
    data = np.array(rows, dtype=np.float64).reshape(len(rows), n + m + ny)
    time_kind = TimeKind.CONTINUOUS
    meta = DatasetMeta()
    if manifest is not None:
        time_kind = TimeKind(manifest.get("time_kind", "continuous"))
        meta = DatasetMeta.from_dict(manifest)
    return Dataset(data[:, :n], data[:, n:n + m], data[:, n + m:], time_kind, meta)
