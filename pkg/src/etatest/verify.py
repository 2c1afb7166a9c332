"""Stability verification driver.

For every state in the dataset: evaluate the policy action, gather the data
points whose (x, u) lies within delta of (x_i, pi(x_i)), turn each into a
closed ball around its measured output with a radius from the neighbor's
local rate constants, and optimize the Lyapunov directional derivative over
the ball intersection.  The signs of the per-state optima decide the verdict.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dataclass_field
from enum import Enum
from pathlib import Path

import numpy as np

from . import kernels
from .dataset import Dataset, NeighborIndex
from .lipschitz import LipschitzField
from .qclp import QclpStatus, max_linear, max_quadratic_bound, min_linear
from .systems import LyapunovFn, Policy, SystemSpec


class VerdictKind(str, Enum):
    STABLE = "stable"
    UNSTABLE = "unstable"
    INDETERMINATE = "indeterminate"
    NEAR_CRITICAL = "near-critical"


class Mode(str, Enum):
    STABILITY = "stability"
    INSTABILITY = "instability"
    BOTH = "both"


@dataclass
class PointReport:
    index: int
    x: np.ndarray
    u_policy: np.ndarray
    n_neighbors: int
    eta_max: float | None = None
    eta_min: float | None = None
    true_vdot: float | None = None
    unconstrained: bool = False
    infeasible: bool = False
    equilibrium: bool = False


@dataclass
class Verdict:
    overall: VerdictKind
    reports: list
    epsilon_critical: float
    counts: dict = dataclass_field(default_factory=dict)
    delta: float | None = None
    lam: float | None = None
    runtime_ms: float | None = None


DEFAULT_EPSILON_CRITICAL = 0.1


def radius(dataset: Dataset, i: int, j: int, policy: Policy,
           lipschitz: LipschitzField) -> float:
    """Ball radius for state i against data point j:
    ``L_x[j] * d(x_i, x_j) + L_u[j] * d(pi(x_i), u_j)``."""
    dx = float(np.linalg.norm(dataset.xs[i] - dataset.xs[j]))
    u_pi = np.asarray(policy(dataset.xs[i]), dtype=np.float64).ravel()
    du = float(np.linalg.norm(u_pi - dataset.us[j]))
    return float(lipschitz.l_x[j] * dx + lipschitz.l_u[j] * du)


def true_vdot_oracle(system: SystemSpec, policy: Policy, lyapunov: LyapunovFn,
                     x) -> float:
    """Exact Lyapunov derivative ``grad V(x) . f(x, pi(x))`` from the ground
    truth plant (test/diagnostic path only)."""
    x = np.asarray(x, dtype=np.float64)
    return float(np.sum(lyapunov.grad(x) * system(x, policy(x)), axis=-1))


def _eq_tol(bounds, dataset: Dataset) -> float:
    if bounds is not None:
        lo = np.array([b[0] for b in bounds], dtype=np.float64)
        hi = np.array([b[1] for b in bounds], dtype=np.float64)
        return 1e-6 * float(np.linalg.norm(hi - lo))
    if len(dataset) == 0:
        return 0.0
    span = dataset.xs.max(axis=0) - dataset.xs.min(axis=0)
    return 1e-6 * float(np.linalg.norm(span))


def _filter_csr(indptr, indices, drop_mask):
    """Remove CSR entries whose index is flagged in ``drop_mask``."""
    if not drop_mask.any():
        return indptr, indices
    keep = ~drop_mask[indices]
    n_rows = indptr.shape[0] - 1
    row_ids = np.repeat(np.arange(n_rows), np.diff(indptr))
    counts = np.bincount(row_ids[keep], minlength=n_rows)
    new_indptr = np.zeros(n_rows + 1, dtype=np.int64)
    np.cumsum(counts, out=new_indptr[1:])
    return new_indptr, indices[keep]


def _classify_counts(reports, eq_tol_used, epsilon, mode):
    active = [r for r in reports
              if not (r.equilibrium or r.unconstrained or r.infeasible)]
    blocked = any(r.unconstrained or r.infeasible for r in reports)
    counts = {
        "points": len(reports),
        "equilibrium_exempt": sum(r.equilibrium for r in reports),
        "unconstrained": sum(r.unconstrained for r in reports),
        "infeasible": sum(r.infeasible for r in reports),
        "eta_max_negative": sum(1 for r in active
                                if r.eta_max is not None and r.eta_max < 0),
        "eta_min_positive": sum(1 for r in active
                                if r.eta_min is not None and r.eta_min > 0),
    }
    if not active or blocked:
        return VerdictKind.INDETERMINATE, counts
    if mode is Mode.STABILITY:
        ok = all(r.eta_max is not None and r.eta_max < 0 for r in active)
        return (VerdictKind.STABLE if ok else VerdictKind.INDETERMINATE), counts
    if mode is Mode.INSTABILITY:
        ok = all(r.eta_min is not None and r.eta_min > 0 for r in active)
        return (VerdictKind.UNSTABLE if ok else VerdictKind.INDETERMINATE), counts
    return _classify_both(active, epsilon), counts


def _classify_both(active, epsilon):
    if any(r.eta_max is None or r.eta_min is None for r in active):
        return VerdictKind.INDETERMINATE
    if all(r.eta_max < 0 for r in active):
        return VerdictKind.STABLE
    if all(r.eta_min > 0 for r in active):
        return VerdictKind.UNSTABLE
    if (all(r.eta_max >= 0 for r in active)
            and all(r.eta_min <= 0 for r in active)
            and max(max(abs(r.eta_max), abs(r.eta_min)) for r in active) <= epsilon):
        return VerdictKind.NEAR_CRITICAL
    return VerdictKind.INDETERMINATE


def classify(reports, epsilon_critical: float) -> VerdictKind:
    """Four-way verdict from per-state optima computed in BOTH mode."""
    verdict, _ = _classify_counts(reports, 0.0, epsilon_critical, Mode.BOTH)
    return verdict


def eta_test(dataset: Dataset, policy: Policy, lyapunov: LyapunovFn,
             lipschitz: LipschitzField, delta: float,
             mode: Mode = Mode.STABILITY, *, index: NeighborIndex | None = None,
             x_e=None, bounds=None, eq_tol: float | None = None,
             epsilon_critical: float | None = None, fail_fast: bool = False,
             threads: int = 1, system: SystemSpec | None = None) -> Verdict:
    """Run the per-state worst-case test over the whole dataset.

    States whose distance to the equilibrium is below ``eq_tol`` are exempt
    from the strict sign rules.  States with an empty (or all-flagged)
    neighborhood make the overall verdict indeterminate.  ``fail_fast`` stops
    at the first decisive violation in single-sided modes; the default is
    exhaustive so exported maps are complete.  Passing ``system`` records the
    ground-truth derivative alongside each estimate.
    """
    mode = Mode(mode)
    if len(lipschitz) != len(dataset):
        raise ValueError("rate-constant field and dataset lengths differ")
    start = time.perf_counter()
    n = dataset.n
    n_pts = len(dataset)
    x_e = np.zeros(n) if x_e is None else np.asarray(x_e, dtype=np.float64)
    tol_eq = _eq_tol(bounds, dataset) if eq_tol is None else float(eq_tol)
    epsilon = (DEFAULT_EPSILON_CRITICAL if epsilon_critical is None
               else float(epsilon_critical))

    if n_pts == 0:
        return Verdict(VerdictKind.INDETERMINATE, [], epsilon,
                       {"points": 0}, delta, lipschitz.lam, 0.0)

    if index is None:
        index = NeighborIndex(dataset, cell_edge=float(delta))
    u_pi = np.asarray(policy(dataset.xs), dtype=np.float64).reshape(n_pts, dataset.m)
    queries = np.hstack([dataset.xs, u_pi])
    indptr, indices = index.query_batch(queries, float(delta))
    indptr, indices = _filter_csr(indptr, indices, lipschitz.unconstrained)
    radii = kernels.radii_batch(indptr, indices, dataset.xs, dataset.us,
                                dataset.xs, u_pi, lipschitz.l_x, lipschitz.l_u)
    grads = np.asarray(lyapunov.grad(dataset.xs), dtype=np.float64).reshape(n_pts, n)
    eq_mask = np.linalg.norm(dataset.xs - x_e, axis=1) <= tol_eq
    true_vals = None
    if system is not None:
        true_vals = np.sum(grads * np.asarray(system(dataset.xs, u_pi)), axis=-1)

    want_max = mode in (Mode.STABILITY, Mode.BOTH)
    want_min = mode in (Mode.INSTABILITY, Mode.BOTH)

    def solve_point(i: int) -> PointReport:
        lo, hi = indptr[i], indptr[i + 1]
        rep = PointReport(i, dataset.xs[i], u_pi[i], int(hi - lo),
                          equilibrium=bool(eq_mask[i]))
        if true_vals is not None:
            rep.true_vdot = float(true_vals[i])
        if hi == lo:
            rep.unconstrained = True
            return rep
        balls = (dataset.ys[indices[lo:hi]], radii[lo:hi])
        if want_max:
            res = max_linear(grads[i], balls)
            if res.status is QclpStatus.OPTIMAL:
                rep.eta_max = res.value
            else:
                rep.infeasible = True
                return rep
        if want_min:
            res = min_linear(grads[i], balls)
            if res.status is QclpStatus.OPTIMAL:
                rep.eta_min = res.value
            else:
                rep.infeasible = True
        return rep

    reports: list[PointReport] = []
    decisive_break = False
    chunk = 256
    order = range(0, n_pts, chunk)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=int(threads)) as pool:
            chunks = pool.map(
                lambda s: [solve_point(i) for i in range(s, min(s + chunk, n_pts))],
                order)
            for part in chunks:
                reports.extend(part)
                if fail_fast and _chunk_violates(part, mode):
                    decisive_break = True
                    break
    else:
        for s in order:
            part = [solve_point(i) for i in range(s, min(s + chunk, n_pts))]
            reports.extend(part)
            if fail_fast and _chunk_violates(part, mode):
                decisive_break = True
                break

    if decisive_break:
        overall = VerdictKind.INDETERMINATE
        _, counts = _classify_counts(reports, tol_eq, epsilon, mode)
    else:
        overall, counts = _classify_counts(reports, tol_eq, epsilon, mode)
    runtime_ms = 1000.0 * (time.perf_counter() - start)
    return Verdict(overall, reports, epsilon, counts, float(delta),
                   lipschitz.lam, runtime_ms)


def _chunk_violates(part, mode) -> bool:
    for r in part:
        if r.equilibrium:
            continue
        if r.unconstrained or r.infeasible:
            return True
        if mode is Mode.STABILITY and r.eta_max is not None and r.eta_max >= 0:
            return True
        if mode is Mode.INSTABILITY and r.eta_min is not None and r.eta_min <= 0:
            return True
    return False


def eta_test_discrete(dataset: Dataset, policy: Policy, lyapunov: LyapunovFn,
                      lipschitz: LipschitzField, delta: float, *,
                      index: NeighborIndex | None = None, x_e=None,
                      bounds=None, eq_tol: float | None = None) -> Verdict:
    """One-step-decrease test for discrete-time data: bound
    ``max V(x')`` over the successor-state ball intersection and require the
    bound to fall below V(x) at every non-equilibrium state."""
    if dataset.time_kind.value != "discrete":
        raise ValueError("eta_test_discrete requires a discrete-time dataset")
    if lyapunov.kind != "Quadratic":
        raise ValueError("discrete-time test requires a quadratic V")
    if len(lipschitz) != len(dataset):
        raise ValueError("rate-constant field and dataset lengths differ")
    start = time.perf_counter()
    n_pts = len(dataset)
    epsilon = DEFAULT_EPSILON_CRITICAL
    if n_pts == 0:
        return Verdict(VerdictKind.INDETERMINATE, [], epsilon, {"points": 0},
                       delta, lipschitz.lam, 0.0)
    x_e = np.zeros(dataset.n) if x_e is None else np.asarray(x_e, dtype=np.float64)
    tol_eq = _eq_tol(bounds, dataset) if eq_tol is None else float(eq_tol)
    if index is None:
        index = NeighborIndex(dataset, cell_edge=float(delta))
    u_pi = np.asarray(policy(dataset.xs), dtype=np.float64).reshape(n_pts, dataset.m)
    queries = np.hstack([dataset.xs, u_pi])
    indptr, indices = index.query_batch(queries, float(delta))
    indptr, indices = _filter_csr(indptr, indices, lipschitz.unconstrained)
    radii = kernels.radii_batch(indptr, indices, dataset.xs, dataset.us,
                                dataset.xs, u_pi, lipschitz.l_x, lipschitz.l_u)
    values = np.asarray(lyapunov.value(dataset.xs), dtype=np.float64).ravel()
    eq_mask = np.linalg.norm(dataset.xs - x_e, axis=1) <= tol_eq

    reports = []
    for i in range(n_pts):
        lo, hi = indptr[i], indptr[i + 1]
        rep = PointReport(i, dataset.xs[i], u_pi[i], int(hi - lo),
                          equilibrium=bool(eq_mask[i]))
        if hi == lo:
            rep.unconstrained = True
        else:
            try:
                bound = max_quadratic_bound(
                    lyapunov, (dataset.ys[indices[lo:hi]], radii[lo:hi]))
            except ValueError:
                rep.infeasible = True
                reports.append(rep)
                continue
            rep.eta_max = float(bound - values[i])
        reports.append(rep)

    active = [r for r in reports
              if not (r.equilibrium or r.unconstrained or r.infeasible)]
    blocked = any(r.unconstrained or r.infeasible for r in reports)
    stable = bool(active) and not blocked and all(r.eta_max < 0 for r in active)
    counts = {
        "points": n_pts,
        "equilibrium_exempt": int(eq_mask.sum()),
        "unconstrained": sum(r.unconstrained for r in reports),
        "infeasible": sum(r.infeasible for r in reports),
        "decrease_certified": sum(1 for r in active if r.eta_max < 0),
    }
    runtime_ms = 1000.0 * (time.perf_counter() - start)
    return Verdict(VerdictKind.STABLE if stable else VerdictKind.INDETERMINATE,
                   reports, epsilon, counts, float(delta), lipschitz.lam,
                   runtime_ms)


def write_reports_csv(verdict: Verdict, path, n: int) -> None:
    """Per-state export: index, state, neighbor count, optima, and the ground
    truth derivative when it was recorded."""
    path = Path(path)
    with_true = any(r.true_vdot is not None for r in verdict.reports)
    header = (["i"] + [f"x{k}" for k in range(n)]
              + ["neighbors", "eta_max", "eta_min"]
              + (["true_vdot"] if with_true else []))

    def fmt(v):
        return "" if v is None else format(v, ".17g")

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for r in verdict.reports:
            row = ([r.index] + [format(v, ".17g") for v in r.x]
                   + [r.n_neighbors, fmt(r.eta_max), fmt(r.eta_min)])
            if with_true:
                row.append(fmt(r.true_vdot))
            writer.writerow(row)


def write_summary_json(verdict: Verdict, path) -> None:
    payload = {
        "verdict": verdict.overall.value,
        "counts": verdict.counts,
        "delta": verdict.delta,
        "lambda": verdict.lam,
        "epsilon_critical": verdict.epsilon_critical,
        "runtime_ms": verdict.runtime_ms,
    }
    with open(Path(path), "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
