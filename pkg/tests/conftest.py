import numpy as np
import pytest

import etatest as et


@pytest.fixture(scope="session")
def osc_stable():
    return et.make_experiment("osc-stable")


@pytest.fixture(scope="session")
def osc_small(osc_stable):
    """Small damped-oscillator dataset shared by fast tests."""
    ds = et.collect(osc_stable.system, osc_stable.policy, 1500,
                    osc_stable.bounds, 0.01, seed=0)
    index = et.NeighborIndex(ds, cell_edge=0.1)
    field = et.estimate_all(ds, index, 0.1, 1.0)
    return ds, index, field


@pytest.fixture(scope="session")
def osc_full(osc_stable):
    """Full-scale damped-oscillator run shared by slow tests and acceptance."""
    ds = et.collect(osc_stable.system, osc_stable.policy, 10000,
                    osc_stable.bounds, 0.01, seed=0)
    index = et.NeighborIndex(ds, cell_edge=0.1)
    field = et.estimate_all(ds, index, 0.1, 1.0)
    return ds, index, field


def qp_enumeration_oracle(a, b, c, lam, feas_eps=1e-9):
    """Independent vertex enumeration for the two-variable rate QP: origin,
    per-constraint gradient projections and axis intercepts, and every
    pairwise line intersection; feasible candidate with the least objective.
    """
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    c = np.asarray(c, float)
    cands = [(0.0, 0.0)]
    k = len(a)
    for j in range(k):
        den = a[j] ** 2 + lam * b[j] ** 2
        if den > 0:
            cands.append((a[j] * c[j] / den, lam * b[j] * c[j] / den))
        if a[j] > 0:
            cands.append((c[j] / a[j], 0.0))
        if b[j] > 0:
            cands.append((0.0, c[j] / b[j]))
    for i in range(k):
        for j in range(i + 1, k):
            det = a[i] * b[j] - a[j] * b[i]
            if abs(det) < 1e-14 * max(1.0, a[i] * b[j], a[j] * b[i]):
                continue
            cands.append(((c[i] * b[j] - c[j] * b[i]) / det,
                          (a[i] * c[j] - a[j] * c[i]) / det))
    scale = 1.0 + (np.max(c) if k else 0.0)
    best = None
    for x, y in cands:
        if x < -1e-12 or y < -1e-12:
            continue
        x, y = max(x, 0.0), max(y, 0.0)
        if np.all(a * x + b * y >= c - feas_eps * scale):
            obj = lam * x * x + y * y
            if best is None or obj < best[0]:
                best = (obj, x, y)
    return best


def grid_zoom_max(c, centers, radii, seed_point=None, iters=80):
    """Independent maximizer estimate for linear objectives over ball
    intersections: dense grid over the inflated bounding box, feasibility
    filtered, recentered on the running best; the box halves only when an
    iteration brings no improvement (so contraction never outruns progress
    along the feasible boundary).

    ``seed_point`` (a feasibility witness from the instance construction)
    anchors the search when the feasible region is small relative to the box.
    """
    c = np.asarray(c, float)
    centers = np.atleast_2d(np.asarray(centers, float))
    radii = np.asarray(radii, float)
    n = centers.shape[1]
    pts = 9 if n <= 3 else 7
    lo = (centers - radii[:, None]).min(axis=0)
    hi = (centers + radii[:, None]).max(axis=0)
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo) + 1e-12
    scale = float(np.max(half))
    best_val, best_pt = -np.inf, None
    if seed_point is not None:
        seed_point = np.asarray(seed_point, float)
        if np.all(np.linalg.norm(seed_point - centers, axis=1) <= radii + 1e-12):
            best_val, best_pt = float(seed_point @ c), seed_point
    for _ in range(iters):
        axes = [np.linspace(mid[k] - half[k], mid[k] + half[k], pts)
                for k in range(n)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
        d2 = np.sum((grid[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        feas = np.all(d2 <= (radii ** 2)[None, :] + 1e-12, axis=1)
        improved = False
        if np.any(feas):
            vals = grid[feas] @ c
            k = int(np.argmax(vals))
            if vals[k] > best_val + 1e-12 * (1.0 + abs(best_val)):
                best_val = float(vals[k])
                best_pt = grid[feas][k]
                improved = True
        if best_pt is not None:
            mid = best_pt
            if not improved:
                half = half * 0.5
                if np.max(half) < 1e-7 * scale:
                    break
    return best_val, best_pt


def random_feasible_balls(rng, n, m_balls, scale=1.0):
    """Ball set built around a guaranteed interior point with margin."""
    centers = rng.normal(0.0, scale, (m_balls, n))
    p = rng.normal(0.0, 0.3 * scale, n)
    margin = rng.uniform(0.05, 0.3, m_balls) * scale
    radii = np.linalg.norm(centers - p, axis=1) + margin
    return centers, radii, p
