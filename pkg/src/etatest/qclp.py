"""Optimization over intersections of Euclidean balls.

Continuous-time verification needs the exact max (or min) of a linear
functional over the intersection; discrete-time verification needs a
certified upper bound on a convex quadratic over the same set.

The linear solver is a primal active-set method: start from the most binding
single ball's closed form, then repeatedly add the most violated ball and
maximize on the intersection of active spheres (reduced to a sphere inside an
affine subspace), dropping constraints whose multipliers go negative.  A
projected-subgradient bisection takes over on the rare degenerate instance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

FEAS_TOL = 1e-8          # absolute feasibility tolerance
_MU_TOL = 1e-9           # multipliers below -_MU_TOL trigger a drop
_COLLAPSE_TOL = 1e-9     # sub-sphere radius under which the active face is a point


class QclpStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass(frozen=True)
class Ball:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center",
                           np.asarray(self.center, dtype=np.float64).ravel())
        if not np.isfinite(self.radius) or self.radius < 0:
            raise ValueError("radius must be finite and >= 0")


@dataclass
class QclpResult:
    status: QclpStatus
    value: float
    argpoint: np.ndarray | None
    kkt_residual: float
    active_set: tuple

    @property
    def optimal(self) -> bool:
        return self.status is QclpStatus.OPTIMAL


def _as_arrays(balls):
    if isinstance(balls, tuple) and len(balls) == 2 and not isinstance(balls[0], Ball):
        centers = np.atleast_2d(np.asarray(balls[0], dtype=np.float64))
        radii = np.asarray(balls[1], dtype=np.float64).ravel()
    else:
        balls = list(balls)
        if not balls:
            return np.zeros((0, 0)), np.zeros(0)
        centers = np.array([b.center for b in balls], dtype=np.float64)
        radii = np.array([b.radius for b in balls], dtype=np.float64)
    if centers.shape[0] != radii.shape[0]:
        raise ValueError("centers and radii length mismatch")
    if np.any(radii < 0) or not np.all(np.isfinite(centers)):
        raise ValueError("balls must have finite centers and nonnegative radii")
    return centers, radii


def _prune(centers, radii):
    """Drop balls that contain another ball entirely; detect pairwise-
    separated pairs.  Returns (kept original indices, None) or
    (None, separated pair)."""
    m = centers.shape[0]
    if m == 1:
        return np.array([0]), None
    diff = centers[:, None, :] - centers[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=2))
    sep = dist - (radii[:, None] + radii[None, :])
    np.fill_diagonal(sep, -np.inf)
    worst = np.unravel_index(np.argmax(sep), sep.shape)
    if sep[worst] > FEAS_TOL:
        return None, worst
    # inside[j, k] <= 0 means ball k sits inside ball j, making j redundant;
    # strict containment cannot cycle, exact ties break by index
    inside = dist + radii[None, :] - radii[:, None]
    np.fill_diagonal(inside, np.inf)
    tie_low = (inside == 0.0) & np.tril(np.ones((m, m), dtype=bool), k=-1)
    redundant = (inside < 0.0).any(axis=1) | tie_low.any(axis=1)
    return np.nonzero(~redundant)[0], None


def _sphere_face_max(c, centers, radii, work):
    """Maximize c.v over the intersection of the active spheres in ``work``.

    Returns (v, collapsed) or (None, False) when the spheres cannot share a
    point.  ``collapsed`` means the face is (numerically) a single point, in
    which case optimality follows from feasibility rather than multipliers.
    """
    a0 = centers[work[0]]
    r0 = radii[work[0]]
    n = centers.shape[1]
    if len(work) == 1:
        cn = np.linalg.norm(c)
        return a0 + (r0 / cn) * c, r0 <= _COLLAPSE_TOL
    rows = centers[work[1:]] - a0
    rhs = 0.5 * (np.sum(centers[work[1:]] ** 2, axis=1) - radii[work[1:]] ** 2
                 - np.sum(a0 ** 2) + r0 ** 2)
    scale = max(1.0, float(np.max(np.abs(rows))), float(np.max(np.abs(rhs))))
    p, *_ = np.linalg.lstsq(rows, rhs, rcond=None)
    if np.linalg.norm(rows @ p - rhs) > 1e-9 * scale:
        return None, False
    u, s, vt = np.linalg.svd(rows)
    rank = int(np.sum(s > max(rows.shape) * np.finfo(float).eps * (s[0] if s.size else 1.0)))
    nullb = vt[rank:].T          # (n, n-rank) orthonormal tangent basis
    q = p + nullb @ (nullb.T @ (a0 - p))
    rho2 = r0 ** 2 - float(np.sum((q - a0) ** 2))
    if rho2 < -max(1e-12, 1e-10 * r0 ** 2):
        return None, False
    rho = np.sqrt(max(rho2, 0.0))
    if nullb.shape[1] == 0:
        return q, True
    ct = nullb.T @ c
    ctn = np.linalg.norm(ct)
    if ctn > 1e-13 * (1.0 + np.linalg.norm(c)):
        v = q + (rho / ctn) * (nullb @ ct)
    else:
        v = q + rho * nullb[:, 0]  # objective is flat on the face
    return v, rho <= _COLLAPSE_TOL


def _multipliers(c, centers, work, v):
    grads = 2.0 * (v[:, None] - centers[work].T)   # (n, k)
    mu, *_ = np.linalg.lstsq(grads, c, rcond=None)
    residual = float(np.linalg.norm(grads @ mu - c))
    return mu, residual


def _violations(v, centers, radii):
    return np.linalg.norm(centers - v, axis=1) - radii


def _feasibility_search(centers, radii, v0, iters=2000):
    """Subgradient minimization of max_j(||v - a_j|| - r_j) with step toward
    zero; returns (best point, best violation).  Used only to locate an
    interior point when the objective vector vanishes."""
    v = v0.copy()
    best_v = v.copy()
    best_f = np.inf
    for _ in range(iters):
        viol = _violations(v, centers, radii)
        j = int(np.argmax(viol))
        f = viol[j]
        if f < best_f:
            best_f = f
            best_v = v.copy()
            if f <= 0.5 * FEAS_TOL:
                break
        d = v - centers[j]
        dn = np.linalg.norm(d)
        if dn == 0:
            break
        v = v - (f / dn) * d
    return best_v, best_f


def _best_feasible(c, cand, centers, radii):
    """(best feasible candidate or None, least-violating candidate, its
    violation).  The runner-up serves as the infeasibility certificate."""
    diff = cand[:, None, :] - centers[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=2))
    worst = np.max(dist - radii[None, :], axis=1)
    nearest = int(np.argmin(worst))
    ok = worst <= FEAS_TOL
    if not np.any(ok):
        return None, cand[nearest], float(worst[nearest])
    vals = cand[ok] @ c
    return cand[ok][int(np.argmax(vals))], cand[nearest], float(worst[nearest])


def _enumerate_max_1d(c, centers, radii):
    lo = centers[:, 0] - radii
    hi = centers[:, 0] + radii
    lo_star = float(np.max(lo))
    hi_star = float(np.min(hi))
    if lo_star > hi_star + FEAS_TOL:
        mid = np.array([0.5 * (lo_star + hi_star)])
        return None, mid, 0.5 * (lo_star - hi_star)
    v = hi_star if c[0] > 0 else lo_star
    return np.array([v]), None, 0.0


def _enumerate_max_2d(c, centers, radii):
    """Exact maximizer by candidate enumeration, vectorized: per-ball
    tangent points plus both intersection corners of every sphere pair.
    Returns None when no candidate is feasible (empty intersection)."""
    m = centers.shape[0]
    cn = np.linalg.norm(c)
    cand = [centers + np.outer(radii, c / cn)]
    if m >= 2:
        iu, ju = np.triu_indices(m, k=1)
        d_vec = centers[ju] - centers[iu]
        d2 = np.sum(d_vec * d_vec, axis=1)
        good = d2 > 0
        iu, ju, d_vec, d2 = iu[good], ju[good], d_vec[good], d2[good]
        t = (radii[iu] ** 2 - radii[ju] ** 2 + d2) / (2.0 * d2)
        q = centers[iu] + t[:, None] * d_vec
        rho2 = radii[iu] ** 2 - t * t * d2
        # keep tangent pairs: a grazing contact can be the only feasible point
        near = rho2 > -max(1e-12, FEAS_TOL) * np.maximum(radii[iu], radii[ju])
        rho = np.sqrt(np.maximum(rho2[near], 0.0))
        perp = np.column_stack([-d_vec[near, 1], d_vec[near, 0]]) / np.sqrt(d2[near])[:, None]
        cand.append(q[near] + rho[:, None] * perp)
        cand.append(q[near] - rho[:, None] * perp)
    return _best_feasible(c, np.vstack(cand), centers, radii)


def _enumerate_max_nd(c, centers, radii):
    """Subset enumeration for n >= 3: the maximizer lies on the face cut out
    by some active set of size 1..n; faces of full size contribute both of
    their isolated points."""
    from itertools import combinations

    m, n = centers.shape
    cand = [centers + np.outer(radii, c / np.linalg.norm(c))]
    for k in range(2, min(n, m) + 1):
        for sub in combinations(range(m), k):
            work = list(sub)
            got = _face_points(c, centers, radii, work, both=(k == n))
            if got is not None:
                cand.append(got)
    return _best_feasible(c, np.vstack(cand), centers, radii)


def _face_points(c, centers, radii, work, both=False):
    a0 = centers[work[0]]
    r0 = radii[work[0]]
    rows = centers[work[1:]] - a0
    rhs = 0.5 * (np.sum(centers[work[1:]] ** 2, axis=1) - radii[work[1:]] ** 2
                 - np.sum(a0 ** 2) + r0 ** 2)
    scale = max(1.0, float(np.max(np.abs(rows))), float(np.max(np.abs(rhs))))
    p, *_ = np.linalg.lstsq(rows, rhs, rcond=None)
    if np.linalg.norm(rows @ p - rhs) > 1e-9 * scale:
        return None
    u, s, vt = np.linalg.svd(rows)
    rank = int(np.sum(s > max(rows.shape) * np.finfo(float).eps * (s[0] if s.size else 1.0)))
    nullb = vt[rank:].T
    q = p + nullb @ (nullb.T @ (a0 - p))
    rho2 = r0 ** 2 - float(np.sum((q - a0) ** 2))
    if rho2 < -max(1e-12, 1e-10 * r0 ** 2):
        return None
    rho = np.sqrt(max(rho2, 0.0))
    if nullb.shape[1] == 0:
        return q.reshape(1, -1)
    ct = nullb.T @ c
    ctn = np.linalg.norm(ct)
    direction = (nullb @ ct) / ctn if ctn > 1e-13 * (1.0 + np.linalg.norm(c)) \
        else nullb[:, 0]
    if both:
        return np.vstack([q + rho * direction, q - rho * direction])
    return (q + rho * direction).reshape(1, -1)


def _fallback(c, centers, radii):
    """Exact enumeration backstop: returns the maximizer or None when the
    intersection is provably empty (no candidate point is feasible)."""
    n = centers.shape[1]
    if n == 1:
        return _enumerate_max_1d(c, centers, radii)
    if n == 2:
        return _enumerate_max_2d(c, centers, radii)
    return _enumerate_max_nd(c, centers, radii)


def max_linear(c, balls) -> QclpResult:
    """Maximize ``c . v`` over the intersection of closed balls.

    Empty ball list -> UNBOUNDED.  Provably empty intersection -> INFEASIBLE.
    ``c = 0`` -> value 0 at any feasible point.  At OPTIMAL the argpoint is
    feasible within 1e-8 and the stationarity residual
    ``||c - sum_j mu_j 2(v - a_j)||`` is at most 1e-6 (zero by convention when
    the feasible set or active face collapses to a single point, where
    feasibility itself certifies optimality).
    """
    c = np.asarray(c, dtype=np.float64).ravel()
    if not np.all(np.isfinite(c)):
        raise ValueError("objective vector must be finite")
    centers, radii = _as_arrays(balls)
    if centers.shape[0] == 0:
        return QclpResult(QclpStatus.UNBOUNDED, np.inf, None, 0.0, ())
    if centers.shape[1] != c.shape[0]:
        raise ValueError(
            f"dimension mismatch: c has {c.shape[0]}, balls have {centers.shape[1]}")

    kept, separated = _prune(centers, radii)
    if separated is not None:
        return QclpResult(QclpStatus.INFEASIBLE, np.nan, None,
                          float(np.inf), tuple(int(t) for t in separated))
    sub_c = centers[kept]
    sub_r = radii[kept]

    cn = np.linalg.norm(c)
    if cn == 0.0:
        v, f = _feasibility_search(sub_c, sub_r, sub_c.mean(axis=0))
        if f > FEAS_TOL:
            return QclpResult(QclpStatus.INFEASIBLE, np.nan, v, float(f), ())
        return QclpResult(QclpStatus.OPTIMAL, 0.0, v, 0.0, ())

    # degenerate singleton: a (near) zero-radius ball pins the whole set
    tiny = int(np.argmin(sub_r))
    if sub_r[tiny] <= _COLLAPSE_TOL:
        v = sub_c[tiny]
        worst = float(np.max(_violations(v, sub_c, sub_r)))
        if worst > FEAS_TOL:
            return QclpResult(QclpStatus.INFEASIBLE, np.nan, v, worst, ())
        return QclpResult(QclpStatus.OPTIMAL, float(c @ v), v.copy(), 0.0,
                          (int(kept[tiny]),))

    j0 = int(np.argmin(sub_c @ c + sub_r * cn))
    work = [j0]
    v, collapsed = _sphere_face_max(c, sub_c, sub_r, work)
    visited = {frozenset(work)}
    max_iter = max(10 * centers.shape[1], 30)
    for _ in range(max_iter):
        if collapsed:
            break  # degenerate face: settle it exactly below
        viol = _violations(v, sub_c, sub_r)
        jv = int(np.argmax(viol))
        if viol[jv] > FEAS_TOL:
            if jv in work:
                break
            work.append(jv)
        else:
            mu, residual = _multipliers(c, sub_c, work, v)
            if residual > 1e-9 * (1.0 + cn):
                break
            if np.all(mu >= -_MU_TOL * (1.0 + cn)):
                return QclpResult(QclpStatus.OPTIMAL, float(c @ v), v,
                                  residual, tuple(int(kept[j]) for j in work))
            if len(work) == 1:
                break
            work.pop(int(np.argmin(mu)))
        key = frozenset(work)
        if key in visited:
            break
        visited.add(key)
        v, collapsed = _sphere_face_max(c, sub_c, sub_r, work)
        if v is None:
            break

    # exact enumeration backstop (also the infeasibility certificate)
    v, near, bad = _fallback(c, sub_c, sub_r)
    if v is None:
        return QclpResult(QclpStatus.INFEASIBLE, np.nan, near, float(bad), ())
    viol = _violations(v, sub_c, sub_r)
    work = [int(j) for j in np.nonzero(viol >= -1e-7 * (1.0 + np.max(sub_r)))[0]]
    value = float(c @ v)
    active = tuple(int(kept[j]) for j in work)
    if work:
        mu, residual = _multipliers(c, sub_c, work, v)
        if residual <= 1e-6 and np.all(mu >= -_MU_TOL * (1.0 + cn)):
            return QclpResult(QclpStatus.OPTIMAL, value, v, residual, active)
        face, collapsed = _sphere_face_max(c, sub_c, sub_r, work)
        if face is not None and collapsed:
            # tangency or pinned vertex: feasibility itself certifies
            return QclpResult(QclpStatus.OPTIMAL, value, v, 0.0, active)
        return QclpResult(QclpStatus.OPTIMAL, value, v, residual, active)
    return QclpResult(QclpStatus.OPTIMAL, value, v, float("inf"), active)


def min_linear(c, balls) -> QclpResult:
    """Minimize ``c . v`` over the ball intersection (negated maximization)."""
    c = np.asarray(c, dtype=np.float64).ravel()
    res = max_linear(-c, balls)
    value = -res.value if np.isfinite(res.value) or res.status is QclpStatus.UNBOUNDED \
        else res.value
    return QclpResult(res.status, value, res.argpoint, res.kkt_residual,
                      res.active_set)


def ball_quadratic_max(P, center, radius):
    """Exact maximum of ``v' P v`` (P symmetric PSD) over one closed ball,
    with the maximizer.  The optimum sits on the sphere; the radial multiplier
    solves a one-dimensional secular equation above the top eigenvalue."""
    P = np.asarray(P, dtype=np.float64)
    P = 0.5 * (P + P.T)
    center = np.asarray(center, dtype=np.float64).ravel()
    radius = float(radius)
    evals, evecs = np.linalg.eigh(P)
    lmax = float(evals[-1])
    if lmax <= 0.0:
        return 0.0, center.copy()
    if radius == 0.0:
        return float(center @ P @ center), center.copy()
    beta = evecs.T @ center
    z = evals * beta
    gap = lmax - evals
    top = gap <= 1e-12 * lmax
    s_top2 = float(np.sum(z[top] ** 2))

    def phi(nu):
        return float(np.sum((z / (nu + gap)) ** 2)) - radius ** 2

    s = np.zeros_like(z)
    if s_top2 > 0.0:
        nu_lo = np.sqrt(s_top2) / radius
        nu_hi = np.sqrt(float(np.sum(z ** 2))) / radius
        for _ in range(200):
            nu_mid = 0.5 * (nu_lo + nu_hi)
            if phi(nu_mid) > 0.0:
                nu_lo = nu_mid
            else:
                nu_hi = nu_mid
            if nu_hi - nu_lo <= 1e-15 * nu_hi:
                break
        nu = 0.5 * (nu_lo + nu_hi)
        s = z / (nu + gap)
    else:
        s[~top] = z[~top] / gap[~top]
        perp2 = float(np.sum(s ** 2))
        if perp2 <= radius ** 2:
            # gradient has no component on the top eigenspace: fill the
            # leftover radius along it
            tau = np.sqrt(radius ** 2 - perp2)
            s[int(np.nonzero(top)[0][0])] = tau
        else:
            nu_lo = 1e-300
            nu_hi = np.sqrt(float(np.sum(z ** 2))) / radius + 1.0
            for _ in range(300):
                nu_mid = 0.5 * (nu_lo + nu_hi)
                if phi(nu_mid) > 0.0:
                    nu_lo = nu_mid
                else:
                    nu_hi = nu_mid
            s = z / (0.5 * (nu_lo + nu_hi) + gap)
    v = center + evecs @ s
    return float(v @ P @ v), v


def max_quadratic_bound(lyapunov, balls) -> float:
    """Certified upper bound on ``max V(v)`` over the ball intersection for a
    quadratic V: the smallest of the per-ball exact maxima (the intersection
    lies inside every ball).  Empty ball list -> +inf."""
    P = getattr(lyapunov, "P", None)
    if P is None:
        P = np.asarray(lyapunov, dtype=np.float64)
    centers, radii = _as_arrays(balls)
    if centers.shape[0] == 0:
        return np.inf
    kept, separated = _prune(centers, radii)
    if separated is not None:
        raise ValueError("ball intersection is empty (separated pair "
                         f"{separated[0]}, {separated[1]})")
    best = np.inf
    for j in kept:
        val, _ = ball_quadratic_max(P, centers[j], radii[j])
        best = min(best, val)
    return float(best)


def dump_instance(path, c, balls, result: QclpResult | None = None) -> None:
    """Write one solver instance (and optionally its result) as JSON."""
    centers, radii = _as_arrays(balls)
    payload = {
        "c": np.asarray(c, dtype=np.float64).ravel().tolist(),
        "centers": centers.tolist(),
        "radii": radii.tolist(),
    }
    if result is not None:
        payload["result"] = {
            "status": result.status.value,
            "value": None if not np.isfinite(result.value) else result.value,
            "argpoint": None if result.argpoint is None else result.argpoint.tolist(),
            "kkt_residual": result.kkt_residual,
            "active_set": list(result.active_set),
        }
    with open(Path(path), "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def load_instance(path):
    with open(Path(path)) as fh:
        payload = json.load(fh)
    return (np.array(payload["c"]), np.array(payload["centers"]),
            np.array(payload["radii"]))
