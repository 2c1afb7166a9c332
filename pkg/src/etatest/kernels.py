"""Hot numerical kernels.

Everything here operates on flat numpy arrays so it can run under numba's
nopython mode.  The pure-numpy fallback (``ETATEST_DISABLE_NUMBA=1``) executes
the same source without compilation; results are bit-identical.

Kernels:
  * neighbor queries over concatenated (x, u) vectors, either brute force or
    via a uniform grid bucket index,
  * the two-variable quadratic program that fits local rate constants to the
    sample pairs inside a neighborhood,
  * batch assembly of constraint-ball radii for the verification stage.
"""

import numpy as np

from ._accel import njit

# Constraints violated by less than this are treated as satisfied when
# selecting the QP optimum.  Kept well below the 1e-9 satisfaction contract.
_QP_SELECT_EPS = 1e-12


@njit(cache=True)
def brute_neighbor_csr(points, queries, delta):
    """Indices of all points within ``delta`` of each query row (CSR layout).

    Comparison is on squared distance, ties included (``<= delta**2``).
    Rows come out in ascending index order.
    """
    nq = queries.shape[0]
    npts = points.shape[0]
    d = points.shape[1]
    indptr = np.empty(nq + 1, np.int64)
    indptr[0] = 0
    cap = 16 + 4 * nq
    idx = np.empty(cap, np.int64)
    size = 0
    d2 = delta * delta
    for qi in range(nq):
        for j in range(npts):
            s = 0.0
            for k in range(d):
                t = queries[qi, k] - points[j, k]
                s += t * t
            if s <= d2:
                if size == cap:
                    cap = 2 * cap
                    tmp = np.empty(cap, np.int64)
                    tmp[:size] = idx[:size]
                    idx = tmp
                idx[size] = j
                size += 1
        indptr[qi + 1] = size
    return indptr, idx[:size].copy()


@njit(cache=True)
def grid_neighbor_csr(points, queries, delta, mins, inv_edge, ncells, radix,
                      uniq_ids, starts, order):
    """Grid-bucket variant of :func:`brute_neighbor_csr`.

    The index arrays describe points grouped by flattened cell id:
    ``order[starts[p]:starts[p+1]]`` holds the points in cell ``uniq_ids[p]``.
    Scans every cell overlapping the query ball, then filters exactly, so the
    result matches the brute-force scan.
    """
    nq = queries.shape[0]
    d = points.shape[1]
    nuniq = uniq_ids.shape[0]
    indptr = np.empty(nq + 1, np.int64)
    indptr[0] = 0
    cap = 16 + 4 * nq
    idx = np.empty(cap, np.int64)
    size = 0
    d2 = delta * delta
    clo = np.empty(d, np.int64)
    chi = np.empty(d, np.int64)
    cur = np.empty(d, np.int64)
    for qi in range(nq):
        row_start = size
        empty = False
        for k in range(d):
            lo = int(np.floor((queries[qi, k] - delta - mins[k]) * inv_edge))
            hi = int(np.floor((queries[qi, k] + delta - mins[k]) * inv_edge))
            if hi < 0 or lo >= ncells[k]:
                empty = True
                break
            clo[k] = max(lo, 0)
            chi[k] = min(hi, ncells[k] - 1)
        if not empty:
            for k in range(d):
                cur[k] = clo[k]
            while True:
                fid = 0
                for k in range(d):
                    fid += cur[k] * radix[k]
                pos = np.searchsorted(uniq_ids, fid)
                if pos < nuniq and uniq_ids[pos] == fid:
                    for t in range(starts[pos], starts[pos + 1]):
                        j = order[t]
                        s = 0.0
                        for k in range(d):
                            dv = queries[qi, k] - points[j, k]
                            s += dv * dv
                        if s <= d2:
                            if size == cap:
                                cap = 2 * cap
                                tmp = np.empty(cap, np.int64)
                                tmp[:size] = idx[:size]
                                idx = tmp
                            idx[size] = j
                            size += 1
                # odometer step over the cell box
                k = 0
                while k < d:
                    cur[k] += 1
                    if cur[k] <= chi[k]:
                        break
                    cur[k] = clo[k]
                    k += 1
                if k == d:
                    break
        if size > row_start:
            row = np.sort(idx[row_start:size])
            idx[row_start:size] = row
        indptr[qi + 1] = size
    return indptr, idx[:size].copy()


@njit(cache=True)
def _qp_line_min(aa, bb, cc, j, lam):
    """Minimizer of ``lam*x^2 + y^2`` on the line of constraint ``j``,
    restricted to the nonnegative quadrant and the half-planes of constraints
    ``0..j-1``.  The line is parametrized along its better-conditioned axis;
    the 1-D problem is an interval clip of the unconstrained line minimizer.
    """
    aj = aa[j]
    bj = bb[j]
    cj = cc[j]
    den = aj * aj + lam * bj * bj
    by_x = bj >= aj
    if by_x:
        t_lo = 0.0
        t_hi = cj / aj if aj > 1e-300 else np.inf
        t_star = aj * cj / den
    else:
        t_lo = 0.0
        t_hi = cj / bj if bj > 1e-300 else np.inf
        t_star = lam * bj * cj / den
    for i in range(j):
        if by_x:
            coef = aa[i] - bb[i] * aj / bj
            rhs = cc[i] - bb[i] * cj / bj
        else:
            coef = bb[i] - aa[i] * bj / aj
            rhs = cc[i] - aa[i] * cj / aj
        tiny = 1e-14 * (aa[i] + bb[i] + 1.0)
        if coef > tiny:
            lo = rhs / coef
            if lo > t_lo:
                t_lo = lo
        elif coef < -tiny:
            hi = rhs / coef
            if hi < t_hi:
                t_hi = hi
        # parallel constraints cannot cut the line of a violated constraint
    if t_lo > t_hi:
        t = 0.5 * (t_lo + t_hi)
    else:
        t = min(max(t_star, t_lo), t_hi)
    if by_x:
        x = t
        y = (cj - aj * t) / bj
    else:
        y = t
        x = (cj - bj * t) / aj
    if x < 0.0:
        x = 0.0
    if y < 0.0:
        y = 0.0
    return x, y


@njit(cache=True)
def lipschitz_qp(a, b, c, lam):
    """Minimize ``lam*Lx**2 + Lu**2`` over ``Lx, Lu >= 0`` subject to
    ``a[j]*Lx + b[j]*Lu >= c[j]`` for all j.

    All coefficients are distances, hence nonnegative.  Returns ``(Lx, Lu)``,
    or ``(-1.0, -1.0)`` when some constraint has ``a = b = 0`` but ``c`` big
    enough to be unsatisfiable (conflicting duplicate samples upstream).

    Incremental exact solve: walk the constraints in a deterministic shuffled
    order keeping the optimum of those seen; a violated constraint moves the
    optimum onto its own line (strict convexity), a 1-D clip against the
    earlier constraints.  Expected linear time in the constraint count.
    """
    m = a.shape[0]
    aa = np.empty(m)
    bb = np.empty(m)
    cc = np.empty(m)
    k = 0
    for j in range(m):
        if c[j] <= 0.0:
            continue
        if a[j] <= 1e-300 and b[j] <= 1e-300:
            if c[j] > 1e-9:
                return -1.0, -1.0
            continue
        aa[k] = a[j]
        bb[k] = b[j]
        cc[k] = c[j]
        k += 1
    if k == 0:
        return 0.0, 0.0
    # Fisher-Yates with a fixed LCG: deterministic, order-insensitive input
    state = np.uint64(0x9E3779B97F4A7C15)
    for j in range(k - 1, 0, -1):
        state = state * np.uint64(6364136223846793005) + np.uint64(1442695040888963407)
        r = int(state >> np.uint64(33)) % (j + 1)
        aa[j], aa[r] = aa[r], aa[j]
        bb[j], bb[r] = bb[r], bb[j]
        cc[j], cc[r] = cc[r], cc[j]
    x = 0.0
    y = 0.0
    for j in range(k):
        if aa[j] * x + bb[j] * y >= cc[j] - _QP_SELECT_EPS * (1.0 + cc[j]):
            continue
        x, y = _qp_line_min(aa, bb, cc, j, lam)
    return x, y


@njit(cache=True)
def pair_constraints(idx, xs, us, ys):
    """Rate constraints (a, b, c) from every pair of the given samples:
    ``a = d(x_p, x_q)``, ``b = d(u_p, u_q)``, ``c = d(y_p, y_q)``.  Pairs with
    c = 0 never bind and are dropped.  ``conflict`` marks an unsatisfiable
    zero-distance pair (duplicate (x, u), different y)."""
    cnt = idx.shape[0]
    n = xs.shape[1]
    m = us.shape[1]
    npairs = cnt * (cnt - 1) // 2
    pa = np.empty(npairs)
    pb = np.empty(npairs)
    pc = np.empty(npairs)
    t = 0
    for p in range(cnt):
        jp = idx[p]
        for q in range(p + 1, cnt):
            jq = idx[q]
            s = 0.0
            for k in range(n):
                dv = ys[jp, k] - ys[jq, k]
                s += dv * dv
            cval = np.sqrt(s)
            if cval <= 1e-300:
                continue
            s = 0.0
            for k in range(n):
                dv = xs[jp, k] - xs[jq, k]
                s += dv * dv
            aval = np.sqrt(s)
            s = 0.0
            for k in range(m):
                dv = us[jp, k] - us[jq, k]
                s += dv * dv
            bval = np.sqrt(s)
            if aval <= 1e-300 and bval <= 1e-300:
                if cval > 1e-9:
                    return pa[:0], pb[:0], pc[:0], True
                continue
            pa[t] = aval
            pb[t] = bval
            pc[t] = cval
            t += 1
    return pa[:t], pb[:t], pc[:t], False


@njit(cache=True)
def lipschitz_batch(indptr, indices, xs, us, ys, lam):
    """Fit (L_x, L_u) at every sample from all pairs inside its neighborhood.

    flags: 0 = solved, 1 = no neighbor beyond the sample itself,
    2 = conflicting duplicates (identical (x, u), different y).
    """
    n_samples = indptr.shape[0] - 1
    lx = np.zeros(n_samples)
    lu = np.zeros(n_samples)
    flags = np.zeros(n_samples, np.uint8)
    for i in range(n_samples):
        lo = indptr[i]
        hi = indptr[i + 1]
        if hi - lo <= 1:
            flags[i] = 1
            continue
        a, b, c, conflict = pair_constraints(indices[lo:hi], xs, us, ys)
        if conflict:
            flags[i] = 2
            continue
        vx, vu = lipschitz_qp(a, b, c, lam)
        if vx < 0.0:
            flags[i] = 2
        else:
            lx[i] = vx
            lu[i] = vu
    return lx, lu, flags


@njit(cache=True)
def radii_batch(indptr, indices, xs, us, qx, qu, lx, lu):
    """Constraint-ball radii ``r_ij = L_x[j]*d(qx_i, x_j) + L_u[j]*d(qu_i, u_j)``
    for every CSR entry, evaluated with the rate constants of the data point
    that generates the ball."""
    n_rows = indptr.shape[0] - 1
    n = xs.shape[1]
    m = us.shape[1]
    out = np.empty(indices.shape[0])
    for i in range(n_rows):
        for t in range(indptr[i], indptr[i + 1]):
            j = indices[t]
            s = 0.0
            for k in range(n):
                dv = qx[i, k] - xs[j, k]
                s += dv * dv
            dx = np.sqrt(s)
            s = 0.0
            for k in range(m):
                dv = qu[i, k] - us[j, k]
                s += dv * dv
            du = np.sqrt(s)
            out[t] = lx[j] * dx + lu[j] * du
    return out
