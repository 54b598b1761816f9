"""Compiled inner loops of the over-conditioned region computation.

Same arithmetic, in the same order, as the numpy reference path in
:mod:`rnncpsi.affine_path`, written as explicit loops so that one sweep step
costs microseconds instead of hundreds of small array operations.
"""

import numpy as np
from numba import njit

# status codes returned by region_kernel
OK, SIGN_TIE, SORT_TIE, WITNESS_VIOLATION = 0, 1, 2, 3


@njit(cache=True)
def _piece(knots, v):
    # first knot >= v, i.e. ties go to the lower piece
    lo, hi = 0, knots.size
    while lo < hi:
        mid = (lo + hi) // 2
        if knots[mid] < v:
            lo = mid + 1
        else:
            hi = mid
    return lo


@njit(cache=True)
def propagate_positions(win_a, win_b, W_h, W_x, W_b, W_p, knots, slopes, intercepts, m, z, todo,
                        pred_a, pred_b, lo_p, hi_p, trace):
    """Affine rollout for the positions flagged in ``todo``; results are written in place.

    ``lo_p[p], hi_p[p]`` receive the range of ``r`` over which every
    activation of position ``p`` stays on the piece it occupies at ``z``.
    """
    P, l = win_a.shape
    d = W_x.size
    J = knots.size
    wa = np.empty(l)
    wb = np.empty(l)
    ha = np.empty(d)
    hb = np.empty(d)
    pa = np.empty(d)
    pb = np.empty(d)
    for p in range(P):
        if not todo[p]:
            continue
        lo = -np.inf
        hi = np.inf
        for t in range(l):
            wa[t] = win_a[p, t]
            wb[t] = win_b[p, t]
        for j in range(m):
            for u in range(d):
                ha[u] = 0.0
                hb[u] = 0.0
            for t in range(l):
                xa = wa[t]
                xb = wb[t]
                for u in range(d):
                    sa = 0.0
                    sb = 0.0
                    for v in range(d):
                        sa += W_h[u, v] * ha[v]
                        sb += W_h[u, v] * hb[v]
                    pa[u] = sa + xa * W_x[u] + W_b[u]
                    pb[u] = sb + xb * W_x[u]
                for u in range(d):
                    k = _piece(knots, pa[u] + pb[u] * z)
                    trace[p, j, t, u] = k
                    s = pb[u]
                    if s != 0.0:
                        k_lo = knots[k - 1] if k > 0 else -np.inf
                        k_hi = knots[k] if k < J else np.inf
                        c1 = (k_lo - pa[u]) / s
                        c2 = (k_hi - pa[u]) / s
                        if s > 0:
                            if c1 > lo:
                                lo = c1
                            if c2 < hi:
                                hi = c2
                        else:
                            if c2 > lo:
                                lo = c2
                            if c1 < hi:
                                hi = c1
                    ha[u] = slopes[k] * pa[u] + intercepts[k]
                    hb[u] = slopes[k] * pb[u]
            oa = 0.0
            ob = 0.0
            for u in range(d):
                oa += ha[u] * W_p[u]
                ob += hb[u] * W_p[u]
            pred_a[p, j] = oa
            pred_b[p, j] = ob
            for t in range(l - 1):
                wa[t] = wa[t + 1]
                wb[t] = wb[t + 1]
            wa[l - 1] = oa
            wb[l - 1] = ob
        lo_p[p] = lo
        hi_p[p] = hi


@njit(cache=True)
def _moving_avg(v, w):
    # zero-extended centered window, summed left to right like detector.moving_sum
    n = v.size
    h = (w - 1) // 2
    out = np.zeros(n)
    for i in range(n):
        s = 0.0
        for j in range(w):
            k = i - h + j
            if 0 <= k < n:
                s += v[k]
            else:
                s += 0.0
        out[i] = s / w
    return out


@njit(cache=True)
def region_kernel(qa, qb, qc, w, z, lo, hi, tie_tol, witness_tol, degen):
    """Sign and sort constraints of the smoothed scores, intersected on ``[lo, hi]``.

    Returns ``(status, info, signs, maxima, perm, left, right, ok)``: the
    cells ``[left[c], right[c]]`` with ``ok[c]`` make up the region.  A
    nonzero status flags a tie (``info`` locates it) or a witness that
    violates its own constraints; the arrays are then empty.
    """
    n = qa.size
    sa = _moving_avg(qa, w)
    sb = _moving_avg(qb, w)
    sc = _moving_avg(qc, w)
    signs = np.zeros(n - 1, dtype=np.int8)
    ca = np.empty(2 * n)
    cb = np.empty(2 * n)
    cc = np.empty(2 * n)
    e_i8 = np.empty(0, dtype=np.int8)
    e_i = np.empty(0, dtype=np.int64)
    e_f = np.empty(0)
    e_b = np.empty(0, dtype=np.bool_)
    nc = 0
    for i in range(n - 1):
        da = sa[i + 1] - sa[i]
        db = sb[i + 1] - sb[i]
        dc = sc[i + 1] - sc[i]
        if da == 0.0 and db == 0.0 and dc == 0.0:
            continue
        val = (da * z + db) * z + dc
        if abs(val) < tie_tol:
            return SIGN_TIE, i + 1, e_i8, e_i, e_i, e_f, e_f, e_b
        sg = 1.0 if val > 0 else -1.0
        signs[i] = 1 if val > 0 else -1
        ca[nc] = sg * da
        cb[nc] = sg * db
        cc[nc] = sg * dc
        nc += 1

    n_max = 0
    for j in range(n - 2):
        if signs[j] == 1 and signs[j + 1] == -1:
            n_max += 1
    maxima = np.empty(n_max, dtype=np.int64)
    c = 0
    for j in range(n - 2):
        if signs[j] == 1 and signs[j + 1] == -1:
            maxima[c] = j + 2
            c += 1

    perm = np.empty(n_max, dtype=np.int64)
    if n_max > 0:
        neg = np.empty(n_max)
        for k in range(n_max):
            i = maxima[k] - 1
            neg[k] = -((sa[i] * z + sb[i]) * z + sc[i])
        order = np.argsort(neg, kind="mergesort")
        for k in range(n_max - 1):
            if neg[order[k + 1]] - neg[order[k]] < tie_tol:
                return SORT_TIE, k, e_i8, e_i, e_i, e_f, e_f, e_b
        for k in range(n_max):
            perm[order[k]] = k + 1
        for k in range(n_max - 1):
            hi_i = maxima[order[k]] - 1
            lo_i = maxima[order[k + 1]] - 1
            ca[nc] = sa[hi_i] - sa[lo_i]
            cb[nc] = sb[hi_i] - sb[lo_i]
            cc[nc] = sc[hi_i] - sc[lo_i]
            nc += 1

    for k in range(nc):
        at_w = (ca[k] * z + cb[k]) * z + cc[k]
        scale = 1.0 + abs(ca[k]) * z * z + abs(cb[k] * z) + abs(cc[k])
        if at_w < -witness_tol * scale:
            return WITNESS_VIOLATION, k, e_i8, e_i, e_i, e_f, e_f, e_b

    roots = np.empty(2 * nc + 2)
    roots[0] = lo
    nr = 1
    cand = np.empty(2)
    for k in range(nc):
        a = ca[k]
        b = cb[k]
        cq = cc[k]
        ncand = 0
        if abs(a) >= degen:
            disc = b * b - 4.0 * a * cq
            if disc >= 0:
                sq = np.sqrt(disc)
                q = -0.5 * (b + np.copysign(sq, b))
                if q != 0:
                    cand[0] = q / a
                    cand[1] = cq / q
                    ncand = 2
                else:
                    cand[0] = 0.0
                    ncand = 1
        elif abs(b) >= degen:
            cand[0] = -cq / b
            ncand = 1
        for t in range(ncand):
            r = cand[t]
            if np.isfinite(r) and r > lo and r < hi:
                roots[nr] = r
                nr += 1
    roots[nr] = hi
    nr += 1
    cuts = np.unique(roots[:nr])
    if cuts.size == 1:
        # degenerate range holding only the witness
        cuts = np.array([lo, hi])
    ncell = cuts.size - 1
    left = cuts[:-1].copy()
    right = cuts[1:].copy()
    ok = np.ones(ncell, dtype=np.bool_)
    for cell in range(ncell):
        L = left[cell]
        R = right[cell]
        if np.isfinite(L) and np.isfinite(R):
            mid = 0.5 * (L + R)
        elif np.isfinite(R):
            mid = R - 1.0 - abs(R)
        elif np.isfinite(L):
            mid = L + 1.0 + abs(L)
        else:
            mid = 0.0
        for k in range(nc):
            if (ca[k] * mid + cb[k]) * mid + cc[k] < 0:
                ok[cell] = False
                break
    kw = np.searchsorted(right, z)
    if kw > ncell - 1:
        kw = ncell - 1
    ok[kw] = True
    return OK, 0, signs, maxima, perm, left, right, ok
