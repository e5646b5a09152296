"""Compiled kernels for detection and training.

Every kernel is a map over pixels with no cross-pixel writes, so results do
not depend on how numba schedules rows across threads.  Floating-point
reductions run in a fixed order and no fast-math contraction is enabled.

Detection layout (pixel-innermost, so the pair arithmetic runs as SIMD
loops over an image row):
  frame  (H*W, C)
  sup    (H, K, W) int32, flat row-major index of each support
  state  (H, K, F, W), F = C + C(C+1)/2 fields per pair: the mean deviation
         followed by the covariance upper triangle, row by row
  lo, hi (H*W, C)
"""
import math

import numpy as np
from numba import njit, prange


@njit(cache=True, inline="always")
def _row_deviations(frame, base, sk, dev):
    W = sk.shape[0]
    if frame.shape[1] == 1:
        for x in range(W):
            dev[0, x] = frame[base + x, 0] - frame[sk[x], 0]
    else:
        for x in range(W):
            q = sk[x]
            i = base + x
            dev[0, x] = frame[i, 0] - frame[q, 0]
            dev[1, x] = frame[i, 1] - frame[q, 1]
            dev[2, x] = frame[i, 2] - frame[q, 2]


@njit(cache=True, inline="always")
def _row_fail_test(s, dev, C, c2, eps, fails, broken):
    """Add 1 to ``fails[x]`` for each pair whose squared Mahalanobis distance
    exceeds c2; pairs whose regularized covariance is not positive definite
    also fail and are counted in ``broken``."""
    W = s.shape[1]
    if C == 1:
        for x in range(W):
            x0 = dev[0, x] - s[0, x]
            a00 = s[1, x] + eps
            bad = a00 <= 0.0
            broken[x] += bad
            fails[x] += (x0 * x0 > c2 * a00) | bad
    else:
        for x in range(W):
            x0 = dev[0, x] - s[0, x]
            x1 = dev[1, x] - s[1, x]
            x2 = dev[2, x] - s[2, x]
            # d' adj(A) d against c2 * det(A), A = Sigma + eps*I
            a00 = s[3, x] + eps
            a11 = s[6, x] + eps
            a22 = s[8, x] + eps
            b01 = s[4, x]
            b02 = s[5, x]
            b12 = s[7, x]
            c00 = a11 * a22 - b12 * b12
            c01 = b02 * b12 - b01 * a22
            c02 = b01 * b12 - b02 * a11
            c11 = a00 * a22 - b02 * b02
            c12 = b01 * b02 - a00 * b12
            c22 = a00 * a11 - b01 * b01
            det = a00 * c00 + b01 * c01 + b02 * c02
            quad = (x0 * (c00 * x0 + 2.0 * (c01 * x1 + c02 * x2))
                    + x1 * (c11 * x1 + 2.0 * c12 * x2)
                    + x2 * c22 * x2)
            # Sylvester's criterion on the leading minors
            bad = (a00 <= 0.0) | (c22 <= 0.0) | (det <= 0.0)
            broken[x] += bad
            fails[x] += (quad > c2 * det) | bad


@njit(cache=True, inline="always")
def _row_pair_update(s, dev, C, alpha):
    """Mean update, then covariance update about the new mean. Overwrites
    ``dev`` with the residual to the new mean."""
    W = s.shape[1]
    beta = 1.0 - alpha
    for c in range(C):
        sc = s[c]
        dc = dev[c]
        for x in range(W):
            m = alpha * dc[x] + beta * sc[x]
            sc[x] = m
            dc[x] = dc[x] - m
    f = C
    for i in range(C):
        ri = dev[i]
        for j in range(i, C):
            rj = dev[j]
            sv = s[f]
            for x in range(W):
                sv[x] = alpha * (ri[x] * rj[x]) + beta * sv[x]
            f += 1


@njit(cache=True, inline="always")
def _row_labels(frame, base, lo, hi, fails, K, pf, mlo, mhi, range_on, mask_row, frac_row):
    W = mask_row.shape[0]
    C = frame.shape[1]
    for x in range(W):
        frac = fails[x] / K
        fg = frac > pf
        if range_on and not fg:
            i = base + x
            for c in range(C):
                p = frame[i, c]
                if p < lo[i, c] - mlo or p > hi[i, c] + mhi:
                    fg = True
        mask_row[x] = fg
        frac_row[x] = frac


@njit(cache=True, inline="always")
def _row_range_update(frame, base, W, lo, hi, alpha):
    """Instant expansion to p, otherwise exponential contraction toward p."""
    beta = 1.0 - alpha
    C = frame.shape[1]
    for x in range(W):
        i = base + x
        for c in range(C):
            p = frame[i, c]
            if p > hi[i, c]:
                h = p
            else:
                h = alpha * p + beta * hi[i, c]
            hi[i, c] = h
            if p < lo[i, c]:
                l = p
            else:
                l = alpha * p + beta * lo[i, c]
            lo[i, c] = min(l, h)


@njit(parallel=True, cache=True)
def classify_frame(frame, sup, state, lo, hi, c2, pf, eps, mlo, mhi, range_on, mask, frac):
    H, K, F, W = state.shape
    C = frame.shape[1]
    status = 0
    for y in prange(H):
        dev = np.empty((C, W))
        fails = np.zeros(W, dtype=np.int64)
        broken = np.zeros(W, dtype=np.int64)
        base = y * W
        for k in range(K):
            _row_deviations(frame, base, sup[y, k], dev)
            _row_fail_test(state[y, k], dev, C, c2, eps, fails, broken)
        _row_labels(frame, base, lo, hi, fails, K, pf, mlo, mhi, range_on, mask[y], frac[y])
        status += broken.sum()
    return status


@njit(parallel=True, cache=True)
def step_frame(frame, sup, state, lo, hi, c2, pf, eps, mlo, mhi, range_on, alpha, mask):
    """Classify a frame, then update every pair and range from it.

    Rows are independent.  Within a row each pair is tested before it is
    updated and labels are formed before the range update, so every label
    depends only on the pre-update model.
    """
    H, K, F, W = state.shape
    C = frame.shape[1]
    status = 0
    for y in prange(H):
        dev = np.empty((C, W))
        fails = np.zeros(W, dtype=np.int64)
        broken = np.zeros(W, dtype=np.int64)
        frac = np.empty(W)
        base = y * W
        for k in range(K):
            s = state[y, k]
            _row_deviations(frame, base, sup[y, k], dev)
            _row_fail_test(s, dev, C, c2, eps, fails, broken)
            _row_pair_update(s, dev, C, alpha)
        _row_labels(frame, base, lo, hi, fails, K, pf, mlo, mhi, range_on, mask[y], frac)
        _row_range_update(frame, base, W, lo, hi, alpha)
        status += broken.sum()
    return status


# --- training -------------------------------------------------------------


@njit(parallel=True, cache=True)
def standardize(series):
    """Centre and scale each column of a (T, P) array to unit norm.

    Zero-variance columns become all zeros so their correlations are 0.
    """
    T, P = series.shape
    z = np.empty((T, P))
    for j in prange(P):
        s = 0.0
        for t in range(T):
            s += series[t, j]
        mean = s / T
        ss = 0.0
        for t in range(T):
            d = series[t, j] - mean
            ss += d * d
        if ss > 0.0:
            scale = 1.0 / math.sqrt(ss)
            for t in range(T):
                z[t, j] = (series[t, j] - mean) * scale
        else:
            for t in range(T):
                z[t, j] = 0.0
    return z


@njit(cache=True)
def _corr_row(z_all, target, z_cand, out):
    T, P = z_cand.shape
    for j in range(P):
        out[j] = 0.0
    for t in range(T):
        zt = z_all[t, target]
        if zt == 0.0:
            continue
        for j in range(P):
            out[j] += zt * z_cand[t, j]
    for j in range(P):
        g = out[j]
        if g > 1.0:
            out[j] = 1.0
        elif g < -1.0:
            out[j] = -1.0


@njit(cache=True)
def corr_row(z_all, target, z_cand):
    out = np.empty(z_cand.shape[1])
    _corr_row(z_all, target, z_cand, out)
    return out


@njit(cache=True)
def _top_n(row, cand_index, target, n, idx_out, g_out):
    """Keep the n largest correlations, ties broken by candidate order.

    ``cand_index`` is the flat row-major index of each candidate; the target
    itself is skipped.  Returns the number kept.
    """
    m = 0
    for j in range(row.shape[0]):
        if cand_index[j] == target:
            continue
        g = row[j]
        if m == n and g <= g_out[m - 1]:
            continue
        # insertion point after any equal values already kept
        pos = m if m < n else n - 1
        while pos > 0 and g_out[pos - 1] < g:
            pos -= 1
        last = m if m < n else n - 1
        for i in range(last, pos, -1):
            g_out[i] = g_out[i - 1]
            idx_out[i] = idx_out[i - 1]
        g_out[pos] = g
        idx_out[pos] = cand_index[j]
        if m < n:
            m += 1
    return m


@njit(cache=True)
def kmeans_pick(us, vs, keys, k, max_iter):
    """Spatially cluster candidates and return one index per cluster.

    ``us``/``vs`` hold candidate coordinates in descending-correlation
    order; ``keys`` are uniform random numbers whose argsort picks the
    initial centroids.  Each cluster contributes its first (highest
    correlation) member; empty clusters take the next unused candidate.
    """
    m = us.shape[0]
    order = np.argsort(keys[:m], kind="mergesort")
    cu = np.empty(k)
    cv = np.empty(k)
    for c in range(k):
        cu[c] = us[order[c]]
        cv[c] = vs[order[c]]
    assign = np.full(m, -1, dtype=np.int64)
    su = np.empty(k)
    sv = np.empty(k)
    cnt = np.empty(k, dtype=np.int64)
    for _ in range(max_iter):
        changed = False
        for i in range(m):
            best = 0
            bd = np.inf
            for c in range(k):
                du = us[i] - cu[c]
                dv = vs[i] - cv[c]
                d = du * du + dv * dv
                if d < bd:
                    bd = d
                    best = c
            if assign[i] != best:
                assign[i] = best
                changed = True
        if not changed:
            break
        su[:] = 0.0
        sv[:] = 0.0
        cnt[:] = 0
        for i in range(m):
            c = assign[i]
            su[c] += us[i]
            sv[c] += vs[i]
            cnt[c] += 1
        for c in range(k):
            if cnt[c] > 0:
                cu[c] = su[c] / cnt[c]
                cv[c] = sv[c] / cnt[c]
    picks = np.full(k, -1, dtype=np.int64)
    used = np.zeros(m, dtype=np.bool_)
    for i in range(m):
        c = assign[i]
        if picks[c] < 0:
            picks[c] = i
            used[i] = True
    nxt = 0
    for c in range(k):
        if picks[c] < 0:
            while used[nxt]:
                nxt += 1
            picks[c] = nxt
            used[nxt] = True
    return picks


@njit(parallel=True, cache=True)
def select_supports(z_all, z_cand, cand_index, targets, width, gamma_min, k, n, keys, max_iter,
                    sup_out, gam_out, fallback_out, count_out):
    """For each target: correlation row, top-n candidates, k-means picks.

    Row i of the outputs belongs to ``targets[i]`` (a flat row-major
    index).  ``sup_out`` receives flat indices of the k supports and
    ``gam_out`` their correlations; ``count_out`` the number of candidates
    retained, which is below k when the frame has too few positions.
    """
    for i in prange(targets.shape[0]):
        target = targets[i]
        row = np.empty(z_cand.shape[1])
        _corr_row(z_all, target, z_cand, row)
        idx = np.empty(n, dtype=np.int64)
        g = np.empty(n)
        m = _top_n(row, cand_index, target, n, idx, g)
        count_out[i] = m
        if m < k:
            continue
        qualified = 0
        while qualified < m and g[qualified] > gamma_min[target]:
            qualified += 1
        if qualified >= k:
            m = qualified
            fallback_out[i] = False
        else:
            fallback_out[i] = True
        us = np.empty(m)
        vs = np.empty(m)
        for j in range(m):
            us[j] = idx[j] % width
            vs[j] = idx[j] // width
        picks = kmeans_pick(us, vs, keys[i], k, max_iter)
        for c in range(k):
            sup_out[i, c] = idx[picks[c]]
            gam_out[i, c] = g[picks[c]]
