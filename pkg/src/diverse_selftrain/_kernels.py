"""Hot numeric kernels, each with a numba path and a pure-numpy path.

The two paths of every kernel perform the same floating-point operations in
the same order, so they agree to the last bit in practice (numba is used
without fastmath, so no FMA contraction).  Public modules call the
dispatchers at the bottom of this file and never pick a path themselves.
"""
import numpy as np

from ._accel import maybe_njit

# ---------------------------------------------------------------------------
# cyclic Jacobi eigenvalue iteration
# ---------------------------------------------------------------------------


def _jacobi_loops(a, tol, max_sweeps):
    n = a.shape[0]
    a = a.copy()
    v = np.eye(n)
    scale = 0.0
    for i in range(n):
        for j in range(n):
            scale += a[i, j] * a[i, j]
    scale = np.sqrt(scale)
    sweeps = 0
    converged = False
    while sweeps <= max_sweeps:
        off = 0.0
        for i in range(n):
            for j in range(n):
                if i != j:
                    off += a[i, j] * a[i, j]
        if np.sqrt(off) <= tol * scale or off == 0.0:
            converged = True
            break
        if sweeps == max_sweeps:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                if tau >= 0.0:
                    t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                for k in range(n):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * vkq
                    v[k, q] = s * vkp + c * vkq
        sweeps += 1
    w = np.empty(n)
    for i in range(n):
        w[i] = a[i, i]
    return w, v, converged, sweeps


def _jacobi_numpy(a, tol, max_sweeps):
    n = a.shape[0]
    a = a.copy()
    v = np.eye(n)
    scale = np.sqrt(np.sum(a * a))
    sweeps = 0
    converged = False
    mask = ~np.eye(n, dtype=bool)
    while sweeps <= max_sweeps:
        off = np.sum(a[mask] ** 2)
        if np.sqrt(off) <= tol * scale or off == 0.0:
            converged = True
            break
        if sweeps == max_sweeps:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                if tau >= 0.0:
                    t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                colp = a[:, p].copy()
                colq = a[:, q].copy()
                a[:, p] = c * colp - s * colq
                a[:, q] = s * colp + c * colq
                rowp = a[p, :].copy()
                rowq = a[q, :].copy()
                a[p, :] = c * rowp - s * rowq
                a[q, :] = s * rowp + c * rowq
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
        sweeps += 1
    return np.diag(a).copy(), v, converged, sweeps


# ---------------------------------------------------------------------------
# LU with partial pivoting
# ---------------------------------------------------------------------------


def _lu_solve_loops(a, b, pivot_tol):
    """Returns (x, ok).  ``b`` is 2-D (n x k)."""
    n = a.shape[0]
    k = b.shape[1]
    a = a.copy()
    b = b.copy()
    amax = 0.0
    for i in range(n):
        for j in range(n):
            if abs(a[i, j]) > amax:
                amax = abs(a[i, j])
    thresh = pivot_tol * max(amax, 1e-300)
    for col in range(n):
        piv = col
        best = abs(a[col, col])
        for r in range(col + 1, n):
            if abs(a[r, col]) > best:
                best = abs(a[r, col])
                piv = r
        if best <= thresh:
            return b, False
        if piv != col:
            for j in range(n):
                tmp = a[col, j]
                a[col, j] = a[piv, j]
                a[piv, j] = tmp
            for j in range(k):
                tmp = b[col, j]
                b[col, j] = b[piv, j]
                b[piv, j] = tmp
        for r in range(col + 1, n):
            f = a[r, col] / a[col, col]
            a[r, col] = f
            for j in range(col + 1, n):
                a[r, j] = a[r, j] - f * a[col, j]
            for j in range(k):
                b[r, j] = b[r, j] - f * b[col, j]
    for col in range(n - 1, -1, -1):
        for j in range(k):
            acc = b[col, j]
            for c2 in range(col + 1, n):
                acc = acc - a[col, c2] * b[c2, j]
            b[col, j] = acc / a[col, col]
    return b, True


def _lu_solve_numpy(a, b, pivot_tol):
    n = a.shape[0]
    a = a.copy()
    b = b.copy()
    thresh = pivot_tol * max(np.max(np.abs(a)) if a.size else 0.0, 1e-300)
    for col in range(n):
        piv = col + int(np.argmax(np.abs(a[col:, col])))
        if abs(a[piv, col]) <= thresh:
            return b, False
        if piv != col:
            a[[col, piv]] = a[[piv, col]]
            b[[col, piv]] = b[[piv, col]]
        f = a[col + 1:, col] / a[col, col]
        a[col + 1:, col] = f
        a[col + 1:, col + 1:] -= np.outer(f, a[col, col + 1:])
        b[col + 1:] -= np.outer(f, b[col])
    for col in range(n - 1, -1, -1):
        acc = b[col].copy()
        for c2 in range(col + 1, n):
            acc = acc - a[col, c2] * b[c2]
        b[col] = acc / a[col, col]
    return b, True


# ---------------------------------------------------------------------------
# sequential weighted sampling without replacement
# ---------------------------------------------------------------------------


def _weighted_draws_loops(weights, uniforms):
    w = weights.copy()
    k = uniforms.shape[0]
    n = w.shape[0]
    out = np.empty(k, dtype=np.int64)
    cum = np.empty(n)
    for j in range(k):
        acc = 0.0
        last_pos = -1
        for i in range(n):
            acc += w[i]
            cum[i] = acc
            if w[i] > 0.0:
                last_pos = i
        target = uniforms[j] * acc
        pick = last_pos
        for i in range(n):
            if cum[i] > target:
                pick = i
                break
        out[j] = pick
        w[pick] = 0.0
    return out


def _weighted_draws_numpy(weights, uniforms):
    w = weights.copy()
    out = np.empty(uniforms.shape[0], dtype=np.int64)
    for j, u in enumerate(uniforms):
        cum = np.cumsum(w)
        target = u * cum[-1]
        pick = int(np.searchsorted(cum, target, side="right"))
        if pick >= w.shape[0] or w[pick] <= 0.0:
            pick = int(np.flatnonzero(w > 0.0)[-1])
        out[j] = pick
        w[pick] = 0.0
    return out


# ---------------------------------------------------------------------------
# right-inclusive equal-width binning on [0, 1]
# ---------------------------------------------------------------------------


def _bin_stats_loops(conf, hits, n_bins):
    counts = np.zeros(n_bins, dtype=np.int64)
    conf_sum = np.zeros(n_bins)
    hit_sum = np.zeros(n_bins)
    for i in range(conf.shape[0]):
        b = int(np.ceil(conf[i] * n_bins)) - 1
        if b < 0:
            b = 0
        if b > n_bins - 1:
            b = n_bins - 1
        counts[b] += 1
        conf_sum[b] += conf[i]
        hit_sum[b] += hits[i]
    return counts, conf_sum, hit_sum


def _bin_stats_numpy(conf, hits, n_bins):
    idx = np.clip(np.ceil(conf * n_bins).astype(np.int64) - 1, 0, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins).astype(np.int64)
    conf_sum = np.bincount(idx, weights=conf, minlength=n_bins)
    hit_sum = np.bincount(idx, weights=hits, minlength=n_bins)
    return counts, conf_sum, hit_sum


_jacobi_jit = maybe_njit(_jacobi_loops)
_lu_jit = maybe_njit(_lu_solve_loops)
_draws_jit = maybe_njit(_weighted_draws_loops)
_bins_jit = maybe_njit(_bin_stats_loops)


def jacobi_eigen(a, tol, max_sweeps, backend=None):
    a = np.ascontiguousarray(a, dtype=np.float64)
    if _use_jit(backend, _jacobi_jit):
        return _jacobi_jit(a, float(tol), int(max_sweeps))
    return _jacobi_numpy(a, tol, max_sweeps)


def lu_solve(a, b, pivot_tol, backend=None):
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if _use_jit(backend, _lu_jit):
        return _lu_jit(a, b, float(pivot_tol))
    return _lu_solve_numpy(a, b, pivot_tol)


def weighted_draws(weights, uniforms, backend=None):
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    uniforms = np.ascontiguousarray(uniforms, dtype=np.float64)
    if _use_jit(backend, _draws_jit):
        return _draws_jit(weights, uniforms)
    return _weighted_draws_numpy(weights, uniforms)


def bin_stats(conf, hits, n_bins, backend=None):
    conf = np.ascontiguousarray(conf, dtype=np.float64)
    hits = np.ascontiguousarray(hits, dtype=np.float64)
    if _use_jit(backend, _bins_jit):
        return _bins_jit(conf, hits, int(n_bins))
    return _bin_stats_numpy(conf, hits, n_bins)


def _use_jit(backend, compiled):
    if backend == "numpy":
        return False
    if backend == "numba" and compiled is None:
        raise RuntimeError("numba backend requested but numba is disabled")
    return compiled is not None
