"""Numba @njit twins of the kernels in ``_kernels_numpy``.

Import fails cleanly when numba is unavailable; ``backend`` then falls
back to the numpy implementations.
"""

import numpy as np
from numba import njit, prange


@njit(cache=True, parallel=True)
def im2col(images, wh, ww, stride):
    N, H, W, C = images.shape
    oh = (H - wh) // stride + 1
    ow = (W - ww) // stride + 1
    n = wh * ww * C
    out = np.empty((N * oh * ow, n), dtype=images.dtype)
    for img in prange(N):
        base = img * oh * ow
        for oy in range(oh):
            iy = oy * stride
            for ox in range(ow):
                ix = ox * stride
                row = base + oy * ow + ox
                p = 0
                for dy in range(wh):
                    for dx in range(ww):
                        for c in range(C):
                            out[row, p] = images[img, iy + dy, ix + dx, c]
                            p += 1
    return out


@njit(cache=True, parallel=True)
def maxpool2(images):
    N, H, W, C = images.shape
    oh = H // 2
    ow = W // 2
    out = np.empty((N, oh, ow, C), dtype=images.dtype)
    for img in prange(N):
        for oy in range(oh):
            for ox in range(ow):
                for c in range(C):
                    m = images[img, 2 * oy, 2 * ox, c]
                    v = images[img, 2 * oy, 2 * ox + 1, c]
                    if v > m:
                        m = v
                    v = images[img, 2 * oy + 1, 2 * ox, c]
                    if v > m:
                        m = v
                    v = images[img, 2 * oy + 1, 2 * ox + 1, c]
                    if v > m:
                        m = v
                    out[img, oy, ox, c] = m
    return out


@njit(cache=True)
def _assign_step(X, cent, assign, dist):
    n, d = X.shape
    k = cent.shape[0]
    for i in range(n):
        best = np.inf
        bj = 0
        for c in range(k):
            s = 0.0
            for j in range(d):
                diff = X[i, j] - cent[c, j]
                s += diff * diff
            if s < best:
                best = s
                bj = c
        assign[i] = bj
        dist[i] = best


@njit(cache=True)
def lloyd(X, centroids, max_iter, tol):
    n, d = X.shape
    k = centroids.shape[0]
    cent = centroids.astype(np.float64)
    assign = np.zeros(n, dtype=np.int64)
    dist = np.zeros(n)
    history = np.empty(max_iter + 1)

    _assign_step(X, cent, assign, dist)
    history[0] = dist.sum()
    hcount = 1
    for _ in range(max_iter):
        sums = np.zeros((k, d))
        counts = np.zeros(k, dtype=np.int64)
        for i in range(n):
            a = assign[i]
            counts[a] += 1
            for j in range(d):
                sums[a, j] += X[i, j]
        new_cent = np.empty((k, d))
        for c in range(k):
            if counts[c] > 0:
                for j in range(d):
                    new_cent[c, j] = sums[c, j] / counts[c]
            else:
                for j in range(d):
                    new_cent[c, j] = cent[c, j]
        work = dist.copy()
        for c in range(k):
            if counts[c] == 0:
                far = 0
                best = -1.0
                for i in range(n):
                    if work[i] > best:
                        best = work[i]
                        far = i
                for j in range(d):
                    new_cent[c, j] = X[far, j]
                work[far] = -1.0

        _assign_step(X, new_cent, assign, dist)
        cent = new_cent
        inertia = dist.sum()
        prev = history[hcount - 1]
        history[hcount] = inertia
        hcount += 1
        if prev - inertia < tol:
            break
    return cent, assign, history[:hcount].copy()


@njit(cache=True)
def smo(K, y, C, tol, max_iter):
    n = K.shape[0]
    alpha = np.zeros(n)
    grad = -np.ones(n)
    kd = np.empty(n)
    for i in range(n):
        kd[i] = K[i, i]
    tau = 1e-12

    it = 0
    while it < max_iter:
        # most violating sample in the "up" set
        i = -1
        g_max = -np.inf
        for t in range(n):
            if (y[t] > 0 and alpha[t] < C) or (y[t] < 0 and alpha[t] > 0):
                v = -y[t] * grad[t]
                if v > g_max:
                    g_max = v
                    i = t
        g_min = np.inf
        for t in range(n):
            if (y[t] > 0 and alpha[t] > 0) or (y[t] < 0 and alpha[t] < C):
                v = -y[t] * grad[t]
                if v < g_min:
                    g_min = v
        if i < 0 or not np.isfinite(g_min):
            break
        if g_max - g_min <= tol:
            break

        # partner with the largest second-order gain
        j = -1
        best_obj = np.inf
        for t in range(n):
            if (y[t] > 0 and alpha[t] > 0) or (y[t] < 0 and alpha[t] < C):
                nyg = -y[t] * grad[t]
                if nyg < g_max:
                    gd = g_max - nyg
                    quad = kd[i] + kd[t] - 2.0 * K[i, t]
                    if quad < tau:
                        quad = tau
                    obj = -(gd * gd) / quad
                    if obj < best_obj:
                        best_obj = obj
                        j = t
        if j < 0:
            break

        quad_ij = kd[i] + kd[j] - 2.0 * K[i, j]
        if quad_ij < tau:
            quad_ij = tau
        old_ai = alpha[i]
        old_aj = alpha[j]
        if y[i] != y[j]:
            delta = (-grad[i] - grad[j]) / quad_ij
            diff = old_ai - old_aj
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = C - diff
            else:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = C + diff
        else:
            delta = (grad[i] - grad[j]) / quad_ij
            total = old_ai + old_aj
            alpha[i] -= delta
            alpha[j] += delta
            if total > C:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = total - C
            else:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = total
            if total > C:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = total - C
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = total

        dai = alpha[i] - old_ai
        daj = alpha[j] - old_aj
        for t in range(n):
            grad[t] += y[i] * dai * y[t] * K[t, i] + y[j] * daj * y[t] * K[t, j]
        it += 1

    rho = _calculate_rho(alpha, grad, y, C)
    return alpha, rho, it


@njit(cache=True)
def _calculate_rho(alpha, grad, y, C):
    n = alpha.shape[0]
    sum_free = 0.0
    nr_free = 0
    ub = np.inf
    lb = -np.inf
    for i in range(n):
        yg = y[i] * grad[i]
        if alpha[i] >= C:
            if y[i] > 0:
                if yg > lb:
                    lb = yg
            else:
                if yg < ub:
                    ub = yg
        elif alpha[i] <= 0:
            if y[i] < 0:
                if yg > lb:
                    lb = yg
            else:
                if yg < ub:
                    ub = yg
        else:
            nr_free += 1
            sum_free += yg
    if nr_free > 0:
        return sum_free / nr_free
    if not np.isfinite(ub):
        ub = lb
    if not np.isfinite(lb):
        lb = ub
    return (ub + lb) / 2.0
