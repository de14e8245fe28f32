"""Pure-numpy implementations of the hot kernels.

``_kernels_numba`` provides @njit twins with identical signatures and
semantics; ``backend`` picks one set at import time (FFCNN_DISABLE_NUMBA=1
forces this module). Tie-breaking rules (argmin/argmax keep the lowest
index) match the numba versions so both backends stay deterministic.
"""

import numpy as np


def im2col(images, wh, ww, stride):
    """Valid-mode patch grid as a row matrix.

    images: (N, H, W, C). Rows traverse images, then grid positions in
    row-major order; each row flattens its window (wh, ww, C) with the
    channel index fastest. Returns (N*oh*ow, wh*ww*C) in the input dtype.
    """
    N, H, W, C = images.shape
    oh = (H - wh) // stride + 1
    ow = (W - ww) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(images, (wh, ww), axis=(1, 2))
    win = win[:, ::stride, ::stride]            # (N, oh, ow, C, wh, ww)
    win = win.transpose(0, 1, 2, 4, 5, 3)       # channels-fastest
    return np.ascontiguousarray(win).reshape(N * oh * ow, wh * ww * C)


def maxpool2(images):
    """2x2 max pooling with stride 2; spatial dims must be even."""
    N, H, W, C = images.shape
    return images.reshape(N, H // 2, 2, W // 2, 2, C).max(axis=(2, 4))


def _assign(X, centroids, x_sq):
    c_sq = np.einsum("ij,ij->i", centroids, centroids)
    d2 = x_sq[:, None] - 2.0 * (X @ centroids.T) + c_sq[None, :]
    assign = np.argmin(d2, axis=1)
    dist = np.maximum(d2[np.arange(X.shape[0]), assign], 0.0)
    return assign, dist


def lloyd(X, centroids, max_iter, tol):
    """Lloyd iterations from the given initial centroids.

    Returns (centroids, assignments, inertia_history). Stops once the
    inertia improvement over one full update+assign step drops below tol.
    Empty clusters are re-seeded to the point farthest from its assigned
    centroid (largest squared distance; lowest index on ties).
    """
    n, d = X.shape
    k = centroids.shape[0]
    x_sq = np.einsum("ij,ij->i", X, X)

    cent = centroids.astype(np.float64, copy=True)
    assign, dist = _assign(X, cent, x_sq)
    history = [float(dist.sum())]

    for _ in range(max_iter):
        sums = np.zeros((k, d))
        np.add.at(sums, assign, X)
        counts = np.bincount(assign, minlength=k)
        new_cent = cent.copy()
        nonempty = counts > 0
        new_cent[nonempty] = sums[nonempty] / counts[nonempty, None]
        empty = np.flatnonzero(~nonempty)
        if empty.size:
            work = dist.copy()
            for j in empty:
                far = int(np.argmax(work))
                new_cent[j] = X[far]
                work[far] = -1.0

        assign, dist = _assign(X, new_cent, x_sq)
        cent = new_cent
        inertia = float(dist.sum())
        prev = history[-1]
        history.append(inertia)
        if prev - inertia < tol:
            break

    return cent, assign.astype(np.int64), np.asarray(history)


def smo(K, y, C, tol, max_iter):
    """Two-variable dual decomposition for a soft-margin kernel SVM.

    K (n, n) is the precomputed kernel matrix, y in {-1, +1}. Working
    pairs are picked by maximal KKT violation with a second-order gain
    rule, so the optimization path depends only on the data values, not
    on row order. Returns (alpha, rho, n_iter); the decision function is
    sum_i alpha_i y_i K(x_i, x) - rho.
    """
    n = K.shape[0]
    alpha = np.zeros(n)
    grad = -np.ones(n)
    kd = np.ascontiguousarray(np.diag(K))
    tau = 1e-12

    it = 0
    while it < max_iter:
        nyg = -y * grad
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        if not up.any() or not low.any():
            break
        up_idx = np.flatnonzero(up)
        i = int(up_idx[np.argmax(nyg[up_idx])])
        g_max = nyg[i]
        g_min = nyg[low].min()
        if g_max - g_min <= tol:
            break

        cand = np.flatnonzero(low & (nyg < g_max))
        if cand.size == 0:
            break
        grad_diff = g_max - nyg[cand]
        quad = np.maximum(kd[i] + kd[cand] - 2.0 * K[i, cand], tau)
        j = int(cand[np.argmin(-(grad_diff * grad_diff) / quad)])

        quad_ij = max(kd[i] + kd[j] - 2.0 * K[i, j], tau)
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
        grad += (y[i] * dai) * (y * K[:, i]) + (y[j] * daj) * (y * K[:, j])
        it += 1

    rho = _calculate_rho(alpha, grad, y, C)
    return alpha, rho, it


def _calculate_rho(alpha, grad, y, C):
    yg = y * grad
    free = (alpha > 0) & (alpha < C)
    if free.any():
        return float(yg[free].mean())
    ub = np.inf
    lb = -np.inf
    for i in range(alpha.shape[0]):
        if alpha[i] >= C:
            if y[i] > 0:
                lb = max(lb, yg[i])
            else:
                ub = min(ub, yg[i])
        elif alpha[i] <= 0:
            if y[i] < 0:
                lb = max(lb, yg[i])
            else:
                ub = min(ub, yg[i])
    if not np.isfinite(ub):
        ub = lb
    if not np.isfinite(lb):
        lb = ub
    return float((ub + lb) / 2.0)
