"""Dense linear-algebra and learning primitives.

Everything here is implemented on top of plain numpy (eigh / solve /
matmul); the iterative loops (Lloyd, SVM dual optimization) run on the
kernel backend selected in ``backend``.
"""

from dataclasses import dataclass, field

import numpy as np

from . import backend
from .errors import DegenerateError, DimError, SingularError


# ---------------------------------------------------------------------------
# PCA


@dataclass
class PcaModel:
    """Mean + top-k eigenvectors of the (1/n) sample covariance.

    Component rows are orthonormal, ordered by non-increasing eigenvalue,
    and sign-fixed so the first entry above 1e-12 in magnitude is positive.
    """

    mean: np.ndarray
    components: np.ndarray
    eigenvalues: np.ndarray


def _fix_signs(components):
    for row in components:
        nz = np.flatnonzero(np.abs(row) > 1e-12)
        if nz.size and row[nz[0]] < 0:
            row *= -1.0
    return components


def fit_pca(data, k):
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise DimError("expected a 2-D sample matrix")
    n, d = data.shape
    if n < 2:
        raise DimError(f"need at least 2 samples, got {n}")
    if not 1 <= k <= min(n, d):
        raise DimError(f"k={k} outside [1, min(n={n}, d={d})]")
    mean = data.mean(axis=0)
    centered = data - mean
    cov = centered.T @ centered / n
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:k]
    components = _fix_signs(np.ascontiguousarray(eigvecs[:, order].T))
    eigenvalues = np.maximum(eigvals[order], 0.0)
    return PcaModel(mean=mean, components=components, eigenvalues=eigenvalues)


def apply_pca(model, data):
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != model.mean.shape[0]:
        raise DimError(
            f"data width {data.shape[-1]} != model dimension {model.mean.shape[0]}"
        )
    return (data - model.mean) @ model.components.T


def invert_pca(model, projected):
    projected = np.asarray(projected, dtype=np.float64)
    if projected.ndim != 2 or projected.shape[1] != model.components.shape[0]:
        raise DimError("projected width does not match component count")
    return projected @ model.components + model.mean


# ---------------------------------------------------------------------------
# K-means


@dataclass
class KmeansResult:
    centroids: np.ndarray
    assignments: np.ndarray
    inertia: float
    inertia_history: np.ndarray = field(default=None, repr=False)


def _kmeanspp_init(X, k, rng):
    n = X.shape[0]
    centroids = np.empty((k, X.shape[1]))
    first = int(rng.integers(n))
    centroids[0] = X[first]
    d2 = ((X - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centroids[j] = X[idx]
        d2 = np.minimum(d2, ((X - centroids[j]) ** 2).sum(axis=1))
    return centroids


def kmeans(data, k, seed, max_iter=300, tol=1e-6):
    """Seeded k-means++ initialization followed by Lloyd iterations."""
    X = np.ascontiguousarray(data, dtype=np.float64)
    if X.ndim != 2:
        raise DimError("expected a 2-D sample matrix")
    n = X.shape[0]
    if not 1 <= k <= n:
        raise DimError(f"k={k} outside [1, n={n}]")
    rng = np.random.default_rng(seed)
    init = _kmeanspp_init(X, k, rng)
    centroids, assignments, history = backend.lloyd(X, init, max_iter, tol)
    return KmeansResult(
        centroids=centroids,
        assignments=assignments,
        inertia=float(history[-1]),
        inertia_history=history,
    )


# ---------------------------------------------------------------------------
# Ridge least squares


def solve_least_squares(Z, Y, ridge=0.0):
    """W = (Z'Z + ridge*I)^-1 Z'Y with samples as rows.

    Solved through a factorization of the regularized normal matrix, not
    an explicit inverse. ridge=0 on a singular system raises SingularError.
    """
    Z = np.asarray(Z, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if Z.ndim != 2 or Y.ndim != 2 or Z.shape[0] != Y.shape[0]:
        raise DimError("Z and Y must be 2-D with matching row counts")
    if ridge < 0:
        raise DimError("ridge must be >= 0")
    d = Z.shape[1]
    A = Z.T @ Z
    if ridge > 0:
        A[np.diag_indices(d)] += ridge
    B = Z.T @ Y
    try:
        return np.linalg.solve(A, B)
    except np.linalg.LinAlgError as exc:
        raise SingularError(f"normal equations singular at ridge={ridge}") from exc


# ---------------------------------------------------------------------------
# RBF-kernel SVM (one-vs-rest, SMO-style dual optimization)


@dataclass
class RbfSvmModel:
    support_vectors: np.ndarray
    dual_coef: np.ndarray  # (n_classes, n_sv), entries alpha_i * y_i
    rho: np.ndarray  # (n_classes,)
    classes: np.ndarray
    gamma: float
    C: float


def _sq_dists(A, B):
    a2 = np.einsum("ij,ij->i", A, A)
    b2 = np.einsum("ij,ij->i", B, B)
    d2 = a2[:, None] - 2.0 * (A @ B.T) + b2[None, :]
    return np.maximum(d2, 0.0)


def rbf_kernel(A, B, gamma):
    return np.exp(-gamma * _sq_dists(A, B))


def fit_rbf_svm(X, y, C=5.0, gamma=None, tol=1e-7, max_iter=0):
    """One-vs-rest binary SVMs trained by SMO-style dual decomposition.

    gamma defaults to 1 / (d * mean feature variance). tol is the KKT
    stopping tolerance; the default converges well past the 1e-3 the
    decision function needs, which keeps decisions invariant (to 1e-6)
    under training-row reordering. max_iter=0 picks a size-based cap.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise DimError("X must be 2-D with one label per row")
    n, d = X.shape
    classes = np.unique(y)
    if n < 2 or classes.size < 2:
        raise DegenerateError("need at least 2 samples over at least 2 classes")
    if C <= 0:
        raise DegenerateError("C must be positive")
    if gamma is None:
        var = float(X.var())
        gamma = 1.0 / (d * var) if var > 0 else 1.0 / d
    if gamma <= 0:
        raise DegenerateError("gamma must be positive")
    if max_iter <= 0:
        max_iter = max(200_000, 200 * n)

    K = rbf_kernel(X, X, gamma)
    coef = np.zeros((classes.size, n))
    rho = np.zeros(classes.size)
    for ci, cls in enumerate(classes):
        y_bin = np.where(y == cls, 1.0, -1.0)
        alpha, r, _ = backend.smo(K, y_bin, float(C), float(tol), max_iter)
        coef[ci] = alpha * y_bin
        rho[ci] = r

    keep = np.flatnonzero(np.abs(coef).max(axis=0) > 1e-12)
    if keep.size == 0:
        keep = np.arange(n)
    return RbfSvmModel(
        support_vectors=X[keep].copy(),
        dual_coef=np.ascontiguousarray(coef[:, keep]),
        rho=rho,
        classes=classes,
        gamma=float(gamma),
        C=float(C),
    )


def decision_rbf_svm(model, X):
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.support_vectors.shape[1]:
        raise DimError("feature width does not match the fitted model")
    K = rbf_kernel(X, model.support_vectors, model.gamma)
    return K @ model.dual_coef.T - model.rho[None, :]


def predict_rbf_svm(model, X):
    """Returns (labels, decision matrix); label = argmax class score."""
    dec = decision_rbf_svm(model, X)
    return model.classes[np.argmax(dec, axis=1)], dec
