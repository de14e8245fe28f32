"""Unsupervised conv-layer construction.

A conv stage is a data-independent DC kernel (constant 1/sqrt(n)) plus
PCA kernels of the DC-removed patch residuals, with a constant bias large
enough to keep every training response nonnegative, so no separate
activation is needed. Stages are stacked with 2x2 max pooling; the final
maps go through a per-channel spatial PCA before the FC stages.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import backend
from .dataio import ImageSet
from .errors import ConfigError, DimError
from .numerics import PcaModel, fit_pca

_APPLY_BATCH = 512


# ---------------------------------------------------------------------------
# Architecture presets
#
# Keyed by preset name and input column: "gray" (1-channel LeNet-5 scale),
# "rgb" (3-channel, wider), "single" (1-channel members of color ensembles).
# Each stage is (window, out_channels); stride 1, valid mode, pool after.

ARCH_TABLE = {
    "ff1": {"gray": ((5, 6), (5, 16)), "rgb": ((5, 32), (5, 64)), "single": ((5, 16), (5, 32))},
    "ff2": {"gray": ((3, 6), (5, 16)), "rgb": ((3, 24), (5, 64)), "single": ((3, 8), (5, 32))},
    "ff3": {"gray": ((5, 6), (3, 16)), "rgb": ((5, 32), (3, 64)), "single": ((5, 16), (3, 32))},
    "ff4": {"gray": ((3, 6), (3, 16)), "rgb": ((3, 24), (3, 48)), "single": ((3, 8), (3, 24))},
}


@dataclass(frozen=True)
class ArchConfig:
    name: str
    stages: tuple  # ((window, out_channels), ...)
    cpca_dim: int


def arch_preset(arch, column, cpca_dim):
    if arch not in ARCH_TABLE:
        raise ConfigError(f"unknown architecture preset {arch!r}")
    if column not in ("gray", "rgb", "single"):
        raise ConfigError(f"unknown input column {column!r}")
    return ArchConfig(name=f"{arch}/{column}", stages=ARCH_TABLE[arch][column], cpca_dim=cpca_dim)


# ---------------------------------------------------------------------------
# Layers


@dataclass
class SaabLayer:
    """One conv stage: DC kernel, AC PCA kernels, nonnegativity bias."""

    window: tuple
    stride: int
    in_channels: int
    dc_kernel: np.ndarray  # (n,), constant 1/sqrt(n)
    ac_kernels: np.ndarray  # (k-1, n), orthonormal, orthogonal to dc
    bias: float
    ac_eigenvalues: np.ndarray = field(default=None, repr=False)

    @property
    def num_kernels(self):
        return 1 + self.ac_kernels.shape[0]

    def kernel_matrix(self):
        return np.vstack([self.dc_kernel[None, :], self.ac_kernels])


def extract_patches(images, window, stride=1):
    """Valid-mode im2col over an ImageSet or (N,H,W,C) array.

    Rows traverse the grid row-major per image; each row flattens its
    window channels-fastest.
    """
    arr = images.images if isinstance(images, ImageSet) else images
    wh, ww = window
    N, H, W, C = arr.shape
    if wh > H or ww > W:
        raise DimError(f"window {window} larger than image {H}x{W}")
    return backend.im2col(np.ascontiguousarray(arr), wh, ww, stride)


def _dc_complement_basis(n):
    A = np.eye(n)
    A[:, 0] = 1.0 / math.sqrt(n)
    q, _ = np.linalg.qr(A)
    return q[:, 1:]


def _fix_signs(rows):
    for row in rows:
        nz = np.flatnonzero(np.abs(row) > 1e-12)
        if nz.size and row[nz[0]] < 0:
            row *= -1.0
    return rows


def fit_saab_layer(patches, num_kernels, window=None, stride=1, in_channels=None):
    """Fit DC + top (num_kernels-1) AC kernels from training patches.

    AC kernels are PCA components of the DC-removed, mean-centered patch
    residuals, computed inside the DC-orthogonal subspace so they stay
    orthogonal to DC even for rank-deficient data. bias is the largest
    patch L2 norm, an upper bound on any unit-norm kernel response.
    """
    P, n = patches.shape
    if not 1 <= num_kernels <= n:
        raise DimError(f"num_kernels={num_kernels} outside [1, {n}]")
    if P < num_kernels:
        raise DimError(f"{P} patches cannot support {num_kernels} kernels")
    X = patches.astype(np.float64, copy=False)
    dc = np.full(n, 1.0 / math.sqrt(n))
    bias = float(np.sqrt(np.einsum("ij,ij->i", X, X).max()))

    if num_kernels == 1:
        ac = np.zeros((0, n))
        eigenvalues = np.zeros(0)
    else:
        resid = X - np.outer(X @ dc, dc)
        basis = _dc_complement_basis(n)
        coords = resid @ basis
        if P >= 2:
            pca = fit_pca(coords, num_kernels - 1)
            ac = _fix_signs(pca.components @ basis.T)
            eigenvalues = pca.eigenvalues
        else:
            ac = _fix_signs(np.ascontiguousarray(basis.T[: num_kernels - 1]))
            eigenvalues = np.zeros(num_kernels - 1)

    if window is None:
        window = (int(math.isqrt(n)), int(math.isqrt(n)))
    if in_channels is None:
        in_channels = n // (window[0] * window[1])
    return SaabLayer(
        window=tuple(window),
        stride=stride,
        in_channels=in_channels,
        dc_kernel=dc,
        ac_kernels=ac,
        bias=bias,
        ac_eigenvalues=eigenvalues,
    )


def apply_saab_layer(images, layer):
    """Conv responses kernel . patch + bias on the valid grid."""
    arr = images.images if isinstance(images, ImageSet) else images
    N, H, W, C = arr.shape
    if C != layer.in_channels:
        raise DimError(f"input has {C} channels, layer expects {layer.in_channels}")
    wh, ww = layer.window
    if wh > H or ww > W:
        raise DimError(f"window {layer.window} larger than image {H}x{W}")
    oh = (H - wh) // layer.stride + 1
    ow = (W - ww) // layer.stride + 1
    kernels = layer.kernel_matrix().T.astype(np.float32)
    out = np.empty((N, oh, ow, layer.num_kernels), dtype=np.float32)
    for start in range(0, N, _APPLY_BATCH):
        stop = min(start + _APPLY_BATCH, N)
        patches = backend.im2col(
            np.ascontiguousarray(arr[start:stop]), wh, ww, layer.stride
        )
        resp = patches @ kernels + np.float32(layer.bias)
        out[start:stop] = resp.reshape(stop - start, oh, ow, layer.num_kernels)
    if isinstance(images, ImageSet):
        return ImageSet(out, images.labels, images.color_tag, images.num_classes)
    return out


def max_pool(images, window=2, stride=2):
    """2x2/2 max pooling; spatial dims must be even."""
    if (window, stride) != (2, 2):
        raise DimError("only 2x2 stride-2 pooling is supported")
    arr = images.images if isinstance(images, ImageSet) else images
    N, H, W, C = arr.shape
    if H % 2 or W % 2:
        raise DimError(f"spatial dims {H}x{W} must be even for 2x2 pooling")
    out = backend.maxpool2(np.ascontiguousarray(arr))
    if isinstance(images, ImageSet):
        return ImageSet(out, images.labels, images.color_tag, images.num_classes)
    return out


def _crop_even(arr):
    # Table-1 3x3 second stages land on odd maps (11/13); drop the
    # trailing row/col so the strict even-dims pool applies.
    N, H, W, C = arr.shape
    return arr[:, : H - H % 2, : W - W % 2, :]


# ---------------------------------------------------------------------------
# Channel-wise PCA over flattened spatial maps


@dataclass
class CpcaModel:
    models: list  # one PcaModel per spectral channel
    spatial_dim: int
    reduced_dim: int


def fit_cpca(maps, reduced_dim):
    """Per-channel PCA of the flattened spatial map, s -> s' (s' <= s)."""
    N, h, w, C = maps.shape
    s = h * w
    if not 1 <= reduced_dim <= s:
        raise DimError(f"reduced dim {reduced_dim} outside [1, {s}]")
    models = []
    for c in range(C):
        flat = maps[:, :, :, c].reshape(N, s).astype(np.float64)
        if N >= 2:
            models.append(fit_pca(flat, reduced_dim))
        else:
            # single image: no covariance; fall back to the canonical basis
            models.append(
                PcaModel(
                    mean=flat[0].copy(),
                    components=np.eye(s)[:reduced_dim].copy(),
                    eigenvalues=np.zeros(reduced_dim),
                )
            )
    return CpcaModel(models=models, spatial_dim=s, reduced_dim=reduced_dim)


def apply_cpca(cpca, maps):
    """Project each channel and concatenate channel-major -> (N, C*s')."""
    N, h, w, C = maps.shape
    if h * w != cpca.spatial_dim or C != len(cpca.models):
        raise DimError("map geometry does not match the fitted C-PCA")
    out = np.empty((N, C * cpca.reduced_dim))
    for c in range(C):
        flat = maps[:, :, :, c].reshape(N, cpca.spatial_dim).astype(np.float64)
        out[:, c * cpca.reduced_dim : (c + 1) * cpca.reduced_dim] = (
            flat - cpca.models[c].mean
        ) @ cpca.models[c].components.T
    return out


# ---------------------------------------------------------------------------
# Full pipeline


@dataclass
class SaabPipeline:
    layers: list
    cpca: CpcaModel
    input_shape: tuple  # (H, W, C)
    final_shape: tuple  # (h, w, C_out) before C-PCA
    output_dim: int
    arch: str = ""


def _stage_geometry(shape, stages):
    """(oh, ow, k) after each conv+crop+pool, from an (H, W, C) input."""
    h, w, _ = shape
    dims = []
    for (win, k) in stages:
        h = h - win + 1
        w = w - win + 1
        if h <= 0 or w <= 0:
            raise DimError("architecture window exceeds the input size")
        h = (h - h % 2) // 2
        w = (w - w % 2) // 2
        if h == 0 or w == 0:
            raise DimError("pooling exhausted the spatial dims")
        dims.append((h, w, k))
    return dims


def _forward(arr, layers):
    for layer in layers:
        arr = apply_saab_layer(arr, layer)
        arr = max_pool(_crop_even(arr))
    return arr


def fit_pipeline(config, images, patch_sample_cap=200_000, seed=0):
    """Fit all conv stages then the channel-wise PCA.

    Layer statistics come from a seeded subsample of at most
    patch_sample_cap patches per stage (drawn from a shuffled image
    subset); the C-PCA is fitted on the final maps of every image.
    """
    iset = images if isinstance(images, ImageSet) else ImageSet(images)
    arr = iset.images
    N, H, W, C = arr.shape
    geometry = _stage_geometry((H, W, C), config.stages)

    rng = np.random.default_rng(seed)
    order = rng.permutation(N)

    layers = []
    cur_shape = (H, W, C)
    cur_fit = None  # lazily materialized subset propagated through stages
    for si, (win, k) in enumerate(config.stages):
        ph = cur_shape[0] - win + 1
        pw = cur_shape[1] - win + 1
        per_image = ph * pw
        need = min(N, max(1, -(-patch_sample_cap // per_image)))
        if cur_fit is None or cur_fit.shape[0] < need:
            cur_fit = _forward(np.ascontiguousarray(arr[np.sort(order[:need])]), layers)
        patches = extract_patches(cur_fit[:need], (win, win))
        if patches.shape[0] > patch_sample_cap:
            rows = rng.choice(patches.shape[0], size=patch_sample_cap, replace=False)
            patches = patches[rows]
        layer = fit_saab_layer(
            patches, k, window=(win, win), in_channels=cur_shape[2]
        )
        layers.append(layer)
        cur_fit = max_pool(_crop_even(apply_saab_layer(cur_fit, layer)))
        cur_shape = geometry[si]

    fh, fw, fc = geometry[-1]
    final_maps = np.empty((N, fh, fw, fc), dtype=np.float32)
    chunk = _APPLY_BATCH * 4
    for start in range(0, N, chunk):
        stop = min(start + chunk, N)
        final_maps[start:stop] = _forward(np.ascontiguousarray(arr[start:stop]), layers)
    cpca = fit_cpca(final_maps, config.cpca_dim)
    out_c = final_maps.shape[3]
    return SaabPipeline(
        layers=layers,
        cpca=cpca,
        input_shape=(H, W, C),
        final_shape=tuple(final_maps.shape[1:]),
        output_dim=out_c * config.cpca_dim,
        arch=config.name,
    )


def extract_features(pipeline, images):
    """Feature rows z for a batch of images, (N, output_dim) float64."""
    arr = images.images if isinstance(images, ImageSet) else images
    if tuple(arr.shape[1:]) != tuple(pipeline.input_shape):
        raise DimError(
            f"input shape {arr.shape[1:]} does not match fit-time {pipeline.input_shape}"
        )
    N = arr.shape[0]
    out = np.empty((N, pipeline.output_dim))
    for start in range(0, N, _APPLY_BATCH * 4):
        stop = min(start + _APPLY_BATCH * 4, N)
        maps = _forward(np.ascontiguousarray(arr[start:stop]), pipeline.layers)
        out[start:stop] = apply_cpca(pipeline.cpca, maps)
    return out
