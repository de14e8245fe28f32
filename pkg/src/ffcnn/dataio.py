"""Dataset decoding, balanced label splits, color spaces, Laws filters.

All decoders normalize pixels to [0, 1] float32 immediately; downstream
statistics depend on that convention. Decoding and conversion are pure
functions over immutable inputs.
"""

import gzip
import math
import struct
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import ColorError, ConfigError, FormatError, MissingLabels

GRAY = "gray"
RGB = "rgb"
LAWS_TAGS = tuple(f"laws{k}" for k in range(9))
COLOR_TAGS = frozenset({GRAY, RGB, "y", "cb", "cr", "L", "a", "b", *LAWS_TAGS})

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
RAW_MAGIC = b"FFC1"

_CIFAR_RECORD = 3073  # 1 label byte + 32*32*3 pixel bytes


@dataclass
class ImageSet:
    """Batch of images (N, H, W, C) with optional integer class labels."""

    images: np.ndarray
    labels: np.ndarray = None
    color_tag: str = GRAY
    num_classes: int = None

    def __post_init__(self):
        if self.images.ndim != 4:
            raise FormatError(f"images must be 4-D, got shape {self.images.shape}")
        if self.color_tag not in COLOR_TAGS:
            raise FormatError(f"unknown color tag {self.color_tag!r}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.images.shape[0],):
                raise FormatError("labels length must match image count")
            if self.num_classes is None and self.labels.size:
                self.num_classes = int(self.labels.max()) + 1

    @property
    def n(self):
        return self.images.shape[0]

    @property
    def shape(self):
        return self.images.shape[1:]

    def subset(self, idx, strip_labels=False):
        labels = None if (strip_labels or self.labels is None) else self.labels[idx]
        return ImageSet(self.images[idx], labels, self.color_tag, self.num_classes)


@dataclass(frozen=True)
class SplitSpec:
    """Balanced labeled-subset request: keep floor(fraction*N/L) per class."""

    fraction: Fraction
    seed: int

    def per_class_count(self, n_total, n_classes):
        return math.floor(self.fraction * n_total / n_classes)


def _read_bytes(path):
    data = open(path, "rb").read()
    if data[:2] == b"\x1f\x8b":
        data = gzip.decompress(data)
    return data


def _u8_to_unit(pixels):
    return (pixels.astype(np.float32) / 255.0).astype(np.float32)


def load_idx(images_path, labels_path=None):
    """Decode an IDX image file (plus optional IDX label file).

    28x28 inputs are zero-padded to 32x32 so the 5x5-conv / 2x2-pool
    schedule ends on 5x5 maps. Transparently decompresses gzip.
    """
    data = _read_bytes(images_path)
    if len(data) < 16:
        raise FormatError(f"{images_path}: truncated IDX header")
    magic, n, h, w = struct.unpack(">IIII", data[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise FormatError(f"{images_path}: magic 0x{magic:08x} is not an IDX image file")
    if len(data) - 16 < n * h * w:
        raise FormatError(f"{images_path}: payload shorter than {n}x{h}x{w}")
    pixels = np.frombuffer(data, dtype=np.uint8, count=n * h * w, offset=16)
    images = _u8_to_unit(pixels).reshape(n, h, w, 1)
    if (h, w) == (28, 28):
        images = np.pad(images, ((0, 0), (2, 2), (2, 2), (0, 0)))

    labels = None
    if labels_path is not None:
        ldata = _read_bytes(labels_path)
        if len(ldata) < 8:
            raise FormatError(f"{labels_path}: truncated IDX header")
        lmagic, ln = struct.unpack(">II", ldata[:8])
        if lmagic != IDX_LABELS_MAGIC:
            raise FormatError(f"{labels_path}: magic 0x{lmagic:08x} is not an IDX label file")
        if ln != n:
            raise FormatError(f"label count {ln} != image count {n}")
        if len(ldata) - 8 < ln:
            raise FormatError(f"{labels_path}: payload shorter than {ln}")
        labels = np.frombuffer(ldata, dtype=np.uint8, count=ln, offset=8).astype(np.int64)
    return ImageSet(images, labels, GRAY)


def load_cifar10(paths):
    """Decode CIFAR-10 binary batches (3073-byte records, R/G/B planes)."""
    images = []
    labels = []
    for path in paths:
        data = _read_bytes(path)
        if len(data) == 0 or len(data) % _CIFAR_RECORD != 0:
            raise FormatError(f"{path}: size {len(data)} is not a multiple of {_CIFAR_RECORD}")
        records = np.frombuffer(data, dtype=np.uint8).reshape(-1, _CIFAR_RECORD)
        batch_labels = records[:, 0].astype(np.int64)
        if batch_labels.max() > 9:
            raise FormatError(f"{path}: label byte {batch_labels.max()} out of range")
        pixels = records[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
        images.append(_u8_to_unit(pixels))
        labels.append(batch_labels)
    return ImageSet(np.concatenate(images), np.concatenate(labels), RGB, num_classes=10)


def load_raw_container(path):
    """Decode the portable raw container (magic FFC1, little-endian header)."""
    data = _read_bytes(path)
    if len(data) < 21:
        raise FormatError(f"{path}: truncated header")
    if data[:4] != RAW_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}")
    n, h, w, c = struct.unpack("<IIII", data[4:20])
    has_labels = data[20]
    npix = n * h * w * c
    expected = 21 + npix + (n if has_labels else 0)
    if len(data) < expected:
        raise FormatError(f"{path}: file shorter than declared payload ({expected} bytes)")
    pixels = np.frombuffer(data, dtype=np.uint8, count=npix, offset=21)
    images = _u8_to_unit(pixels).reshape(n, h, w, c)
    labels = None
    if has_labels:
        labels = np.frombuffer(data, dtype=np.uint8, count=n, offset=21 + npix).astype(np.int64)
    tag = RGB if c == 3 else GRAY
    return ImageSet(images, labels, tag)


def save_raw_container(iset, path):
    """Write an ImageSet as an FFC1 container (pixels re-quantized to u8)."""
    n, (h, w, c) = iset.n, iset.shape
    pixels = np.clip(np.rint(iset.images * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(RAW_MAGIC)
        fh.write(struct.pack("<IIIIB", n, h, w, c, 1 if iset.labels is not None else 0))
        fh.write(pixels.tobytes())
        if iset.labels is not None:
            if iset.labels.max() > 255 or iset.labels.min() < 0:
                raise FormatError("raw container labels must fit in a byte")
            fh.write(iset.labels.astype(np.uint8).tobytes())


def balanced_split_indices(labels, n_classes, spec):
    """(labeled_idx, unlabeled_idx) under the equal-per-class rule.

    fraction=1 short-circuits to (everything, nothing): real datasets are
    not exactly class-balanced, so the per-class rule cannot cover them
    completely.
    """
    n = labels.shape[0]
    if spec.fraction == 1:
        return np.arange(n), np.empty(0, dtype=np.int64)
    per_class = spec.per_class_count(n, n_classes)
    if per_class < 1:
        raise ConfigError(f"fraction {spec.fraction} leaves no labeled samples per class")
    counts = np.bincount(labels, minlength=n_classes)
    if per_class > counts.min():
        raise ConfigError(
            f"per-class count {per_class} exceeds smallest class population {counts.min()}"
        )
    rng = np.random.default_rng(spec.seed)
    chosen = []
    for cls in range(n_classes):
        idx = np.flatnonzero(labels == cls)
        perm = rng.permutation(idx.size)
        chosen.append(idx[perm[:per_class]])
    labeled_idx = np.sort(np.concatenate(chosen))
    mask = np.zeros(n, dtype=bool)
    mask[labeled_idx] = True
    return labeled_idx, np.flatnonzero(~mask)


def sample_balanced_subset(iset, spec):
    """Split into (labeled, unlabeled) with an equal per-class labeled count.

    Deterministic per-class seeded shuffles; the unlabeled complement has
    its labels stripped.
    """
    if iset.labels is None:
        raise MissingLabels("balanced sampling needs a labeled set")
    labeled_idx, unlabeled_idx = balanced_split_indices(
        iset.labels, iset.num_classes, spec
    )
    return iset.subset(labeled_idx), iset.subset(unlabeled_idx, strip_labels=True)


# ---------------------------------------------------------------------------
# Color spaces (BT.601 full-range YCbCr; sRGB -> XYZ(D65) -> CIELAB)

_BT601 = np.array(
    [
        [0.299, 0.587, 0.114],
        [-0.168736, -0.331264, 0.5],
        [0.5, -0.418688, -0.081312],
    ]
)

_SRGB2XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_D65 = np.array([0.95047, 1.0, 1.08883])


def rgb_to_ycbcr(images):
    """[0,1] RGB -> (Y, Cb, Cr) planes in [0,1] (8-bit offsets of 128)."""
    x = images.astype(np.float64) * 255.0
    y = x @ _BT601[0]
    cb = 128.0 + x @ _BT601[1]
    cr = 128.0 + x @ _BT601[2]
    return tuple((p / 255.0).astype(np.float32) for p in (y, cb, cr))


def ycbcr_to_rgb(y, cb, cr):
    """Inverse of rgb_to_ycbcr, returning [0,1] RGB."""
    y8 = y.astype(np.float64) * 255.0
    cb8 = cb.astype(np.float64) * 255.0 - 128.0
    cr8 = cr.astype(np.float64) * 255.0 - 128.0
    r = y8 + 1.402 * cr8
    g = y8 - 0.344136 * cb8 - 0.714136 * cr8
    b = y8 + 1.772 * cb8
    rgb = np.stack([r, g, b], axis=-1) / 255.0
    return np.clip(rgb, 0.0, 1.0).astype(np.float32)


def rgb_to_lab(images):
    """[0,1] sRGB -> raw CIELAB planes (L* in [0,100], a*/b* signed)."""
    c = images.astype(np.float64)
    lin = np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)
    xyz = (lin @ _SRGB2XYZ.T) / _D65
    delta = 6.0 / 29.0
    f = np.where(xyz > delta**3, np.cbrt(xyz), xyz / (3 * delta**2) + 4.0 / 29.0)
    lum = 116.0 * f[..., 1] - 16.0
    a = 500.0 * (f[..., 0] - f[..., 1])
    b = 200.0 * (f[..., 1] - f[..., 2])
    return lum, a, b


def convert_color_space(iset, target):
    """Split an RGB set into 3 single-channel sets in the target space."""
    if iset.shape[2] != 3 or iset.color_tag != RGB:
        raise ColorError(f"need an RGB input set, got {iset.color_tag!r} with C={iset.shape[2]}")
    if target == "ycbcr":
        planes = rgb_to_ycbcr(iset.images)
        tags = ("y", "cb", "cr")
    elif target == "lab":
        lum, a, b = rgb_to_lab(iset.images)
        planes = (
            (lum / 100.0).astype(np.float32),
            ((a + 128.0) / 255.0).astype(np.float32),
            ((b + 128.0) / 255.0).astype(np.float32),
        )
        tags = ("L", "a", "b")
    else:
        raise ColorError(f"unknown color target {target!r}")
    return [
        ImageSet(p[..., None], iset.labels, tag, iset.num_classes)
        for p, tag in zip(planes, tags)
    ]


def rgb_to_gray(iset):
    """BT.601 luma as a single-channel set (identity for gray inputs)."""
    if iset.shape[2] == 1:
        return iset
    if iset.shape[2] != 3:
        raise ColorError(f"cannot grayscale a {iset.shape[2]}-channel set")
    y = (iset.images.astype(np.float64) @ _BT601[0]).astype(np.float32)
    return ImageSet(y[..., None], iset.labels, GRAY, iset.num_classes)


# ---------------------------------------------------------------------------
# Laws 3x3 filter bank

_L3 = np.array([1.0, 2.0, 1.0])
_E3 = np.array([-1.0, 0.0, 1.0])
_S3 = np.array([-1.0, 2.0, -1.0])


def laws_filter_bank():
    """Nine 3x3 kernels: all outer products of L3, E3, S3 (row-major order)."""
    vs = (_L3, _E3, _S3)
    return np.stack([np.outer(a, b) for a in vs for b in vs])


def _correlate3x3(planes, kernel):
    # cross-correlation, "same" size, edge-replicated boundary
    n, h, w = planes.shape
    padded = np.pad(planes, ((0, 0), (1, 1), (1, 1)), mode="edge")
    out = np.zeros_like(planes)
    for di in range(3):
        for dj in range(3):
            if kernel[di, dj] != 0.0:
                out += kernel[di, dj] * padded[:, di : di + h, dj : dj + w]
    return out


def apply_laws(iset):
    """Filter the luma plane with the Laws bank -> 9 single-channel sets."""
    gray = rgb_to_gray(iset)
    planes = gray.images[..., 0]
    bank = laws_filter_bank()
    out = []
    for k, kernel in enumerate(bank):
        filtered = _correlate3x3(planes, kernel).astype(np.float32)
        out.append(ImageSet(filtered[..., None], iset.labels, LAWS_TAGS[k], iset.num_classes))
    return out
