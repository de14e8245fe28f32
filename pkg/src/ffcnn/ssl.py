"""Semi-supervised FC-stage construction.

Each intermediate FC stage: cluster the labeled features per class into
pseudo-categories, give labeled samples one-hot pseudo-targets, give
unlabeled samples soft targets from a cosine softmax against the
pseudo-category centroids, keep only the best-scoring unlabeled samples,
and solve one ridge least-squares stage with ReLU. The last stage uses
the original labels, labeled rows only, and no ReLU.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DegenerateError, DimError
from .numerics import kmeans, solve_least_squares
from .seeding import derive_seed

DEFAULT_ALPHA = 50.0


# ---------------------------------------------------------------------------
# Pseudo-categories


@dataclass
class PseudoCategorySet:
    """Per-class K-means centroids, flattened class-major."""

    centroids: np.ndarray  # (K, d)
    class_of: np.ndarray  # (K,), pseudo-category -> original class
    per_class_counts: np.ndarray  # (L,)
    n_classes: int
    labeled_assignments: np.ndarray = field(default=None, repr=False)

    @property
    def size(self):
        return self.centroids.shape[0]


def _allocate_subclasses(n_out, n_classes, populations):
    base = n_out // n_classes
    counts = np.full(n_classes, base, dtype=np.int64)
    counts[: n_out % n_classes] += 1
    counts = np.minimum(counts, populations)
    # redistribute what the small classes could not absorb
    while counts.sum() < n_out:
        room = np.flatnonzero(counts < populations)
        if room.size == 0:
            break
        deficit = n_out - counts.sum()
        for cls in room[:deficit]:
            counts[cls] += 1
    return counts


def build_pseudo_categories(z_l, y_l, n_out, seed):
    """Cluster each class's labeled features into its share of n_out.

    Class i gets floor(n_out/L) clusters plus one of the remainder when
    i < n_out mod L, clamped to the class population (surplus goes to
    classes that still have room).
    """
    z_l = np.asarray(z_l, dtype=np.float64)
    y_l = np.asarray(y_l, dtype=np.int64)
    n_classes = int(y_l.max()) + 1
    if n_out < n_classes:
        raise ConfigError(f"n_out={n_out} below the class count {n_classes}")
    populations = np.bincount(y_l, minlength=n_classes)
    if populations.min() < 1:
        raise ConfigError("every class needs at least one labeled sample")
    counts = _allocate_subclasses(n_out, n_classes, populations)

    centroids = []
    class_of = []
    assignments = np.empty(y_l.shape[0], dtype=np.int64)
    offset = 0
    for cls in range(n_classes):
        idx = np.flatnonzero(y_l == cls)
        result = kmeans(z_l[idx], int(counts[cls]), seed=derive_seed(seed, "class", cls))
        centroids.append(result.centroids)
        class_of.extend([cls] * int(counts[cls]))
        assignments[idx] = offset + result.assignments
        offset += int(counts[cls])
    return PseudoCategorySet(
        centroids=np.vstack(centroids),
        class_of=np.asarray(class_of, dtype=np.int64),
        per_class_counts=counts,
        n_classes=n_classes,
        labeled_assignments=assignments,
    )


def onehot(indices, width):
    out = np.zeros((len(indices), width))
    out[np.arange(len(indices)), indices] = 1.0
    return out


# ---------------------------------------------------------------------------
# Soft pseudo-labels and quality scores


@dataclass
class ProbabilityVector:
    p: np.ndarray
    alpha: float
    d: np.ndarray  # cosine similarities to each centroid


@dataclass
class QualityScore:
    s: np.ndarray  # (L,) per-class probability mass
    best_class: int
    best_score: float


def pseudo_probability_matrix(z, cats, alpha=DEFAULT_ALPHA):
    """Cosine softmax against the centroids for a feature matrix.

    Returns (P, D) with rows summing to 1. Zero-norm feature rows get a
    flat cosine of 0 (uniform probabilities) instead of failing, so one
    dead ReLU row cannot abort a training run.
    """
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    if z.shape[1] != cats.centroids.shape[1]:
        raise DimError("feature width does not match the centroids")
    z_norm = np.linalg.norm(z, axis=1, keepdims=True)
    c_norm = np.linalg.norm(cats.centroids, axis=1, keepdims=True)
    if np.any(c_norm == 0):
        raise DegenerateError("zero-norm centroid")
    safe_z = np.where(z_norm > 0, z_norm, 1.0)
    d = np.clip((z / safe_z) @ (cats.centroids / c_norm).T, -1.0, 1.0)
    d[z_norm[:, 0] == 0] = 0.0
    logits = alpha * d
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    return p, d


def pseudo_probabilities(z, cats, alpha=DEFAULT_ALPHA):
    """Probability vector over pseudo-categories for one feature vector."""
    z = np.asarray(z, dtype=np.float64)
    if np.linalg.norm(z) == 0:
        raise DegenerateError("zero-norm feature vector")
    p, d = pseudo_probability_matrix(z[None, :], cats, alpha)
    return ProbabilityVector(p=p[0], alpha=float(alpha), d=d[0])


def _class_mass(p, cats):
    member = onehot(cats.class_of, cats.n_classes)  # (K, L)
    s = p @ member
    return s / s.sum(axis=1, keepdims=True)


def quality_scores(p, cats):
    """Per-class share of the pseudo-category probability mass."""
    vec = p.p if isinstance(p, ProbabilityVector) else np.asarray(p, dtype=np.float64)
    if vec.shape[-1] != cats.size:
        raise DimError("probability width does not match the category count")
    s = _class_mass(vec[None, :], cats)[0]
    best = int(np.argmax(s))
    return QualityScore(s=s, best_class=best, best_score=float(s[best]))


def quality_score_matrix(P, cats):
    """(S, best_scores) for a probability matrix."""
    S = _class_mass(np.asarray(P, dtype=np.float64), cats)
    return S, S.max(axis=1)


def select_unlabeled(scores, keep_fraction):
    """Indices of the ceil(keep_fraction * n) highest-scoring samples.

    Ties keep the lower sample index. Accepts QualityScore objects or a
    plain array of best scores; returns sorted indices.
    """
    if not 0 < keep_fraction <= 1:
        raise ConfigError(f"keep_fraction {keep_fraction} outside (0, 1]")
    if len(scores) == 0:
        return np.empty(0, dtype=np.int64)
    best = np.asarray(
        [s.best_score if isinstance(s, QualityScore) else s for s in scores],
        dtype=np.float64,
    )
    count = int(np.ceil(keep_fraction * best.shape[0]))
    order = np.argsort(-best, kind="stable")
    return np.sort(order[:count])


# ---------------------------------------------------------------------------
# LSR stages


@dataclass
class LsrStage:
    W: np.ndarray  # (d+1, m): weights plus bias row
    apply_relu: bool


def _default_ridge(Z):
    # keeps the normal equations well-posed when rows < columns
    return 1e-4 * float(np.einsum("ij,ij->", Z, Z)) / Z.shape[1]


def fit_ssl_stage(z_l, y_targets, z_ul=None, p_ul=None, ridge=None, relu=True):
    """One rectified LSR stage on stacked labeled + selected unlabeled rows."""
    z_l = np.asarray(z_l, dtype=np.float64)
    y_targets = np.asarray(y_targets, dtype=np.float64)
    if z_l.shape[0] != y_targets.shape[0]:
        raise DimError("labeled feature and target row counts differ")
    blocks_z = [z_l]
    blocks_y = [y_targets]
    if z_ul is not None and len(z_ul):
        z_ul = np.asarray(z_ul, dtype=np.float64)
        p_ul = np.asarray(p_ul, dtype=np.float64)
        if z_ul.shape[0] != p_ul.shape[0]:
            raise DimError("unlabeled feature and target row counts differ")
        if z_ul.shape[1] != z_l.shape[1] or p_ul.shape[1] != y_targets.shape[1]:
            raise DimError("unlabeled block widths do not match the labeled block")
        blocks_z.append(z_ul)
        blocks_y.append(p_ul)
    Z = np.vstack(blocks_z)
    Y = np.vstack(blocks_y)
    Z = np.hstack([Z, np.ones((Z.shape[0], 1))])
    if ridge is None:
        ridge = _default_ridge(Z)
    W = solve_least_squares(Z, Y, ridge)
    return LsrStage(W=W, apply_relu=relu)


def apply_stage(stage, z):
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != stage.W.shape[0] - 1:
        raise DimError(
            f"feature width {z.shape[-1]} does not match stage input {stage.W.shape[0] - 1}"
        )
    out = z @ stage.W[:-1] + stage.W[-1]
    if stage.apply_relu:
        np.maximum(out, 0.0, out=out)
    return out


# ---------------------------------------------------------------------------
# Full cascade


@dataclass(frozen=True)
class CascadeConfig:
    """FC-cascade hyperparameters; widths must end at the class count."""

    widths: tuple  # e.g. (120, 84, 10)
    alpha: float = DEFAULT_ALPHA
    keep_fraction: float = 0.7
    unlabeled_mode: str = "selected"  # none | all | selected
    ridge: float = None
    seed: int = 0


@dataclass
class SslFfcnnModel:
    stages: list
    stage_dims: list
    n_classes: int
    config: CascadeConfig
    pipeline: object = None  # SaabPipeline, attached by the experiment runner
    diversity: object = None
    selected_counts: list = field(default_factory=list)


def train_ssl_classifier(z_l, y_l, z_ul, config):
    """Build the full FC cascade from extracted features.

    Intermediate stages use pseudo-categories plus (optionally selected)
    soft-labeled unlabeled rows; unselected unlabeled rows still propagate
    forward. The final stage regresses one-hot original labels from
    labeled rows only, without ReLU.
    """
    z_l = np.asarray(z_l, dtype=np.float64)
    y_l = np.asarray(y_l, dtype=np.int64)
    n_classes = int(y_l.max()) + 1
    if config.widths[-1] != n_classes:
        raise ConfigError(
            f"stage widths must end at the class count ({n_classes}), got {config.widths}"
        )
    if config.unlabeled_mode not in ("none", "all", "selected"):
        raise ConfigError(f"unknown unlabeled mode {config.unlabeled_mode!r}")

    use_ul = config.unlabeled_mode != "none" and z_ul is not None and len(z_ul) > 0
    cur_l = z_l
    cur_ul = np.asarray(z_ul, dtype=np.float64) if use_ul else None
    dims = [z_l.shape[1]]
    stages = []
    selected_counts = []

    for si, width in enumerate(config.widths[:-1]):
        cats = build_pseudo_categories(
            cur_l, y_l, width, seed=derive_seed(config.seed, "stage", si)
        )
        y_targets = onehot(cats.labeled_assignments, cats.size)
        if use_ul:
            P, _ = pseudo_probability_matrix(cur_ul, cats, config.alpha)
            fraction = 1.0 if config.unlabeled_mode == "all" else config.keep_fraction
            _, best = quality_score_matrix(P, cats)
            sel = select_unlabeled(best, fraction)
            stage = fit_ssl_stage(cur_l, y_targets, cur_ul[sel], P[sel], config.ridge)
            selected_counts.append(int(sel.shape[0]))
        else:
            stage = fit_ssl_stage(cur_l, y_targets, ridge=config.ridge)
            selected_counts.append(0)
        stages.append(stage)
        cur_l = apply_stage(stage, cur_l)
        if use_ul:
            cur_ul = apply_stage(stage, cur_ul)
        dims.append(cats.size)

    final = fit_ssl_stage(cur_l, onehot(y_l, n_classes), ridge=config.ridge, relu=False)
    stages.append(final)
    dims.append(n_classes)
    return SslFfcnnModel(
        stages=stages,
        stage_dims=dims,
        n_classes=n_classes,
        config=config,
        selected_counts=selected_counts,
    )


def predict_features(model, z):
    """(labels, decision matrix) from already-extracted features."""
    out = np.asarray(z, dtype=np.float64)
    for stage in model.stages:
        out = apply_stage(stage, out)
    return np.argmax(out, axis=1), out


def predict(model, images):
    """(labels, decision matrix) from raw images via the attached pipeline."""
    from .saab import extract_features

    if model.pipeline is None:
        raise ConfigError("model has no attached feature pipeline")
    return predict_features(model, extract_features(model.pipeline, images))
