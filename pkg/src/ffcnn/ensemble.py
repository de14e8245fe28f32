"""Decision-vector fusion over diversity-variant classifiers.

Members differ by conv architecture (T1), input color channel (T2), or
Laws-filtered input map (T3). Their L-dim decision vectors are
concatenated, PCA-reduced to a given eigenvalue-mass threshold, and fed
to an RBF-kernel SVM trained on the labeled samples' decisions.
"""

from dataclasses import dataclass

import numpy as np

from .dataio import ImageSet, apply_laws, convert_color_space
from .errors import ConfigError, DimError
from .numerics import PcaModel, apply_pca, fit_pca, fit_rbf_svm, predict_rbf_svm
from .saab import extract_features
from .ssl import predict_features

T1 = "t1"
T2 = "t2"
T3 = "t3"
_ARCHES = ("ff1", "ff2", "ff3", "ff4")


@dataclass(frozen=True)
class DiversityConfig:
    kind: str  # t1 | t2 | t3
    arch: str  # ff1..ff4
    input_tag: str  # "full" for the native input, else channel/laws tag

    @property
    def name(self):
        return f"{self.kind}:{self.arch}:{self.input_tag}"


def build_diversity_configs(types, color):
    """Member list for the requested diversity types, in T1/T2/T3 order.

    T1: the four architecture presets on the native input. T2 (color
    only): native RGB plus the six YCbCr/Lab channels. T3: the nine Laws
    maps of the luma plane.
    """
    known = {T1, T2, T3}
    extra = set(types) - known
    if extra:
        raise ConfigError(f"unknown diversity types {sorted(extra)}")
    configs = []
    if T1 in types:
        configs.extend(DiversityConfig(T1, arch, "full") for arch in _ARCHES)
    if T2 in types:
        if not color:
            raise ConfigError("T2 diversity needs a color dataset")
        configs.append(DiversityConfig(T2, "ff1", "full"))
        configs.extend(DiversityConfig(T2, "ff1", tag) for tag in ("y", "cb", "cr"))
        configs.extend(DiversityConfig(T2, "ff1", tag) for tag in ("L", "a", "b"))
    if T3 in types:
        configs.extend(DiversityConfig(T3, "ff1", f"laws{k}") for k in range(9))
    return configs


def member_input(config, iset):
    """Transform a base ImageSet into the member's input representation."""
    if config.input_tag == "full":
        return iset
    if config.input_tag in ("y", "cb", "cr"):
        channels = convert_color_space(iset, "ycbcr")
        return channels[("y", "cb", "cr").index(config.input_tag)]
    if config.input_tag in ("L", "a", "b"):
        channels = convert_color_space(iset, "lab")
        return channels[("L", "a", "b").index(config.input_tag)]
    if config.input_tag.startswith("laws"):
        return apply_laws(iset)[int(config.input_tag[4:])]
    raise ConfigError(f"unknown member input {config.input_tag!r}")


def member_column(config, color):
    """Table column for the member's conv geometry."""
    if config.input_tag == "full":
        return "rgb" if color else "gray"
    return "single" if color else "gray"


def collect_decision_vectors(members, images):
    """Concatenate member decision vectors in member order -> (N, L*m)."""
    if not members:
        raise DimError("no members to collect from")
    base = images if isinstance(images, ImageSet) else ImageSet(images)
    blocks = []
    for model in members:
        inp = member_input(model.diversity, base) if model.diversity else base
        feats = extract_features(model.pipeline, inp)
        _, dec = predict_features(model, feats)
        blocks.append(dec)
    return np.hstack(blocks)


@dataclass
class EnsembleModel:
    members: list  # SslFfcnnModel with pipeline + diversity attached
    fusion_pca: object
    svm: object
    energy_threshold: float


def _energy_rank(eigenvalues, threshold):
    total = eigenvalues.sum()
    if total <= 0:
        return 1
    mass = np.cumsum(eigenvalues) / total
    return int(np.searchsorted(mass, threshold - 1e-12) + 1)


def fit_fusion(decisions, y_l, energy_threshold=0.99, svm_c=5.0, svm_gamma=None):
    """PCA (smallest rank reaching the eigen-mass threshold) + RBF SVM."""
    decisions = np.asarray(decisions, dtype=np.float64)
    full = fit_pca(decisions, min(decisions.shape))
    k = min(_energy_rank(full.eigenvalues, energy_threshold), full.components.shape[0])
    pca = PcaModel(
        mean=full.mean,
        components=full.components[:k].copy(),
        eigenvalues=full.eigenvalues[:k].copy(),
    )
    reduced = apply_pca(pca, decisions)
    svm = fit_rbf_svm(reduced, y_l, C=svm_c, gamma=svm_gamma)
    return pca, svm


def train_fusion(members, labeled_images, y_l, energy_threshold=0.99, svm_c=5.0, svm_gamma=None):
    """EnsembleModel from fitted members and the labeled training images."""
    decisions = collect_decision_vectors(members, labeled_images)
    pca, svm = fit_fusion(decisions, y_l, energy_threshold, svm_c, svm_gamma)
    return EnsembleModel(
        members=list(members), fusion_pca=pca, svm=svm, energy_threshold=energy_threshold
    )


def predict_ensemble(model, images):
    """(labels, svm decision matrix) for a batch of base images."""
    decisions = collect_decision_vectors(model.members, images)
    reduced = apply_pca(model.fusion_pca, decisions)
    return predict_rbf_svm(model.svm, reduced)
