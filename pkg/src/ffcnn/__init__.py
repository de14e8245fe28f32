"""Feedforward-constructed CNNs: conv stages from patch statistics,
FC stages from clustered least-squares regression, semi-supervised
training via soft pseudo-labels, and decision-vector ensemble fusion."""

from .backend import BACKEND
from .config import ExperimentConfig, MetricsRecord
from .dataio import (
    ImageSet,
    SplitSpec,
    apply_laws,
    convert_color_space,
    laws_filter_bank,
    load_cifar10,
    load_idx,
    load_raw_container,
    sample_balanced_subset,
    save_raw_container,
)
from .ensemble import (
    DiversityConfig,
    EnsembleModel,
    build_diversity_configs,
    collect_decision_vectors,
    fit_fusion,
    predict_ensemble,
    train_fusion,
)
from .errors import (
    ColorError,
    ConfigError,
    DegenerateError,
    DimError,
    FfcnnError,
    FormatError,
    MissingLabels,
    SingularError,
)
from .numerics import (
    KmeansResult,
    PcaModel,
    RbfSvmModel,
    apply_pca,
    fit_pca,
    fit_rbf_svm,
    kmeans,
    predict_rbf_svm,
    solve_least_squares,
)
from .saab import (
    ArchConfig,
    SaabLayer,
    SaabPipeline,
    apply_saab_layer,
    arch_preset,
    extract_features,
    extract_patches,
    fit_pipeline,
    fit_saab_layer,
    max_pool,
)
from .ssl import (
    CascadeConfig,
    LsrStage,
    PseudoCategorySet,
    SslFfcnnModel,
    apply_stage,
    build_pseudo_categories,
    fit_ssl_stage,
    predict,
    predict_features,
    pseudo_probabilities,
    quality_scores,
    select_unlabeled,
    train_ssl_classifier,
)

__version__ = "0.1.0"
