"""Experiment runner and command-line interface.

Verbs: run (one experiment), sweep (label-fraction sweep), ensemble
(diversity-variant fusion run), convert (build a raw container),
print-config (show config defaults). Metrics land as RFC-4180 CSV.
"""

import argparse
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import model_io
from .config import (
    ExperimentConfig,
    MetricsRecord,
    config_from_pairs,
    config_from_text,
    config_to_text,
    records_to_csv_text,
    write_csv,
)
from .dataio import (
    ImageSet,
    SplitSpec,
    balanced_split_indices,
    load_cifar10,
    load_idx,
    load_raw_container,
    save_raw_container,
)
from .ensemble import (
    DiversityConfig,
    EnsembleModel,
    build_diversity_configs,
    fit_fusion,
    member_column,
    member_input,
)
from .errors import ConfigError, FfcnnError, FormatError
from .numerics import apply_pca, predict_rbf_svm
from .saab import arch_preset, extract_features, fit_pipeline
from .seeding import derive_seed
from .ssl import CascadeConfig, predict_features, train_ssl_classifier

_MNIST_FILES = (
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
)


class ExperimentError(FfcnnError):
    """An experiment stage failed; the message names the stage."""


@contextmanager
def _stage(name):
    try:
        yield
    except ExperimentError:
        raise
    except Exception as exc:
        raise ExperimentError(f"stage {name}: {exc}") from exc


def _resolve_file(data_dir, name):
    path = Path(data_dir) / name
    if path.exists():
        return path
    gz = path.with_name(path.name + ".gz")
    if gz.exists():
        return gz
    raise FormatError(f"dataset file {path} not found")


def load_dataset(config):
    """(train, test, is_color) for the configured dataset."""
    d = config.data_dir
    if config.dataset == "mnist":
        train = load_idx(_resolve_file(d, _MNIST_FILES[0]), _resolve_file(d, _MNIST_FILES[1]))
        test = load_idx(_resolve_file(d, _MNIST_FILES[2]), _resolve_file(d, _MNIST_FILES[3]))
        return train, test, False
    if config.dataset == "cifar10":
        batches = [_resolve_file(d, f"data_batch_{i}.bin") for i in range(1, 6)]
        train = load_cifar10(batches)
        test = load_cifar10([_resolve_file(d, "test_batch.bin")])
        return train, test, True
    # svhn and generic raw containers
    train_path = config.train_path or str(Path(d) / "train.ffc")
    test_path = config.test_path or str(Path(d) / "test.ffc")
    train = load_raw_container(_resolve_file(".", train_path))
    test = load_raw_container(_resolve_file(".", test_path))
    return train, test, train.shape[2] == 3


def _train_member(div, column, base_train, labeled_idx, unlabeled_idx, base_test, cfg):
    """Fit one pipeline + cascade; returns the model and its decisions."""
    tag = div.name if div else "single"
    with _stage(f"member {tag} input"):
        inp_train = member_input(div, base_train) if div else base_train
        inp_test = member_input(div, base_test) if div else base_test
    with _stage(f"member {tag} conv fit"):
        arch = div.arch if div else cfg.arch
        arch_cfg = arch_preset(arch, column, cfg.cpca_dim)
        pipeline = fit_pipeline(
            arch_cfg,
            inp_train,
            patch_sample_cap=cfg.patch_sample_cap,
            seed=derive_seed(cfg.seed, "patches", tag),
        )
    with _stage(f"member {tag} features"):
        z_train = extract_features(pipeline, inp_train)
        z_test = extract_features(pipeline, inp_test)
    with _stage(f"member {tag} fc fit"):
        cascade = CascadeConfig(
            widths=cfg.stage_widths,
            alpha=cfg.alpha,
            keep_fraction=cfg.keep_fraction,
            unlabeled_mode=cfg.unlabeled_mode,
            seed=derive_seed(cfg.seed, "fc", tag),
        )
        model = train_ssl_classifier(
            z_train[labeled_idx], base_train.labels[labeled_idx],
            z_train[unlabeled_idx], cascade,
        )
        model.pipeline = pipeline
        model.diversity = div
    with _stage(f"member {tag} evaluation"):
        pred, dec_test = predict_features(model, z_test)
        accuracy = 100.0 * float(np.mean(pred == base_test.labels))
        dec_labeled = predict_features(model, z_train[labeled_idx])[1]
    return model, accuracy, dec_labeled, dec_test


def run_experiment(config, save_model_path=None, save_ensemble_path=None):
    """Full protocol: load, split, fit, train, evaluate; one MetricsRecord."""
    cfg = config.resolve()
    t0 = time.perf_counter()
    with _stage("load"):
        train, test, color = load_dataset(cfg)
    with _stage("split"):
        split = SplitSpec(cfg.fraction, derive_seed(cfg.seed, "split"))
        labeled_idx, unlabeled_idx = balanced_split_indices(
            train.labels, train.num_classes, split
        )

    if cfg.ensemble_types:
        divs = build_diversity_configs(set(cfg.ensemble_types), color)
        divs = sorted(divs, key=lambda d: (("t1", "t2", "t3").index(d.kind)))
        jobs = max(1, cfg.jobs)
        columns = [member_column(d, color) for d in divs]

        def work(pair):
            d, col = pair
            return _train_member(d, col, train, labeled_idx, unlabeled_idx, test, cfg)

        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(work, zip(divs, columns)))
        else:
            results = [work(p) for p in zip(divs, columns)]
        members = [r[0] for r in results]
        accuracies = [r[1] for r in results]
        with _stage("fusion fit"):
            dec_labeled = np.hstack([r[2] for r in results])
            pca, svm = fit_fusion(
                dec_labeled,
                train.labels[labeled_idx],
                cfg.energy_threshold,
                cfg.svm_c,
                cfg.svm_gamma,
            )
        with _stage("fusion evaluation"):
            dec_test = np.hstack([r[3] for r in results])
            pred, _ = predict_rbf_svm(svm, apply_pca(pca, dec_test))
            ensemble_accuracy = 100.0 * float(np.mean(pred == test.labels))
        if save_ensemble_path:
            with _stage("save"):
                model_io.save_ensemble(
                    EnsembleModel(members, pca, svm, cfg.energy_threshold),
                    save_ensemble_path,
                )
        selected = members[0].selected_counts[0] if members[0].selected_counts else 0
        return MetricsRecord(
            config=cfg,
            labeled_count=int(labeled_idx.shape[0]),
            selected_unlabeled=selected,
            member_accuracies=accuracies,
            ensemble_accuracy=ensemble_accuracy,
            wall_clock_s=time.perf_counter() - t0,
        )

    column = "rgb" if color else "gray"
    model, accuracy, _, _ = _train_member(
        None, column, train, labeled_idx, unlabeled_idx, test, cfg
    )
    if save_model_path:
        with _stage("save"):
            model_io.save_model(model, save_model_path)
    selected = model.selected_counts[0] if model.selected_counts else 0
    return MetricsRecord(
        config=cfg,
        labeled_count=int(labeled_idx.shape[0]),
        selected_unlabeled=selected,
        member_accuracies=[accuracy],
        wall_clock_s=time.perf_counter() - t0,
    )


def run_sweep(config, fractions):
    """One record per fraction; failures become error rows, the sweep continues."""
    from dataclasses import replace

    records = []
    for fraction in fractions:
        sub = replace(config, fraction=fraction)
        try:
            records.append(run_experiment(sub))
        except Exception as exc:
            records.append(MetricsRecord(config=sub.resolve(), error=str(exc)))
    return records


# ---------------------------------------------------------------------------
# argument plumbing


def _add_config_flags(parser):
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--dataset", choices=("mnist", "cifar10", "svhn", "raw"))
    parser.add_argument("--data-dir", dest="data_dir")
    parser.add_argument("--train-path", dest="train_path")
    parser.add_argument("--test-path", dest="test_path")
    parser.add_argument("--fraction", help="labeled fraction, e.g. 1/256")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--alpha", type=float)
    parser.add_argument("--keep-fraction", dest="keep_fraction", type=float)
    parser.add_argument("--arch", choices=("ff1", "ff2", "ff3", "ff4"))
    parser.add_argument("--cpca-dim", dest="cpca_dim", type=int)
    parser.add_argument("--stage-widths", dest="stage_widths", help="e.g. 120,84,10")
    parser.add_argument(
        "--unlabeled-mode", dest="unlabeled_mode", choices=("none", "all", "selected")
    )
    parser.add_argument("--ensemble-types", dest="ensemble_types", help="e.g. t1,t3")
    parser.add_argument("--energy-threshold", dest="energy_threshold", type=float)
    parser.add_argument("--svm-c", dest="svm_c", type=float)
    parser.add_argument("--svm-gamma", dest="svm_gamma", type=float)
    parser.add_argument("--patch-sample-cap", dest="patch_sample_cap", type=int)
    parser.add_argument("--jobs", type=int)
    parser.add_argument("--output", help="CSV path or - for stdout")


def _config_from_args(args):
    base = ExperimentConfig()
    if args.config:
        base = config_from_text(Path(args.config).read_text(), base)
    pairs = []
    for key in (
        "dataset", "data_dir", "train_path", "test_path", "fraction", "seed",
        "alpha", "keep_fraction", "arch", "cpca_dim", "stage_widths",
        "unlabeled_mode", "ensemble_types", "energy_threshold", "svm_c",
        "svm_gamma", "patch_sample_cap", "jobs", "output",
    ):
        value = getattr(args, key, None)
        if value is not None:
            pairs.append((key, str(value)))
    return config_from_pairs(pairs, base)


def _emit(records, output):
    if output in ("-", "", None):
        sys.stdout.write(records_to_csv_text(records))
    else:
        with open(output, "w", newline="") as fh:
            write_csv(records, fh)


def _parse_fractions(text):
    try:
        return [Fraction(tok.strip()) for tok in text.split(",") if tok.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad fraction list {text!r}") from exc


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="ffcnn",
        description="Feedforward-constructed CNN experiments (no backprop).",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    p_run = sub.add_parser("run", help="run one experiment")
    _add_config_flags(p_run)
    p_run.add_argument("--save-model", dest="save_model")

    p_sweep = sub.add_parser("sweep", help="label-fraction sweep")
    _add_config_flags(p_sweep)
    p_sweep.add_argument(
        "--fractions", required=True, help="comma list, e.g. 1/2,1/4,1/8"
    )

    p_ens = sub.add_parser("ensemble", help="diversity-ensemble experiment")
    _add_config_flags(p_ens)
    p_ens.add_argument("--types", required=True, help="subset of t1,t2,t3")
    p_ens.add_argument("--save-ensemble", dest="save_ensemble")

    p_conv = sub.add_parser("convert", help="build an FFC1 raw container")
    p_conv.add_argument("--format", required=True, choices=("idx", "cifar10", "npz", "svhn-mat"))
    p_conv.add_argument("--images", help="IDX image file (idx format)")
    p_conv.add_argument("--labels", help="IDX label file (idx format)")
    p_conv.add_argument("--batches", help="comma list of CIFAR-10 batch files")
    p_conv.add_argument("--input", help="npz (arrays images/labels) or SVHN .mat file")
    p_conv.add_argument("--out", required=True)

    p_print = sub.add_parser("print-config", help="print config keys and defaults")
    _add_config_flags(p_print)
    p_print.add_argument(
        "--resolved", action="store_true", help="apply per-dataset defaults first"
    )

    args = parser.parse_args(argv)

    try:
        if args.verb == "print-config":
            cfg = _config_from_args(args)
            if args.resolved:
                cfg = cfg.resolve()
            sys.stdout.write(config_to_text(cfg))
            return 0

        if args.verb == "convert":
            _convert(args)
            return 0

        if args.verb == "run":
            cfg = _config_from_args(args)
            record = run_experiment(cfg, save_model_path=args.save_model)
            _emit([record], cfg.output)
            return 0

        if args.verb == "ensemble":
            cfg = _config_from_args(args)
            pairs = [("ensemble_types", args.types)]
            cfg = config_from_pairs(pairs, cfg)
            record = run_experiment(cfg, save_ensemble_path=args.save_ensemble)
            _emit([record], cfg.output)
            return 0

        if args.verb == "sweep":
            cfg = _config_from_args(args)
            records = run_sweep(cfg, _parse_fractions(args.fractions))
            _emit(records, cfg.output)
            return 0 if all(not r.error for r in records) else 1
    except FfcnnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def _convert(args):
    if args.format == "idx":
        if not args.images:
            raise ConfigError("convert --format idx needs --images")
        iset = load_idx(args.images, args.labels)
    elif args.format == "cifar10":
        if not args.batches:
            raise ConfigError("convert --format cifar10 needs --batches")
        iset = load_cifar10([p.strip() for p in args.batches.split(",") if p.strip()])
    elif args.format == "npz":
        if not args.input:
            raise ConfigError("convert --format npz needs --input")
        iset = _load_npz(args.input)
    else:  # svhn-mat
        if not args.input:
            raise ConfigError("convert --format svhn-mat needs --input")
        iset = _load_svhn_mat(args.input)
    save_raw_container(iset, args.out)
    print(f"wrote {args.out}: N={iset.n} shape={iset.shape} labels={iset.labels is not None}")


def _load_npz(path):
    data = np.load(path)
    if "images" not in data:
        raise FormatError(f"{path}: missing 'images' array")
    images = data["images"]
    if images.ndim == 3:
        images = images[..., None]
    if images.dtype == np.uint8:
        images = images.astype(np.float32) / 255.0
    images = np.clip(images.astype(np.float32), 0.0, 1.0)
    labels = data["labels"].astype(np.int64) if "labels" in data else None
    tag = "rgb" if images.shape[3] == 3 else "gray"
    return ImageSet(images, labels, tag)


def _load_svhn_mat(path):
    try:
        from scipy.io import loadmat
    except ImportError as exc:  # pragma: no cover
        raise ConfigError("svhn-mat conversion needs scipy installed") from exc
    data = loadmat(path)
    images = data["X"].transpose(3, 0, 1, 2).astype(np.float32) / 255.0
    labels = data["y"].reshape(-1).astype(np.int64)
    labels[labels == 10] = 0  # SVHN stores digit 0 as class 10
    return ImageSet(images, labels, "rgb")


if __name__ == "__main__":
    sys.exit(main())
