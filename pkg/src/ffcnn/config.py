"""Experiment configuration and metric records.

Configs live in flat key=value text ('#' starts a comment); every field
has a printable default so configs diff cleanly. Per-dataset defaults
(keep fraction, C-PCA width, FC widths) resolve when the dataset is
known.
"""

import csv
import io
from dataclasses import dataclass, field, fields, replace
from fractions import Fraction

from .errors import ConfigError

DATASETS = ("mnist", "cifar10", "svhn", "raw")
UNLABELED_MODES = ("none", "all", "selected")

_KEEP_FRACTION = {"mnist": 0.70, "svhn": 0.70, "cifar10": 0.80, "raw": 0.70}
_CPCA_DIM = {"mnist": 20, "svhn": 15, "cifar10": 12, "raw": 20}
_WIDTHS_GRAY = (120, 84, 10)
_WIDTHS_COLOR = (200, 100, 10)

VALID_FRACTIONS = tuple(Fraction(1, 2**k) for k in range(0, 10))


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str = "mnist"
    data_dir: str = "data"
    train_path: str = ""  # raw-container override
    test_path: str = ""
    fraction: Fraction = Fraction(1, 256)
    seed: int = 0
    alpha: float = 50.0
    keep_fraction: float = None  # per-dataset default when None
    arch: str = "ff1"
    cpca_dim: int = None
    stage_widths: tuple = None
    unlabeled_mode: str = "selected"
    ensemble_types: tuple = ()
    energy_threshold: float = 0.99
    svm_c: float = 5.0
    svm_gamma: float = None  # None = 1/(d * mean feature variance)
    patch_sample_cap: int = 200_000
    jobs: int = 1
    output: str = "-"

    def resolve(self):
        """Fill per-dataset defaults; validate everything."""
        if self.dataset not in DATASETS:
            raise ConfigError(f"unknown dataset {self.dataset!r}")
        if self.unlabeled_mode not in UNLABELED_MODES:
            raise ConfigError(f"unknown unlabeled mode {self.unlabeled_mode!r}")
        if self.fraction not in VALID_FRACTIONS:
            raise ConfigError(
                f"fraction {self.fraction} not one of 1, 1/2, ..., 1/512"
            )
        keep = self.keep_fraction
        if keep is None:
            keep = _KEEP_FRACTION[self.dataset]
        if not 0 < keep <= 1:
            raise ConfigError(f"keep_fraction {keep} outside (0, 1]")
        cpca = self.cpca_dim if self.cpca_dim is not None else _CPCA_DIM[self.dataset]
        widths = self.stage_widths
        if widths is None:
            widths = _WIDTHS_GRAY if self.dataset == "mnist" else _WIDTHS_COLOR
        for t in self.ensemble_types:
            if t not in ("t1", "t2", "t3"):
                raise ConfigError(f"unknown ensemble type {t!r}")
        return replace(
            self,
            keep_fraction=keep,
            cpca_dim=cpca,
            stage_widths=tuple(widths),
        )


def _format_value(value):
    if value is None:
        return ""
    if isinstance(value, Fraction):
        return str(value)
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def _parse_value(name, text, kind):
    text = text.strip()
    if text == "":
        return None if kind in ("optfloat", "optint", "opttuple") else kind_default(kind)
    try:
        if kind == "str":
            return text
        if kind == "int":
            return int(text)
        if kind in ("float", "optfloat"):
            return float(text)
        if kind == "optint":
            return int(text)
        if kind == "fraction":
            return Fraction(text)
        if kind in ("tuple", "opttuple"):
            return tuple(int(v) for v in text.split(",") if v.strip())
        if kind == "strtuple":
            return tuple(v.strip() for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {text!r}") from exc
    raise ConfigError(f"unhandled kind {kind}")


def kind_default(kind):
    return () if kind in ("tuple", "strtuple") else ""


_FIELD_KINDS = {
    "dataset": "str",
    "data_dir": "str",
    "train_path": "str",
    "test_path": "str",
    "fraction": "fraction",
    "seed": "int",
    "alpha": "float",
    "keep_fraction": "optfloat",
    "arch": "str",
    "cpca_dim": "optint",
    "stage_widths": "opttuple",
    "unlabeled_mode": "str",
    "ensemble_types": "strtuple",
    "energy_threshold": "float",
    "svm_c": "float",
    "svm_gamma": "optfloat",
    "patch_sample_cap": "int",
    "jobs": "int",
    "output": "str",
}


def config_to_text(config):
    lines = []
    for f in fields(ExperimentConfig):
        lines.append(f"{f.name}={_format_value(getattr(config, f.name))}")
    return "\n".join(lines) + "\n"


def config_from_pairs(pairs, base=None):
    base = base if base is not None else ExperimentConfig()
    updates = {}
    for name, text in pairs:
        if name not in _FIELD_KINDS:
            raise ConfigError(f"unknown config key {name!r}")
        updates[name] = _parse_value(name, text, _FIELD_KINDS[name])
    return replace(base, **updates)


def config_from_text(text, base=None):
    pairs = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        name, value = line.split("=", 1)
        pairs.append((name.strip(), value))
    return config_from_pairs(pairs, base)


def config_echo(config):
    """One-line canonical echo for metric records."""
    parts = [
        f"{f.name}={_format_value(getattr(config, f.name))}"
        for f in fields(ExperimentConfig)
    ]
    return ";".join(parts)


# ---------------------------------------------------------------------------
# Metric records

CSV_COLUMNS = (
    "dataset",
    "arch",
    "fraction",
    "seed",
    "unlabeled_mode",
    "alpha",
    "keep_fraction",
    "ensemble_types",
    "labeled_count",
    "selected_unlabeled",
    "n_members",
    "member_accuracies",
    "mean_member_accuracy",
    "ensemble_accuracy",
    "wall_clock_s",
    "error",
    "config",
)


@dataclass
class MetricsRecord:
    config: ExperimentConfig
    labeled_count: int = 0
    selected_unlabeled: int = 0
    member_accuracies: list = field(default_factory=list)
    ensemble_accuracy: float = None
    wall_clock_s: float = 0.0
    error: str = ""

    @property
    def mean_member_accuracy(self):
        if not self.member_accuracies:
            return None
        return sum(self.member_accuracies) / len(self.member_accuracies)

    def row(self):
        cfg = self.config
        return {
            "dataset": cfg.dataset,
            "arch": cfg.arch,
            "fraction": str(cfg.fraction),
            "seed": cfg.seed,
            "unlabeled_mode": cfg.unlabeled_mode,
            "alpha": cfg.alpha,
            "keep_fraction": _format_value(cfg.keep_fraction),
            "ensemble_types": ",".join(cfg.ensemble_types),
            "labeled_count": self.labeled_count,
            "selected_unlabeled": self.selected_unlabeled,
            "n_members": len(self.member_accuracies),
            "member_accuracies": ";".join(f"{a:.4f}" for a in self.member_accuracies),
            "mean_member_accuracy": (
                "" if self.mean_member_accuracy is None else f"{self.mean_member_accuracy:.4f}"
            ),
            "ensemble_accuracy": (
                "" if self.ensemble_accuracy is None else f"{self.ensemble_accuracy:.4f}"
            ),
            "wall_clock_s": f"{self.wall_clock_s:.3f}",
            "error": self.error,
            "config": config_echo(cfg),
        }


def write_csv(records, fh):
    writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
    writer.writeheader()
    for record in records:
        writer.writerow(record.row())


def records_to_csv_text(records):
    buf = io.StringIO()
    write_csv(records, buf)
    return buf.getvalue()
