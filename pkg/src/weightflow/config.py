"""Run configuration: flat key-value text with section headers.

The schema is closed — unknown sections or keys are rejected so a typo'd
config fails loudly instead of silently using a default. Values are plain
scalars or comma-separated lists; booleans are 0/1.

Schema (defaults in parentheses):

    [run]        task (iris) | mnist | blobs; out_dir (run); seed (0)
    [data]       test_fraction (0.2); limit (0 = all);
                 mnist_train_images/mnist_train_labels/
                 mnist_test_images/mnist_test_labels (paths);
                 blobs_classes (3); blobs_per_class (50); blobs_dim (4);
                 blobs_spread (1.0)
    [arch]       layer_dims (4,16,3); activation (relu); bn (per hidden
                 layer, e.g. 0,0 — single value broadcasts)
    [population] size (50); base_seed (100); optimizer (adam);
                 learning_rate (1e-3); weight_decay (0); batch_size (16);
                 epochs (100); init (kaiming)
    [canonicalize] mode (rebasin) | off; reference_index (0); max_iter (100)
    [pca]        mode (off) | standard | incremental | dual;
                 latent_dim (0 = min(n-1, 99)); micro_batch (16);
                 exact_eigen (0); batch_rows (16)
    [flow]       hidden_dim (256); time_embed_dim (4); dropout (0.1);
                 noise_scale (0.001); source_std (0.01);
                 time_distribution (uniform) | beta; time_beta (2,5);
                 iterations (30000); batch_size (8); learning_rate (5e-4);
                 weight_decay (1e-5); beta1 (0.9); beta2 (0.95);
                 lr_min (1e-6); integration_steps (100)
    [generate]   count (50); recalibrate_bn (1); calib_fraction (1.0)
    [metrics]    iou (1); distances (1)
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field

from .errors import ConfigError
from .flow import FlowConfig
from .nn_core import INIT_SCHEMES, ArchitectureSpec, TrainHyper

TASKS = ("iris", "mnist", "blobs")
CANON_MODES = ("off", "rebasin")
PCA_MODES = ("off", "standard", "incremental", "dual")

_SCHEMA = {
    "run": {"task", "out_dir", "seed"},
    "data": {"test_fraction", "limit",
             "mnist_train_images", "mnist_train_labels",
             "mnist_test_images", "mnist_test_labels",
             "blobs_classes", "blobs_per_class", "blobs_dim", "blobs_spread"},
    "arch": {"layer_dims", "activation", "bn"},
    "population": {"size", "base_seed", "optimizer", "learning_rate",
                   "weight_decay", "batch_size", "epochs", "init"},
    "canonicalize": {"mode", "reference_index", "max_iter"},
    "pca": {"mode", "latent_dim", "micro_batch", "exact_eigen", "batch_rows"},
    "flow": {"hidden_dim", "time_embed_dim", "dropout", "noise_scale",
             "source_std", "time_distribution", "time_beta", "iterations",
             "batch_size", "learning_rate", "weight_decay", "beta1", "beta2",
             "lr_min", "integration_steps"},
    "generate": {"count", "recalibrate_bn", "calib_fraction"},
    "metrics": {"iou", "distances"},
}


@dataclass(frozen=True)
class DataConfig:
    test_fraction: float = 0.2
    limit: int = 0
    mnist_train_images: str = ""
    mnist_train_labels: str = ""
    mnist_test_images: str = ""
    mnist_test_labels: str = ""
    blobs_classes: int = 3
    blobs_per_class: int = 50
    blobs_dim: int = 4
    blobs_spread: float = 1.0


@dataclass(frozen=True)
class RunConfig:
    task: str = "iris"
    out_dir: str = "run"
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    arch: ArchitectureSpec = field(
        default_factory=lambda: ArchitectureSpec((4, 16, 3), "relu"))
    population_size: int = 50
    base_seed: int = 100
    train_hyper: TrainHyper = field(default_factory=TrainHyper)
    init_scheme: str = "kaiming"
    canonicalize_mode: str = "rebasin"
    reference_index: int = 0
    canonicalize_max_iter: int = 100
    pca_mode: str = "off"
    latent_dim: int = 0
    pca_micro_batch: int = 16
    pca_exact_eigen: bool = False
    pca_batch_rows: int = 16
    flow: dict = field(default_factory=dict)  # FlowConfig kwargs sans input_dim
    generate_count: int = 50
    recalibrate_bn: bool = True
    calib_fraction: float = 1.0
    metrics_iou: bool = True
    metrics_distances: bool = True

    def flow_config(self, input_dim: int) -> FlowConfig:
        return FlowConfig(input_dim=input_dim, **self.flow)


def _get(section, key, conv, default):
    if key not in section:
        return default
    raw = section[key].strip()
    try:
        return conv(raw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def _bool(raw: str) -> bool:
    if raw not in ("0", "1"):
        raise ValueError("expected 0 or 1")
    return raw == "1"


def _int_list(raw: str) -> tuple:
    return tuple(int(v) for v in raw.split(","))


def _float_list(raw: str) -> tuple:
    return tuple(float(v) for v in raw.split(","))


def _choice(options):
    def conv(raw):
        if raw not in options:
            raise ValueError(f"must be one of {options}")
        return raw
    return conv


def parse_config(path) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as f:
            parser.read_file(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc

    for name in parser.sections():
        if name not in _SCHEMA:
            raise ConfigError(f"unknown section [{name}]")
        for key in parser[name]:
            if key not in _SCHEMA[name]:
                raise ConfigError(f"unknown key {key!r} in section [{name}]")

    def sec(name):
        return parser[name] if parser.has_section(name) else {}

    run = sec("run")
    data_s = sec("data")
    arch_s = sec("arch")
    pop = sec("population")
    canon = sec("canonicalize")
    pca = sec("pca")
    flow_s = sec("flow")
    gen = sec("generate")
    met = sec("metrics")

    data = DataConfig(
        test_fraction=_get(data_s, "test_fraction", float, 0.2),
        limit=_get(data_s, "limit", int, 0),
        mnist_train_images=_get(data_s, "mnist_train_images", str, ""),
        mnist_train_labels=_get(data_s, "mnist_train_labels", str, ""),
        mnist_test_images=_get(data_s, "mnist_test_images", str, ""),
        mnist_test_labels=_get(data_s, "mnist_test_labels", str, ""),
        blobs_classes=_get(data_s, "blobs_classes", int, 3),
        blobs_per_class=_get(data_s, "blobs_per_class", int, 50),
        blobs_dim=_get(data_s, "blobs_dim", int, 4),
        blobs_spread=_get(data_s, "blobs_spread", float, 1.0),
    )

    layer_dims = _get(arch_s, "layer_dims", _int_list, (4, 16, 3))
    if len(layer_dims) < 2 or any(d < 1 for d in layer_dims):
        raise ConfigError(f"invalid layer_dims {layer_dims}")
    n_hidden = len(layer_dims) - 2
    bn = _get(arch_s, "bn", _int_list, (0,) * max(n_hidden, 1))
    if len(bn) == 1:
        bn = bn * n_hidden
    if len(bn) != n_hidden or any(v not in (0, 1) for v in bn):
        raise ConfigError(f"bn must give one 0/1 flag per hidden layer, got {bn}")
    try:
        arch = ArchitectureSpec(layer_dims,
                                _get(arch_s, "activation", str, "relu"),
                                tuple(bool(v) for v in bn))
    except Exception as exc:
        raise ConfigError(f"invalid architecture: {exc}") from exc

    hyper = TrainHyper(
        optimizer=_get(pop, "optimizer", _choice(("adam", "adamw", "sgd")), "adam"),
        learning_rate=_get(pop, "learning_rate", float, 1e-3),
        weight_decay=_get(pop, "weight_decay", float, 0.0),
        batch_size=_get(pop, "batch_size", int, 16),
        epochs=_get(pop, "epochs", int, 100),
    )
    init_scheme = _get(pop, "init", _choice(INIT_SCHEMES), "kaiming")

    flow_kwargs = {
        "hidden_dim": _get(flow_s, "hidden_dim", int, 256),
        "time_embed_dim": _get(flow_s, "time_embed_dim", int, 4),
        "dropout": _get(flow_s, "dropout", float, 0.1),
        "noise_scale": _get(flow_s, "noise_scale", float, 0.001),
        "source_std": _get(flow_s, "source_std", float, 0.01),
        "time_distribution": _get(flow_s, "time_distribution",
                                  _choice(("uniform", "beta")), "uniform"),
        "time_beta": _get(flow_s, "time_beta", _float_list, (2.0, 5.0)),
        "iterations": _get(flow_s, "iterations", int, 30000),
        "batch_size": _get(flow_s, "batch_size", int, 8),
        "learning_rate": _get(flow_s, "learning_rate", float, 5e-4),
        "weight_decay": _get(flow_s, "weight_decay", float, 1e-5),
        "betas": (_get(flow_s, "beta1", float, 0.9),
                  _get(flow_s, "beta2", float, 0.95)),
        "lr_min": _get(flow_s, "lr_min", float, 1e-6),
        "integration_steps": _get(flow_s, "integration_steps", int, 100),
    }

    cfg = RunConfig(
        task=_get(run, "task", _choice(TASKS), "iris"),
        out_dir=_get(run, "out_dir", str, "run"),
        seed=_get(run, "seed", int, 0),
        data=data,
        arch=arch,
        population_size=_get(pop, "size", int, 50),
        base_seed=_get(pop, "base_seed", int, 100),
        train_hyper=hyper,
        init_scheme=init_scheme,
        canonicalize_mode=_get(canon, "mode", _choice(CANON_MODES), "rebasin"),
        reference_index=_get(canon, "reference_index", int, 0),
        canonicalize_max_iter=_get(canon, "max_iter", int, 100),
        pca_mode=_get(pca, "mode", _choice(PCA_MODES), "off"),
        latent_dim=_get(pca, "latent_dim", int, 0),
        pca_micro_batch=_get(pca, "micro_batch", int, 16),
        pca_exact_eigen=_get(pca, "exact_eigen", _bool, False),
        pca_batch_rows=_get(pca, "batch_rows", int, 16),
        flow=flow_kwargs,
        generate_count=_get(gen, "count", int, 50),
        recalibrate_bn=_get(gen, "recalibrate_bn", _bool, True),
        calib_fraction=_get(gen, "calib_fraction", float, 1.0),
        metrics_iou=_get(met, "iou", _bool, True),
        metrics_distances=_get(met, "distances", _bool, True),
    )
    if cfg.population_size < 1:
        raise ConfigError("population size must be >= 1")
    if cfg.generate_count < 0:
        raise ConfigError("generate count must be >= 0")
    if not 0 <= cfg.reference_index < cfg.population_size:
        raise ConfigError("reference_index out of population range")
    if cfg.task == "mnist" and not data.mnist_train_images:
        raise ConfigError("mnist task requires [data] mnist_* paths")
    return cfg
