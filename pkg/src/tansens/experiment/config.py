"""Plain-text experiment configuration.

Grammar: one ``key = value`` pair per line; ``#`` starts a comment; blank
lines are ignored.  Lists are comma separated.  Booleans accept
``true/false/yes/no/1/0``.  Unknown keys are an error.
"""

import math
import os
from dataclasses import dataclass, fields

from ..data import (CIFAR_TEST_FILES, CIFAR_TRAIN_FILES, MNIST_FILES, find_file, load_cifar10_bin,
                    load_mnist_idx, normalize, resolve_data_root, subsample, synth_blobs)


class ConfigError(ValueError):
    """Bad configuration or missing input file (CLI exit status 2)."""


def _ints(text):
    return tuple(int(t) for t in str(text).split(",") if t.strip())


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


@dataclass
class ExperimentConfig:
    dataset: str = "blobs"
    data_root: str = ""
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    cifar_train: str = ""
    cifar_test: str = ""
    n_train: int = 2000
    n_test: int = 1000
    stratified: bool = True
    normalization: str = "none"
    blobs_dim: int = 2
    blobs_separation: float = 3.0
    hidden: tuple = (64,)
    n_out: int = 0
    biasless: bool = True
    init_scale: float = math.sqrt(2.0)
    optimizer: str = "gd"
    lr: float = 0.01
    lr_decay: float = 0.0
    batch_size: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 30
    record_every: int = 0
    loss: str = "squared"
    sensitivity_method: str = "layerwise"
    probes: int = 64
    classes: tuple = ()
    track_cts: bool = True
    check_descent: bool = True
    delta: float = 0.05
    log_base: float = math.e
    rademacher_draws: int = 2000
    seed: int = 0
    data_seed: int = 0
    train_seed: int = 0
    out_dir: str = "out"
    plot: bool = False

    def steps_per_epoch(self, n_samples):
        if self.optimizer == "gd" or self.batch_size <= 0:
            return 1
        return -(-n_samples // self.batch_size)

    def stride(self, n_samples):
        return self.record_every if self.record_every > 0 else self.steps_per_epoch(n_samples)

    def resolved_classes(self, n_out):
        classes = self.classes or (0,)
        for c in classes:
            if not 0 <= c < n_out:
                raise ConfigError(f"class {c} out of range for {n_out} outputs")
        return tuple(classes)

    def validate(self):
        if self.dataset not in ("blobs", "mnist", "cifar10"):
            raise ConfigError(f"unknown dataset {self.dataset!r}")
        if self.optimizer not in ("gd", "sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.sensitivity_method not in ("exact", "layerwise", "probes", "auto"):
            raise ConfigError(f"unknown sensitivity method {self.sensitivity_method!r}")
        if not 0 < self.delta < 1:
            raise ConfigError("delta must lie in (0, 1)")
        if self.epochs < 0 or self.lr <= 0:
            raise ConfigError("need epochs >= 0 and lr > 0")
        if self.dataset != "blobs":
            for path in self.input_paths():
                if not os.path.exists(path):
                    raise ConfigError(f"missing dataset file: {path}")
        return self

    def input_paths(self):
        root = resolve_data_root(self.data_root) or ""
        if self.dataset == "mnist":
            return [getattr(self, k) or find_file(root, MNIST_FILES[k]) for k in
                    ("train_images", "train_labels", "test_images", "test_labels")]
        if self.dataset == "cifar10":
            train = _paths(self.cifar_train) or [find_file(root, f) for f in CIFAR_TRAIN_FILES]
            test = _paths(self.cifar_test) or [find_file(root, f) for f in CIFAR_TEST_FILES]
            return train + test
        return []

    def to_text(self):
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(i) for i in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


def _paths(text):
    return [p.strip() for p in str(text).split(",") if p.strip()]


_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _coerce(key, value):
    if key not in _TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _TYPES[key]
    try:
        if kind in (tuple, "tuple"):
            return _ints(value)
        if kind in (bool, "bool"):
            return _bool(value)
        if kind in (int, "int"):
            return int(value)
        if kind in (float, "float"):
            return float(value)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {value!r} ({exc})") from None
    return str(value).strip()


def parse_config_text(text, base=None):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return apply_overrides(base or ExperimentConfig(), values)


def apply_overrides(cfg, overrides):
    kw = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    for key, value in overrides.items():
        kw[key.strip()] = _coerce(key.strip(), value)
    return ExperimentConfig(**kw)


def load_config(path=None, overrides=()):
    cfg = ExperimentConfig()
    if path:
        if not os.path.exists(path):
            raise ConfigError(f"missing config file: {path}")
        with open(path, encoding="utf-8") as fh:
            cfg = parse_config_text(fh.read())
    pairs = {}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        k, _, v = item.partition("=")
        pairs[k] = v
    return apply_overrides(cfg, pairs)


def load_datasets(cfg):
    """Build ``(train, test)`` per the config, subsampled and normalized."""
    cfg.validate()
    if cfg.dataset == "blobs":
        train = synth_blobs(max(1, cfg.n_train // 2), cfg.blobs_dim, cfg.blobs_separation, cfg.data_seed, "train")
        test = synth_blobs(max(1, cfg.n_test // 2), cfg.blobs_dim, cfg.blobs_separation, cfg.data_seed + 1, "test")
    else:
        paths = cfg.input_paths()
        if cfg.dataset == "mnist":
            train = load_mnist_idx(paths[0], paths[1], "train")
            test = load_mnist_idx(paths[2], paths[3], "test")
        else:
            n_tr = len(_paths(cfg.cifar_train)) or len(CIFAR_TRAIN_FILES)
            train = load_cifar10_bin(paths[:n_tr], "train")
            test = load_cifar10_bin(paths[n_tr:], "test")
        if cfg.n_train < len(train):
            train = subsample(train, cfg.n_train, cfg.data_seed, cfg.stratified)
        if cfg.n_test < len(test):
            test = subsample(test, cfg.n_test, cfg.data_seed + 1, cfg.stratified)
    if cfg.normalization != "none":
        ref = train
        train = normalize(train, cfg.normalization, ref)
        test = normalize(test, cfg.normalization, ref)
    return train, test


def network_dims(cfg, train):
    n_out = cfg.n_out or (1 if train.signed else 10)
    return (train.n_in,) + tuple(cfg.hidden) + (n_out,)
