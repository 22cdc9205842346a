"""Run configuration: dataset-keyed defaults, key=value files, flag merge.

Precedence is defaults < config file < command-line flags.  The file format
is flat ``key=value`` text with '#' comments; unknown keys are rejected by
name.  Defaults mirror the shipped per-dataset training recipes; the
default architecture is a laptop-sized 3x512 stack, and the full 5120-wide
models remain one --arch flag away.
"""

import dataclasses
import os
from dataclasses import dataclass

from .errors import ConfigError


@dataclass
class RunConfig:
    dataset: str = "mnist"
    data_dir: str = "data"
    arch: str = "dist:512x3"
    loss: str = "hinge"          # hinge | crossentropy | ibp
    hinge_t: float = 0.9
    hinge_variant: str = "max"   # max | sum
    kappa: float = 0.5
    eps_train: float = 0.35
    eps: float = 0.3             # evaluation / certification radius
    e1: int = 50
    e2: int = 300
    e3: int = 50
    p_start: float = 8.0
    p_end: float = 1000.0
    lr: float = 0.02
    weight_decay: float = 0.005
    batch_size: int = 512
    momentum: float = 0.1
    identity_init: bool = True
    c0: float = -10.0
    seed: int = 0
    augment_pad: int = 1
    augment_flip: bool = False
    attack_steps: int = 20
    attack_step_size: float = 0.0  # 0 selects 2.5 * eps / steps
    attack_random_start: bool = True
    attack_restarts: int = 1
    attack_loss: str = "ce"        # ce | margin
    conv_pad_value: float = 0.0
    eval_size: int = 256           # per-epoch eval subset; 0 = full test set
    checkpoint: str = "model.ckpt"
    metrics: str = "metrics.csv"
    report: str = "report.csv"


DATASET_DEFAULTS = {
    "mnist": dict(hinge_t=0.9, eps_train=0.35, kappa=0.5, eps=0.3,
                  e1=50, e2=300, e3=50, augment_pad=1, augment_flip=False),
    "fashion": dict(hinge_t=0.45, eps_train=0.11, kappa=0.5, eps=0.1,
                    e1=50, e2=300, e3=50, augment_pad=1, augment_flip=False),
    "cifar10": dict(hinge_t=80.0 / 255.0, eps_train=8.8 / 255.0, kappa=0.0,
                    eps=8.0 / 255.0, e1=100, e2=650, e3=50,
                    augment_pad=4, augment_flip=True),
}

_FIELDS = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _coerce(key, value, target_type):
    if isinstance(value, str):
        text = value.strip()
        if target_type is bool or target_type == "bool":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ConfigError(f"cannot parse boolean value {value!r} for {key}")
        try:
            if target_type is int or target_type == "int":
                return int(text)
            if target_type is float or target_type == "float":
                return float(text)
        except ValueError:
            raise ConfigError(f"cannot parse value {value!r} for key {key}")
        return text
    return value


def parse_config_text(text, source="<config>"):
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = value.strip()
    return values


def parse_config(path=None, overrides=None):
    """Three-tier merge: defaults < file < explicit overrides."""
    overrides = dict(overrides or {})
    for key in overrides:
        if key not in _FIELDS:
            raise ConfigError(f"unknown key {key!r}")
    file_values = {}
    if path:
        with open(path) as f:
            file_values = parse_config_text(f.read(), source=path)
    dataset = overrides.get("dataset", file_values.get("dataset", RunConfig.dataset))
    dataset = _coerce("dataset", dataset, str)
    if dataset not in DATASET_DEFAULTS:
        raise ConfigError(f"unknown dataset {dataset!r}")
    merged = dict(DATASET_DEFAULTS[dataset], dataset=dataset)
    merged.update(file_values)
    merged.update(overrides)
    kwargs = {k: _coerce(k, v, _FIELDS[k]) for k, v in merged.items()}
    return RunConfig(**kwargs)


def format_resolved(cfg):
    """key=value echo of every effective field, one per line."""
    lines = [f"{f.name}={getattr(cfg, f.name)}" for f in dataclasses.fields(RunConfig)]
    return "\n".join(lines) + "\n"


def write_resolved(cfg, primary_output):
    path = str(primary_output) + ".config"
    with open(path, "w") as f:
        f.write(format_resolved(cfg))
    return path
