"""Experiment configuration: JSON schema validation, default resolution, hashing."""
import copy
import hashlib
import json
from importlib import resources

import jsonschema

from .errors import ConfigError

DEFAULTS = {
    "seed": 0,
    "out": "runs",
    "dataset": {
        "synth": None,
        "manifest": None,
        "target": None,
        "target_train_stays": None,
        "target_train_fraction": 1.0,
        "min_hours": 24.0,
        "min_patients": 10,
        "fractions": [0.67, 0.16, 0.17],
    },
    "preprocess": {"window_minutes": 60, "window_count": 24, "anchor": "first_hours"},
    "kg": {"edge_retention": 1.0, "prune_fraction": 0.5},
    "embed": {"d": 32, "epochs": 200, "lr": 0.005, "negatives": 5, "batch_size": 128},
    "select": {"k": None, "fraction": 0.1, "source_fraction": None},
    "train": {
        "max_epochs": 100,
        "patience": 10,
        "batch_size": 32,
        "base_lr": 1e-3,
        "disc_lr": 1e-3,
        "lam": 0.01,
        "disc_update_freq": 1,
        "pretrain_epochs": 100,
        "pretrain_patience": 10,
        "hidden": 128,
        "no_selection": False,
        "no_pretrain": False,
        "no_adaptation": False,
        "random_selection": False,
    },
    "eval": {"task": "binary"},
}


def schema():
    return json.loads(resources.files("knowrare").joinpath("schema/config.schema.json").read_text(encoding="utf-8"))


def _validate(cfg):
    validator = jsonschema.Draft7Validator(schema())
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {err.message}")


def _merge(base, override):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve(user_cfg):
    """Validate a user config, fill defaults, validate again; raises ConfigError."""
    if not isinstance(user_cfg, dict):
        raise ConfigError("config must be a JSON object")
    _validate(user_cfg)
    cfg = _merge(DEFAULTS, user_cfg)
    _validate(cfg)
    tr = cfg["train"]
    if tr["patience"] > tr["max_epochs"]:
        raise ConfigError("config error at train/patience: exceeds max_epochs")
    if abs(sum(cfg["dataset"]["fractions"]) - 1.0) > 1e-9:
        raise ConfigError("config error at dataset/fractions: must sum to 1")
    return cfg


def load(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None


def canonical(cfg):
    return json.dumps(cfg, sort_keys=True, separators=(",", ":"))


def config_hash(cfg):
    return hashlib.sha256(canonical(cfg).encode("utf-8")).hexdigest()


def override(cfg, dotted, value):
    """Copy of ``cfg`` with ``a.b.c`` set to ``value``."""
    out = copy.deepcopy(cfg)
    node = out
    *parents, leaf = dotted.split(".")
    for p in parents:
        node = node.setdefault(p, {})
    node[leaf] = value
    return out


def sha256_file(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()
