"""Versioned YAML run configuration with strict validation.

Schema (version 1); every key is optional unless marked required::

    version: 1                      # required
    mode: ba                        # required: ba | nesrd | cascade | oracle | sweep | gaussian-gen
    seed: 0
    workers: 1                      # SEMRD_WORKERS overrides
    source:                         # required, exactly one key
      fixture: binary               # shipped discrete fixture
      joint: [[...]]                # inline P(X, S)
      file: path                    # fixture JSON, Gaussian spec JSON/YAML, or samples CSV/JSONL
      gaussian: benchmark           # or {k_x, h, k_w}
      labeled: {classes, means, cov, n}
    distortion: {observation, semantic}   # names or matrices; default suits the source
    grid: {lambda1: [...], lambda2: [...]}   # product grid; or alpha1/alpha2; or points: [[a, b], ...]
    targets: [[d_o, d_s], ...]      # ba/oracle: solve at requested distortions
    bounds: false                   # ba/sweep: add single-axis rate columns
    capacity_bits: null             # adds an achievability column
    discretization: {levels, s_levels, sigmas, mc_samples}
    ba: {max_iters, tol}
    oracle: {restarts, max_steps, tol}
    nesrd: {layers, learning_rate, epochs, batch_n1, batch_m, momentum, n1, n2, m, eval_n1, quantize}
    cascade: {learning_rate, epochs, batch_n1, batch_m, latent_dim, generator_hidden, classifier_hidden, ...}
    generate: {n1, n2, format}      # gaussian-gen
    output: {dir: out, format: both}   # csv | json | both
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from ..exceptions import ConfigError

SCHEMA_VERSION = 1
MODES = ("ba", "nesrd", "cascade", "oracle", "sweep", "gaussian-gen")
SOURCE_KINDS = ("fixture", "joint", "file", "gaussian", "labeled")
DISTORTIONS = ("hamming", "squared-error", "cross-entropy")
WORKERS_ENV = "SEMRD_WORKERS"

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "workers": 1,
    "distortion": {"observation": None, "semantic": None, "x_values": None, "s_values": None, "semantic_reproductions": None},
    "grid": {"lambda1": None, "lambda2": None, "alpha1": None, "alpha2": None, "points": None},
    "targets": None,
    "bounds": False,
    "capacity_bits": None,
    "discretization": {"levels": 4, "s_levels": None, "sigmas": 4.0, "mc_samples": 10**6},
    "ba": {"max_iters": 2000, "tol": 1e-9},
    "oracle": {"restarts": 32, "max_steps": 20000, "tol": 1e-7},
    "nesrd": {
        "layers": [10, 5, 5, 5],
        "learning_rate": 1e-4,
        "epochs": 50,
        "batch_n1": 256,
        "batch_m": 256,
        "momentum": 0.9,
        "n1": 10000,
        "n2": 100,
        "m": 10000,
        "eval_n1": 10000,
        "quantize": False,
    },
    "cascade": {
        "learning_rate": 1e-4,
        "epochs": 50,
        "batch_n1": 256,
        "batch_m": 256,
        "momentum": 0.9,
        "latent_dim": 2,
        "generator_hidden": [16, 16],
        "classifier_hidden": [8],
        "generator_pretrain_epochs": 20,
        "generator_pretrain_lr": 1e-2,
        "classifier_pretrain_epochs": 20,
        "classifier_pretrain_lr": 1e-1,
        "eval_fraction": 0.2,
        "freeze_classifier": False,
    },
    "generate": {"n1": 1000, "n2": 1, "format": "csv"},
    "output": {"dir": "out", "format": "both"},
}
REQUIRED = ("version", "mode", "source")


def _merge(defaults: dict, given: dict, path: str) -> dict:
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        where = f"{path}.{key}" if path else str(key)
        if key not in defaults and key not in REQUIRED:
            raise ConfigError(f"unknown key {where!r}", field=where)
        if isinstance(defaults.get(key), dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where!r} must be a mapping", field=where)
            out[key] = _merge(defaults[key], value, where)
        else:
            out[key] = value
    return out


def _number(value, field, *, integer=False, positive=False, nonpositive=False, nonnegative=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{field!r} must be a number, got {value!r}", field=field)
    if integer and int(value) != value:
        raise ConfigError(f"{field!r} must be an integer", field=field)
    if not np.isfinite(value):
        raise ConfigError(f"{field!r} must be finite", field=field)
    if positive and value <= 0:
        raise ConfigError(f"{field!r} must be positive", field=field)
    if nonpositive and value > 0:
        raise ConfigError(f"{field!r} must be nonpositive", field=field)
    if nonnegative and value < 0:
        raise ConfigError(f"{field!r} must be nonnegative", field=field)
    return int(value) if integer else float(value)


def _number_list(value, field, **checks):
    if not isinstance(value, (list, tuple)) or not value:
        raise ConfigError(f"{field!r} must be a non-empty list", field=field)
    return [_number(v, f"{field}[{i}]", **checks) for i, v in enumerate(value)]


def _pairs(value, field, **checks):
    if not isinstance(value, (list, tuple)) or not value:
        raise ConfigError(f"{field!r} must be a non-empty list of pairs", field=field)
    out = []
    for i, pair in enumerate(value):
        if not isinstance(pair, (list, tuple)) or len(pair) != 2:
            raise ConfigError(f"{field}[{i}] must be a pair", field=f"{field}[{i}]")
        out.append(tuple(_number(v, f"{field}[{i}][{j}]", **checks) for j, v in enumerate(pair)))
    return out


def slope_grid(cfg: dict) -> list[tuple[float, float]] | None:
    """Row-major list of slope pairs from the ``grid`` section, or None when absent."""
    grid = cfg["grid"]
    if grid["points"] is not None:
        return _pairs(grid["points"], "grid.points", nonpositive=True)
    first = grid["lambda1"] if grid["lambda1"] is not None else grid["alpha1"]
    second = grid["lambda2"] if grid["lambda2"] is not None else grid["alpha2"]
    if first is None and second is None:
        return None
    first = _number_list(first if first is not None else [0.0], "grid.lambda1", nonpositive=True)
    second = _number_list(second if second is not None else [0.0], "grid.lambda2", nonpositive=True)
    return [(a, b) for a in first for b in second]


def _validate(cfg: dict) -> None:
    if cfg.get("version") != SCHEMA_VERSION:
        raise ConfigError(f"unsupported config version {cfg.get('version')!r}; expected {SCHEMA_VERSION}", field="version")
    if cfg.get("mode") not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {cfg.get('mode')!r}", field="mode")
    source = cfg.get("source")
    if not isinstance(source, dict):
        raise ConfigError("'source' must be a mapping with exactly one key", field="source")
    for key in source:
        if key not in SOURCE_KINDS:
            raise ConfigError(f"unknown key 'source.{key}'", field=f"source.{key}")
    if len(source) != 1:
        raise ConfigError(f"exactly one source required, got {sorted(source)}", field="source")
    _number(cfg["seed"], "seed", integer=True, nonnegative=True)
    _number(cfg["workers"], "workers", integer=True, positive=True)
    for axis in ("observation", "semantic"):
        value = cfg["distortion"][axis]
        if value is not None and not isinstance(value, list) and value not in DISTORTIONS:
            raise ConfigError(f"distortion.{axis} must be one of {DISTORTIONS} or a matrix", field=f"distortion.{axis}")
    if cfg["distortion"]["observation"] == "cross-entropy":
        raise ConfigError("cross-entropy applies to the semantic axis only", field="distortion.observation")
    grid = slope_grid(cfg)
    if cfg["targets"] is not None:
        _pairs(cfg["targets"], "targets", nonnegative=True)
    mode = cfg["mode"]
    if mode in ("ba", "sweep", "nesrd", "cascade") and grid is None and not (mode == "ba" and cfg["targets"]):
        raise ConfigError(f"mode {mode!r} needs a slope grid", field="grid")
    if mode == "oracle" and not cfg["targets"]:
        raise ConfigError("mode 'oracle' needs distortion targets", field="targets")
    if cfg["capacity_bits"] is not None:
        _number(cfg["capacity_bits"], "capacity_bits", nonnegative=True)
    if not isinstance(cfg["bounds"], bool):
        raise ConfigError("'bounds' must be true or false", field="bounds")
    ints = {
        "ba": ("max_iters",),
        "oracle": ("restarts", "max_steps"),
        "nesrd": ("epochs", "batch_n1", "batch_m", "n1", "n2", "m", "eval_n1"),
        "cascade": ("epochs", "batch_n1", "batch_m", "latent_dim", "generator_pretrain_epochs", "classifier_pretrain_epochs"),
        "generate": ("n1", "n2"),
    }
    for section, keys in ints.items():
        for key in keys:
            _number(cfg[section][key], f"{section}.{key}", integer=True, positive=True)
    for section, key in [("ba", "tol"), ("oracle", "tol"), ("nesrd", "learning_rate"), ("cascade", "learning_rate")]:
        _number(cfg[section][key], f"{section}.{key}", positive=True)
    disc = cfg["discretization"]
    _number(disc["levels"], "discretization.levels", integer=True, positive=True)
    _number(disc["mc_samples"], "discretization.mc_samples", integer=True, positive=True)
    _number(disc["sigmas"], "discretization.sigmas", positive=True)
    if cfg["output"]["format"] not in ("csv", "json", "both"):
        raise ConfigError("output.format must be csv, json or both", field="output.format")
    if cfg["generate"]["format"] not in ("csv", "jsonl"):
        raise ConfigError("generate.format must be csv or jsonl", field="generate.format")


def parse_config(data: Any, base_dir: Path | None = None) -> dict:
    """Validate a raw mapping and fill defaults; relative paths resolve against ``base_dir``."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping", field="")
    cfg = _merge(DEFAULTS, data, "")
    for key in REQUIRED:
        if key not in cfg:
            raise ConfigError(f"missing required key {key!r}", field=key)
    _validate(cfg)
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    if "file" in cfg["source"]:
        cfg["source"]["file"] = str((base / cfg["source"]["file"]).resolve())
    cfg["output"]["dir"] = str((base / cfg["output"]["dir"]).resolve())
    return cfg


def load_config(path, seed: int | None = None, workers: int | None = None) -> dict:
    """Read, validate and resolve a config file; ``seed`` and ``SEMRD_WORKERS`` take precedence."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}", field="") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}", field="") from exc
    cfg = parse_config(raw, path.parent)
    if seed is not None:
        cfg["seed"] = _number(seed, "--seed", integer=True, nonnegative=True)
    env = os.environ.get(WORKERS_ENV) if workers is None else workers
    if env not in (None, ""):
        try:
            cfg["workers"] = _number(int(env), WORKERS_ENV, integer=True, positive=True)
        except ValueError as exc:
            raise ConfigError(f"{WORKERS_ENV} must be a positive integer, got {env!r}", field=WORKERS_ENV) from exc
    return cfg


def config_hash(cfg: dict) -> str:
    """SHA-256 of the resolved config without the machine-specific output directory."""
    body = copy.deepcopy(cfg)
    body["output"].pop("dir", None)
    return hashlib.sha256(json.dumps(body, sort_keys=True, default=str).encode()).hexdigest()
