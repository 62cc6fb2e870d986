"""Versioned text checkpoints that round-trip network parameters bit-exactly."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .network import MLP, CascadeNetwork, GenerativeNetwork

CHECKPOINT_VERSION = 1


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode()).hexdigest()


def _describe(network):
    if isinstance(network, GenerativeNetwork):
        return {"kind": "generative", "layers": list(network.mlp.sizes), "s_dim": network.s_dim, "s_head": network.s_head}
    if isinstance(network, CascadeNetwork):
        return {"kind": "cascade", "generator": list(network.generator.sizes), "classifier": list(network.classifier.sizes)}
    if isinstance(network, MLP):
        return {"kind": "mlp", "layers": list(network.sizes), "output": network.output}
    raise TypeError(f"cannot checkpoint {type(network).__name__}")


def _build(arch):
    kind = arch["kind"]
    if kind == "generative":
        return GenerativeNetwork(arch["layers"], arch["s_dim"], arch["s_head"])
    if kind == "cascade":
        return CascadeNetwork(arch["generator"], arch["classifier"])
    if kind == "mlp":
        return MLP(arch["layers"], arch["output"])
    raise ValueError(f"unknown network kind {kind!r}")


def save_checkpoint(path, network, seed: int, config: dict | None = None) -> None:
    """Write architecture, row-major parameters (as hex floats), seed and config hash."""
    config = config or {}
    record = {
        "version": CHECKPOINT_VERSION,
        "architecture": _describe(network),
        "params": [float(v).hex() for v in network.get_params()],
        "seed": int(seed),
        "config": config,
        "config_hash": config_hash(config),
    }
    Path(path).write_text(json.dumps(record, indent=1, default=str), encoding="utf-8")


def load_checkpoint(path):
    """Return (network, seed, config); rejects unknown versions and tampered configs."""
    record = json.loads(Path(path).read_text(encoding="utf-8"))
    if record.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {record.get('version')!r}")
    if config_hash(record["config"]) != record["config_hash"]:
        raise ValueError("checkpoint config does not match its hash")
    net = _build(record["architecture"])
    net.set_params(np.array([float.fromhex(v) for v in record["params"]]))
    return net, record["seed"], record["config"]
