"""Shared small instances for the test suite."""

import json
from pathlib import Path

import numpy as np

from semrd.core import build_source, hamming_distortion, make_distortion_spec

DATA = Path(__file__).with_name("data")


def binary_identity():
    """Uniform binary X with S = X and Hamming distortion on both axes."""
    src = build_source([[0.5, 0.0], [0.0, 0.5]])
    spec = make_distortion_spec(src, hamming_distortion(2), hamming_distortion(2))
    return src, spec


def random_instance(seed, nx=3, ns=2, nxh=3, nsh=2):
    rng = np.random.default_rng(seed)
    src = build_source(rng.random((nx, ns)))
    d_o = 1.0 - np.eye(nx, nxh) + 0.3 * rng.random((nx, nxh))
    d_s = 1.0 - np.eye(ns, nsh) + 0.3 * rng.random((ns, nsh))
    return src, make_distortion_spec(src, d_o, d_s)


def tiny_fixtures():
    """The committed tiny instances: list of (name, source, spec, points)."""
    raw = json.loads((DATA / "oracle_fixtures.json").read_text())
    out = []
    for fx in raw["fixtures"]:
        src = build_source(fx["joint"])
        spec = make_distortion_spec(src, fx["d_o"], fx["d_s"])
        out.append((fx["name"], src, spec, fx["points"]))
    return out
