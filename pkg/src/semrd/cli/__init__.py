"""Batch front end: configs, sweeps, target bisection, points files and audits."""

from .bisect import bisect_to_target
from .config import load_config, parse_config
from .points import read_points, verify, verify_rows, write_points
from .runner import EXIT_CONFIG, EXIT_OK, EXIT_PARTIAL, execute, run

__all__ = [
    "EXIT_CONFIG",
    "EXIT_OK",
    "EXIT_PARTIAL",
    "bisect_to_target",
    "execute",
    "load_config",
    "parse_config",
    "read_points",
    "run",
    "verify",
    "verify_rows",
    "write_points",
]
