"""Semantic rate-distortion functions of two-part sources.

Three routes cross-check each other: a generalized Blahut-Arimoto solver for
known discrete sources (:mod:`semrd.ba`), a dual evaluator (:mod:`semrd.dual`)
and a sample-based neural estimator (:mod:`semrd.neural`).  :mod:`semrd.oracle`
supplies independent ground truth on tiny instances.
"""

__version__ = "0.1.0"
