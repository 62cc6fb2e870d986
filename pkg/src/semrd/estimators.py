"""Estimator-style wrappers with ``get_params``/``set_params`` over the solvers.

``fit`` consumes a problem (a discrete source with its distortions, or a
sample set) and stores the solved surface point in ``point_``.  ``transform``
maps latent draws through the trained generator.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .ba import BAConfig, ba_solve
from .core import DiscreteSemanticSource, DistortionSpec
from .dual import DualParams
from .neural import GenerativeNetwork, NeuralDistortions, TrainConfig, estimate_point, train_nesrd
from .sources import SampleSet


class BlahutArimotoSRD(BaseEstimator):
    """Semantic rate-distortion point of a known discrete source at fixed slopes.

    Parameters
    ----------
    lambda1, lambda2 : float
        Nonpositive slopes of the observation and semantic constraints.
    max_iters : int
        Iteration cap of the alternating updates.
    tol : float
        Relative stop tolerance on the Lagrangian.
    """

    def __init__(self, lambda1: float = -1.0, lambda2: float = -1.0, max_iters: int = 2000, tol: float = 1e-9):
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.max_iters = max_iters
        self.tol = tol

    def fit(self, source: DiscreteSemanticSource, spec: DistortionSpec):
        cfg = BAConfig(lambda1=self.lambda1, lambda2=self.lambda2, max_iters=self.max_iters, tol=self.tol)
        self.point_, self.kernel_, self.trace_ = ba_solve(source, spec, cfg)
        self.marginal_ = np.tensordot(source.px, self.kernel_, axes=1)
        return self

    def transform(self, observation_index) -> np.ndarray:
        """Rows of the optimal test channel for the given observation symbols."""
        check_is_fitted(self, "kernel_")
        return self.kernel_[np.asarray(observation_index)]

    def score(self, source=None, spec=None) -> float:
        """Negative rate in bits, so that larger is better."""
        check_is_fitted(self, "point_")
        return -self.point_.rate_bits


class NESRDEstimator(BaseEstimator):
    """Neural plug-in estimate of the surface point at fixed dual parameters.

    Parameters
    ----------
    alpha1, alpha2 : float
        Nonpositive dual parameters.
    layer_sizes : tuple of int
        Generator layers from latent to the concatenated ``(s_hat, x_hat)`` output.
    s_dim : int
        Width of the semantic block of the output.
    semantic : {"squared_error", "cross_entropy"}
        Semantic distortion; cross-entropy puts a softmax on the semantic block.
    learning_rate, epochs, batch_n1, batch_m, momentum : training settings.
    seed : int
        Seeds both initialization and minibatch order.
    """

    def __init__(
        self,
        alpha1: float = -1.0,
        alpha2: float = -1.0,
        layer_sizes: tuple = (10, 5, 5, 5),
        s_dim: int = 2,
        semantic: str = "squared_error",
        learning_rate: float = 1e-4,
        epochs: int = 50,
        batch_n1: int = 256,
        batch_m: int = 256,
        momentum: float = 0.9,
        seed: int = 0,
    ):
        self.alpha1 = alpha1
        self.alpha2 = alpha2
        self.layer_sizes = layer_sizes
        self.s_dim = s_dim
        self.semantic = semantic
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_n1 = batch_n1
        self.batch_m = batch_m
        self.momentum = momentum
        self.seed = seed

    def _params(self) -> DualParams:
        return DualParams(self.alpha1, self.alpha2)

    def _dist(self) -> NeuralDistortions:
        return NeuralDistortions(semantic=self.semantic)

    def fit(self, samples: SampleSet, eval_samples: SampleSet | None = None):
        """Train the generator; the point is estimated on ``eval_samples`` (default: the training set)."""
        head = "softmax" if self.semantic == "cross_entropy" else "identity"
        net = GenerativeNetwork(tuple(self.layer_sizes), self.s_dim, s_head=head, seed=self.seed)
        cfg = TrainConfig(
            learning_rate=self.learning_rate, epochs=self.epochs, batch_n1=self.batch_n1,
            batch_m=self.batch_m, momentum=self.momentum, seed=self.seed,
        )
        result = train_nesrd(samples, self._params(), cfg, net, self._dist())
        self.network_ = result.network
        self.losses_ = np.asarray(result.losses)
        self.point_ = estimate_point(self.network_, samples if eval_samples is None else eval_samples, self._params(), self._dist())
        return self

    def transform(self, latent) -> np.ndarray:
        """Generated reproductions ``[x_hat, s_hat]`` for latent draws of shape (M, latent_dim)."""
        check_is_fitted(self, "network_")
        x_hat, s_hat, _ = self.network_.forward(np.atleast_2d(latent))
        return np.hstack([x_hat, s_hat])

    def score(self, samples: SampleSet) -> float:
        """Negative plug-in rate in bits on ``samples``."""
        check_is_fitted(self, "network_")
        return -estimate_point(self.network_, samples, self._params(), self._dist()).rate_bits
