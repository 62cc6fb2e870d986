"""Sample-based log-moment loss and its exact gradient.

For observations x_n (with semantic samples s_n^k) and generated atoms
y_m = H(z_m), the energy is E_nm = alpha1 d_o(x_n, x_hat_m) + alpha2 d_s(n, s_hat_m)
where d_s is averaged over the semantic samples, and the loss is

    -(1/N) sum_n [ logsumexp_m E_nm - ln M ].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..dual import DualParams
from ..exceptions import NonFinite
from .network import CascadeNetwork, GenerativeNetwork

KINDS = ("squared_error", "cross_entropy")
CE_FLOOR = 1e-12


@dataclass(frozen=True)
class NeuralDistortions:
    """Distortion choice per axis; both must be differentiable in the reproduction."""

    observation: str = "squared_error"
    semantic: str = "squared_error"
    floor: float = CE_FLOOR

    def __post_init__(self):
        if self.observation != "squared_error":
            raise ValueError("observation distortion must be squared_error")
        if self.semantic not in KINDS:
            raise ValueError(f"semantic distortion must be one of {KINDS}")


def squared_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(N, M) matrix of squared Euclidean distances between rows of a and rows of b."""
    d = np.sum(a**2, axis=1)[:, None] + np.sum(b**2, axis=1)[None, :] - 2.0 * (a @ b.T)
    return np.maximum(d, 0.0)


def _squared_pullback(targets, reps, coef):
    """d/d reps of sum_nm coef_nm |targets_n - reps_m|^2."""
    return 2.0 * (reps * coef.sum(axis=0)[:, None] - coef.T @ targets)


def semantic_table(s_mean, s_spread, s_hat, kind: str, floor: float = CE_FLOOR) -> np.ndarray:
    """Semantic distortion averaged over each observation's semantic samples.

    Squared error splits into the distance to the sample mean plus the samples'
    own spread; cross-entropy is linear in the label vector.
    """
    if kind == "squared_error":
        return squared_distances(s_mean, s_hat) + s_spread[:, None]
    return -(s_mean @ np.log(np.maximum(s_hat, floor)).T)


def semantic_pullback(s_mean, s_hat, coef, kind: str, floor: float = CE_FLOOR) -> np.ndarray:
    if kind == "squared_error":
        return _squared_pullback(s_mean, s_hat, coef)
    # the floor is flat, so clipped entries get no gradient
    return np.where(s_hat > floor, -(coef.T @ s_mean) / np.maximum(s_hat, floor), 0.0)


def log_mean_exp_weights(energy: np.ndarray):
    """Per-row logsumexp minus ln M, and the row-softmax weights."""
    m = energy.shape[1]
    top = energy.max(axis=1, keepdims=True)
    e = np.exp(energy - top)
    total = e.sum(axis=1, keepdims=True)
    lme = (top + np.log(total))[:, 0] - np.log(m)
    return lme, e / total


def _batch_parts(batch, latent):
    z = batch.latent if latent is None else np.atleast_2d(latent)
    if z is None:
        raise ValueError("a latent bank is required")
    return batch.observations, batch.semantic_mean(), batch.semantic_spread(), z


def _check(table, name):
    if not np.all(np.isfinite(table)):
        raise NonFinite(f"{name} distortion produced non-finite values")
    return table


def energy_tables(network: GenerativeNetwork, batch, dist: NeuralDistortions, latent=None):
    """Distortion tables (d_o, d_s) of shape (N, M) and the forward cache."""
    x, s_mean, spread, z = _batch_parts(batch, latent)
    x_hat, s_hat, cache = network.forward(z)
    do = _check(squared_distances(x, x_hat), "observation")
    ds = _check(semantic_table(s_mean, spread, s_hat, dist.semantic, dist.floor), "semantic")
    return do, ds, (x_hat, s_hat, cache)


def nesrd_loss(network: GenerativeNetwork, batch, params: DualParams, dist: NeuralDistortions | None = None, latent=None) -> float:
    """Loss in nats; zero at zero slopes and nonnegative for nonpositive slopes."""
    dist = dist or NeuralDistortions()
    do, ds, _ = energy_tables(network, batch, dist, latent)
    lme, _ = log_mean_exp_weights(params.alpha1 * do + params.alpha2 * ds)
    return float(-lme.mean())


def nesrd_loss_grad(network: GenerativeNetwork, batch, params: DualParams, dist: NeuralDistortions | None = None, latent=None):
    """Loss value and its gradient w.r.t. the network parameters (flat, ``get_params`` order)."""
    dist = dist or NeuralDistortions()
    x, s_mean, _, _ = _batch_parts(batch, latent)
    do, ds, (x_hat, s_hat, cache) = energy_tables(network, batch, dist, latent)
    lme, w = log_mean_exp_weights(params.alpha1 * do + params.alpha2 * ds)
    coef = -w / x.shape[0]
    grad_x = params.alpha1 * _squared_pullback(x, x_hat, coef)
    grad_s = params.alpha2 * semantic_pullback(s_mean, s_hat, coef, dist.semantic, dist.floor)
    return float(-lme.mean()), network.backward(cache, grad_x, grad_s)


def cascade_tables(network: CascadeNetwork, batch, latent=None, floor: float = CE_FLOOR):
    """(d_o, d_s) tables with d_s the cross-entropy between labels and classifier output."""
    x, labels, _, z = _batch_parts(batch, latent)
    x_hat, probs, cache = network.forward(z)
    do = _check(squared_distances(x, x_hat), "observation")
    ds = _check(-(labels @ np.log(np.maximum(probs, floor)).T), "semantic")
    return do, ds, (x_hat, probs, cache)


def cascade_loss(network: CascadeNetwork, batch, params: DualParams, latent=None) -> float:
    """Loss with one-hot labels as the single semantic sample per observation."""
    do, ds, _ = cascade_tables(network, batch, latent)
    lme, _ = log_mean_exp_weights(params.alpha1 * do + params.alpha2 * ds)
    return float(-lme.mean())


def cascade_loss_grad(network: CascadeNetwork, batch, params: DualParams, latent=None):
    """Loss value and flat gradients for (generator, classifier)."""
    x, labels, _, _ = _batch_parts(batch, latent)
    do, ds, (x_hat, probs, cache) = cascade_tables(network, batch, latent)
    lme, w = log_mean_exp_weights(params.alpha1 * do + params.alpha2 * ds)
    coef = -w / x.shape[0]
    grad_x = params.alpha1 * _squared_pullback(x, x_hat, coef)
    grad_p = params.alpha2 * semantic_pullback(labels, probs, coef, "cross_entropy")
    grad_g, grad_f = network.backward(cache, grad_x, grad_p)
    return float(-lme.mean()), grad_g, grad_f
