"""Training loops, plug-in rate evaluation, the classifier cascade, and the consistency sweep."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from ..core import LN2, RDPoint
from ..dual import DualParams
from ..exceptions import Diverged, NonFinite
from ..sources import LabeledDataset, SampleSet
from .loss import (
    CE_FLOOR,
    NeuralDistortions,
    cascade_loss_grad,
    log_mean_exp_weights,
    nesrd_loss_grad,
    semantic_table,
    squared_distances,
)
from .network import MLP, CascadeNetwork, GenerativeNetwork

EVAL_SEED_OFFSET = 1_000_003


@dataclass(frozen=True)
class TrainConfig:
    """Minibatch stochastic gradient settings; an epoch is one pass over the observations."""

    learning_rate: float = 1e-4
    epochs: int = 50
    batch_n1: int = 256
    batch_m: int = 256
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_n1 < 1 or self.batch_m < 1:
            raise ValueError("batch sizes must be >= 1")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")


class MomentumSGD:
    """Heavy-ball update v <- mu v - lr g; theta <- theta + v."""

    def __init__(self, learning_rate: float, momentum: float):
        self.lr = learning_rate
        self.mu = momentum
        self.velocity = None

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.velocity is None:
            self.velocity = np.zeros_like(params)
        self.velocity = self.mu * self.velocity - self.lr * grad
        return params + self.velocity


@dataclass
class TrainResult:
    network: object
    losses: list[float] = field(default_factory=list)
    steps: int = 0


def _minibatches(rng, n, size):
    perm = rng.permutation(n)
    return [perm[i: i + size] for i in range(0, n, size)]


def _latent_batch(rng, m, size):
    return np.arange(m) if size >= m else rng.choice(m, size, replace=False)


def _guard(loss, grad, last, epoch):
    if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
        raise Diverged(f"non-finite loss or gradient in epoch {epoch}", last_params=last, epoch=epoch)


def train_nesrd(
    samples: SampleSet,
    params: DualParams,
    cfg: TrainConfig,
    network: GenerativeNetwork,
    dist: NeuralDistortions | None = None,
) -> TrainResult:
    """Minibatch descent on the log-moment loss; the input network is not modified.

    Each step draws an observation batch (with its semantic samples) and a
    latent batch from the bank.  Returns the trained copy and the mean loss of
    every epoch.  Deterministic given ``cfg.seed``.

    Raises
    ------
    Diverged
        On a non-finite loss; ``last_params`` holds the last finite parameters.
    """
    if samples.latent is None:
        raise ValueError("samples need a latent bank")
    dist = dist or NeuralDistortions()
    net = network.copy()
    rng = np.random.default_rng(cfg.seed)
    opt = MomentumSGD(cfg.learning_rate, cfg.momentum)
    theta = net.get_params()
    result = TrainResult(net)
    for epoch in range(cfg.epochs):
        total, count = 0.0, 0
        for idx in _minibatches(rng, samples.n1, cfg.batch_n1):
            z = samples.latent[_latent_batch(rng, samples.m, cfg.batch_m)]
            try:
                loss, grad = nesrd_loss_grad(net, samples.subset(idx), params, dist, latent=z)
            except NonFinite as exc:
                raise Diverged(str(exc), last_params=theta.copy(), epoch=epoch) from exc
            _guard(loss, grad, theta.copy(), epoch)
            theta = opt.step(theta, grad)
            net.set_params(theta)
            total += loss * len(idx)
            count += len(idx)
            result.steps += 1
        result.losses.append(total / count)
    return result


@dataclass(frozen=True)
class PlugInEstimate:
    """Plug-in quantities sharing one set of softmax weights."""

    loss: float
    d_o: float
    d_s: float
    rate_nats: float


def _plug_in(x, s_mean, spread, x_hat, s_hat, params, kind, floor, chunk):
    lme_sum = do_sum = ds_sum = 0.0
    for start in range(0, x.shape[0], chunk):
        sl = slice(start, start + chunk)
        do = squared_distances(x[sl], x_hat)
        ds = semantic_table(s_mean[sl], spread[sl], s_hat, kind, floor)
        lme, w = log_mean_exp_weights(params.alpha1 * do + params.alpha2 * ds)
        lme_sum += lme.sum()
        do_sum += np.sum(w * do)
        ds_sum += np.sum(w * ds)
    n = x.shape[0]
    loss, d_o, d_s = -lme_sum / n, do_sum / n, ds_sum / n
    return PlugInEstimate(loss, d_o, d_s, params.alpha1 * d_o + params.alpha2 * d_s + loss)


def plug_in_estimate(network, samples: SampleSet, params: DualParams, dist: NeuralDistortions | None = None, chunk: int = 512) -> PlugInEstimate:
    """Loss, tilted mean distortions and rate estimate on ``samples`` and its latent bank."""
    if samples.latent is None:
        raise ValueError("samples need a latent bank")
    if isinstance(network, CascadeNetwork):
        dist = NeuralDistortions(semantic="cross_entropy")
    dist = dist or NeuralDistortions()
    x_hat, s_hat, _ = network.forward(samples.latent)
    return _plug_in(
        samples.observations,
        samples.semantic_mean(),
        samples.semantic_spread(),
        x_hat,
        s_hat,
        params,
        dist.semantic,
        dist.floor,
        chunk,
    )


def estimate_point(
    network,
    samples: SampleSet,
    params: DualParams,
    dist: NeuralDistortions | None = None,
    chunk: int = 512,
) -> RDPoint:
    """Rate estimate alpha . D_hat + L at the trained network, evaluated on ``samples``.

    ``samples`` should be held out from training.  The estimate is the
    divergence of the tilted kernels from the generated atoms' empirical law,
    so it is nonnegative up to rounding.
    """
    est = plug_in_estimate(network, samples, params, dist, chunk)
    if not all(np.isfinite([est.loss, est.d_o, est.d_s])):
        raise NonFinite("plug-in estimate is not finite")
    return RDPoint(
        method="nesrd",
        alpha1=params.alpha1,
        alpha2=params.alpha2,
        d_o=float(est.d_o),
        d_s=float(est.d_s),
        rate_nats=float(est.rate_nats),
        iterations=0,
        converged=True,
        info={"loss": float(est.loss), "n1": samples.n1, "n2": samples.n2, "m": samples.m},
    )


# -- cascade ------------------------------------------------------------------------

def pretrain_generator_moments(generator: MLP, observations, epochs: int, learning_rate: float, batch: int = 256, seed: int = 0) -> list[float]:
    """Fit the generator's output mean and covariance to the data's, in place.

    Loss per batch: |(mean_gen - mean_data) / sd|^2 + |(cov_gen - cov_data) / (sd sd^T)|_F^2
    with the data moments computed once over all observations.  Standardizing
    by the data's per-coordinate sd keeps the quartic covariance term well scaled.
    """
    rng = np.random.default_rng(seed)
    mu = observations.mean(axis=0)
    cov = np.cov(observations.T, bias=True).reshape(len(mu), len(mu))
    var = np.maximum(np.diag(cov), 1e-12)
    scale = np.outer(var, var)
    opt = MomentumSGD(learning_rate, 0.9)
    theta = generator.get_params()
    curve = []
    for epoch in range(epochs):
        total = 0.0
        steps = max(1, observations.shape[0] // batch)
        for _ in range(steps):
            z = rng.standard_normal((batch, generator.sizes[0]))
            y, acts = generator.forward(z)
            m = y.mean(axis=0)
            c = (y - m).T @ (y - m) / batch
            loss = float(np.sum((m - mu) ** 2 / var) + np.sum((c - cov) ** 2 / scale))
            # centered rows sum to zero, so the covariance term needs no mean correction
            grad_y = 2.0 * (m - mu) / var / batch + 4.0 * (y - m) @ ((c - cov) / scale) / batch
            grad, _ = generator.backward(acts, grad_y)
            _guard(loss, grad, theta.copy(), epoch)
            theta = opt.step(theta, grad)
            generator.set_params(theta)
            total += loss
        curve.append(total / steps)
    return curve


def pretrain_classifier(classifier: MLP, observations, labels, epochs: int, learning_rate: float, batch: int = 256, seed: int = 0) -> list[float]:
    """Mean cross-entropy training of the classifier on labeled pairs, in place."""
    rng = np.random.default_rng(seed)
    onehot = np.eye(classifier.sizes[-1])[labels]
    opt = MomentumSGD(learning_rate, 0.9)
    theta = classifier.get_params()
    curve = []
    for epoch in range(epochs):
        total = 0.0
        for idx in _minibatches(rng, len(labels), batch):
            p, acts = classifier.forward(observations[idx])
            loss = float(-np.sum(onehot[idx] * np.log(np.maximum(p, CE_FLOOR))))
            grad, _ = classifier.backward(acts, -onehot[idx] / np.maximum(p, 1e-300) / len(idx))
            _guard(loss, grad, theta.copy(), epoch)
            total += loss
            theta = opt.step(theta, grad)
            classifier.set_params(theta)
        curve.append(total / len(labels))
    return curve


@dataclass(frozen=True)
class CascadeConfig:
    """Settings for the two pretraining stages, the joint stage and evaluation."""

    train: TrainConfig = TrainConfig()
    latent_dim: int = 2
    generator_hidden: tuple[int, ...] = (16, 16)
    classifier_hidden: tuple[int, ...] = (8,)
    generator_pretrain_epochs: int = 20
    generator_pretrain_lr: float = 1e-2
    classifier_pretrain_epochs: int = 20
    classifier_pretrain_lr: float = 1e-1
    latent_bank: int | None = None
    eval_fraction: float = 0.2
    freeze_classifier: bool = False
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.eval_fraction < 1:
            raise ValueError("eval_fraction must lie in (0, 1)")


@dataclass
class CascadeResult:
    network: CascadeNetwork
    point: RDPoint
    losses: list[float]
    generator_pretrain: list[float]
    classifier_pretrain: list[float]


def train_cascade(dataset: LabeledDataset, params: DualParams, cfg: CascadeConfig | None = None) -> CascadeResult:
    """Pretrain the generator and the classifier, train both on the cascade loss, evaluate held out."""
    cfg = cfg or CascadeConfig()
    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(dataset.n)
    n_eval = max(1, int(round(cfg.eval_fraction * dataset.n)))
    train_idx, eval_idx = perm[n_eval:], perm[:n_eval]
    x, y = dataset.observations, dataset.labels
    p = x.shape[1]
    net = CascadeNetwork(
        (cfg.latent_dim, *cfg.generator_hidden, p),
        (p, *cfg.classifier_hidden, dataset.class_count),
        seed=cfg.seed,
    )
    g_curve = pretrain_generator_moments(net.generator, x[train_idx], cfg.generator_pretrain_epochs, cfg.generator_pretrain_lr, seed=cfg.seed)
    f_curve = pretrain_classifier(net.classifier, x[train_idx], y[train_idx], cfg.classifier_pretrain_epochs, cfg.classifier_pretrain_lr, seed=cfg.seed)

    m = cfg.latent_bank or len(train_idx)
    z_train = rng.standard_normal((m, cfg.latent_dim))
    z_eval = rng.standard_normal((m, cfg.latent_dim))
    onehot = np.eye(dataset.class_count)[y]
    train = SampleSet(x[train_idx], onehot[train_idx][:, None, :], z_train)
    held_out = SampleSet(x[eval_idx], onehot[eval_idx][:, None, :], z_eval)

    tc = cfg.train
    trng = np.random.default_rng(tc.seed)
    opt_g = MomentumSGD(tc.learning_rate, tc.momentum)
    opt_f = MomentumSGD(tc.learning_rate, tc.momentum)
    theta_g, theta_f = net.generator.get_params(), net.classifier.get_params()
    losses = []
    for epoch in range(tc.epochs):
        total = 0.0
        for idx in _minibatches(trng, train.n1, tc.batch_n1):
            z = z_train[_latent_batch(trng, m, tc.batch_m)]
            try:
                loss, grad_g, grad_f = cascade_loss_grad(net, train.subset(idx), params, latent=z)
            except NonFinite as exc:
                raise Diverged(str(exc), last_params=np.concatenate([theta_g, theta_f]), epoch=epoch) from exc
            _guard(loss, np.concatenate([grad_g, grad_f]), np.concatenate([theta_g, theta_f]), epoch)
            theta_g = opt_g.step(theta_g, grad_g)
            net.generator.set_params(theta_g)
            if not cfg.freeze_classifier:
                theta_f = opt_f.step(theta_f, grad_f)
                net.classifier.set_params(theta_f)
            total += loss * len(idx)
        losses.append(total / train.n1)
    point = estimate_point(net, held_out, params)
    point = replace(point, method="cascade")
    return CascadeResult(net, point, losses, g_curve, f_curve)


# -- consistency ----------------------------------------------------------------------

def consistency_sweep(
    sampler: Callable[..., SampleSet],
    params: DualParams,
    sizes,
    repeats: int,
    reference_nats: float,
    make_network: Callable[[int], GenerativeNetwork],
    cfg: TrainConfig,
    dist: NeuralDistortions | None = None,
    seed: int = 0,
) -> list[dict]:
    """Train and evaluate at each (N1, N2, M) over ``repeats`` seeds.

    ``sampler(n1, n2, m, seed)`` must return a :class:`SampleSet` with a latent
    bank.  Evaluation uses an independent draw of the same sizes.  Rows report
    the mean and spread of |R_hat - reference| in bits.  The infinite-sample
    limit is asymptotic only and is not run.
    """
    rows = []
    for n1, n2, m in sizes:
        errors, rates = [], []
        for r in range(repeats):
            s = seed + r
            train = sampler(n1, n2, m, s)
            held_out = sampler(n1, n2, m, s + EVAL_SEED_OFFSET)
            trained = train_nesrd(train, params, replace(cfg, seed=s), make_network(s), dist).network
            rate = estimate_point(trained, held_out, params, dist).rate_nats
            rates.append(rate / LN2)
            errors.append(abs(rate - reference_nats) / LN2)
        rows.append({
            "n1": n1,
            "n2": n2,
            "m": m,
            "mean_abs_error_bits": float(np.mean(errors)),
            "std_abs_error_bits": float(np.std(errors)),
            "mean_rate_bits": float(np.mean(rates)),
            "repeats": repeats,
        })
    return rows


def trend_non_increasing(values, allowed_inversions: int = 1) -> bool:
    """True when the sequence rises at most ``allowed_inversions`` times."""
    v = np.asarray(values, dtype=float)
    return int(np.sum(np.diff(v) > 0)) <= allowed_inversions
