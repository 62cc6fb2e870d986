"""Finite-alphabet semantic sources, distortion tables and shared information quantities.

Conventions used throughout the package:

* a *kernel* P(x_hat, s_hat | x) is an array of shape ``(|X|, |X_hat|, |S_hat|)``;
  flattening its last two axes gives the row-major pair index
  ``x_hat * |S_hat| + s_hat``;
* a *reproduction marginal* is an array of shape ``(|X_hat|, |S_hat|)``;
* rates are computed in nats and reported in bits as ``nats / ln 2``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import (
    AllZero,
    DimensionMismatch,
    InvalidKernel,
    NegativeCapacity,
    NonFinite,
)

LN2 = float(np.log(2.0))
LOG_FLOOR = 1e-300
KERNEL_ATOL = 1e-10

METHODS = ("ba", "nesrd", "oracle", "dual", "cascade")


@dataclass(frozen=True, eq=False)
class DiscreteSemanticSource:
    """Joint law P(x, s) over finite alphabets together with its marginal and conditional."""

    joint: np.ndarray
    px: np.ndarray
    ps_given_x: np.ndarray

    @property
    def x_size(self) -> int:
        return self.joint.shape[0]

    @property
    def s_size(self) -> int:
        return self.joint.shape[1]

    @property
    def ps(self) -> np.ndarray:
        return self.joint.sum(axis=0)


def build_source(joint) -> DiscreteSemanticSource:
    """Normalize a nonnegative |X| x |S| table into a :class:`DiscreteSemanticSource`.

    Rows of the conditional P(s|x) for observation symbols with zero mass are
    set uniform so every row stays stochastic.
    """
    table = np.array(joint, dtype=float)
    if table.ndim != 2:
        raise DimensionMismatch(f"joint table must be 2-D, got shape {table.shape}")
    if not np.all(np.isfinite(table)):
        raise NonFinite("joint table contains NaN or infinite entries")
    if np.any(table < 0):
        raise ValueError("joint table has negative entries")
    total = table.sum()
    if total <= 0:
        raise AllZero("joint table sums to zero")
    table = table / total
    px = table.sum(axis=1)
    cond = np.full_like(table, 1.0 / table.shape[1])
    live = px > 0
    cond[live] = table[live] / px[live, None]
    for arr in (table, px, cond):
        arr.setflags(write=False)
    return DiscreteSemanticSource(joint=table, px=px, ps_given_x=cond)


def modified_semantic_distortion(src: DiscreteSemanticSource, d_s) -> np.ndarray:
    """Expected semantic distortion seen from the observation: sum_s P(s|x) d_s(s, s_hat)."""
    d_s = np.asarray(d_s, dtype=float)
    if d_s.ndim != 2 or d_s.shape[0] != src.s_size:
        raise DimensionMismatch(
            f"d_s must have shape (|S|={src.s_size}, |S_hat|), got {d_s.shape}"
        )
    _check_distortion(d_s, "d_s")
    return src.ps_given_x @ d_s


@dataclass(frozen=True, eq=False)
class DistortionSpec:
    """Observation distortion d_o(x, x_hat), semantic d_s(s, s_hat) and the derived d_hat_s(x, s_hat)."""

    d_o: np.ndarray
    d_s: np.ndarray
    d_hat_s: np.ndarray

    @property
    def x_hat_size(self) -> int:
        return self.d_o.shape[1]

    @property
    def s_hat_size(self) -> int:
        return self.d_s.shape[1]

    @property
    def pair_shape(self) -> tuple[int, int]:
        return (self.x_hat_size, self.s_hat_size)

    def pair_distortions(self) -> tuple[np.ndarray, np.ndarray]:
        """Both distortions laid out over the flattened pair axis, each of shape (|X|, |X_hat||S_hat|)."""
        nx, nxh = self.d_o.shape
        nsh = self.s_hat_size
        do = np.repeat(self.d_o, nsh, axis=1)
        ds = np.tile(self.d_hat_s, (1, nxh))
        return do, ds


def make_distortion_spec(src: DiscreteSemanticSource, d_o, d_s) -> DistortionSpec:
    d_o = np.array(d_o, dtype=float)
    if d_o.ndim != 2 or d_o.shape[0] != src.x_size:
        raise DimensionMismatch(
            f"d_o must have shape (|X|={src.x_size}, |X_hat|), got {d_o.shape}"
        )
    _check_distortion(d_o, "d_o")
    d_s = np.array(d_s, dtype=float)
    d_hat = modified_semantic_distortion(src, d_s)
    for arr in (d_o, d_s, d_hat):
        arr.setflags(write=False)
    return DistortionSpec(d_o=d_o, d_s=d_s, d_hat_s=d_hat)


def _check_distortion(d, name):
    if not np.all(np.isfinite(d)):
        raise NonFinite(f"{name} has non-finite entries")
    if np.any(d < 0):
        raise ValueError(f"{name} has negative entries")


# ---------------------------------------------------------------------------
# common distortion measures


def hamming_distortion(n: int, m: int | None = None) -> np.ndarray:
    m = n if m is None else m
    return 1.0 - np.eye(n, m)


def squared_error_distortion(points, reproductions) -> np.ndarray:
    """Matrix of squared Euclidean distances between two point sets (rows are points)."""
    a = np.asarray(points, dtype=float)
    b = np.asarray(reproductions, dtype=float)
    # 1-D inputs are scalar points
    a = a[:, None] if a.ndim == 1 else a
    b = b[:, None] if b.ndim == 1 else b
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def cross_entropy_distortion(labels, reproductions, floor: float = 1e-12) -> np.ndarray:
    """d(s, s_hat) = -sum_k s_k ln s_hat_k for probability-vector rows of both arguments."""
    s = np.atleast_2d(np.asarray(labels, dtype=float))
    q = np.atleast_2d(np.asarray(reproductions, dtype=float))
    if s.shape[1] != q.shape[1]:
        raise DimensionMismatch("label and reproduction vectors differ in length")
    return -(s @ np.log(np.maximum(q, floor)).T)


def binary_entropy(p, base: float = 2.0):
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -(np.where(p > 0, p * np.log(p), 0.0) + np.where(p < 1, (1 - p) * np.log1p(-p), 0.0))
    h = h / np.log(base)
    return float(h) if h.ndim == 0 else h


# ---------------------------------------------------------------------------
# kernels


def check_kernel(kernel, x_size: int | None = None, atol: float = KERNEL_ATOL) -> np.ndarray:
    """Validate a reproduction kernel and return it as a float array of shape (|X|, |X_hat|, |S_hat|)."""
    k = np.asarray(kernel, dtype=float)
    if k.ndim == 2:
        k = k[:, :, None]
    if k.ndim != 3:
        raise DimensionMismatch(f"kernel must be 3-D (|X|, |X_hat|, |S_hat|), got {k.shape}")
    if x_size is not None and k.shape[0] != x_size:
        raise DimensionMismatch(f"kernel has {k.shape[0]} rows, source has {x_size}")
    if not np.all(np.isfinite(k)):
        raise InvalidKernel("kernel has non-finite entries")
    if np.any(k < 0):
        raise InvalidKernel("kernel has negative entries")
    dev = np.abs(k.reshape(k.shape[0], -1).sum(axis=1) - 1.0)
    if np.any(dev > atol):
        row = int(np.argmax(dev))
        raise InvalidKernel(f"kernel row {row} sums to {1 - dev[row]:.3g}, not 1")
    return k


def check_marginal(marginal, atol: float = KERNEL_ATOL) -> np.ndarray:
    q = np.asarray(marginal, dtype=float)
    if q.ndim == 1:
        q = q[:, None]
    if not np.all(np.isfinite(q)) or np.any(q < 0):
        raise ValueError("reproduction marginal must be finite and nonnegative")
    if abs(q.sum() - 1.0) > atol:
        raise ValueError(f"reproduction marginal sums to {q.sum():.12g}")
    return q


def uniform_kernel(x_size: int, pair_shape: tuple[int, int]) -> np.ndarray:
    n = pair_shape[0] * pair_shape[1]
    return np.full((x_size, *pair_shape), 1.0 / n)


def kernel_marginal(src: DiscreteSemanticSource, kernel) -> np.ndarray:
    k = np.asarray(kernel, dtype=float)
    return np.tensordot(src.px, k, axes=(0, 0))


def kl_rate(src: DiscreteSemanticSource, kernel) -> float:
    """Mutual information I(X; X_hat, S_hat) in nats induced by ``kernel`` on ``src``."""
    k = check_kernel(kernel, src.x_size)
    flat = k.reshape(src.x_size, -1)
    return mutual_information(src.px, flat, src.px @ flat)


def mutual_information(px, flat_kernel, marginal) -> float:
    """Sum_x px(x) KL(kernel(.|x) || marginal) in nats, with 0 ln 0 = 0.

    Exactly 0 when all live rows coincide, so product kernels carry no rounding residue.
    """
    live = flat_kernel[px > 0]
    if live.shape[0] == 0 or np.all(live == live[0]):
        return 0.0
    q = np.maximum(np.asarray(marginal).reshape(1, -1), LOG_FLOOR)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(flat_kernel > 0, flat_kernel * (np.log(flat_kernel) - np.log(q)), 0.0)
    rate = float(px @ terms.sum(axis=1))
    # rounding can leave a -1e-17 residue near product kernels
    return max(rate, 0.0)


def expected_distortions(src: DiscreteSemanticSource, kernel, spec: DistortionSpec) -> tuple[float, float]:
    k = np.asarray(kernel, dtype=float)
    if k.ndim == 2:
        k = k[:, :, None]
    if k.shape != (src.x_size, *spec.pair_shape):
        raise DimensionMismatch(
            f"kernel shape {k.shape} does not match (|X|, |X_hat|, |S_hat|)="
            f"{(src.x_size, *spec.pair_shape)}"
        )
    p_xxh = src.px[:, None] * k.sum(axis=2)
    p_xsh = src.px[:, None] * k.sum(axis=1)
    return float(np.sum(p_xxh * spec.d_o)), float(np.sum(p_xsh * spec.d_hat_s))


def d_max(src: DiscreteSemanticSource, spec: DistortionSpec) -> tuple[float, float]:
    """Smallest distortions reachable with a single fixed reproduction symbol on each axis."""
    if spec.d_o.shape[0] != src.x_size or spec.d_hat_s.shape[0] != src.x_size:
        raise DimensionMismatch("distortion tables do not match the source alphabet")
    return float(np.min(src.px @ spec.d_o)), float(np.min(src.px @ spec.d_hat_s))


def d_max_arguments(src: DiscreteSemanticSource, spec: DistortionSpec) -> tuple[int, int]:
    return int(np.argmin(src.px @ spec.d_o)), int(np.argmin(src.px @ spec.d_hat_s))


# ---------------------------------------------------------------------------
# solved points


@dataclass(frozen=True)
class RDPoint:
    """One point of the rate-distortion surface together with the slopes that produced it."""

    method: str
    alpha1: float
    alpha2: float
    d_o: float
    d_s: float
    rate_nats: float
    iterations: int = 0
    converged: bool = True
    info: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if self.alpha1 > 0 or self.alpha2 > 0:
            raise ValueError(f"slopes must be nonpositive, got ({self.alpha1}, {self.alpha2})")
        if self.rate_nats < 0:
            if self.rate_nats < -1e-9:
                raise ValueError(f"negative rate {self.rate_nats}")
            object.__setattr__(self, "rate_nats", 0.0)
        for name in ("alpha1", "alpha2", "d_o", "d_s", "rate_nats"):
            object.__setattr__(self, name, float(getattr(self, name)))

    @property
    def rate_bits(self) -> float:
        return self.rate_nats / LN2

    @property
    def lagrangian(self) -> float:
        return self.rate_nats - self.alpha1 * self.d_o - self.alpha2 * self.d_s

    def to_row(self) -> dict:
        row = asdict(self)
        row.pop("info")
        row["rate_bits"] = self.rate_bits
        return row


def achievable(point: RDPoint, capacity_bits: float) -> bool:
    """Whether the distortion pair of ``point`` can be delivered over a channel of the given capacity."""
    if capacity_bits < 0:
        raise NegativeCapacity(f"capacity must be nonnegative, got {capacity_bits}")
    return point.rate_bits <= capacity_bits
