"""Generalized Blahut-Arimoto iteration for known discrete semantic sources.

The solver is parametric in two nonpositive slopes (lambda1, lambda2): it
minimizes ``I(X; X_hat, S_hat) - lambda1 E[d_o] - lambda2 E[d_hat_s]`` by
alternating the marginal update and the exponentially tilted kernel update,
and reports the distortions it reaches.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import (
    LOG_FLOOR,
    DiscreteSemanticSource,
    DistortionSpec,
    RDPoint,
    build_source,
    check_kernel,
    expected_distortions,
    kernel_marginal,
    make_distortion_spec,
    uniform_kernel,
)
from .exceptions import DegenerateRow, SemRDError, TargetUnreachable

#: slope used in place of -inf to make a constraint effectively hard
HARD_SLOPE = -50.0

FREEZE_MASS = 1e-15
FREEZE_PATIENCE = 50
EXP_FLOOR = -700.0
# share of uniform mass mixed into a warm-start kernel so every entry stays positive
WARM_MIX = 1e-9


@dataclass(frozen=True)
class BAConfig:
    lambda1: float = 0.0
    lambda2: float = 0.0
    max_iters: int = 2000
    tol: float = 1e-9
    init: str = "uniform"
    seed: int = 0

    def __post_init__(self):
        if self.lambda1 > 0 or self.lambda2 > 0:
            raise ValueError(f"slopes must be nonpositive, got ({self.lambda1}, {self.lambda2})")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.init not in ("uniform", "random"):
            raise ValueError(f"unknown init {self.init!r}; expected 'uniform' or 'random'")

    def with_slopes(self, lambda1: float, lambda2: float) -> "BAConfig":
        return dataclasses.replace(self, lambda1=float(lambda1), lambda2=float(lambda2))


@dataclass
class BATrace:
    """Per-iteration diagnostics of one solve."""

    rate_nats: list = field(default_factory=list)
    d_o: list = field(default_factory=list)
    d_s: list = field(default_factory=list)
    row_deviation: list = field(default_factory=list)
    kernel_change: list = field(default_factory=list)

    def append(self, rate, d_o, d_s, row_dev, change):
        self.rate_nats.append(rate)
        self.d_o.append(d_o)
        self.d_s.append(d_s)
        self.row_deviation.append(row_dev)
        self.kernel_change.append(change)

    def lagrangian(self, lambda1: float, lambda2: float) -> np.ndarray:
        return (
            np.asarray(self.rate_nats)
            - lambda1 * np.asarray(self.d_o)
            - lambda2 * np.asarray(self.d_s)
        )

    def __len__(self):
        return len(self.rate_nats)


def ba_update_marginal(src: DiscreteSemanticSource, kernel) -> np.ndarray:
    """Reproduction marginal sum_x P(x) P(x_hat, s_hat | x)."""
    k = check_kernel(kernel, src.x_size)
    return kernel_marginal(src, k)


def log_tilt(spec: DistortionSpec, lambda1: float, lambda2: float) -> np.ndarray:
    """Exponent lambda1 d_o(x, x_hat) + lambda2 d_hat_s(x, s_hat), shape (|X|, |X_hat|, |S_hat|)."""
    return lambda1 * spec.d_o[:, :, None] + lambda2 * spec.d_hat_s[:, None, :]


def _tilted_rows(tilt: np.ndarray, marginal: np.ndarray):
    """Row-normalized exp(tilt + ln marginal) and its logarithm, both flattened to (|X|, pairs)."""
    nx = tilt.shape[0]
    expo = tilt.reshape(nx, -1) + np.log(np.maximum(marginal, LOG_FLOOR)).reshape(1, -1)
    top = expo.max(axis=1, keepdims=True)
    if not np.all(np.isfinite(top)):
        row = int(np.flatnonzero(~np.isfinite(top.ravel()))[0])
        raise DegenerateRow(f"normalizer of kernel row {row} is not finite")
    # exp in the subnormal range is very slow; entries this small cannot move any sum
    shifted = np.maximum(expo - top, EXP_FLOOR)
    e = np.exp(shifted)
    total = e.sum(axis=1, keepdims=True)
    return e / total, shifted - np.log(total)


def _tilted_kernel(tilt: np.ndarray, marginal: np.ndarray) -> np.ndarray:
    return _tilted_rows(tilt, marginal)[0].reshape(tilt.shape)


def ba_update_kernel(src: DiscreteSemanticSource, marginal, spec: DistortionSpec, cfg: BAConfig) -> np.ndarray:
    """Kernel proportional to marginal * exp(lambda1 d_o + lambda2 d_hat_s), normalized per row."""
    q = np.asarray(marginal, dtype=float).reshape(spec.pair_shape)
    return _tilted_kernel(log_tilt(spec, cfg.lambda1, cfg.lambda2), q)


def initial_kernel(src: DiscreteSemanticSource, spec: DistortionSpec, cfg: BAConfig) -> np.ndarray:
    if cfg.init == "uniform":
        return uniform_kernel(src.x_size, spec.pair_shape)
    rng = np.random.default_rng(cfg.seed)
    k = rng.uniform(0.05, 1.0, size=(src.x_size, *spec.pair_shape))
    return k / k.sum(axis=(1, 2), keepdims=True)


def ba_solve(
    src: DiscreteSemanticSource,
    spec: DistortionSpec,
    cfg: BAConfig,
    init_kernel=None,
) -> tuple[RDPoint, np.ndarray, BATrace]:
    """Run the alternating updates from a strictly positive kernel until the Lagrangian settles.

    Stops when the change of ``rate - lambda1 D_o - lambda2 D_s`` between two
    iterations falls below ``cfg.tol * max(1, |L|)`` and no kernel entry moved by
    more than ``cfg.tol``, or after ``cfg.max_iters`` iterations;
    ``point.info['stop']`` records which rule fired.

    Returns
    -------
    point : RDPoint
        Achieved distortions and rate of the final kernel.
    kernel : ndarray of shape (|X|, |X_hat|, |S_hat|)
    trace : BATrace
    """
    lam1, lam2 = cfg.lambda1, cfg.lambda2
    tilt = log_tilt(spec, lam1, lam2)
    if init_kernel is None:
        kernel = initial_kernel(src, spec, cfg)
    else:
        kernel = check_kernel(init_kernel, src.x_size)
        if np.any(kernel[src.px > 0] <= 0):
            raise ValueError("initial kernel must be strictly positive")

    trace = BATrace()
    below = np.zeros(spec.pair_shape, dtype=int)
    frozen = np.zeros(spec.pair_shape, dtype=bool)
    prev_lagr = None
    stop = "max_iters"
    it = 0
    q = kernel_marginal(src, kernel)
    for it in range(1, cfg.max_iters + 1):
        # supports that stay negligible for long enough are pinned at the floor
        below = np.where(q < FREEZE_MASS, below + 1, 0)
        frozen |= below >= FREEZE_PATIENCE
        q = np.where(frozen, LOG_FLOOR, q)

        flat, log_flat = _tilted_rows(tilt, q)
        new_kernel = flat.reshape(tilt.shape)
        q = kernel_marginal(src, new_kernel)
        rate = _rate(src.px, flat, log_flat, q)
        d_o, d_s = expected_distortions(src, new_kernel, spec)
        row_dev = float(np.max(np.abs(new_kernel.sum(axis=(1, 2)) - 1.0)))
        change = float(np.max(np.abs(new_kernel - kernel)))
        trace.append(rate, d_o, d_s, row_dev, change)
        kernel = new_kernel

        lagr = rate - lam1 * d_o - lam2 * d_s
        settled = prev_lagr is not None and abs(lagr - prev_lagr) <= cfg.tol * max(1.0, abs(lagr))
        # the Lagrangian is flat to second order near the fixed point, so the kernel must settle too
        if settled and change <= cfg.tol:
            stop = "tol"
            break
        prev_lagr = lagr

    point = RDPoint(
        method="ba",
        alpha1=lam1,
        alpha2=lam2,
        d_o=trace.d_o[-1],
        d_s=trace.d_s[-1],
        rate_nats=trace.rate_nats[-1],
        iterations=it,
        converged=stop == "tol",
        info={"stop": stop, "frozen_pairs": int(frozen.sum())},
    )
    return point, kernel, trace


def _rate(px, flat, log_flat, marginal) -> float:
    """Mutual information from a kernel and its precomputed logarithm."""
    live = flat[px > 0]
    if np.all(live == live[0]):
        return 0.0
    logq = np.log(np.maximum(marginal, LOG_FLOOR)).reshape(1, -1)
    return max(float(px @ np.sum(flat * (log_flat - logq), axis=1)), 0.0)


def _failed_point(lam1, lam2, exc) -> RDPoint:
    nan = float("nan")
    return RDPoint(
        method="ba", alpha1=lam1, alpha2=lam2, d_o=nan, d_s=nan, rate_nats=nan,
        iterations=0, converged=False, info={"error": f"{type(exc).__name__}: {exc}"},
    )


def _solve_point(args):
    src, spec, cfg = args
    try:
        return ba_solve(src, spec, cfg)[0]
    except SemRDError as exc:
        return _failed_point(cfg.lambda1, cfg.lambda2, exc)


def ba_sweep(src, spec, lambda_grid, cfg: BAConfig | None = None, workers: int = 1) -> list[RDPoint]:
    """Solve every slope pair of ``lambda_grid``; failures become NaN points carrying ``info['error']``."""
    cfg = cfg or BAConfig()
    grid = [(float(a), float(b)) for a, b in lambda_grid]
    for a, b in grid:
        if a > 0 or b > 0:
            raise ValueError(f"slope pair ({a}, {b}) is not nonpositive")
    jobs = [(src, spec, cfg.with_slopes(a, b)) for a, b in grid]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_solve_point, jobs))
    return [_solve_point(job) for job in jobs]


# ---------------------------------------------------------------------------
# single-constraint (classic) rate-distortion


def _single_axis_problem(marginal, distortion):
    px = np.asarray(marginal, dtype=float).ravel()
    d = np.asarray(distortion, dtype=float)
    src = build_source(px[:, None])
    spec = make_distortion_spec(src, d, np.zeros((1, 1)))
    return src, spec


def conventional_rd(src_marginal, distortion_matrix, lam: float, cfg: BAConfig | None = None) -> RDPoint:
    """Classic one-constraint Blahut-Arimoto at slope ``lam``; the semantic axis is left empty."""
    cfg = (cfg or BAConfig()).with_slopes(lam, 0.0)
    src, spec = _single_axis_problem(src_marginal, distortion_matrix)
    point = ba_solve(src, spec, cfg)[0]
    return dataclasses.replace(point, d_s=0.0)


def conventional_rd_at(
    src_marginal,
    distortion_matrix,
    target: float,
    cfg: BAConfig | None = None,
    dtol: float = 1e-7,
    max_steps: int = 100,
) -> RDPoint:
    """Classic rate-distortion value at a requested distortion, found by bisection on the slope.

    When the target falls inside a jump of D(lambda) (a linear piece of R(D)),
    the rate is interpolated between the two bracketing solutions.
    """
    cfg = cfg or BAConfig()
    src, spec = _single_axis_problem(src_marginal, distortion_matrix)
    uniform = uniform_kernel(src.x_size, spec.pair_shape)
    warm = [None]

    def solve(lam):
        # successive slopes are close, so start from the last kernel with a trace of uniform mass
        init = None if warm[0] is None else (1.0 - WARM_MIX) * warm[0] + WARM_MIX * uniform
        point, warm[0], _ = ba_solve(src, spec, cfg.with_slopes(lam, 0.0), init_kernel=init)
        return point

    hi_pt = solve(0.0)
    if hi_pt.d_o <= target:
        return dataclasses.replace(hi_pt, d_s=0.0)
    floor = float(src.px @ spec.d_o.min(axis=1))
    if target < floor - 1e-12:
        raise TargetUnreachable(f"distortion {target} is below the attainable minimum {floor}")
    lo, lo_pt = -1.0, None
    while True:
        lo_pt = solve(lo)
        if lo_pt.d_o <= target:
            break
        if lo < -1e5:
            return dataclasses.replace(lo_pt, d_s=0.0)
        lo *= 2.0
    hi = 0.0
    for _ in range(max_steps):
        if abs(lo_pt.d_o - target) <= dtol:
            return dataclasses.replace(lo_pt, d_s=0.0)
        mid = 0.5 * (lo + hi)
        pt = solve(mid)
        if pt.d_o <= target:
            lo, lo_pt = mid, pt
        else:
            hi, hi_pt = mid, pt
        if hi - lo < 1e-13 * max(1.0, abs(lo)):
            break
    if abs(lo_pt.d_o - target) <= dtol:
        return dataclasses.replace(lo_pt, d_s=0.0)
    # time-sharing between the two sides of the jump
    w = (hi_pt.d_o - target) / (hi_pt.d_o - lo_pt.d_o)
    rate = w * lo_pt.rate_nats + (1 - w) * hi_pt.rate_nats
    return RDPoint(
        method="ba", alpha1=lo, alpha2=0.0, d_o=target, d_s=0.0, rate_nats=rate,
        iterations=lo_pt.iterations + hi_pt.iterations,
        converged=lo_pt.converged and hi_pt.converged, info={"interpolated": True},
    )


def rate_bounds(src: DiscreteSemanticSource, spec: DistortionSpec, d_o: float, d_s: float, cfg=None):
    """Single-axis rates (R_o(D_o), R_s(D_s)) in nats used by the sandwich bound max <= R <= sum.

    R_s is the classic rate-distortion function of X under the modified distortion d_hat_s.
    """
    r_o = conventional_rd_at(src.px, spec.d_o, d_o, cfg).rate_nats
    r_s = conventional_rd_at(src.px, spec.d_hat_s, d_s, cfg).rate_nats
    return r_o, r_s


def lambda_grid(lambda1_values, lambda2_values) -> list[tuple[float, float]]:
    """Row-major product grid of slope pairs."""
    return [(float(a), float(b)) for a in lambda1_values for b in lambda2_values]

