"""Parametric dual of the semantic rate function.

For a reproduction law Q and slopes a = (alpha1, alpha2) <= 0 the log-moment
functional is

    Lambda_Q(a) = E_{P_X} ln E_Q exp(alpha1 d_o(X, X_hat) + alpha2 d_hat_s(X, S_hat)),

and R1(Q, D_o, D_s) = sup_{a <= 0} alpha1 D_o + alpha2 D_s - Lambda_Q(a).  Its
gradient and Hessian are the mean and covariance of the two distortions under
the per-observation tilted law Q~(x) proportional to Q exp(a . d(x, .)).

Every function accepts either a discrete source (with a :class:`DistortionSpec`
and a reproduction marginal) or a :class:`SampleDistortions` table, in which
case P_X and Q are the uniform empirical laws over the rows and columns.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import logsumexp

from .core import DiscreteSemanticSource, DistortionSpec, RDPoint, kernel_marginal
from .exceptions import DimensionMismatch, EmptySupport, NoConvergence

ZERO_SLOPE = 1e-9


@dataclass(frozen=True)
class DualParams:
    alpha1: float = 0.0
    alpha2: float = 0.0

    def __post_init__(self):
        if self.alpha1 > 0 or self.alpha2 > 0:
            raise ValueError(f"dual parameters must be nonpositive, got ({self.alpha1}, {self.alpha2})")

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha1, self.alpha2], dtype=float)


@dataclass(frozen=True, eq=False)
class SampleDistortions:
    """Distortions between N observation samples and M generated reproduction atoms.

    ``d_s`` holds the semantic distortion already averaged over the semantic
    samples attached to each observation.
    """

    d_o: np.ndarray
    d_s: np.ndarray

    def __post_init__(self):
        if self.d_o.shape != self.d_s.shape or self.d_o.ndim != 2:
            raise DimensionMismatch("sample distortion tables must share one 2-D shape")


@dataclass(frozen=True, eq=False)
class TiltedMeasure:
    """Per-observation tilted reproduction laws; ``tables[x]`` sums to one."""

    tables: np.ndarray
    params: DualParams


def _problem(source, Q, spec):
    """Flatten either input mode into (px, log q, D_o, D_s) with pair-indexed columns."""
    if isinstance(source, SampleDistortions):
        n, m = source.d_o.shape
        px = np.full(n, 1.0 / n)
        if Q is None:
            q = np.full(m, 1.0 / m)
        else:
            q = np.asarray(Q, dtype=float).ravel()
            if q.size != m:
                raise DimensionMismatch("reproduction weights do not match the sample table")
        return px, _log_weights(q), source.d_o, source.d_s
    if not isinstance(source, DiscreteSemanticSource) or spec is None:
        raise TypeError("expected a DiscreteSemanticSource with a DistortionSpec, or SampleDistortions")
    q = np.asarray(Q, dtype=float)
    if q.size != spec.x_hat_size * spec.s_hat_size:
        raise DimensionMismatch(f"Q has {q.size} entries, expected {spec.pair_shape}")
    do, ds = spec.pair_distortions()
    return source.px, _log_weights(q.ravel()), do, ds


def _log_weights(q):
    if np.any(q < 0) or not np.all(np.isfinite(q)):
        raise ValueError("reproduction law must be finite and nonnegative")
    total = q.sum()
    if total <= 0:
        raise EmptySupport("reproduction law has empty support")
    with np.errstate(divide="ignore"):
        return np.log(q / total)


def _tilt(px, logq, do, ds, a1, a2):
    expo = a1 * do + a2 * ds + logq[None, :]
    lse = logsumexp(expo, axis=1)
    w = np.exp(expo - lse[:, None])
    return lse, w


def lambda_q(source, Q, params: DualParams, spec: DistortionSpec | None = None) -> float:
    """Log-moment functional Lambda_Q(alpha1, alpha2) in nats; nonpositive for nonpositive slopes."""
    px, logq, do, ds = _problem(source, Q, spec)
    if params.alpha1 == 0 and params.alpha2 == 0:
        # exact zero; the normalized log-weights can sum to 1 +- ulp
        return 0.0
    lse, _ = _tilt(px, logq, do, ds, params.alpha1, params.alpha2)
    return float(px @ lse)


def lambda_q_grad(source, Q, params: DualParams, spec: DistortionSpec | None = None) -> np.ndarray:
    """Tilted mean distortions (dLambda/dalpha1, dLambda/dalpha2)."""
    px, logq, do, ds = _problem(source, Q, spec)
    _, w = _tilt(px, logq, do, ds, params.alpha1, params.alpha2)
    return np.array([px @ np.sum(w * do, axis=1), px @ np.sum(w * ds, axis=1)])


def lambda_q_hessian(source, Q, params: DualParams, spec: DistortionSpec | None = None) -> np.ndarray:
    """P_X-average of the covariance matrix of (d_o, d_hat_s) under each tilted law."""
    px, logq, do, ds = _problem(source, Q, spec)
    _, w = _tilt(px, logq, do, ds, params.alpha1, params.alpha2)
    mo = np.sum(w * do, axis=1, keepdims=True)
    ms = np.sum(w * ds, axis=1, keepdims=True)
    co, cs = do - mo, ds - ms
    h11 = px @ np.sum(w * co * co, axis=1)
    h22 = px @ np.sum(w * cs * cs, axis=1)
    h12 = px @ np.sum(w * co * cs, axis=1)
    return np.array([[h11, h12], [h12, h22]])


def tilted_measure(src: DiscreteSemanticSource, Q, params: DualParams, spec: DistortionSpec) -> TiltedMeasure:
    px, logq, do, ds = _problem(src, Q, spec)
    _, w = _tilt(px, logq, do, ds, params.alpha1, params.alpha2)
    return TiltedMeasure(tables=w.reshape(src.x_size, *spec.pair_shape), params=params)


def dual_objective(params: DualParams, d_o: float, d_s: float, lambda_q_value: float) -> float:
    return params.alpha1 * d_o + params.alpha2 * d_s - lambda_q_value


@dataclass(frozen=True)
class DualSupResult:
    r1: float
    alpha1: float
    alpha2: float
    kkt_case: int
    kkt_residual: float

    @property
    def params(self) -> DualParams:
        return DualParams(self.alpha1, self.alpha2)


def _kkt_case(a1, a2) -> int:
    z1, z2 = abs(a1) < ZERO_SLOPE, abs(a2) < ZERO_SLOPE
    if not z1 and not z2:
        return 1
    if z1 and not z2:
        return 2
    if not z1 and z2:
        return 3
    return 4


def dual_sup(
    source,
    Q,
    d_o: float,
    d_s: float,
    spec: DistortionSpec | None = None,
    max_newton: int = 200,
    slope_limit: float = 1e6,
) -> DualSupResult:
    """Maximize the concave objective alpha . D - Lambda_Q(alpha) over the nonpositive quadrant.

    Candidates for each of the four KKT patterns (both slopes free, one of them
    pinned at zero, or both at zero) are solved separately: the one-dimensional
    ones by bracketed root finding on the tilted mean, the interior one by
    damped Newton with projection; the best candidate is returned together with
    its case label.

    Raises
    ------
    NoConvergence
        If the supremum is unbounded (D below what Q can reach) or Newton stalls;
        ``exc.best`` holds the best candidate found.
    """
    if d_o < 0 or d_s < 0:
        raise ValueError("distortion levels must be nonnegative")
    px, logq, do, ds = _problem(source, Q, spec)
    target = np.array([d_o, d_s], dtype=float)

    def value_grad_hess(a):
        lse, w = _tilt(px, logq, do, ds, a[0], a[1])
        lam = float(px @ lse)
        mo = np.sum(w * do, axis=1)
        ms = np.sum(w * ds, axis=1)
        g = np.array([px @ mo, px @ ms])
        co, cs = do - mo[:, None], ds - ms[:, None]
        h = np.array([
            [px @ np.sum(w * co * co, axis=1), px @ np.sum(w * co * cs, axis=1)],
            [0.0, px @ np.sum(w * cs * cs, axis=1)],
        ])
        h[1, 0] = h[0, 1]
        return float(a @ target) - lam, g, h

    def objective(a):
        lse, _ = _tilt(px, logq, do, ds, a[0], a[1])
        return float(a @ target) - float(px @ lse)

    candidates = []
    origin = np.zeros(2)
    val0, g0, _ = value_grad_hess(origin)
    candidates.append((val0, origin))
    if g0[0] <= d_o and g0[1] <= d_s:
        return _result(val0, origin, g0, target)

    unbounded = False
    for axis in (0, 1):
        a, ok = _axis_root(value_grad_hess, axis, target[axis], slope_limit)
        unbounded |= not ok
        candidates.append((objective(a), a))

    start = max(candidates, key=lambda c: c[0])[1]
    a_int, _ = _projected_newton(value_grad_hess, target, start, max_newton, slope_limit)
    candidates.append((objective(a_int), a_int))

    best_val, best = max(candidates, key=lambda c: (c[0], -int(np.count_nonzero(c[1]))))
    _, g, _ = value_grad_hess(best)
    result = _result(best_val, best, g, target)
    hit_limit = unbounded and np.min(best) <= -slope_limit / 2
    if hit_limit or result.kkt_residual > 1e-6 * max(1.0, float(np.max(target))):
        raise NoConvergence(
            f"dual supremum not attained within |alpha| <= {slope_limit:g} "
            f"(KKT residual {result.kkt_residual:.3g})",
            best=result,
        )
    return result


def _result(val, a, g, target) -> DualSupResult:
    a = np.minimum(a, 0.0)
    slack = target - g
    # complementary slackness and primal feasibility of the stationarity system
    resid = max(
        abs(slack[0] * a[0]),
        abs(slack[1] * a[1]),
        max(0.0, -slack[0]) if abs(a[0]) < ZERO_SLOPE else abs(slack[0]),
        max(0.0, -slack[1]) if abs(a[1]) < ZERO_SLOPE else abs(slack[1]),
    )
    return DualSupResult(
        r1=max(float(val), 0.0),
        alpha1=float(a[0]),
        alpha2=float(a[1]),
        kkt_case=_kkt_case(a[0], a[1]),
        kkt_residual=float(resid),
    )


def _axis_root(vgh, axis, level, slope_limit):
    """Slope on one axis (other pinned at 0) where the tilted mean equals ``level``."""

    def excess(t):
        a = np.zeros(2)
        a[axis] = t
        return vgh(a)[1][axis] - level

    if excess(0.0) <= 0:
        return np.zeros(2), True
    lo = -1.0
    while excess(lo) > 0:
        if lo <= -slope_limit:
            a = np.zeros(2)
            a[axis] = -slope_limit
            return a, False
        lo = max(lo * 4.0, -slope_limit)
    t = brentq(excess, lo, 0.0, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    a = np.zeros(2)
    a[axis] = t
    return a, True


def _projected_newton(vgh, target, a, max_iter, slope_limit):
    """Damped Newton ascent on the quadrant; coordinates at zero pushing outward stay fixed.

    Returns the final iterate and whether the iteration budget ran out.
    """
    a = np.minimum(np.asarray(a, dtype=float), 0.0)
    for _ in range(max_iter):
        val, g, h = vgh(a)
        ascent = target - g
        free = ~((a >= 0) & (ascent > 0))
        if not np.any(free) or np.max(np.abs(ascent[free])) < 1e-14:
            return a, False
        step = np.zeros(2)
        hf = h[np.ix_(free, free)]
        # rank-deficient when the two distortions are collinear under every tilt
        step[free] = np.linalg.lstsq(hf, ascent[free], rcond=1e-12)[0]
        if ascent @ step <= 0:
            step = np.where(free, ascent, 0.0)
        t = 1.0
        while True:
            cand = np.clip(a + t * step, -slope_limit, 0.0)
            new_val = vgh(cand)[0]
            if new_val >= val + 1e-4 * (ascent @ (cand - a)):
                break
            t *= 0.5
            if t < 1e-12:
                return a, False
        if np.max(np.abs(cand - a)) <= 1e-15 * max(1.0, np.max(np.abs(a))):
            return cand, False
        a = cand
    return a, True


def srdf_via_dual(
    src: DiscreteSemanticSource,
    spec: DistortionSpec,
    params: DualParams,
    inner_solver: str = "ba-marginal",
    ba_config=None,
    **nn_kwargs,
) -> RDPoint:
    """Rate-distortion point at the slopes ``params`` obtained through the dual route.

    The optimal reproduction law Q* at these slopes is found by the inner
    solver; the distortions are the tilted means at Q* and the rate is
    alpha . D* - Lambda_{Q*}(alpha).

    ``inner_solver='nn'`` delegates to the neural estimator and expects the
    keyword arguments of :func:`semrd.neural.estimate_point` other than ``params``.
    """
    if inner_solver == "ba-marginal":
        from .ba import BAConfig, ba_solve

        cfg = (ba_config or BAConfig()).with_slopes(params.alpha1, params.alpha2)
        inner, kernel, _ = ba_solve(src, spec, cfg)
        q_star = kernel_marginal(src, kernel)
        grad = lambda_q_grad(src, q_star, params, spec)
        lam = lambda_q(src, q_star, params, spec)
        rate = float(params.as_array() @ grad) - lam
        return RDPoint(
            method="dual",
            alpha1=params.alpha1,
            alpha2=params.alpha2,
            d_o=float(grad[0]),
            d_s=float(grad[1]),
            rate_nats=max(rate, 0.0) if rate > -1e-9 else rate,
            iterations=inner.iterations,
            converged=inner.converged,
            info={"q_star": q_star, "lambda_q": lam},
        )
    if inner_solver == "nn":
        from .neural import estimate_point

        point = estimate_point(params=params, **nn_kwargs)
        return RDPoint(
            method="dual",
            alpha1=point.alpha1,
            alpha2=point.alpha2,
            d_o=point.d_o,
            d_s=point.d_s,
            rate_nats=point.rate_nats,
            iterations=point.iterations,
            converged=point.converged,
            info=dict(point.info),
        )
    raise ValueError(f"unknown inner solver {inner_solver!r}")
