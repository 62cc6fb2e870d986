"""Hit requested distortions by coordinate-wise bisection on the two slopes."""

from __future__ import annotations

import dataclasses

import numpy as np

from ..ba import BAConfig, ba_solve
from ..core import DiscreteSemanticSource, DistortionSpec, RDPoint, d_max, uniform_kernel
from ..exceptions import TargetUnreachable

TARGET_TOL = 1e-4
OUTER_STEPS = 60
INNER_STEPS = 80
# slopes steeper than this are treated as a hard constraint
SLOPE_LIMIT = -1e4
# share of uniform mass mixed into a warm start so every entry stays positive
WARM_MIX = 1e-9


def _attainable_floor(src: DiscreteSemanticSource, spec: DistortionSpec) -> tuple[float, float]:
    """Smallest reachable (D_o, D_s): every x sent to its best reproduction on each axis."""
    return float(src.px @ spec.d_o.min(axis=1)), float(src.px @ spec.d_hat_s.min(axis=1))


def _check_targets(src, spec, target):
    upper = d_max(src, spec)
    lower = _attainable_floor(src, spec)
    for axis, (t, lo, hi) in enumerate(zip(target, lower, upper)):
        if not np.isfinite(t) or t < 0 or t > hi + 1e-9 * max(1.0, hi):
            raise TargetUnreachable(f"target {t} on axis {axis} is outside [0, {hi}]")
        if t < lo - 1e-12:
            raise TargetUnreachable(f"target {t} on axis {axis} is below the attainable minimum {lo}")


def bisect_to_target(
    src: DiscreteSemanticSource,
    spec: DistortionSpec,
    target: tuple[float, float],
    cfg: BAConfig | None = None,
    tol: float = TARGET_TOL,
    outer_steps: int = OUTER_STEPS,
) -> RDPoint:
    """Solve for the slopes whose achieved distortions meet ``target``.

    Each outer step bisects the first slope with the second held fixed, then the
    second with the first fixed.  An axis whose constraint is slack at slope 0
    keeps slope 0.  Stops once both axes are within ``tol`` (or slack) or after
    ``outer_steps``; the last solved point is returned either way, with the
    target and the step count in ``info``.

    Raises
    ------
    TargetUnreachable
        If a target lies outside ``[0, D_max]`` or below the attainable minimum.
    """
    cfg = cfg or BAConfig()
    target = (float(target[0]), float(target[1]))
    _check_targets(src, spec, target)
    upper = d_max(src, spec)
    if target[0] >= upper[0] and target[1] >= upper[1]:
        # one fixed reproduction pair meets both targets, so the rate is exactly zero
        info = {"target_d_o": target[0], "target_d_s": target[1], "outer_steps": 0, "target_met": True}
        return RDPoint("ba", 0.0, 0.0, upper[0], upper[1], 0.0, 0, True, info)
    cache: dict[tuple[float, float], RDPoint] = {}
    uniform = uniform_kernel(src.x_size, spec.pair_shape)
    warm = [None]

    def solve(lams) -> RDPoint:
        # warm starts carry structure (e.g. coupled reproductions) across nearby slopes,
        # where a cold start can stall on nearly flat directions
        key = (float(lams[0]), float(lams[1]))
        if key not in cache:
            init = None if warm[0] is None else (1.0 - WARM_MIX) * warm[0] + WARM_MIX * uniform
            point, kernel, _ = ba_solve(src, spec, cfg.with_slopes(*key), init_kernel=init)
            cache[key] = point
            warm[0] = kernel
        return cache[key]

    def achieved(point, axis):
        return point.d_o if axis == 0 else point.d_s

    def met(point, lams):
        return all(
            abs(achieved(point, a) - target[a]) <= tol or (lams[a] == 0.0 and achieved(point, a) <= target[a])
            for a in (0, 1)
        )

    def bisect_axis(lams, axis):
        trial = list(lams)

        def value(lam):
            trial[axis] = lam
            return achieved(solve(trial), axis)

        if value(0.0) <= target[axis] + 0.5 * tol:
            return 0.0
        lo, hi = -1.0, 0.0
        while value(lo) > target[axis]:
            hi, lo = lo, 2.0 * lo
            if lo < SLOPE_LIMIT:
                return SLOPE_LIMIT
        for _ in range(INNER_STEPS):
            mid = 0.5 * (lo + hi)
            v = value(mid)
            if abs(v - target[axis]) <= 0.5 * tol:
                return mid
            if v > target[axis]:
                hi = mid
            else:
                lo = mid
            if hi - lo <= 1e-13 * max(1.0, abs(lo)):
                break
        # a jump in the achieved distortion: keep the side that meets the target
        return lo

    lams = [0.0, 0.0]
    point = solve(lams)
    steps = 0
    while steps < outer_steps and not met(point, lams):
        for axis in (0, 1):
            lams[axis] = bisect_axis(lams, axis)
        point = solve(lams)
        steps += 1
    info = dict(point.info, target_d_o=target[0], target_d_s=target[1], outer_steps=steps, target_met=met(point, lams))
    return dataclasses.replace(point, info=info)
