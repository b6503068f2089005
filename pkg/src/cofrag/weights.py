"""Convex superlinear weights used for tail and uniform-integrability control.

Two families ship here: the fixed log-log weight ``W`` and piecewise
quadratic weights built level-by-level from a density (:class:`VPWeight`).
:func:`cvp_check` tests the defining properties of the class (convexity,
concave derivative, superlinear growth, sub-``r**p`` growth) together with
the elementary inequalities they imply, on a finite grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ._validation import check_finite_array

__all__ = [
    "LogLogWeight",
    "VPWeight",
    "FunctionWeight",
    "WeightCheckReport",
    "eval_W",
    "eval_W_prime",
    "eval_W_second",
    "W_gap",
    "cvp_check",
    "superlinearity_gap_growth",
    "build_dlvp_weight",
]

_LN5 = math.log(5.0)


def _nonneg(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or np.any(np.isnan(x)):
        raise ValueError("weights are defined on [0, inf)")
    return x


class LogLogWeight:
    """``W(x) = x ln(ln(x+5)) - x ln(ln 5)`` and its first two derivatives."""

    def value(self, x):
        x = _nonneg(x)
        return x * np.log1p(np.log1p(x / 5.0) / _LN5)

    def prime(self, x):
        x = _nonneg(x)
        L = np.log(x + 5.0)
        return np.log1p(np.log1p(x / 5.0) / _LN5) + x / ((x + 5.0) * L)

    def second(self, x):
        x = _nonneg(x)
        L = np.log(x + 5.0)
        D = (x + 5.0) * L
        return 1.0 / D + (5.0 * L - x) / D**2

    def gap(self, x):
        """``x W'(x) - W(x)``, evaluated in closed form to avoid cancellation."""
        x = _nonneg(x)
        return x * x / ((x + 5.0) * np.log(x + 5.0))

    def second_at_zero(self) -> float:
        return 2.0 / (5.0 * _LN5)


W = LogLogWeight()


def _scalar(v):
    return float(v) if np.ndim(v) == 0 else v


def eval_W(x):
    return _scalar(W.value(x))


def eval_W_prime(x):
    return _scalar(W.prime(x))


def eval_W_second(x):
    return _scalar(W.second(x))


def W_gap(x):
    return _scalar(W.gap(x))


@dataclass
class FunctionWeight:
    """Adapter turning three callables into a weight object for :func:`cvp_check`."""

    value: Callable
    prime: Callable
    second: Callable

    def second_at_zero(self) -> float:
        return float(self.second(np.array(0.0)))


@dataclass
class VPWeight:
    """Convex weight with a piecewise-linear concave derivative.

    ``phi'`` rises linearly from 0 at the origin to ``k`` at ``breakpoints[k-1]``.
    Past the last breakpoint the spacing doubles at every further unit step
    of ``phi'``, so ``phi'`` grows like ``log r`` and ``phi`` stays below
    ``r**p`` for every ``p > 1``.
    """

    breakpoints: np.ndarray
    _knots: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float)
        if bp.ndim != 1 or bp.size == 0 or bp[0] <= 0 or np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must be a nonempty increasing positive sequence")
        gaps = np.diff(np.concatenate([[0.0], bp]))
        if np.any(np.diff(gaps) < -1e-12 * gaps[1:]):
            raise ValueError("breakpoint gaps must be nondecreasing (concave derivative)")
        self.breakpoints = bp
        self._knots = np.concatenate([[0.0], bp])

    @property
    def slopes(self) -> np.ndarray:
        return 1.0 / np.diff(self._knots)

    def _extend_to(self, r_max: float) -> None:
        knots = self._knots
        if r_max <= knots[-1]:
            return
        gap = knots[-1] - knots[-2]
        extra = []
        last = knots[-1]
        while last < r_max:
            gap *= 2.0
            last = last + gap
            extra.append(last)
        self._knots = np.concatenate([knots, extra])

    def _prepare(self, r):
        r = _nonneg(r)
        if r.size:
            self._extend_to(float(np.max(r)))
        return r

    def prime(self, r):
        r = self._prepare(r)
        levels = np.arange(self._knots.size, dtype=float)
        return np.interp(r, self._knots, levels)

    def second(self, r):
        r = self._prepare(r)
        idx = np.clip(np.searchsorted(self._knots, r, side="right") - 1, 0, self._knots.size - 2)
        return 1.0 / (self._knots[idx + 1] - self._knots[idx])

    def value(self, r):
        r = self._prepare(r)
        knots = self._knots
        levels = np.arange(knots.size, dtype=float)
        cum = np.concatenate([[0.0], np.cumsum(np.diff(knots) * (levels[:-1] + levels[1:]) / 2.0)])
        idx = np.clip(np.searchsorted(knots, r, side="right") - 1, 0, knots.size - 2)
        d = r - knots[idx]
        return cum[idx] + d * (levels[idx] + 0.5 * d / (knots[idx + 1] - knots[idx]))

    def second_at_zero(self) -> float:
        return 1.0 / self._knots[1]

    @property
    def n_levels(self) -> int:
        return int(self.breakpoints.size)


# ---------------------------------------------------------------------------


@dataclass
class WeightCheckReport:
    checks: dict
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def failed(self) -> list[str]:
        return [k for k, v in self.checks.items() if not v]


def _monotone(vals: np.ndarray, increasing: bool, rel: float, strict: bool = False) -> bool:
    d = np.diff(vals)
    scale = rel * (np.abs(vals[1:]) + np.abs(vals[:-1])) + 1e-300
    if not increasing:
        d = -d
    return bool(np.all(d > 0)) if strict else bool(np.all(d >= -scale))


def _slopes(f: np.ndarray, r: np.ndarray) -> np.ndarray:
    return np.diff(f) / np.diff(r)


def cvp_check(phi, grid, p: float = 1.5, eps: float = 0.05, rel_tol: float = 1e-10) -> WeightCheckReport:
    """Test the weight-class properties and their consequences on ``grid``.

    ``phi`` must expose ``value``, ``prime`` and ``second`` (vectorised) and
    ``second_at_zero``. The grid needs at least 100 points spanning six
    decades; the pairwise inequalities are tested on its Cartesian square.
    Growth at infinity (superlinearity, finiteness of ``sup phi/r**p``) is
    judged from log-slopes at the ends of the sampled range.
    """
    r = np.unique(np.asarray(grid, dtype=float))
    r = r[r > 0]
    if r.size < 100 or math.log10(r[-1] / r[0]) < 6 - 1e-9:
        raise ValueError("grid must hold >= 100 positive points spanning >= 6 decades")
    if not 1.0 < p < 2.0:
        raise ValueError("p must lie in (1, 2)")

    f, fp, fpp = phi.value(r), phi.prime(r), phi.second(r)
    checks, details = {}, {}
    zero = np.array([0.0])
    f0, fp0 = float(phi.value(zero)[0]), float(phi.prime(zero)[0])
    checks["origin"] = abs(f0) <= 1e-14 and abs(fp0) <= 1e-14

    checks["convex"] = _monotone(_slopes(f, r), True, 1e-8) and bool(np.all(fpp >= 0))
    checks["concave_derivative"] = _monotone(_slopes(fp, r), False, 1e-8)

    # superlinearity along a geometric sequence from r = 10 upwards
    tail = np.geomspace(10.0, max(1e12, 10 * r[-1]), 120)
    ft, fpt = phi.value(tail), phi.prime(tail)
    checks["superlinear"] = _monotone(ft / tail, True, 0, strict=True) and _monotone(fpt, True, 0, strict=True)

    ratio = f / r**p
    far = np.array([r[-1], 10.0 * r[-1], 100.0 * r[-1]])
    ff = phi.value(far)
    tail_slope = float(np.max(np.diff(np.log(ff)) / np.diff(np.log(far))))
    near = r[:3]
    fn = phi.value(near)
    with np.errstate(divide="ignore", invalid="ignore"):
        head_slope = float(np.min(np.diff(np.log(fn)) / np.diff(np.log(near))))
    details.update(sup_ratio=float(np.max(ratio)), tail_log_slope=tail_slope, head_log_slope=head_slope)
    checks["sub_power_growth"] = bool(
        np.all(np.isfinite(ratio)) and tail_slope <= p - eps and (head_slope >= p - 1e-6 or not np.isfinite(head_slope))
    )

    tol = rel_tol * (np.abs(f) + np.abs(r * fp)) + 1e-300
    checks["chain"] = bool(
        np.all(f >= -tol) and np.all(f <= r * fp + tol) and np.all(r * fp <= 2 * f + tol)
    )
    checks["phi_over_r_concave"] = _monotone(_slopes(f / r, r), False, 1e-8)

    R, S = np.meshgrid(r, r, indexing="ij")
    fR, fS = f[:, None], f[None, :]
    fpR = fp[:, None]
    fRS = phi.value(R + S)
    scale = rel_tol * (np.abs(fRS) + np.abs(fR) + np.abs(fS) + np.abs(S * fpR)) + 1e-300
    checks["x1"] = bool(np.all(S * fpR <= fR + fS + scale))
    diff = fRS - fR - fS
    checks["x2"] = bool(np.all(diff >= -scale) and np.all(diff <= 2 * (S * fR + R * fS) / (R + S) + scale))
    checks["x3"] = bool(np.all(diff <= phi.second_at_zero() * R * S + scale))
    return WeightCheckReport(checks=checks, details=details)


# ---------------------------------------------------------------------------


def _log_gap_excess(u: np.ndarray, m: float) -> np.ndarray:
    """``ln(x W'(x) - W(x)) - m ln x`` at ``x = exp(u)``, overflow-free."""
    ln_x5 = u + np.log1p(5.0 * np.exp(-u))
    return (2.0 - m) * u - ln_x5 - np.log(ln_x5)


def superlinearity_gap_growth(m: float, x_max: float = 1e9, points_per_decade: int = 200) -> float:
    """Smallest scanned ``x > 1`` beyond which ``x W'(x) - W(x) >= x**m``.

    The scan runs on a geometric grid up to ``x_max`` and is extended until
    the log-excess is provably increasing (``ln(x+5) > 1/(1-m)``) and
    nonnegative, so the returned point is valid for all larger ``x``.
    Returns ``inf`` if the threshold exceeds the floating-point range.
    """
    if not 0.0 <= m < 1.0:
        raise ValueError("m must lie in [0, 1)")
    u_end = max(math.log(x_max), 1.0 / (1.0 - m) + 1.0)
    while True:
        n = int(points_per_decade * u_end / math.log(10.0)) + 2
        u = np.linspace(0.0, u_end, n)[1:]
        excess = _log_gap_excess(u, m)
        # derivative of the excess is >= 1 - m - 1/ln(x+5) > 0 beyond u_end
        if excess[-1] >= 0 and u_end > 1.0 / (1.0 - m):
            break
        u_end *= 2.0
    bad = np.nonzero(excess < 0)[0]
    u_m = u[0] if bad.size == 0 else u[min(bad[-1] + 1, u.size - 1)]
    return math.exp(u_m) if u_m < 709.0 else math.inf


def build_dlvp_weight(density, pivots, widths, m0: float) -> VPWeight:
    """Level-set construction of a weight with a finite ``x**m0``-functional.

    Thresholds ``r_k`` are the smallest levels whose tail
    ``sum_{f > r_k} x**m0 f dx`` is at most ``2**-k`` of the full integral,
    pushed right where needed so that the gaps are nondecreasing. The weight's
    derivative reaches ``k`` at ``r_k``; the functional is then at most twice
    the ``x**m0`` integral of the density.
    """
    f = check_finite_array(density, "density")
    x = np.asarray(pivots, dtype=float)
    w = np.asarray(widths, dtype=float)
    if f.shape != x.shape or x.shape != w.shape:
        raise ValueError("density, pivots and widths must have equal shapes")
    if np.any(f < 0):
        raise ValueError("density must be nonnegative")
    contrib = x**m0 * f * w
    total = float(np.sum(contrib))
    if not math.isfinite(total):
        raise ValueError("x**m0 * f is not integrable on the grid")
    if total == 0.0:
        return VPWeight(np.array([1.0]))

    order = np.argsort(-f, kind="stable")
    fs, cs = f[order], contrib[order]
    # tail strictly above fs[q]: sum of contributions of levels > fs[q]
    cum = np.cumsum(cs)
    strictly_above = np.empty_like(cum)
    strictly_above[0] = 0.0
    # ties share the tail of the first occurrence
    first = np.r_[True, fs[1:] != fs[:-1]]
    starts = np.where(first, np.r_[0.0, cum[:-1]], np.nan)
    strictly_above = np.maximum.accumulate(np.nan_to_num(starts, nan=-np.inf))
    f_max = fs[0]

    thresholds = []
    k = 1
    while True:
        target = total * 2.0**-k
        q = int(np.searchsorted(strictly_above, target, side="right")) - 1
        r_k = float(fs[max(q, 0)])
        if r_k <= 0:
            k += 1
            continue
        thresholds.append(r_k)
        if r_k >= f_max:
            break
        k += 1

    knots = []
    prev, gap = 0.0, 0.0
    for r_k in thresholds:
        g = max(r_k - prev, gap)
        prev += g
        gap = g
        knots.append(prev)
    return VPWeight(np.array(knots))
