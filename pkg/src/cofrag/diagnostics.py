"""Moment functionals of a run and the explicit a priori envelopes they obey.

Every envelope check compares an observed trajectory with an explicit
Gronwall-type bound assembled from the certified kernel constants and
reports the worst normalised margin ``(envelope - observed) / envelope``
over the samples after the initial one.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .discretization import SizeGrid, State
from .kernels import DaughterDistribution, DivergentIntegralError, KernelSpec, verify_hypotheses
from .weights import W, superlinearity_gap_growth

__all__ = [
    "MomentSeries",
    "BoundCheck",
    "BoundReport",
    "Power",
    "PowerMass",
    "Xi",
    "frag_moment_defect",
    "carr_constant",
    "moment_series",
    "series_from_masses",
    "check_w_moment_envelope",
    "check_frag_flux_bound",
    "check_small_moment_envelope",
    "check_high_moment_envelope",
    "compute_kappa",
    "check_stability_envelope",
    "phi_functional",
    "run_checks",
    "CHECK_NAMES",
]

GRONWALL_TOL = 1e-6
CHECK_NAMES = ("w_moment", "frag_flux", "small_moment", "high_moment", "stability")


# ---------------------------------------------------------------------------
# moment series


@dataclass
class MomentSeries:
    """Functionals of a run sampled at its output times.

    ``moments[m]`` is the pivot-weighted moment ``sum x_i**(m-1) mass_i``,
    ``flux[m]`` the large-size fragmentation flux ``sum_{x_i >= 1} x_i**(m-1) a(x_i) mass_i``.
    """

    times: np.ndarray
    moments: dict
    w_functional: np.ndarray
    flux: dict
    subgrid_fraction: np.ndarray
    m0: float
    delta: float
    has_number_moment: bool = False

    def moment(self, m: float) -> np.ndarray:
        for key, val in self.moments.items():
            if math.isclose(key, m, rel_tol=0, abs_tol=1e-12):
                return val
        raise KeyError(f"moment {m} not recorded")

    def flux_of(self, m: float) -> np.ndarray:
        for key, val in self.flux.items():
            if math.isclose(key, m, rel_tol=0, abs_tol=1e-12):
                return val
        raise KeyError(f"flux of order {m} not recorded")

    @property
    def rho(self) -> float:
        return float(self.moment(1.0)[0])

    def columns(self) -> list[tuple[str, np.ndarray]]:
        """Ordered CSV columns."""
        m0, d = self.m0, self.delta
        cols = [("t", self.times), (f"M_{m0:g}", self.moment(m0))]
        if self.has_number_moment:
            cols.append(("M_0", self.moment(0.0)))
        cols += [
            ("M_1", self.moment(1.0)),
            ("M_2", self.moment(2.0)),
            (f"M_{2 + d:g}", self.moment(2.0 + d)),
            ("W_functional", self.w_functional),
            (f"P_{m0:g}", self.flux_of(m0)),
            (f"P_{(m0 + 1) / 2:g}", self.flux_of((m0 + 1) / 2)),
            ("subgrid_fraction", self.subgrid_fraction),
        ]
        return cols


def series_from_masses(scenario, grid: SizeGrid, frag, times, masses, lumped, extra_moments=()) -> MomentSeries:
    spec = scenario.spec
    x = grid.pivots
    m0, delta = spec.m0, scenario.delta
    orders = {m0, 1.0, 2.0, 2.0 + delta, float(scenario.prop_m), *map(float, extra_moments)}
    number = bool(getattr(spec.frag, "is_zero", False))
    if number:
        orders.add(0.0)
    masses = np.asarray(masses, dtype=float)
    moments = {m: masses @ x ** (m - 1.0) for m in sorted(orders)}
    # mass is the sum of cell masses, exactly
    moments[1.0] = masses.sum(axis=1)
    w_fun = masses @ (W.value(x) / x)
    big = x >= 1.0
    a = frag.loss_rate
    flux_orders = {m0, (m0 + 1) / 2}
    if scenario.flux_m is not None:
        flux_orders.add(float(scenario.flux_m))
    flux = {m: masses @ np.where(big, x ** (m - 1.0) * a, 0.0) for m in sorted(flux_orders)}
    frac = np.asarray(lumped, dtype=float) / moments[1.0][0] if moments[1.0][0] > 0 else np.zeros(len(times))
    return MomentSeries(
        times=np.asarray(times, dtype=float), moments=moments, w_functional=w_fun, flux=flux,
        subgrid_fraction=frac, m0=m0, delta=delta, has_number_moment=number,
    )


def moment_series(result, extra_moments=()) -> MomentSeries:
    return series_from_masses(
        result.scenario, result.grid, result.frag, result.times, result.masses, result.lumped, extra_moments
    )


# ---------------------------------------------------------------------------
# closed-form fragment moment defects  N(y) = theta(y) - int_0^y theta b dx


@dataclass(frozen=True)
class Power:
    m: float

    def __call__(self, x):
        return np.asarray(x, dtype=float) ** self.m


@dataclass(frozen=True)
class PowerMass:
    """``x**m0`` on ``(0, 1]`` and ``x`` above 1: small-size power, mass-like tail."""

    m0: float

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x <= 1.0, x**self.m0, x)


@dataclass(frozen=True)
class Xi:
    """``max(x**m0, x**(1+delta))``, the weight of the uniqueness distance."""

    m0: float
    delta: float

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.maximum(x**self.m0, x ** (1.0 + self.delta))


def frag_moment_defect(daughter, theta, y: float) -> float:
    """Closed form of ``theta(y) - int_0^y theta(x) b(x, y) dx``."""
    d = daughter.daughter if isinstance(daughter, KernelSpec) else daughter
    nu = d.nu
    if y <= 0:
        raise ValueError("y must be positive")
    if isinstance(theta, Power):
        m = theta.m
        if m + nu + 1.0 <= 0:
            raise DivergentIntegralError(f"theta = x^{m} is not integrable against b_nu")
        return (m - 1.0) / (m + nu + 1.0) * y**m
    if isinstance(theta, PowerMass):
        m0 = theta.m0
        if m0 + nu + 1.0 <= 0:
            raise DivergentIntegralError("m0 + nu + 1 must be positive")
        c = -(1.0 - m0) / (nu + m0 + 1.0)
        return c * y**m0 if y <= 1.0 else c * y ** (-nu - 1.0)
    if isinstance(theta, Xi):
        m0, dl = theta.m0, theta.delta
        if m0 + nu + 1.0 <= 0:
            raise DivergentIntegralError("m0 + nu + 1 must be positive")
        if y <= 1.0:
            return -(1.0 - m0) / (nu + m0 + 1.0) * y**m0
        return (
            y ** (1.0 + dl)
            - (nu + 2.0) / (nu + 1.0 + m0) * y ** (-nu - 1.0)
            - (nu + 2.0) / (nu + 2.0 + dl) * (y ** (1.0 + dl) - y ** (-nu - 1.0))
        )
    raise TypeError(f"unsupported test function {theta!r}")


def carr_constant(m: float, samples: int = 1_000_000, inflation: float = 1.05) -> float:
    """Sampled sup of ``(x+y)((x+y)**m - x**m - y**m) / (x**m y + x y**m)``, inflated.

    The ratio is homogeneous of degree zero and symmetric, so it is sampled
    along ``x = 1``, ``y = s`` in ``(0, 1]`` on a log grid.
    """
    if m <= 1:
        raise ValueError("the moment order must exceed 1")
    s = np.logspace(-12, 0, samples)
    # expm1/log1p keep (1+s)^m - 1 accurate for tiny s
    num = (1.0 + s) * (np.expm1(m * np.log1p(s)) - s**m)
    den = s + s**m
    return inflation * float(np.max(num / den))


# ---------------------------------------------------------------------------
# bound reports


@dataclass
class BoundCheck:
    name: str
    times: np.ndarray
    observed: np.ndarray
    envelope: np.ndarray
    worst_margin: float
    passed: bool
    tolerance: float
    note: str = ""

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        extra = f"  ({self.note})" if self.note else ""
        return f"{verdict}  {self.name:14s} worst margin {self.worst_margin:+.6e}  tol {self.tolerance:.1e}{extra}"


@dataclass
class BoundReport:
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, check: BoundCheck) -> BoundCheck:
        self.checks.append(check)
        return check

    def __getitem__(self, name: str) -> BoundCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def lines(self) -> list[str]:
        return [c.line() for c in self.checks]

    def csv_rows(self) -> list[tuple[str, str, str]]:
        return [(c.name, f"{c.worst_margin:.12e}", "1" if c.passed else "0") for c in self.checks]


def _margins(observed, envelope) -> np.ndarray:
    obs = np.asarray(observed, dtype=float)
    env = np.asarray(envelope, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        m = (env - obs) / np.abs(env)
    m = np.where(np.isinf(env) & (env > 0), 1.0, m)
    m = np.where((env == 0) & (obs <= 0), 0.0, m)
    m = np.where((env == 0) & (obs > 0), -np.inf, m)
    return m


def _make_check(name, times, observed, envelope, tol, note="", margins=None) -> BoundCheck:
    marg = _margins(observed, envelope) if margins is None else margins
    # every envelope equals the observed value at t = 0 by construction
    tail = marg[1:] if marg.size > 1 else marg
    worst = float(np.min(tail)) if tail.size else 0.0
    return BoundCheck(
        name=name, times=np.asarray(times, dtype=float), observed=np.asarray(observed, dtype=float),
        envelope=np.asarray(envelope, dtype=float), worst_margin=worst, passed=bool(worst >= -tol),
        tolerance=tol, note=note,
    )


def _constants(spec: KernelSpec, R: float) -> dict:
    return verify_hypotheses(spec, R=R).constants


def w_envelope(times, y0: float, K0: float, rho: float) -> np.ndarray:
    """Solution of ``y' = A + B y`` with ``A = K0 W''(0) rho**2``, ``B = 2 K0 rho``."""
    t = np.asarray(times, dtype=float)
    A = K0 * W.second_at_zero() * rho**2
    B = 2.0 * K0 * rho
    if B == 0:
        return y0 + A * t
    g = np.expm1(B * t)
    return y0 + y0 * g + (A / B) * g


def check_w_moment_envelope(series: MomentSeries, spec: KernelSpec, rho: Optional[float] = None,
                            tol: float = GRONWALL_TOL, allowance: float = 0.0) -> BoundCheck:
    """``int W f`` against its linear Gronwall envelope driven by the mass."""
    if series.w_functional is None or len(series.w_functional) == 0:
        raise ValueError("W functional not recorded")
    rho = series.rho if rho is None else rho
    K0 = _constants(spec, 1.0)["K0"]
    env = w_envelope(series.times, float(series.w_functional[0]), K0, rho)
    return _make_check("w_moment", series.times, series.w_functional, env, tol + allowance)


def check_frag_flux_bound(series: MomentSeries, spec: KernelSpec, m: float, T: Optional[float] = None,
                          tol: float = GRONWALL_TOL, allowance: float = 0.0) -> BoundCheck:
    """Time integral of the large-size flux of order ``m`` against its explicit bound.

    The bound is ``A_{x_m} x_m**(m0+nu+1) rho t + 2 E_W(t)`` where ``x_m`` is
    the superlinearity threshold of ``W`` for exponent ``m`` and ``E_W`` the
    W-moment envelope (which also bounds half the time-integrated breakup
    dissipation).
    """
    if not 0.0 < m < 1.0:
        raise ValueError("m must lie in (0, 1)")
    times = series.times
    if T is not None:
        keep = times <= T * (1 + 1e-12)
        times = times[keep]
    else:
        keep = np.ones_like(times, dtype=bool)
    if times.size < 16:
        warnings.warn("fewer than 16 samples: trapezoid integration of the flux is coarse", stacklevel=2)
    P = series.flux_of(m)[keep]
    observed = cumulative_trapezoid(P, times, initial=0.0)
    rho = series.rho
    x_m = superlinearity_gap_growth(m)
    const = _constants(spec, x_m)
    A_xm = const["A_R"]
    K0 = const["K0"]
    lead = 0.0 if A_xm == 0 else A_xm * x_m ** (spec.m0 + spec.nu + 1.0)
    env = lead * rho * times + 2.0 * w_envelope(times, float(series.w_functional[0]), K0, rho)
    return _make_check("frag_flux", times, observed, env, tol + allowance, note=f"m={m:g}, x_m={x_m:.4g}")


def check_small_moment_envelope(series: MomentSeries, spec: KernelSpec, tol: float = GRONWALL_TOL,
                                allowance: float = 0.0) -> BoundCheck:
    """``M_m0`` against the linear Gronwall envelope driven by the recorded flux ``P_m0``."""
    m0, nu = spec.m0, spec.nu
    y = series.moment(m0)
    P = series.flux_of(m0)
    t = series.times
    A1 = _constants(spec, 1.0)["A_R"]
    c = A1 / (nu + m0 + 1.0)
    g = P / (nu + m0 + 1.0)
    integral = cumulative_trapezoid(np.exp(-c * t) * g, t, initial=0.0)
    env = np.exp(c * t) * (y[0] + integral)
    return _make_check("small_moment", t, y, env, tol + allowance)


def check_high_moment_envelope(series: MomentSeries, spec: KernelSpec, m: float = 2.0,
                               tol: float = GRONWALL_TOL, allowance: float = 0.0) -> BoundCheck:
    """``M_m`` (``m > 1``) against ``exp(3 K0 C7 rho t) [M_m(0) + L1 C3**2 / (3 K0 C7 rho)]``.

    ``C3`` is the observed supremum of ``M_m0``; it is a valid stand-in only
    while the small-moment check passes, so the two are reported together.
    """
    if m <= 1:
        raise ValueError("m must exceed 1")
    const = _constants(spec, 1.0)
    K0, L1 = const["K0"], const["L_R"]
    C7 = carr_constant(m)
    rho = series.rho
    C3 = float(np.max(series.moment(spec.m0)))
    t = series.times
    Mm = series.moment(m)
    rate = 3.0 * K0 * C7 * rho
    note = f"m={m:g}, C7={C7:.4g}"
    if not math.isfinite(L1):
        env = np.full_like(t, np.inf)
        note += ", vacuous: small-size ratio bound infinite"
    elif rate == 0:
        env = Mm[0] + L1 * C3**2 * t
    else:
        env = np.exp(rate * t) * (Mm[0] + L1 * C3**2 / rate)
    return _make_check("high_moment", t, Mm, env, tol + allowance, note=note)


# ---------------------------------------------------------------------------
# uniqueness constant


@dataclass
class KappaResult:
    kappa: float
    terms: dict
    attained_by: str
    Y: float
    Y_power: float


def compute_kappa(spec: KernelSpec, delta: float) -> KappaResult:
    """Contraction constant of the weighted distance between two solutions.

    Maximum of the coagulation constants on the four size regimes and the
    fragmentation constants below and above 1; the latter uses the crossover
    size ``Y`` past which breakup contracts the distance.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    nu, m0 = spec.nu, spec.m0
    c1 = _constants(spec, 1.0)
    if not math.isfinite(c1["K1"]):
        raise ValueError("mixed-regime bound K(x,y) <= K1 x^m0 y is not certified for this kernel")
    L1, K1, K0, A1 = c1["L_R"], c1["K1"], c1["K0"], c1["A_R"]
    Y_power = (nu + 2.0) * (1.0 + delta - m0) / (delta * (nu + 1.0 + m0))
    Y = Y_power ** (1.0 / (2.0 + delta + nu))
    A_Y = _constants(spec, max(1.0, Y))["A_R"]
    mix = 1.0 + (1.0 + delta) * 2.0**delta
    terms = {
        "coag_small": 2.0 * L1,
        "coag_small_large": K1 * mix,
        "coag_large_small": 4.0 * K0 * mix,
        "coag_large": 8.0 * (2.0 + delta) * K0,
        "frag_small": A1 / (nu + 1.0 + m0),
        "frag_crossover": A_Y * Y_power,
    }
    name = max(terms, key=terms.get)
    return KappaResult(kappa=terms[name], terms=terms, attained_by=name, Y=Y, Y_power=Y_power)


def check_stability_envelope(times, distance, series_a: MomentSeries, series_b: MomentSeries, kappa: float,
                             lockstep: bool = True, tol: float = GRONWALL_TOL) -> BoundCheck:
    """Weighted distance of two runs against ``D(0) exp(kappa int [1 + M_m0 + M_{2+delta}])``.

    The envelope is formed in log space; the moments are those of ``f1 + f2``.
    """
    if not lockstep:
        raise ValueError("stability envelope needs lockstep runs sampled at identical times")
    t = np.asarray(times, dtype=float)
    if not (np.array_equal(series_a.times, t) and np.array_equal(series_b.times, t)):
        raise ValueError("moment series and distance are not sampled at the same times")
    D = np.asarray(distance, dtype=float)
    m0, d = series_a.m0, series_a.delta
    drive = 1.0 + series_a.moment(m0) + series_b.moment(m0) + series_a.moment(2 + d) + series_b.moment(2 + d)
    growth = kappa * cumulative_trapezoid(drive, t, initial=0.0)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        # margins in log space: the envelope overflows long before the distance does
        gap = np.log(D) - np.log(D[0]) - growth
        margins = np.where(D == 0, 1.0, -np.expm1(gap))
        margins = np.where(np.isnan(margins), -np.inf, margins)
        env = D[0] * np.exp(growth)
    return _make_check("stability", t, D, env, tol, note=f"kappa={kappa:.4g}", margins=margins)


# ---------------------------------------------------------------------------


def phi_functional(state: State, vp, m0: float, R: float) -> float:
    """``int_0^R x**m0 Phi(f) dx`` with ``f`` reconstructed per cell (midpoint rule)."""
    grid = state.grid
    f = state.density
    lo, hi = grid.edges[:-1], grid.edges[1:]
    overlap = np.clip(np.minimum(hi, R) - lo, 0.0, None)
    if not np.any(f > 0):
        return 0.0
    return float(np.sum(grid.pivots**m0 * vp.value(f) * overlap))


def run_checks(result, tol: float = GRONWALL_TOL, allowance: float = 0.0) -> BoundReport:
    """Evaluate the single-run checks listed in the scenario."""
    sc = result.scenario
    series = result.series
    report = BoundReport()
    for name in sc.checks:
        if name == "w_moment":
            report.add(check_w_moment_envelope(series, sc.spec, tol=tol, allowance=allowance))
        elif name == "frag_flux":
            m = sc.flux_m if sc.flux_m is not None else (sc.spec.m0 + 1.0) / 2.0
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                report.add(check_frag_flux_bound(series, sc.spec, m, tol=tol, allowance=allowance))
        elif name == "small_moment":
            report.add(check_small_moment_envelope(series, sc.spec, tol=tol, allowance=allowance))
        elif name == "high_moment":
            report.add(check_high_moment_envelope(series, sc.spec, m=sc.prop_m, tol=tol, allowance=allowance))
        elif name == "stability":
            continue
        else:
            raise ValueError(f"unknown check {name!r}")
    return report
