"""Time integration of the truncated coagulation-fragmentation system.

Stepping is the two-stage strong-stability-preserving Runge-Kutta scheme
(Heun form). The step size is limited so that every stage is a positive
forward-Euler update: removal terms are proportional to the cell's own mass,
so ``dt * rate_i <= positivity_fraction`` keeps every cell nonnegative
without any clipping, and both stages conserve total mass to rounding.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.special import gammainc, gammaincc

from .discretization import (
    CoagTables,
    FragTables,
    SizeGrid,
    State,
    build_grid,
    precompute_coag_tables,
    precompute_frag_tables,
)
from .kernels import KernelSpec, verify_hypotheses

__all__ = [
    "StepControl",
    "Monodisperse",
    "Exponential",
    "PowerCutoff",
    "Tabulated",
    "Scenario",
    "RunResult",
    "TwoRunResult",
    "HypothesisError",
    "SolverError",
    "BoundCheckFailure",
    "project_initial_condition",
    "prepare",
    "step",
    "integrate",
    "run",
    "two_run_distance",
    "xi_weight",
]

logger = logging.getLogger(__name__)


class HypothesisError(RuntimeError):
    """The kernel does not satisfy the structural hypotheses (use ``force``)."""


class SolverError(FloatingPointError):
    pass


class BoundCheckFailure(RuntimeError):
    def __init__(self, report, result=None):
        super().__init__("a priori bound check failed:\n" + "\n".join(report.lines()))
        self.report = report
        self.result = result


@dataclass(frozen=True)
class StepControl:
    dt_init: float = 1e-3
    dt_max: float = 0.05
    safety: float = 0.5
    positivity_fraction: float = 0.5

    def __post_init__(self):
        if not (0 < self.safety < 1):
            raise ValueError("safety must lie in (0, 1)")
        if not (0 < self.positivity_fraction < 1):
            raise ValueError("positivity_fraction must lie in (0, 1)")
        if self.dt_init <= 0 or self.dt_max <= 0:
            raise ValueError("dt_init and dt_max must be positive")


# ---------------------------------------------------------------------------
# initial conditions; each returns the exact mass in [a, b) via ``mass_between``


@dataclass(frozen=True)
class Monodisperse:
    size: float
    mass: float = 1.0

    def project(self, grid: SizeGrid) -> np.ndarray:
        out = np.zeros(grid.n)
        out[grid.cell_of(self.size)] = self.mass
        return out


@dataclass(frozen=True)
class Exponential:
    """``f(x) = mass / mean**2 * exp(-x / mean)``, total mass ``mass``."""

    mean: float = 1.0
    mass: float = 1.0

    def mass_below(self, x):
        # int_0^x y f(y) dy = mass * P(2, x / mean)
        return self.mass * gammainc(2.0, np.asarray(x, dtype=float) / self.mean)

    def mass_above(self, x):
        return self.mass * gammaincc(2.0, np.asarray(x, dtype=float) / self.mean)

    def project(self, grid: SizeGrid) -> np.ndarray:
        a, b = grid.edges[:-1], grid.edges[1:]
        low = self.mass_below(b) - self.mass_below(a)
        high = self.mass_above(a) - self.mass_above(b)
        out = np.where(a / self.mean > 2.0, high, low)
        out[0] += self.mass_below(grid.x_min)
        return np.maximum(out, 0.0)


@dataclass(frozen=True)
class PowerCutoff:
    """``f(x) = C x**-p`` on ``(0, x_c)``, zero above, scaled to total mass ``mass``."""

    p: float
    x_c: float
    mass: float = 1.0

    def __post_init__(self):
        if not self.p < 2.0:
            raise ValueError("power-cutoff needs p < 2 for finite mass")

    def mass_below(self, x):
        x = np.minimum(np.asarray(x, dtype=float), self.x_c)
        return self.mass * (x / self.x_c) ** (2.0 - self.p)

    def project(self, grid: SizeGrid) -> np.ndarray:
        out = np.diff(self.mass_below(grid.edges))
        out[0] += self.mass_below(grid.x_min)
        return out


@dataclass(frozen=True, eq=False)
class Tabulated:
    """Piecewise-constant number density ``densities[k]`` on ``[sizes[k], sizes[k+1])``."""

    sizes: np.ndarray
    densities: np.ndarray

    def project(self, grid: SizeGrid) -> np.ndarray:
        s = np.asarray(self.sizes, dtype=float)
        d = np.asarray(self.densities, dtype=float)
        if s.size != d.size + 1 or np.any(np.diff(s) <= 0) or np.any(d < 0):
            raise ValueError("tabulated IC needs increasing sizes and len(sizes) == len(densities) + 1")
        e = grid.edges.copy()
        e[0] = 0.0
        lo = np.maximum(e[:-1, None], s[None, :-1])
        hi = np.minimum(e[1:, None], s[None, 1:])
        overlap = np.where(hi > lo, (hi**2 - lo**2) / 2.0, 0.0)
        return overlap @ d


def project_initial_condition(ic, grid: SizeGrid) -> np.ndarray:
    """Exact cell masses of ``ic`` truncated to ``(0, j)``; mass below ``x_min`` joins cell 0."""
    return np.asarray(ic.project(grid), dtype=float)


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Scenario:
    spec: KernelSpec
    initial: object
    x_min: float = 1e-4
    j: float = 1e3
    cells_per_decade: int = 32
    t_end: float = 5.0
    cadence: float = 0.25
    control: StepControl = field(default_factory=StepControl)
    delta: float = 0.5
    checks: tuple = ()
    fatal_checks: bool = False
    perturbation: float = 1e-3
    prop_m: float = 2.0
    flux_m: Optional[float] = None
    subgrid_threshold: float = 0.01
    force: bool = False

    def output_times(self) -> np.ndarray:
        n = max(int(round(self.t_end / self.cadence)), 1)
        times = np.linspace(0.0, self.t_end, n + 1)
        if not math.isclose(times[1] - times[0], self.cadence, rel_tol=1e-9):
            times = np.unique(np.r_[np.arange(0.0, self.t_end, self.cadence), self.t_end])
        return times

    def with_(self, **kw) -> "Scenario":
        return replace(self, **kw)


class _Rhs:
    """Right-hand side of the discrete system plus the quantities step control needs."""

    def __init__(self, grid: SizeGrid, frag: FragTables, coag: CoagTables):
        self.grid, self.frag, self.coag = grid, frag, coag
        self.x = grid.pivots
        self.frag_op_T = np.ascontiguousarray(frag.operator.T)
        self.sub = frag.subgrid * frag.loss_rate
        self.hi = np.minimum(coag.target + 1, coag.n - 1)
        self.has_coag = coag.i.size > 0

    def __call__(self, u: np.ndarray):
        """Return ``(du/dt, removal rate per unit mass, subgrid mass rate)`` for ``u`` of shape (r, n)."""
        num = u / self.x
        coag_loss = num @ self.coag.rate
        du = u @ self.frag_op_T - u * coag_loss
        if self.has_coag:
            c = self.coag
            pair = num[:, c.i] * num[:, c.k]
            for row in range(u.shape[0]):
                du[row] += np.bincount(c.target, weights=pair[row] * c.gain_lo, minlength=c.n)
                du[row] += np.bincount(self.hi, weights=pair[row] * c.gain_hi, minlength=c.n)
        rates = self.frag.net_loss_rate + coag_loss
        return du, rates, u @ self.sub


def _positivity_dt(u: np.ndarray, rates: np.ndarray, fraction: float) -> float:
    active = (u > 0) & (rates > 0)
    if not np.any(active):
        return math.inf
    return fraction / float(np.max(rates[active]))


def _step(rhs: _Rhs, u: np.ndarray, control: StepControl, dt_cap: float, first=None):
    """One SSP-RK2 step of at most ``dt_cap``; returns (u_new, dt, lumped, euler)."""
    du0, rates0, s0 = first if first is not None else rhs(u)
    if not np.all(np.isfinite(du0)):
        raise SolverError("non-finite derivative; the discrete system overflowed")
    dt = min(dt_cap, control.dt_max, _positivity_dt(u, rates0, control.positivity_fraction))
    for _ in range(200):
        u1 = u + dt * du0
        if np.all(u1 >= 0):
            du1, rates1, s1 = rhs(u1)
            if not np.all(np.isfinite(du1)):
                raise SolverError("non-finite derivative in the second stage")
            if dt <= _positivity_dt(u1, rates1, 1.0):
                u2 = 0.5 * u + 0.5 * (u1 + dt * du1)
                if np.all(u2 >= 0):
                    return u2, dt, 0.5 * dt * (s0 + s1), u1
        dt *= control.safety
    raise SolverError("step size collapsed while enforcing positivity")


def step(state: State, frag: FragTables, coag: CoagTables, control: StepControl, dt_cap: float = math.inf):
    """Advance ``state`` by one positivity-preserving SSP step.

    Returns the new state and the step size actually used.
    """
    rhs = _Rhs(state.grid, frag, coag)
    u = state.mass[None, :]
    u2, dt, lumped, _ = _step(rhs, u, control, dt_cap)
    new = State(state.grid, u2[0], state.t + dt, state.lumped_subgrid_mass + float(lumped[0]))
    return new, dt


def integrate(rhs: _Rhs, u0: np.ndarray, times: Sequence[float], control: StepControl, error_weights=None):
    """Integrate rows of ``u0`` in lockstep and sample at ``times``.

    Returns masses (len(times), r, n), lumped subgrid mass (len(times), r),
    the number of steps, and the accumulated Heun-Euler discrepancy of the
    functionals in ``error_weights`` (rows are per-cell weights).
    """
    u = np.array(u0, dtype=float, ndmin=2)
    times = np.asarray(times, dtype=float)
    out = np.empty((times.size,) + u.shape)
    lumped_out = np.empty((times.size, u.shape[0]))
    lumped = np.zeros(u.shape[0])
    ew = None if error_weights is None else np.atleast_2d(error_weights)
    err = np.zeros((u.shape[0], 0 if ew is None else ew.shape[0]))
    t = float(times[0])
    out[0], lumped_out[0] = u, lumped
    nsteps = 0
    dt_prev = control.dt_init
    for idx in range(1, times.size):
        target = float(times[idx])
        while t < target:
            remaining = target - t
            cap = min(remaining, 2.0 * dt_prev) if nsteps else min(remaining, control.dt_init)
            u, dt, dl, euler = _step(rhs, u, control, cap)
            if ew is not None:
                err += np.abs((u - euler) @ ew.T)
            lumped = lumped + dl
            # land exactly on output times
            t = target if dt >= remaining * (1 - 1e-12) else t + dt
            if dt < remaining * (1 - 1e-12):
                dt_prev = dt
            nsteps += 1
        out[idx], lumped_out[idx] = u, lumped
    return out, lumped_out, nsteps, err


# ---------------------------------------------------------------------------


@dataclass
class RunResult:
    scenario: Scenario
    grid: SizeGrid
    frag: FragTables
    coag: CoagTables
    times: np.ndarray
    masses: np.ndarray
    lumped: np.ndarray
    steps: int
    temporal_error: dict
    hypotheses: object
    series: object = None
    report: object = None

    def state(self, idx: int = -1) -> State:
        return State(self.grid, self.masses[idx], float(self.times[idx]), float(self.lumped[idx]))

    @property
    def subgrid_fraction(self) -> np.ndarray:
        return self.lumped / self.masses[0].sum()


def prepare(scenario: Scenario):
    """Gate on the hypotheses, then build grid, tables and projected initial masses."""
    report = verify_hypotheses(scenario.spec, R=scenario.j)
    if not report.passed and not scenario.force:
        raise HypothesisError("kernel hypotheses not certified:\n" + "\n".join(report.lines()))
    grid = build_grid(scenario.x_min, scenario.j, scenario.cells_per_decade)
    frag = precompute_frag_tables(grid, scenario.spec)
    coag = precompute_coag_tables(grid, scenario.spec)
    u0 = project_initial_condition(scenario.initial, grid)
    if coag.overflow.any():
        logger.debug("%d pivot pairs overflow into the last cell", int(coag.overflow.sum()))
    return report, grid, frag, coag, u0


_ERR_MOMENTS = (0.0, 1.0, 2.0)


def run(scenario: Scenario, checks: bool = True) -> RunResult:
    """Integrate ``scenario`` to ``t_end`` and record moments at the output times.

    Bound checks listed in ``scenario.checks`` (except the two-run stability
    check) are evaluated when ``checks`` is true; with ``fatal_checks`` a
    failing check raises :class:`BoundCheckFailure`.
    """
    from . import diagnostics

    hyp, grid, frag, coag, u0 = prepare(scenario)
    rhs = _Rhs(grid, frag, coag)
    times = scenario.output_times()
    weights = np.array([grid.pivots ** (m - 1.0) for m in _ERR_MOMENTS])
    masses, lumped, nsteps, err = integrate(rhs, u0, times, scenario.control, weights)
    result = RunResult(
        scenario=scenario, grid=grid, frag=frag, coag=coag, times=times,
        masses=masses[:, 0, :], lumped=lumped[:, 0], steps=nsteps,
        temporal_error={f"M_{m:g}": float(e) for m, e in zip(_ERR_MOMENTS, err[0])},
        hypotheses=hyp,
    )
    result.series = diagnostics.moment_series(result)
    if checks and scenario.checks:
        result.report = diagnostics.run_checks(result)
        if scenario.fatal_checks and not result.report.passed:
            raise BoundCheckFailure(result.report, result)
    return result


def xi_weight(x, m0: float, delta: float):
    x = np.asarray(x, dtype=float)
    return np.maximum(x**m0, x ** (1.0 + delta))


@dataclass
class TwoRunResult:
    scenario: Scenario
    grid: SizeGrid
    times: np.ndarray
    masses: np.ndarray  # (len(times), 2, n)
    distance: np.ndarray
    steps: int
    lockstep: bool = True
    series: tuple = ()


def two_run_distance(scenario: Scenario, perturbation: Optional[float] = None) -> TwoRunResult:
    """Run the initial data and its ``(1 + eps)``-scaled copy in lockstep.

    Both solutions share every step size, so the weighted distance
    ``int xi |f1 - f2| dx`` is compared at identical times.
    """
    from . import diagnostics

    eps = scenario.perturbation if perturbation is None else perturbation
    _, grid, frag, coag, u0 = prepare(scenario)
    if (1.0 + eps) < 0:
        raise ValueError("perturbation would make the initial data negative")
    rhs = _Rhs(grid, frag, coag)
    times = scenario.output_times()
    u = np.stack([u0, (1.0 + eps) * u0])
    masses, lumped, nsteps, _ = integrate(rhs, u, times, scenario.control)
    w = xi_weight(grid.pivots, scenario.spec.m0, scenario.delta) / grid.pivots
    distance = np.abs(masses[:, 0, :] - masses[:, 1, :]) @ w
    res = TwoRunResult(scenario, grid, times, masses, distance, nsteps)
    res.series = tuple(
        diagnostics.series_from_masses(scenario, grid, frag, times, masses[:, r, :], lumped[:, r])
        for r in range(2)
    )
    return res
