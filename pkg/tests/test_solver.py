import math

import numpy as np
import pytest
import scipy.linalg as sl
from hypothesis import given, settings
from hypothesis import strategies as st

from cofrag import diagnostics
from cofrag.discretization import State, build_grid, precompute_coag_tables, precompute_frag_tables
from cofrag.kernels import ConstantKernel, DaughterDistribution, KernelSpec, PowerLawRate, PowerLawSumKernel
from cofrag.solver import (
    BoundCheckFailure,
    Exponential,
    HypothesisError,
    Monodisperse,
    PowerCutoff,
    Scenario,
    StepControl,
    Tabulated,
    project_initial_condition,
    run,
    step,
    two_run_distance,
    xi_weight,
)

from conftest import canonical_scenario, canonical_spec
from oracles import mp

PURE_FRAG = KernelSpec(ConstantKernel(0.0), PowerLawRate(1.0), DaughterDistribution(-1.2), 0.3)


def test_exponential_projection_is_exact():
    g = build_grid(1e-4, 1e3, 16)
    ic = Exponential(2.0, 3.0)
    m = project_initial_condition(ic, g)
    assert m.sum() == pytest.approx(3.0, rel=1e-14)
    # antiderivative of x f(x) = (3/4) x exp(-x/2)
    F = lambda x: -1.5 * mp.exp(-mp.mpf(x) / 2) * (mp.mpf(x) + 2)
    for i in (0, 40, 70, 100, g.n - 1):
        lo = 0 if i == 0 else g.edges[i]
        ref = F(g.edges[i + 1]) - F(lo)
        assert m[i] == pytest.approx(float(ref), rel=1e-12, abs=1e-300)


def test_power_cutoff_and_monodisperse_projection():
    g = build_grid(1e-4, 1e3, 16)
    m = project_initial_condition(PowerCutoff(1.5, 2.0, 0.7), g)
    assert m.sum() == pytest.approx(0.7, rel=1e-14)
    assert np.all(m[g.pivots > 2.2] == 0)
    mono = project_initial_condition(Monodisperse(1.0, 2.0), g)
    assert mono.sum() == 2.0 and np.count_nonzero(mono) == 1
    with pytest.raises(ValueError):
        PowerCutoff(2.0, 1.0)


def test_tabulated_projection():
    g = build_grid(1e-2, 1e2, 8)
    sizes = np.array([0.05, 0.5, 3.0])
    dens = np.array([2.0, 0.5])
    m = project_initial_condition(Tabulated(sizes, dens), g)
    exact = 2.0 * (0.5**2 - 0.05**2) / 2 + 0.5 * (3.0**2 - 0.5**2) / 2
    assert m.sum() == pytest.approx(exact, rel=1e-14)
    with pytest.raises(ValueError):
        project_initial_condition(Tabulated(sizes, np.array([1.0])), g)


def test_step_control_validation():
    for kw in ({"safety": 1.0}, {"positivity_fraction": 0.0}, {"dt_max": 0.0}):
        with pytest.raises(ValueError):
            StepControl(**kw)


def test_output_times():
    sc = canonical_scenario()
    t = sc.output_times()
    assert t[0] == 0 and t[-1] == 5.0 and t.size == 21
    t2 = sc.with_(t_end=1.0, cadence=0.3).output_times()
    assert t2[-1] == 1.0 and np.allclose(np.diff(t2)[:-1], 0.3)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-4, 1.0))
def test_step_keeps_positivity_and_mass(seed, dt_max):
    g = build_grid(1e-3, 1e2, 8)
    spec = canonical_spec()
    frag, coag = precompute_frag_tables(g, spec), precompute_coag_tables(g, spec)
    rng = np.random.default_rng(seed)
    mass = rng.uniform(0, 1, g.n) * (rng.uniform(size=g.n) < 0.5)
    if not mass.any():
        mass[3] = 1.0
    s = State(g, mass)
    new, dt = step(s, frag, coag, StepControl(dt_init=dt_max, dt_max=dt_max))
    assert 0 < dt <= dt_max
    assert np.all(new.mass >= 0)
    assert new.total_mass == pytest.approx(s.total_mass, rel=1e-13)


def test_hypothesis_gate():
    spec = KernelSpec(ConstantKernel(1.0), PowerLawRate(1.0), DaughterDistribution(-1.2), 0.3)
    sc = Scenario(spec, Exponential(), t_end=0.1, cadence=0.1, j=10.0, cells_per_decade=8)
    with pytest.raises(HypothesisError):
        run(sc)
    assert run(sc.with_(force=True)).steps > 0


def test_pure_fragmentation_second_order_against_expm():
    sc = Scenario(PURE_FRAG, Monodisperse(1.0), x_min=1e-3, j=10.0, cells_per_decade=8, t_end=1.0, cadence=1.0)
    errs = []
    for dt in (0.1, 0.05, 0.025):
        r = run(sc.with_(control=StepControl(dt_init=dt, dt_max=dt)))
        ref = sl.expm(r.frag.operator) @ r.masses[0]
        errs.append(np.abs(r.masses[-1] - ref).sum())
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.15)
    assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.15)


def test_lumped_mass_matches_subgrid_production():
    sc = Scenario(PURE_FRAG, Monodisperse(1.0), x_min=1e-2, j=10.0, cells_per_decade=8, t_end=2.0, cadence=0.5,
                  control=StepControl(dt_init=1e-3, dt_max=1e-3))
    r = run(sc)
    # lumped mass = int_0^t sum_k m_k(s) a_k (x_min / x_k)^(nu+2) ds
    rate = r.frag.loss_rate * r.frag.subgrid
    ts = np.linspace(0, 2.0, 2001)
    vals = [rate @ (sl.expm(r.frag.operator * t) @ r.masses[0]) for t in ts]
    ref = np.trapezoid(vals, ts)
    assert r.lumped[-1] == pytest.approx(ref, rel=1e-5)


def test_two_run_distance_initial_value_and_identity():
    sc = Scenario(canonical_spec(), Exponential(), x_min=1e-3, j=1e2, cells_per_decade=8, t_end=0.5, cadence=0.25)
    tr = two_run_distance(sc, perturbation=1e-3)
    x = tr.grid.pivots
    exact0 = 1e-3 * np.sum(xi_weight(x, 0.3, 0.5) / x * tr.masses[0, 0])
    assert tr.distance[0] == pytest.approx(exact0, rel=1e-13)
    same = two_run_distance(sc, perturbation=0.0)
    assert np.all(same.distance == 0)
    assert len(same.series) == 2 and same.lockstep


def test_fatal_checks_raise(monkeypatch):
    sc = Scenario(canonical_spec(), Exponential(), x_min=1e-3, j=1e2, cells_per_decade=8, t_end=0.5, cadence=0.25,
                  checks=("w_moment",), fatal_checks=True)
    failing = diagnostics.BoundReport([diagnostics.BoundCheck("w_moment", np.zeros(1), np.zeros(1), np.zeros(1),
                                                              -1.0, False, 1e-6)])
    monkeypatch.setattr(diagnostics, "run_checks", lambda result: failing)
    with pytest.raises(BoundCheckFailure) as exc:
        run(sc)
    assert exc.value.result is not None


def test_canonical_mass_conservation(canonical_result):
    m1 = canonical_result.series.moment(1.0)
    assert np.max(np.abs(m1 - m1[0])) / m1[0] <= 1e-10
    assert np.all(canonical_result.masses >= 0)
    assert canonical_result.temporal_error["M_1"] < 1e-10
    assert math.isclose(canonical_result.times[-1], 5.0)
