import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cofrag.diagnostics import (
    BoundReport,
    Power,
    PowerMass,
    Xi,
    carr_constant,
    check_frag_flux_bound,
    check_high_moment_envelope,
    check_small_moment_envelope,
    check_stability_envelope,
    check_w_moment_envelope,
    compute_kappa,
    frag_moment_defect,
    phi_functional,
    run_checks,
    w_envelope,
)
from cofrag.discretization import State, build_grid
from cofrag.kernels import (
    AdditiveKernel,
    ConstantKernel,
    DaughterDistribution,
    DivergentIntegralError,
    KernelSpec,
    PowerLawRate,
    PowerLawSumKernel,
)
from cofrag.solver import Exponential, Monodisperse, Scenario, StepControl, run
from cofrag.weights import W, VPWeight

from conftest import canonical_spec
from oracles import carr_sup, gronwall_linear, quad_defect, theta_power, theta_power_mass, theta_xi

NULL = KernelSpec(ConstantKernel(0.0), PowerLawRate(1.0, 0.0), DaughterDistribution(-1.2), 0.3)
PURE_COAG = KernelSpec(PowerLawSumKernel(0.3, 0.3), PowerLawRate(1.0, 0.0), DaughterDistribution(-1.2), 0.3)


def small(spec, ic=None, **kw):
    base = dict(x_min=1e-3, j=1e2, cells_per_decade=8, t_end=2.0, cadence=0.125, force=True)
    base.update(kw)
    return run(Scenario(spec, ic or Exponential(), **base))


def test_defect_reference_values():
    d = DaughterDistribution(-1.5)
    assert frag_moment_defect(d, Power(2.0), 1.0) == pytest.approx(0.666667, abs=1e-6)
    # -(1 - m0)/(nu + m0 + 1) y^m0 = -7 * 0.5**0.3
    assert frag_moment_defect(DaughterDistribution(-1.2), PowerMass(0.3), 0.5) == pytest.approx(-5.685767, abs=1e-6)
    assert frag_moment_defect(d, Power(1.0), 3.7) == 0.0
    with pytest.raises(DivergentIntegralError):
        frag_moment_defect(d, Power(0.4), 1.0)
    with pytest.raises(TypeError):
        frag_moment_defect(d, lambda x: x, 1.0)


@settings(max_examples=60, deadline=None)
@given(nu=st.floats(-1.95, -1.0), u=st.floats(0.02, 0.98), delta=st.floats(0.05, 0.95), y=st.floats(1e-2, 1e2))
def test_defects_match_quadrature(nu, u, delta, y):
    d = DaughterDistribution(nu)
    m0 = (-1 - nu) + u * (1 - (-1 - nu))
    cases = [
        (Power(m0 + 1.5), theta_power(m0 + 1.5)),
        (PowerMass(m0), theta_power_mass(m0)),
        (Xi(m0, delta), theta_xi(m0, delta)),
    ]
    for desc, fn in cases:
        got = frag_moment_defect(d, desc, y)
        ref = float(quad_defect(nu, fn, y))
        assert got == pytest.approx(ref, rel=1e-10, abs=1e-13 * max(1.0, y ** (m0 + 2.5)))


def test_carr_constant():
    assert carr_constant(2.0) == pytest.approx(2.1, rel=1e-9)
    assert carr_constant(3.0) == pytest.approx(1.05 * carr_sup(3.0), rel=1e-6)
    with pytest.raises(ValueError):
        carr_constant(1.0)


def test_w_envelope_solves_linear_ode():
    K0, rho, y0 = 0.6, 1.3, 0.2
    env = w_envelope(np.array([0.0, 0.7, 2.0]), y0, K0, rho)
    A, B = K0 * W.second_at_zero() * rho**2, 2 * K0 * rho
    for t, e in zip([0.0, 0.7, 2.0], env):
        assert e == pytest.approx(gronwall_linear(y0, A, B, t), rel=1e-10)
    assert w_envelope(np.array([1.0]), 2.0, 0.0, 1.0)[0] == 2.0


def test_null_dynamics_pass_everything():
    r = small(NULL, checks=("w_moment", "frag_flux", "small_moment", "high_moment"))
    assert np.allclose(r.series.w_functional, r.series.w_functional[0], rtol=1e-14)
    assert r.report.passed
    flux = r.report["frag_flux"]
    assert np.all(flux.observed == 0)


def test_w_moment_detects_corruption():
    r = small(canonical_spec())
    s = r.series
    assert check_w_moment_envelope(s, canonical_spec()).passed
    B = 2 * canonical_spec().coag.linear_growth_constant() * s.rho
    s.w_functional = s.w_functional * np.exp(3 * B * s.times)
    bad = check_w_moment_envelope(s, canonical_spec())
    assert not bad.passed and bad.worst_margin < 0


def test_frag_flux_domain_and_cadence_warning():
    r = small(canonical_spec(), t_end=0.5, cadence=0.125)
    with pytest.raises(ValueError):
        check_frag_flux_bound(r.series, canonical_spec(), 1.0)
    with pytest.warns(UserWarning):
        check_frag_flux_bound(r.series, canonical_spec(), 0.65)


def test_small_moment_pure_coagulation_and_zero_state():
    r = small(PURE_COAG)
    m = r.series.moment(0.3)
    assert np.all(np.diff(m) <= 1e-14 * m[0])
    assert check_small_moment_envelope(r.series, PURE_COAG).passed
    z = small(canonical_spec(), Exponential(1.0, 0.0), t_end=0.5)
    c = check_small_moment_envelope(z.series, canonical_spec())
    assert c.passed and np.all(c.observed == 0)


def test_high_moment_cases():
    still = small(NULL, Monodisperse(1.0))
    m2 = still.series.moment(2.0)
    assert np.all(m2 == m2[0])
    assert check_high_moment_envelope(still.series, NULL, 2.0).passed
    with pytest.raises(ValueError):
        check_high_moment_envelope(still.series, NULL, 1.0)
    add = KernelSpec(AdditiveKernel(), PowerLawRate(1.0, 0.0), DaughterDistribution(-1.2), 0.3)
    r = small(add, Exponential(1.0, 0.2), j=1e3)
    c = check_high_moment_envelope(r.series, add, 2.0)
    assert c.passed and "vacuous" in c.note


def test_kappa_reference_values():
    k = compute_kappa(canonical_spec(), 0.5)
    assert k.Y_power == pytest.approx(19.2)
    assert k.Y == pytest.approx(9.71, abs=5e-3)
    assert k.kappa == max(k.terms.values()) == k.terms[k.attained_by]
    null = compute_kappa(NULL, 0.5)
    assert null.kappa == 0.0
    spec2 = KernelSpec(canonical_spec().coag.scaled(2.0), PowerLawRate(1.0), DaughterDistribution(-1.2), 0.3)
    k2 = compute_kappa(spec2, 0.5)
    for key in ("coag_small", "coag_small_large", "coag_large_small", "coag_large"):
        assert k2.terms[key] == pytest.approx(2 * k.terms[key])
    assert k2.terms["frag_crossover"] == k.terms["frag_crossover"]


def test_kappa_errors():
    with pytest.raises(ValueError, match="not certified"):
        compute_kappa(KernelSpec(ConstantKernel(1.0), PowerLawRate(1.0), DaughterDistribution(-1.2), 0.3), 0.5)
    with pytest.raises(ValueError):
        compute_kappa(canonical_spec(), 1.0)


def test_stability_envelope_cases():
    r = small(canonical_spec(), t_end=0.5)
    s = r.series
    t = s.times
    zero = check_stability_envelope(t, np.zeros_like(t), s, s, 10.0)
    assert zero.passed
    grow = 1e-3 * np.exp(t)
    assert check_stability_envelope(t, grow, s, s, 1.0).passed
    assert not check_stability_envelope(t, grow, s, s, 0.0).passed
    with pytest.raises(ValueError):
        check_stability_envelope(t, grow, s, s, 1.0, lockstep=False)
    with pytest.raises(ValueError):
        check_stability_envelope(t[:-1], grow[:-1], s, s, 1.0)


def test_phi_functional():
    g = build_grid(1e-2, 10.0, 4)
    vp = VPWeight([1.0, 2.0])
    assert phi_functional(State(g, np.zeros(g.n)), vp, 0.3, 5.0) == 0.0
    # density exactly 1 on cells 2..4
    mass = np.zeros(g.n)
    sel = slice(2, 5)
    mass[sel] = g.pivots[sel] * g.widths[sel]
    st_ = State(g, mass)
    expected = np.sum(g.pivots[sel] ** 0.3 * vp.value(np.ones(3)) * g.widths[sel])
    assert phi_functional(st_, vp, 0.3, 10.0) == pytest.approx(expected)
    vals = [phi_functional(st_, vp, 0.3, R) for R in np.geomspace(0.01, 10, 30)]
    assert np.all(np.diff(vals) >= 0)


def test_report_serialisation():
    r = small(canonical_spec(), checks=("w_moment", "small_moment"))
    rep = r.report
    assert isinstance(rep, BoundReport) and rep.passed
    assert [row[0] for row in rep.csv_rows()] == ["w_moment", "small_moment"]
    assert all(line.startswith("PASS") for line in rep.lines())
    with pytest.raises(KeyError):
        rep["stability"]


def test_run_checks_rejects_unknown_names():
    r = small(canonical_spec(), t_end=0.25)
    r.scenario = r.scenario.with_(checks=("nonsense",))
    with pytest.raises(ValueError):
        run_checks(r)
