from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest

from ellscat.conformal import ConformalFrame, from_cylinder, linear_trajectory
from ellscat.duhamel import ode_residual, phi
from ellscat.equations import (
    ground_state_W,
    harmonic_map_sphere_chart,
    poly_eval,
    power_series_solution,
    semilinear_power,
)
from ellscat.norms import traj_norm
from ellscat.solver import (
    ChartError,
    Monomial,
    NonContractionError,
    NonlinearitySpec,
    SolveConfig,
    eval_g,
    nu_exponent,
    nu_exponent_structured,
    radial_ode_oracle,
    solve_dirichlet,
    solve_scatter,
    solve_scatter_refined,
    solve_zero,
)
from ellscat.sphere import SpectralField
from ellscat.trajectory import TimeGrid

SQ4PI = np.sqrt(4 * np.pi)


@pytest.fixture(scope="module")
def cfg():
    return SolveConfig(d=3, lmax=3, span=20.0)


def test_config_validation():
    assert SolveConfig(d=2).s == pytest.approx(2.6)
    with pytest.raises(ValueError):
        SolveConfig(d=3, s=2.9)
    with pytest.raises(ValueError):
        SolveConfig(mode="sideways")
    assert SolveConfig(mode="zero_scatter").orientation == "zero"
    assert SolveConfig().window == (2.0, 100.0)
    assert SolveConfig(mode="zero_scatter").window == (1e-6, 0.1)


def test_nu_exponent_examples():
    assert nu_exponent(semilinear_power(3, 5, -1).spec, 3) == 2
    assert nu_exponent(semilinear_power(3, 7, 1).spec, 3) == 4
    assert nu_exponent(semilinear_power(3, 3, 1).spec, 3) == 0
    hm = harmonic_map_sphere_chart(3)
    assert nu_exponent_structured(hm.spec, 3) == 2
    assert hm.nu1_structured == 2 == 2 * (3 - 2)
    zero = NonlinearitySpec(1, lambda u, g: 0 * u, [Monomial(0, (2,), ((0, 0, 0),), 0.0)])
    assert nu_exponent(zero, 3) == np.inf
    with pytest.raises(ValueError):
        nu_exponent(NonlinearitySpec(1, lambda u, g: u), 3)


def test_consistency_check():
    spec = semilinear_power(3, 5, -1.0).spec
    assert spec.check_consistency(3) <= 1e-15
    bad = NonlinearitySpec(1, lambda u, g: u**5, [Monomial(0, (5,), ((0, 0, 0),), -1.0)])
    with pytest.raises(ValueError):
        bad.check_consistency(3)
    grad_spec = NonlinearitySpec(1, lambda u, g: u * g[0, 0] ** 2, [Monomial(0, (1,), ((2, 0, 0),), 1.0)])
    assert grad_spec.check_consistency(3) <= 1e-15


def test_eval_g_zero_forcing(cfg):
    b = cfg.basis()
    rng = np.random.default_rng(0)
    T = linear_trajectory(SpectralField(b, rng.standard_normal((1, b.nmodes))), cfg.grid)
    G = eval_g(T, semilinear_power(3, 2, 0.0).spec, cfg.frame)
    assert np.all(G.v == 0)


def test_eval_g_square_of_l0_mode(cfg):
    # u = 1/(sqrt(4 pi) r), u^2 = 1/(4 pi r^2), g = e^{5t/2} u^2 = e^{t/2}/(4 pi)
    b = cfg.basis()
    grid = TimeGrid.span(0.0, 5.0, 0.1)
    T = linear_trajectory(SpectralField.mode(b, 0), grid)
    G = eval_g(T, semilinear_power(3, 2, 1.0).spec, ConformalFrame(3))
    expect = np.exp(grid.nodes / 2) / SQ4PI
    assert np.allclose(G.v[:, 0, 0], expect, rtol=1e-13, atol=0)
    assert np.max(np.abs(G.v[:, 0, 1:])) <= 1e-13 * expect.max()


def test_eval_g_harmonic_map_at_base_point(cfg):
    hm = harmonic_map_sphere_chart(3)
    b = cfg.basis()
    T = linear_trajectory(SpectralField.zeros(b, 2), cfg.grid)
    assert np.all(eval_g(T, hm.spec, cfg.frame).v == 0)


def test_eval_g_thread_independent(cfg):
    b = cfg.basis()
    rng = np.random.default_rng(1)
    T = linear_trajectory(SpectralField(b, 0.1 * rng.standard_normal((1, b.nmodes))), cfg.grid)
    spec = semilinear_power(3, 5, -1.0).spec
    G1 = eval_g(T, spec, cfg.frame, threads=1)
    G4 = eval_g(T, spec, cfg.frame, threads=4)
    assert np.array_equal(G1.v, G4.v)


def test_zero_data_gives_zero(cfg):
    b = cfg.basis()
    sol = solve_scatter(SpectralField.zeros(b), semilinear_power(3, 5, -1.0).spec, cfg)
    assert np.all(sol.trajectory.v == 0)
    assert sol.report.converged


def test_linear_equation_returns_linear_flow(cfg):
    b = cfg.basis()
    rng = np.random.default_rng(2)
    u0 = SpectralField(b, rng.standard_normal((1, b.nmodes)))
    spec = semilinear_power(3, 2, 0.0).spec
    sol = solve_scatter(u0, spec, cfg)
    assert np.array_equal(sol.trajectory.v, sol.linear.v)
    D = solve_dirichlet(u0, spec, cfg)
    assert np.array_equal(D.v_plus.coeffs, u0.coeffs)
    R = solve_scatter_refined(u0, spec, cfg)
    assert np.all(R.first_iterate.v == 0)


def test_fixed_point_property_and_residual(cfg):
    b = cfg.basis()
    spec = semilinear_power(3, 5, -1.0).spec
    u0 = SpectralField.mode(b, 0, value=0.3 * SQ4PI)
    u0.coeffs[0, b.mode_index(1, 0)] = 0.05
    sol = solve_scatter(u0, spec, cfg)
    assert sol.report.converged
    assert all(r < 1 for r in sol.report.ratios)
    G = eval_g(sol.trajectory, spec, sol.frame)
    again = phi(G)
    t0 = sol.frame.t0
    assert traj_norm(again - sol.duhamel, cfg.s, t0, t0) <= 3 * cfg.eps_fp
    assert ode_residual(sol.duhamel, G) <= 1e-3


def test_dirichlet_trace(cfg):
    b = cfg.basis()
    spec = semilinear_power(3, 5, -1.0).spec
    rng = np.random.default_rng(3)
    u0 = SpectralField(b, 0.05 * rng.standard_normal((1, b.nmodes)))
    sol = solve_dirichlet(u0, spec, cfg)
    assert np.max(np.abs(sol.duhamel.v[0])) <= 1e-9
    assert np.max(np.abs(sol.trajectory.v[0] - u0.coeffs)) <= 1e-9
    assert sol.v_plus is not None


def test_ground_state_small_band():
    W, trace = ground_state_W(100.0)
    assert trace == pytest.approx(10 / np.sqrt(1 + 1e4 / 3), rel=1e-15)
    # large-lambda asymptote sqrt(3)/sqrt(lambda)
    assert trace == pytest.approx(np.sqrt(3) / 10, abs=3e-5)
    cfg = SolveConfig(d=3, lmax=0, span=30.0, eps_fp=1e-13)
    b = cfg.basis()
    sol = solve_dirichlet(SpectralField.mode(b, 0, value=trace * SQ4PI), semilinear_power(3, 5, -1.0).spec, cfg)
    u = from_cylinder(sol.trajectory, sol.frame)
    r = np.geomspace(1, 20, 40)
    x = r[:, None] * np.array([[0.0, 0.0, 1.0]])
    got = u.value(x)[0]
    ref = W.value(x)[0]
    assert np.max(np.abs(got / ref - 1)) <= 1e-6


def test_escalation_then_success():
    spec = semilinear_power(3, 5, 1.0).spec
    cfg = SolveConfig(d=3, lmax=2, span=20.0)
    sol = solve_scatter(SpectralField.mode(cfg.basis(), 0, value=10.0), spec, cfg)
    assert sol.report.escalations >= 1
    assert sol.report.converged
    assert sol.frame.t0 == pytest.approx(sol.report.t0)


@pytest.mark.parametrize("amp", [10.0, 30.0])
def test_non_contraction(amp):
    spec = semilinear_power(3, 5, 1.0).spec
    cfg = SolveConfig(d=3, lmax=2, span=20.0, max_escalations=0)
    u0 = SpectralField.mode(cfg.basis(), 0, value=amp)
    with pytest.raises(NonContractionError, match="t0"):
        solve_scatter(u0, spec, cfg)
    # Dirichlet problems never move the boundary
    with pytest.raises(NonContractionError):
        solve_dirichlet(u0, spec, replace(cfg, max_escalations=4))


def test_chart_exit():
    hm = harmonic_map_sphere_chart(3)
    cfg = SolveConfig(d=3, lmax=2, span=10.0)
    b = cfg.basis()
    u0 = SpectralField.zeros(b, 2)
    u0.coeffs[0, b.mode_index(1, 0)] = 2.0
    with pytest.raises(ChartError):
        solve_scatter(u0, hm.spec, cfg)


def test_component_mismatch(cfg):
    with pytest.raises(ValueError):
        solve_scatter(SpectralField.zeros(cfg.basis(), 2), semilinear_power(3, 5, 1.0).spec, cfg)


def test_injectivity_probe(cfg):
    b = cfg.basis()
    spec = semilinear_power(3, 5, -1.0).spec
    rng = np.random.default_rng(4)
    k = int(np.argmin(np.abs(cfg.grid.nodes - np.log(2))))
    for _ in range(4):
        a = SpectralField(b, 0.1 * rng.standard_normal((1, b.nmodes)))
        c = SpectralField(b, 0.1 * rng.standard_normal((1, b.nmodes)))
        sa, sc = solve_scatter(a, spec, cfg), solve_scatter(c, spec, cfg)
        diff = np.linalg.norm(sa.trajectory.v[k] - sc.trajectory.v[k])
        lin = np.linalg.norm(sa.linear.v[k] - sc.linear.v[k])
        assert diff >= 0.5 * lin


def test_solve_zero_power_series_oracle():
    cfg = SolveConfig(d=3, lmax=8, span=20.0)
    b = cfg.basis()
    eps = Fraction(1, 5)
    u0 = SpectralField.mode(b, 1, 1, value=float(eps) * np.sqrt(4 * np.pi / 3))
    sol = solve_zero(u0, semilinear_power(3, 2, 1.0).spec, cfg)
    assert sol.report.slope == pytest.approx(2.0, abs=0.2)
    ps = power_series_solution({(1, 0, 0): eps}, 1, 2, 3, 8)
    u = from_cylinder(sol.trajectory, sol.frame)
    for r in (0.9, 0.5, 0.1):
        x = r * b.points
        assert np.max(np.abs(u.value(x)[0] - poly_eval(ps, x))) <= 1e-7


def test_solve_zero_rejects_gradient_terms():
    spec = NonlinearitySpec(1, lambda u, g: g[0, 0] ** 2, [Monomial(0, (0,), ((2, 0, 0),), 1.0)])
    with pytest.raises(ValueError):
        solve_zero(SpectralField.zeros(SolveConfig().basis()), spec, SolveConfig())


def test_zero_dirichlet_round_trip():
    cfg = SolveConfig(d=3, lmax=4, span=20.0)
    b = cfg.basis()
    rng = np.random.default_rng(5)
    u0 = SpectralField(b, 0.1 * rng.standard_normal((1, b.nmodes)) * (b.ell > 0))
    spec = semilinear_power(3, 2, 1.0).spec
    S = solve_zero(u0, spec, cfg)
    D = solve_zero(SpectralField(b, S.trajectory.v[0]), spec, cfg, dirichlet=True)
    assert np.max(np.abs(D.trajectory.v - S.trajectory.v)) <= 1e-7
    assert np.max(np.abs(D.v_plus.coeffs - u0.coeffs)) <= 1e-6


def test_radial_oracle_linear():
    prof = radial_ode_oracle(3, 5, 0.0, 0.4, r_max=100.0)
    r = np.geomspace(1, 100, 20)
    assert np.allclose(prof(r), 0.4 / r, rtol=1e-12)


def test_radial_oracle_ground_state():
    W, trace = ground_state_W(100.0)
    prof = radial_ode_oracle(3, 5, -1.0, trace)
    r = np.geomspace(1, 1e3, 50)
    ref = W.value(r[:, None] * np.array([[1.0, 0, 0]]))[0]
    assert np.max(np.abs(prof(r) / ref - 1)) <= 1e-8


def test_radial_oracle_rate_d4():
    prof = radial_ode_oracle(4, 3, 1.0, 0.3)
    r = np.geomspace(2, 100, 60)
    from ellscat.rates import fit_rate

    z = np.abs(prof(r) - prof.linear(r)) * r**2
    assert fit_rate(r, z).slope == pytest.approx(-2.0, abs=0.2)


def test_radial_oracle_blowup():
    with pytest.raises(RuntimeError):
        radial_ode_oracle(3, 5, 1.0, 50.0)


def test_zero_mean_option():
    cfg = SolveConfig(d=2, lmax=4, span=10.0, zero_mean=True)
    b = cfg.basis()
    hm = harmonic_map_sphere_chart(2)
    with pytest.raises(ValueError):
        solve_scatter(SpectralField.mode(b, 0, comp=0, ncomp=2, value=0.01), hm.spec, cfg)
    u0 = SpectralField.zeros(b, 2)
    u0.coeffs[0, b.mode_index(1, 1)] = 0.01
    assert solve_scatter(u0, hm.spec, cfg).report.converged
    # interior solves with non-polynomial f always require zero mean
    with pytest.raises(ValueError):
        solve_zero(SpectralField.mode(b, 0, comp=0, ncomp=2, value=0.01), hm.spec, replace(cfg, zero_mean=False))
