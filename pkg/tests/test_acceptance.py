"""Acceptance criteria, one test each; every test prints a PASS/FAIL line."""

import time

import numpy as np
import pytest

from ellscat.conformal import from_cylinder
from ellscat.duhamel import ode_residual, phi, phi_dirichlet
from ellscat.equations import (
    ground_state_W,
    harmonic_map_sphere_chart,
    semilinear_power,
)
from ellscat.norms import japanese
from ellscat.null_condition import null_decay_probe
from ellscat.rates import fit_rate
from ellscat.solver import (
    SolveConfig,
    radial_ode_oracle,
    solve_dirichlet,
    solve_scatter,
    solve_scatter_refined,
    solve_zero,
)
from ellscat.sphere import SpectralField, SphereBasis, apply_Ri
from ellscat.trajectory import TimeGrid, Trajectory
from ellscat.verify import fischer_exact, product_support, ri_degree_shift, sogge_bound, yz_consistency

SQ4PI = np.sqrt(4 * np.pi)


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
        assert ok, detail

    return emit


def _small_data(b, ncomp, amp, lmin, lmax, rng):
    c = np.zeros((ncomp, b.nmodes))
    sel = (b.ell >= lmin) & (b.ell <= lmax)
    c[:, sel] = amp * rng.standard_normal((ncomp, int(sel.sum())))
    return SpectralField(b, c)


def test_criterion_01_duhamel_closed_form(report):
    start = time.perf_counter()
    grid = TimeGrid.span(0.0, 30.0, 0.02)
    t = grid.nodes
    worst = 0.0
    for d in (2, 3):
        b = SphereBasis(d, 8)
        for ell in range(9):
            k = b.mode_index(ell)
            lam = b.lam[k]
            for kappa in lam + np.array([0.5, 1.0, 2.0, 4.0]):
                mu = 1.3
                F = np.zeros((grid.n, 1, b.nmodes))
                F[:, 0, k] = mu * np.exp(-kappa * t)
                Ft = Trajectory(grid, b, F)
                exact = mu * np.exp(-kappa * t) / (kappa**2 - lam**2)
                worst = max(worst, np.max(np.abs(phi(Ft).v[:, 0, k] / exact - 1)))
                TD, up = phi_dirichlet(Ft)
                u_plus = -mu / (kappa**2 - lam**2)
                worst = max(worst, abs(up.coeffs[0, k] / u_plus - 1))
                exact_D = exact + u_plus * np.exp(-lam * t)
                worst = max(worst, np.max(np.abs(TD.v[:, 0, k] - exact_D)) / np.max(np.abs(exact)))
    elapsed = time.perf_counter() - start
    report(1, worst <= 1e-8 and elapsed < 10, f"max rel err {worst:.2e}, {elapsed:.1f} s")


def test_criterion_02_ode_residual_order(report):
    ratios = []
    for d, ell, gap in ((3, 2, 1.0), (2, 3, 0.5), (3, 0, 2.0)):
        b = SphereBasis(d, 4)
        k = b.mode_index(ell)
        res = []
        for dt in (0.02, 0.01):
            g = TimeGrid.span(0.0, 10.0, dt)
            F = np.zeros((g.n, 1, b.nmodes))
            F[:, 0, k] = np.exp(-(b.lam[k] + gap) * g.nodes)
            F = Trajectory(g, b, F)
            res.append(ode_residual(phi(F), F))
        ratios.append(res[0] / res[1])
    ok = all(abs(r / 4 - 1) <= 0.15 for r in ratios)
    report(2, ok, "ratios " + ", ".join(f"{r:.3f}" for r in ratios))


def test_criterion_03_ground_state(report):
    start = time.perf_counter()
    W, trace = ground_state_W(100.0)
    cfg = SolveConfig(d=3, lmax=0, span=30.0, eps_fp=1e-13)
    b = cfg.basis()
    sol = solve_dirichlet(SpectralField.mode(b, 0, value=trace * SQ4PI), semilinear_power(3, 5, -1.0).spec, cfg)
    u = from_cylinder(sol.trajectory, sol.frame)
    r = np.geomspace(1, 20, 60)
    got = u.value(r[:, None] * np.array([[0.0, 0.0, 1.0]]))[0]
    ref = W.value(r[:, None] * np.array([[0.0, 0.0, 1.0]]))[0]
    ode = radial_ode_oracle(3, 5, -1.0, trace)(r)
    err_w = np.max(np.abs(got - ref)) / np.max(np.abs(ref))
    err_o = np.max(np.abs(got - ode)) / np.max(np.abs(ode))
    elapsed = time.perf_counter() - start
    ok = err_w <= 1e-6 and err_o <= 1e-7 and elapsed < 120
    report(3, ok, f"vs W {err_w:.2e}, vs ODE {err_o:.2e}, {elapsed:.1f} s")


def test_criterion_04_critical_rate(report):
    cfg = SolveConfig(d=3, lmax=4, oversample=8, span=30.0)
    b = cfg.basis()
    rng = np.random.default_rng(0)
    u0 = SpectralField.mode(b, 0, value=0.35) + _small_data(b, 1, 0.01, 1, 3, rng)
    sol = solve_scatter(u0, semilinear_power(3, 5, -1.0).spec, cfg)
    slope = sol.report.slope
    report(4, abs(slope + 2) <= 0.25, f"slope {slope:.4f} (target -2 +- 0.25)")


def test_criterion_05_supercritical_rates(report):
    cfg = SolveConfig(d=3, lmax=4, oversample=8, span=30.0)
    b = cfg.basis()
    rng = np.random.default_rng(1)
    u0 = SpectralField.mode(b, 0, value=0.35) + _small_data(b, 1, 0.01, 1, 3, rng)
    s7 = solve_scatter(u0, semilinear_power(3, 7, 1.0).spec, cfg).report.slope
    prof = radial_ode_oracle(4, 3, 1.0, 0.3)
    r = np.geomspace(2, 100, 60)
    s4 = fit_rate(r, np.abs(prof(r) - prof.linear(r)) * r**2).slope
    ok = abs(s7 + 4) <= 0.3 and abs(s4 + 2) <= 0.2
    report(5, ok, f"d3 p7 slope {s7:.4f}, d4 p3 radial slope {s4:.4f}")


def test_criterion_06_null_gain(report):
    b = SphereBasis(2, 4)
    cos1 = SpectralField.mode(b, 1, 1, value=np.sqrt(np.pi))
    sin3 = SpectralField.mode(b, 3, -3, value=np.sqrt(np.pi))
    mixed = cos1 + sin3
    s_id = null_decay_probe(mixed, mixed, np.eye(2)).slope
    s_j = null_decay_probe(cos1, sin3, np.array([[0.0, 1.0], [-1.0, 0.0]])).slope
    s_diag = null_decay_probe(mixed, mixed, np.diag([1.0, 0.0])).slope
    ok = abs(s_id + 2) <= 0.05 and abs(s_j + 2) <= 0.05 and abs(s_diag) <= 0.05
    report(6, ok, f"I2 {s_id:.4f}, J {s_j:.4f}, diag {s_diag:.4f}")


def test_criterion_07_harmonic_map_d2(report):
    cfg = SolveConfig(d=2, lmax=12, eps_fp=1e-12, zero_mean=True)
    b = cfg.basis()
    u0 = _small_data(b, 2, 0.05, 1, 3, np.random.default_rng(2))
    sol = solve_scatter(u0, harmonic_map_sphere_chart(2).spec, cfg)
    slope = sol.report.slope
    report(7, abs(slope + 2) <= 0.3, f"slope {slope:.4f} (target -2 +- 0.3)")


def test_criterion_08_harmonic_map_d3(report):
    cfg = SolveConfig(d=3, lmax=6, eps_fp=1e-12)
    b = cfg.basis()
    u0 = _small_data(b, 2, 0.05, 1, 3, np.random.default_rng(3))
    sol = solve_scatter_refined(u0, harmonic_map_sphere_chart(3).spec, cfg)
    s, sr = sol.report.slope, sol.report.refined_slope
    ok = abs(s + 2) <= 0.3 and abs(sr + 4) <= 0.5
    report(8, ok, f"slope {s:.4f}, refined slope {sr:.4f}")


def test_criterion_09_round_trip(report):
    rng = np.random.default_rng(4)
    worst_v = worst_p = 0.0
    cfg = SolveConfig(d=3, lmax=3, span=20.0)
    b = cfg.basis()
    spec_inf = semilinear_power(3, 5, -1.0).spec
    spec_zero = semilinear_power(3, 2, 1.0).spec
    for _ in range(10):
        u0 = _small_data(b, 1, 0.05, 0, 3, rng)
        S = solve_scatter(u0, spec_inf, cfg)
        D = solve_dirichlet(SpectralField(b, S.trajectory.v[0]), spec_inf, cfg)
        worst_v = max(worst_v, np.max(np.abs(D.trajectory.v - S.trajectory.v)))
        worst_p = max(worst_p, np.max(np.abs(D.v_plus.coeffs - u0.coeffs)))
        z0 = _small_data(b, 1, 0.05, 1, 3, rng)
        S = solve_zero(z0, spec_zero, cfg)
        D = solve_zero(SpectralField(b, S.trajectory.v[0]), spec_zero, cfg, dirichlet=True)
        worst_v = max(worst_v, np.max(np.abs(D.trajectory.v - S.trajectory.v)))
        worst_p = max(worst_p, np.max(np.abs(D.v_plus.coeffs - z0.coeffs)))
    ok = worst_v <= 1e-7 and worst_p <= 1e-6
    report(9, ok, f"trajectory {worst_v:.2e}, v_plus {worst_p:.2e}")


def _ri_gain_ratio():
    # ||R_i f||_{L^2} / ||f||_{H^1} over single degrees
    ratios = []
    for d in (2, 3):
        b = SphereBasis(d, 16)
        for ell in range(1, 17):
            f = SpectralField.mode(b, ell)
            for i in range(1, d + 1):
                ratios.append(apply_Ri(f, i).l2() / japanese(ell))
    return max(ratios)


def _ri_flow_gain():
    # R_i e^{-tD} f = e^{-t} e^{-tD} R_i f, since R_i lowers the degree by one
    b = SphereBasis(3, 8)
    f = SpectralField(b, np.random.default_rng(5).standard_normal((1, b.nmodes)))
    worst = 0.0
    for t in (0.5, 2.0, 5.0):
        flow = np.exp(-t * b.lam)
        for i in (1, 2, 3):
            lhs = apply_Ri(SpectralField(b, f.coeffs * flow), i).coeffs
            rhs = np.exp(-t) * apply_Ri(f, i).coeffs * flow
            worst = max(worst, np.max(np.abs(lhs - rhs)) / np.max(np.abs(rhs)))
    return worst


def test_criterion_10_structural_suites(report):
    parts = {
        "product_support": product_support(),
        "ri_degree_shift": ri_degree_shift(),
        "sogge_bound": sogge_bound(),
        "yz_consistency": yz_consistency(),
        "fischer_exact": fischer_exact(),
    }
    ri = _ri_gain_ratio()
    parts["ri_gain_ratio"] = (ri <= 2.0, ri)
    fg = _ri_flow_gain()
    parts["ri_flow_gain"] = (fg <= 1e-12, fg)
    cfg = SolveConfig(d=3, lmax=6, span=20.0)
    b = cfg.basis()
    u0 = SpectralField.mode(b, 1, 1, value=0.2 * np.sqrt(4 * np.pi / 3))
    slope = solve_zero(u0, semilinear_power(3, 2, 1.0).spec, cfg).report.slope
    parts["solve_zero_slope"] = (abs(slope - 2) <= 0.2, slope)
    ok = all(p[0] for p in parts.values())
    detail = ", ".join(f"{k}={'ok' if v[0] else 'BAD'}({v[1]:.3g})" for k, v in parts.items())
    report(10, ok, detail)
