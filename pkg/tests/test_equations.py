import itertools
from fractions import Fraction

import numpy as np
import pytest
import sympy as sp

from ellscat.conformal import ConformalFrame
from ellscat.equations import (
    PRESETS,
    bracket_g_form,
    fischer_decompose,
    gauss_decompose,
    get_preset,
    ground_state_W,
    h_system_2d,
    harmonic_map_sphere_chart,
    inverse_laplacian,
    laplacian_poly,
    mul_r2,
    poly_add,
    poly_mul,
    power_series_solution,
    semilinear_power,
    sphere_chart,
)
from ellscat.null_condition import is_null
from ellscat.solver import eval_g
from ellscat.sphere import SphereBasis
from ellscat.trajectory import TimeGrid, Trajectory


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_recompute_exponents(name):
    pre = get_preset(name)
    assert pre.check_exponents()
    if pre.spec.metadata_complete:
        pre.spec.check_consistency(pre.d)


def test_semilinear_examples():
    assert semilinear_power(3, 5, -1).nu1 == 2
    assert semilinear_power(3, 7, 1).nu1 == 4
    cubic = semilinear_power(3, 3, 1)
    assert cubic.nu1 == 0 and cubic.extra["critical"]
    with pytest.raises(ValueError):
        semilinear_power(3, 1, 1)
    with pytest.raises(ValueError):
        semilinear_power(3, 2.5, 1)
    assert get_preset("power", d=3, p=4, kappa=2.0).nu1 == 1
    assert semilinear_power(3, 2, 0.0).nu1 == np.inf
    with pytest.raises(KeyError):
        get_preset("nonexistent")


def test_ground_state_values():
    W, _ = ground_state_W(1.0)
    assert W.value(np.array([[1.0, 0, 0]]))[0, 0] == pytest.approx(np.sqrt(3) / 2, rel=1e-15)
    _, tr = ground_state_W(100.0)
    assert tr == pytest.approx(0.17318, abs=1e-5)
    with pytest.raises(ValueError):
        ground_state_W(0.0)


def test_ground_state_pde_residual_symbolic():
    x1, x2, x3, lam = sp.symbols("x1 x2 x3 lam", positive=True)
    W = sp.sqrt(lam) / sp.sqrt(1 + lam**2 * (x1**2 + x2**2 + x3**2) / 3)
    res = sp.diff(W, x1, 2) + sp.diff(W, x2, 2) + sp.diff(W, x3, 2) + W**5
    grad = [sp.diff(W, v) for v in (x1, x2, x3)]
    f_res = sp.lambdify((x1, x2, x3, lam), res, "numpy")
    f_val = sp.lambdify((x1, x2, x3, lam), W, "numpy")
    f_grad = sp.lambdify((x1, x2, x3, lam), grad, "numpy")
    rng = np.random.default_rng(0)
    pts = rng.uniform(-3, 3, (16, 3))
    for L in (1.0, 7.0, 100.0):
        Ws, _ = ground_state_W(L)
        r = f_res(*pts.T, L)
        assert np.max(np.abs(r)) <= 1e-10
        assert np.allclose(Ws.value(pts)[0], f_val(*pts.T, L), rtol=1e-14)
        assert np.allclose(Ws.gradient(pts)[0], np.array(f_grad(*pts.T, L)), rtol=1e-13, atol=1e-300)


@pytest.mark.parametrize("N", [1, 2, 3])
def test_chart_tangency_and_vanishing_christoffel(N):
    rng = np.random.default_rng(N)
    base = rng.standard_normal(N + 1)
    chart = sphere_chart(N, base)
    zero = np.zeros((N, 1))
    assert np.max(np.abs(chart.dpsi(zero))) <= 1e-12
    assert np.max(np.abs(chart.christoffel(zero))) <= 1e-12
    assert np.allclose(chart.lift(zero)[:, 0], base / np.linalg.norm(base), atol=1e-14)
    x = 0.3 * rng.uniform(-1, 1, (N, 10))
    assert np.allclose(np.linalg.norm(chart.lift(x), axis=0), 1.0, atol=1e-14)


def test_christoffel_closed_form():
    # graph chart of the unit sphere: Gamma^i_jk = x_i (delta_jk + x_j x_k / h^2)
    chart = sphere_chart(2)
    rng = np.random.default_rng(1)
    x = 0.35 * rng.uniform(-1, 1, (2, 32))
    h2 = 1 - np.sum(x * x, axis=0)
    ref = np.einsum("ip,jkp->ijkp", x, np.eye(2)[:, :, None] + np.einsum("jp,kp->jkp", x, x) / h2)
    assert np.max(np.abs(chart.christoffel(x) - ref)) <= 1e-14


def test_christoffel_by_finite_differences_of_metric():
    chart = sphere_chart(2)
    x0 = np.array([[0.2], [-0.1]])
    h = 1e-6
    dg = np.empty((2, 2, 2))
    for k in range(2):
        e = np.zeros((2, 1))
        e[k] = h
        dg[:, :, k] = (chart.metric(x0 + e)[:, :, 0] - chart.metric(x0 - e)[:, :, 0]) / (2 * h)
    ginv = np.linalg.inv(chart.metric(x0)[:, :, 0])
    # first[l, j, k] = (d_j g_lk + d_k g_lj - d_l g_jk) / 2, with dg[i, j, k] = d_k g_ij
    first = np.empty((2, 2, 2))
    for l, j, k in itertools.product(range(2), repeat=3):
        first[l, j, k] = 0.5 * (dg[l, k, j] + dg[l, j, k] - dg[j, k, l])
    ref = np.einsum("il,ljk->ijk", ginv, first)
    assert np.max(np.abs(chart.christoffel(x0)[..., 0] - ref)) <= 1e-8


@pytest.mark.parametrize("d", [2, 3])
def test_harmonic_map_extrinsic_form(d):
    pre = harmonic_map_sphere_chart(d)
    rng = np.random.default_rng(d)
    u = 0.35 * rng.uniform(-1, 1, (2, 32))
    g = rng.standard_normal((2, d, 32))
    f = pre.spec(u, g)
    # lift: dU = (du, dpsi . du); Delta U = -U |dU|^2 in the chart coordinates
    dpsi = pre.chart.dpsi(u)[0]
    dpsi_du = np.einsum("jp,jkp->kp", dpsi, g)
    energy = np.sum(g * g, axis=(0, 1)) + np.sum(dpsi_du**2, axis=0)
    assert np.max(np.abs(f + u * energy)) <= 1e-9
    assert np.all(pre.spec(np.zeros_like(u), g) == 0)


def test_harmonic_map_presets():
    p3 = harmonic_map_sphere_chart(3)
    assert p3.nu1_structured == 2 and p3.refined_rate == 4
    assert p3.spec.scalar_product_structure and not p3.spec.metadata_complete
    p2 = harmonic_map_sphere_chart(2)
    assert p2.spec.null_condition_2d and p2.nu1_structured == 0


def test_h_system_antisymmetry_enforced():
    H = np.zeros((2, 2, 2))
    H[0, 0, 1] = 1.0
    with pytest.raises(ValueError):
        h_system_2d(H)
    with pytest.raises(ValueError):
        h_system_2d(np.zeros((2, 2)))


def test_h_system_zero_H_is_harmonic_map():
    rng = np.random.default_rng(3)
    u = 0.3 * rng.uniform(-1, 1, (2, 20))
    g = rng.standard_normal((2, 2, 20))
    assert np.array_equal(h_system_2d(np.zeros((2, 2, 2))).spec(u, g), harmonic_map_sphere_chart(2).spec(u, g))


def test_h_system_g_form():
    H = np.zeros((2, 2, 2))
    H[0, 0, 1], H[0, 1, 0] = 0.7, -0.7
    H[1, 0, 1], H[1, 1, 0] = -0.4, 0.4
    pre = h_system_2d(H)
    b = SphereBasis(2, 6)
    rng = np.random.default_rng(4)
    grid = TimeGrid.span(0.0, 1.0, 0.25)
    v = 0.05 * rng.standard_normal((grid.n, 2, b.nmodes))
    ph = 0.05 * rng.standard_normal((grid.n, 2, b.nmodes))
    T = Trajectory(grid, b, v, ph)
    frame = ConformalFrame(2)
    G = eval_g(T, pre.spec, frame)
    th = b.grid_theta
    dth = -np.sin(th) * b.gradient_matrix[0] + np.cos(th) * b.gradient_matrix[1]
    for k in range(grid.n):
        vg = v[k] @ b.synthesis_matrix
        dt = ph[k] @ b.synthesis_matrix
        dthv = v[k] @ dth
        ref = bracket_g_form(vg, dt, dthv, pre.chart, H)
        assert np.max(np.abs(G.v[k] - ref @ b.analysis_matrix)) <= 1e-9


def test_null_flag_matrices():
    assert is_null(np.eye(2))
    assert is_null(np.array([[0.0, 1.0], [-1.0, 0.0]]))


def test_fischer_examples():
    h, q = fischer_decompose({(2, 0): 1}, 2)
    assert h == {(2, 0): Fraction(1, 2), (0, 2): Fraction(-1, 2)}
    assert q == {(0, 0): Fraction(1, 2)}
    h, q = fischer_decompose({(2, 0, 0): 1}, 3)
    assert h == {(2, 0, 0): Fraction(2, 3), (0, 2, 0): Fraction(-1, 3), (0, 0, 2): Fraction(-1, 3)}
    assert q == {(0, 0, 0): Fraction(1, 3)}
    h, q = fischer_decompose({(1, 1, 0): 3, (1, 0, 0): -2}, 3)
    assert q == {}
    with pytest.raises(ValueError):
        fischer_decompose({(9, 0): 1}, 2)
    with pytest.raises(ValueError):
        fischer_decompose({(1, 0): 1}, 3)


@pytest.mark.parametrize("d", [2, 3])
def test_fischer_exact_random(d):
    rng = np.random.default_rng(d)
    for deg in range(9):
        monos = [a for a in itertools.product(range(deg + 1), repeat=d) if sum(a) <= deg]
        poly = {a: Fraction(int(rng.integers(-9, 10)), int(rng.integers(1, 5))) for a in monos}
        h, q = fischer_decompose(poly, d)
        assert laplacian_poly(h) == {}
        assert poly_add(h, mul_r2(q, d)) == {k: v for k, v in poly.items() if v != 0}


def test_gauss_and_inverse_laplacian():
    d = 3
    p = {(4, 0, 0): 1, (2, 2, 0): -3, (0, 1, 3): 2}
    parts = gauss_decompose(p, d)
    total = {}
    for i, h in parts.items():
        assert laplacian_poly(h) == {}
        total = poly_add(total, mul_r2(h, d, i))
    assert total == p
    u = inverse_laplacian(p, d)
    assert laplacian_poly(u) == {k: Fraction(v) for k, v in p.items()}
    with pytest.raises(ValueError):
        gauss_decompose({(2, 0, 0): 1, (1, 0, 0): 1}, d)


def test_power_series_solution_satisfies_pde():
    d = 3
    u_lin = {(1, 0, 0): Fraction(1, 5)}
    order = 5
    u = power_series_solution(u_lin, 1, 2, d, order)
    # residual Delta u - u^2 only has terms of data order > order
    res = poly_add(laplacian_poly(u), poly_mul(u, u), -1)
    lowest = min(sum(k) for k in res)
    assert lowest >= 2 * (order - 1)
