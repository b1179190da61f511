"""Quick structural checks run by ``ellscat verify``.

Each check returns ``(name, passed, measured value)``.
"""

from __future__ import annotations

import itertools

import numpy as np

from .conformal import PhysicalSampler, ConformalFrame, to_cylinder
from .duhamel import phi, phi_dirichlet
from .equations import fischer_decompose, laplacian_poly
from .norms import japanese, traj_norm, z_norm
from .sphere import SphereBasis, SpectralField, apply_Ri, multiply, project, sogge_ratio
from .trajectory import TimeGrid, Trajectory

__all__ = ["run_all", "CHECKS"]


def orthonormality():
    err = 0.0
    for d in (2, 3):
        b = SphereBasis(d, 10)
        S = b.synthesis_matrix
        G = (S * b.weights) @ S.T
        err = max(err, float(np.max(np.abs(G - np.eye(b.nmodes)))))
    return err <= 1e-12, err


def product_support():
    worst = 0.0
    for d in (2, 3):
        b = SphereBasis(d, 8)
        for l1, l2 in itertools.product(range(5), repeat=2):
            f = SpectralField.mode(b, l1)
            g = SpectralField.mode(b, l2)
            h = multiply(f, g)
            for ell in range(b.lmax + 1):
                if ell < abs(l1 - l2) or ell > l1 + l2:
                    worst = max(worst, project(h, ell).l2())
    return worst <= 1e-12, worst


def ri_degree_shift():
    worst = 0.0
    for d in (2, 3):
        b = SphereBasis(d, 8)
        for ell in range(1, 8):
            for i in range(1, d + 1):
                h = apply_Ri(SpectralField.mode(b, ell), i)
                off = h.coeffs * (b.ell != ell - 1)
                worst = max(worst, float(np.max(np.abs(off))))
    return worst <= 1e-10, worst


def sogge_bound():
    b = SphereBasis(3, 24)
    ratios = [sogge_ratio(b, ell) / japanese(ell) ** 0.5 for ell in range(25)]
    return max(ratios) <= 1.0, max(ratios)


def duhamel_closed_form():
    worst = 0.0
    grid = TimeGrid.span(0.0, 30.0, 0.02)
    t = grid.nodes
    for d in (2, 3):
        b = SphereBasis(d, 8)
        for ell in range(9):
            k = b.mode_index(ell)
            lam = b.lam[k]
            for kappa in (lam + 0.5, lam + 2.0):
                F = np.zeros((grid.n, 1, b.nmodes))
                F[:, 0, k] = np.exp(-kappa * t)
                Ft = Trajectory(grid, b, F)
                exact = np.exp(-kappa * t) / (kappa**2 - lam**2)
                T = phi(Ft)
                worst = max(worst, float(np.max(np.abs(T.v[:, 0, k] - exact) / exact)))
                TD, up = phi_dirichlet(Ft)
                ref = 1.0 / (kappa**2 - lam**2)
                worst = max(worst, abs(up.coeffs[0, k] + ref) / ref)
    return worst <= 1e-8, worst


def fischer_exact():
    rng = np.random.default_rng(0)
    worst = 0
    for d in (2, 3):
        for deg in range(9):
            monos = [a for a in itertools.product(range(deg + 1), repeat=d) if sum(a) == deg]
            poly = {a: int(rng.integers(-5, 6)) for a in monos}
            h, _ = fischer_decompose(poly, d)
            worst = max(worst, len(laplacian_poly(h)))
    return worst == 0, float(worst)


def _test_field():
    def value(x):
        r = np.linalg.norm(x, axis=1)
        return (x[:, 0] / r**3 + 0.3 * x[:, 0] * x[:, 1] / r**5 + 0.2 * x[:, 2] ** 2 / r**4)[None]

    def gradient(x):
        r = np.linalg.norm(x, axis=1)
        x1, x2, x3 = x.T
        g = np.empty((1, 3, x.shape[0]))
        e = np.eye(3)
        for i in range(3):
            xi = x[:, i]
            g[0, i] = (
                e[0, i] / r**3 - 3 * x1 * xi / r**5
                + 0.3 * ((e[0, i] * x2 + e[1, i] * x1) / r**5 - 5 * x1 * x2 * xi / r**7)
                + 0.2 * (2 * e[2, i] * x3 / r**4 - 4 * x3**2 * xi / r**6)
            )
        return g

    return PhysicalSampler(value, gradient)


def yz_consistency():
    """Cylinder sup norm against physical traces of ``u`` and ``r d_r u``."""
    d, s = 3, 3.1
    b = SphereBasis(d, 6)
    frame = ConformalFrame(d, "infinity", 1.0)
    grid = TimeGrid.span(0.0, 3.0, 0.05)
    u = _test_field()
    T = to_cylinder(u, frame, grid, b)
    t = 1.0
    phys = []
    for r in frame.radius(grid.nodes[grid.nodes >= t - 1e-12]):
        x = r * b.points
        val = u.value(x)
        rad = r * np.einsum("cip,pi->cp", u.gradient(x), b.points)
        trace = SpectralField(b, val @ b.analysis_matrix)
        dtrace = SpectralField(b, (0.5 * (d - 2) * val + rad) @ b.analysis_matrix)
        phys.append(z_norm(trace, s, r) + z_norm(dtrace, s - 1, r))
    a = traj_norm(T, s, t, 0.0)
    err = abs(a - max(phys)) / max(phys)
    return err <= 1e-10, err


CHECKS = {
    "orthonormality": orthonormality,
    "product_support": product_support,
    "ri_degree_shift": ri_degree_shift,
    "sogge_bound": sogge_bound,
    "duhamel_closed_form": duhamel_closed_form,
    "fischer_exact": fischer_exact,
    "yz_consistency": yz_consistency,
}


def run_all():
    out = []
    for name, fn in CHECKS.items():
        ok, val = fn()
        out.append((name, bool(ok), float(val)))
    return out
