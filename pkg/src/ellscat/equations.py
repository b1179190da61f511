"""Equation presets, graph-chart geometry and exact polynomial oracles."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from math import factorial
from typing import Callable, Optional

import numpy as np

from .conformal import PhysicalSampler
from .solver import Monomial, NonlinearitySpec, nu_exponent, nu_exponent_structured

__all__ = [
    "EquationPreset",
    "GraphChart",
    "semilinear_power",
    "ground_state_W",
    "sphere_chart",
    "harmonic_map_sphere_chart",
    "h_system_2d",
    "bracket_g_form",
    "laplacian_poly",
    "mul_r2",
    "fischer_decompose",
    "gauss_decompose",
    "inverse_laplacian",
    "poly_eval",
    "poly_mul",
    "power_series_solution",
    "PRESETS",
    "get_preset",
]


@dataclass(frozen=True, eq=False)
class GraphChart:
    """Chart ``x -> (x, psi(x))`` of a submanifold of codimension ``L``.

    ``psi(x)``, ``dpsi(x)`` and ``d2psi(x)`` take ``x`` of shape ``(N, P)``
    and return arrays of shape ``(L, P)``, ``(L, N, P)`` and
    ``(L, N, N, P)``.
    """

    N: int
    psi: Callable
    dpsi: Callable
    d2psi: Callable
    base_point: np.ndarray
    rotation: np.ndarray

    def metric(self, x):
        dp = self.dpsi(x)
        return np.eye(self.N)[:, :, None] + np.einsum("lip,ljp->ijp", dp, dp)

    def christoffel(self, x):
        """``Gamma^i_{jk}`` at ``x``, shape ``(N, N, N, P)``.

        Built from ``d_k g_ij = sum_l (d_ik psi_l d_j psi_l + d_i psi_l d_jk psi_l)``
        and the standard formula with the inverse metric.
        """
        dp = self.dpsi(x)
        hp = self.d2psi(x)
        dg = np.einsum("likp,ljp->ijkp", hp, dp) + np.einsum("lip,ljkp->ijkp", dp, hp)
        # dg[i, j, k] = d_k g_ij; first[l, j, k] = (d_j g_lk + d_k g_lj - d_l g_jk) / 2
        first = 0.5 * (
            np.einsum("lkjp->ljkp", dg) + np.einsum("ljkp->ljkp", dg) - np.einsum("jklp->ljkp", dg)
        )
        g = self.metric(x)
        ginv = np.linalg.inv(g.transpose(2, 0, 1)).transpose(1, 2, 0)
        return np.einsum("ilp,ljkp->ijkp", ginv, first)

    def lift(self, x):
        """Embedded point ``R (x, psi(x))`` in ``R^{N+L}``."""
        x = np.atleast_2d(x)
        full = np.concatenate([x, self.psi(x)], axis=0)
        return self.rotation @ full


def _rotation_to(base):
    """Orthogonal matrix sending the last basis vector to ``base``."""
    n = base.size
    e = np.zeros(n)
    e[-1] = 1.0
    M = np.eye(n)
    M[:, -1] = base
    Q, _ = np.linalg.qr(np.roll(M, 1, axis=1))
    Q = np.roll(Q, -1, axis=1)
    if Q[:, -1] @ base < 0:
        Q[:, -1] *= -1
    if np.linalg.det(Q) < 0:
        Q[:, 0] *= -1
    return Q


def sphere_chart(N, base_point=None):
    """Graph chart of ``S^N`` around ``base_point`` with ``psi = sqrt(1 - |x|^2)``."""
    if base_point is None:
        base_point = np.zeros(N + 1)
        base_point[-1] = 1.0
    base_point = np.asarray(base_point, dtype=float)
    base_point = base_point / np.linalg.norm(base_point)

    def psi(x):
        return np.sqrt(1.0 - np.sum(x * x, axis=0))[None]

    def dpsi(x):
        h = psi(x)[0]
        return (-x / h)[None]

    def d2psi(x):
        h = psi(x)[0]
        eye = np.eye(x.shape[0])[:, :, None]
        return (-eye / h - np.einsum("ip,jp->ijp", x, x) / h**3)[None]

    return GraphChart(N, psi, dpsi, d2psi, base_point, _rotation_to(base_point))


@dataclass(frozen=True, eq=False)
class EquationPreset:
    name: str
    spec: NonlinearitySpec
    d: int
    nu1: Optional[float] = None
    nu1_structured: Optional[float] = None
    refined_rate: Optional[float] = None
    modes: tuple = ("scatter",)
    chart: Optional[GraphChart] = None
    extra: dict = field(default_factory=dict)

    def check_exponents(self):
        """Recompute the stored exponents from the monomial metadata."""
        if self.nu1 is not None and nu_exponent(self.spec, self.d) != self.nu1:
            return False
        if self.nu1_structured is not None and nu_exponent_structured(self.spec, self.d) != self.nu1_structured:
            return False
        return True


def semilinear_power(d, p, kappa):
    """``Delta u = kappa u^p`` for a scalar ``u``."""
    if int(p) != p or p < 2:
        raise ValueError("p must be an integer >= 2")
    p = int(p)
    kappa = float(kappa)

    def f(u, grad):
        return kappa * u**p

    mono = Monomial(0, (p,), ((0,) * d,), kappa)
    spec = NonlinearitySpec(1, f, [mono], name=f"power_d{d}_p{p}")
    nu1 = float((d - 2) * p - d) if kappa != 0 else math.inf
    modes = ("scatter", "scatter_refined", "dirichlet", "zero_scatter", "zero_dirichlet")
    return EquationPreset(
        spec.name, spec, d, nu1=nu1, modes=modes, extra={"critical": nu1 == 0, "p": p, "kappa": kappa}
    )


def ground_state_W(lam=1.0):
    """Rescaled ground state ``W_lam(x) = lam^{1/2} (1 + lam^2 |x|^2/3)^{-1/2}`` in d = 3.

    Returns
    -------
    PhysicalSampler
        Value and gradient of ``W_lam``.
    float
        Its (constant) trace on the unit sphere.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")

    def value(x):
        r2 = np.sum(np.atleast_2d(x) ** 2, axis=1)
        return (np.sqrt(lam) / np.sqrt(1.0 + lam**2 * r2 / 3.0))[None]

    def gradient(x):
        x = np.atleast_2d(x)
        r2 = np.sum(x**2, axis=1)
        fac = -np.sqrt(lam) * lam**2 / 3.0 * (1.0 + lam**2 * r2 / 3.0) ** -1.5
        return (fac[None, :] * x.T)[None]

    trace = float(np.sqrt(lam) / np.sqrt(1.0 + lam**2 / 3.0))
    return PhysicalSampler(value, gradient, 1), trace


def _harmonic_map_evaluator(chart):
    def f(u, grad):
        G = chart.christoffel(u)
        S = np.einsum("jap,kap->jkp", grad, grad)
        return -np.einsum("ijkp,jkp->ip", G, S)

    return f


def harmonic_map_sphere_chart(d, N=2, base_point=None, chart_radius=0.4):
    """Harmonic maps ``R^d -> S^N`` written in the graph chart at ``base_point``.

    The monomial metadata holds the leading terms ``-u_i (d_k u_j)^2`` only.
    """
    chart = sphere_chart(N, base_point)
    f = _harmonic_map_evaluator(chart)
    monos = []
    for i in range(N):
        for j in range(N):
            for k in range(d):
                p = tuple(1 if a == i else 0 for a in range(N))
                q = np.zeros((N, d), dtype=int)
                q[j, k] = 2
                monos.append(Monomial(i, p, tuple(map(tuple, q)), -1.0))
    spec = NonlinearitySpec(
        N, f, monos, metadata_complete=False, scalar_product_structure=True,
        null_condition_2d=(d == 2), chart_radius=chart_radius, name=f"harmonic_map_d{d}_S{N}",
    )
    return EquationPreset(
        spec.name, spec, d,
        nu1=float(nu_exponent(spec, d)),
        nu1_structured=float(2 * (d - 2)),
        refined_rate=float(4 * (d - 2)),
        modes=("scatter", "scatter_refined", "dirichlet"),
        chart=chart,
    )


def _check_H(H):
    H = np.asarray(H, dtype=float)
    if H.ndim != 3 or H.shape[0] != H.shape[1] or H.shape[1] != H.shape[2]:
        raise ValueError("H must have shape (N, N, N)")
    if not np.allclose(H, -H.transpose(0, 2, 1), atol=1e-14):
        raise ValueError("H^i_{jl} must be antisymmetric in (j, l)")
    return H


def h_system_2d(H, base_point=None, chart_radius=0.4):
    """Prescribed-curvature system ``Delta u = -Gamma(u)(grad u, grad u) - H d_x u d_y u`` in d = 2.

    ``H`` has shape ``(N, N, N)`` with ``H[i, j, l] = -H[i, l, j]``; the
    Christoffel part is that of the sphere chart of matching dimension.
    """
    H = _check_H(H)
    N = H.shape[0]
    chart = sphere_chart(N, base_point)
    harm = _harmonic_map_evaluator(chart)

    def f(u, grad):
        return harm(u, grad) - np.einsum("ijl,jp,lp->ip", H, grad[:, 0, :], grad[:, 1, :])

    monos = []
    for i in range(N):
        for j in range(N):
            for k in range(2):
                p = tuple(1 if a == i else 0 for a in range(N))
                q = np.zeros((N, 2), dtype=int)
                q[j, k] = 2
                monos.append(Monomial(i, p, tuple(map(tuple, q)), -1.0))
            for l in range(N):
                if H[i, j, l] != 0:
                    q = np.zeros((N, 2), dtype=int)
                    q[j, 0] += 1
                    q[l, 1] += 1
                    monos.append(Monomial(i, (0,) * N, tuple(map(tuple, q)), -H[i, j, l]))
    spec = NonlinearitySpec(
        N, f, monos, metadata_complete=False, scalar_product_structure=True,
        bracket_structure_2d=True, null_condition_2d=True, chart_radius=chart_radius,
        name="h_system_2d",
    )
    return EquationPreset(
        spec.name, spec, 2, nu1=float(nu_exponent(spec, 2)),
        nu1_structured=float(nu_exponent_structured(spec, 2)),
        modes=("scatter", "scatter_refined", "dirichlet"), chart=chart, extra={"H": H},
    )


def bracket_g_form(v, dt_v, dth_v, chart, H):
    """Cylinder forcing of the d = 2 system written in ``(t, theta)`` variables.

    ``g_i = -Gamma^i_{jl}(v)(d_t v^j d_t v^l + d_th v^j d_th v^l)
    - H^i_{jl} d_t v^j d_th v^l``.
    """
    G = chart.christoffel(v)
    S = np.einsum("jp,kp->jkp", dt_v, dt_v) + np.einsum("jp,kp->jkp", dth_v, dth_v)
    out = -np.einsum("ijkp,jkp->ip", G, S)
    return out - np.einsum("ijl,jp,lp->ip", np.asarray(H, dtype=float), dt_v, dth_v)


# --- exact polynomial arithmetic -------------------------------------------------

def _clean(p):
    return {k: v for k, v in p.items() if v != 0}


def poly_add(a, b, scale=1):
    out = dict(a)
    for k, v in b.items():
        out[k] = out.get(k, 0) + scale * v
    return _clean(out)


def poly_mul(a, b):
    out = {}
    for (ka, va), (kb, vb) in itertools.product(a.items(), b.items()):
        k = tuple(x + y for x, y in zip(ka, kb))
        out[k] = out.get(k, 0) + va * vb
    return _clean(out)


def laplacian_poly(p):
    """Exact Laplacian of a polynomial stored as ``{exponent tuple: coefficient}``."""
    out = {}
    for k, c in p.items():
        for i, e in enumerate(k):
            if e >= 2:
                kk = list(k)
                kk[i] -= 2
                kk = tuple(kk)
                out[kk] = out.get(kk, 0) + c * e * (e - 1)
    return _clean(out)


def mul_r2(p, d, times=1):
    """Multiply by ``|x|^{2 times}``."""
    r2 = {tuple(2 if j == i else 0 for j in range(d)): 1 for i in range(d)}
    out = dict(p)
    for _ in range(times):
        out = poly_mul(out, r2)
    return out


def _homogeneous_parts(p):
    parts = {}
    for k, c in p.items():
        parts.setdefault(sum(k), {})[k] = c
    return parts


def _fischer_homogeneous(p, m, d):
    """Harmonic part and quotient of a homogeneous degree-``m`` polynomial."""
    harm = dict(p)
    quot = {}
    lap = dict(p)
    c = Fraction(1)
    for j in range(1, m // 2 + 1):
        lap = laplacian_poly(lap)
        if not lap:
            break
        c = -c / (2 * j * (2 * m - 2 * j + d - 2))
        harm = poly_add(harm, mul_r2(lap, d, j), c)
        quot = poly_add(quot, mul_r2(lap, d, j - 1), -c)
    return _clean(harm), _clean(quot)


def fischer_decompose(poly, d, max_degree=8):
    """Exact split ``poly = harmonic + |x|^2 * quotient`` with ``Delta harmonic = 0``.

    Parameters
    ----------
    poly : dict
        ``{exponent tuple: coefficient}``; coefficients are converted to
        ``Fraction``.
    d : int
    max_degree : int
    """
    p = {tuple(int(e) for e in k): Fraction(v) for k, v in poly.items()}
    if any(len(k) != d for k in p):
        raise ValueError("exponent tuples must have length d")
    if p and max(sum(k) for k in p) > max_degree:
        raise ValueError(f"degree exceeds the supported bound {max_degree}")
    harm, quot = {}, {}
    for m, part in sorted(_homogeneous_parts(p).items()):
        h, q = _fischer_homogeneous(part, m, d)
        harm = poly_add(harm, h)
        quot = poly_add(quot, q)
    return harm, quot


def gauss_decompose(p, d):
    """Homogeneous ``p`` of degree m as ``sum_i |x|^{2i} h_{m-2i}``; returns ``{i: h}``."""
    out = {}
    rest = dict(p)
    parts = _homogeneous_parts(rest)
    if len(parts) > 1:
        raise ValueError("expected a homogeneous polynomial")
    m = next(iter(parts)) if parts else 0
    i = 0
    while rest:
        h, q = _fischer_homogeneous(rest, m - 2 * i, d)
        if h:
            out[i] = h
        rest = q
        i += 1
    return out


def inverse_laplacian(p, d):
    """Particular solution of ``Delta u = p`` built from the Gauss decomposition.

    Each ``|x|^{2i} h_k`` maps to ``|x|^{2i+2} h_k / (2(i+1)(2i + 2k + d))``,
    so no harmonic polynomial is ever added.
    """
    out = {}
    p = {k: Fraction(v) for k, v in p.items()}
    for m, part in _homogeneous_parts(p).items():
        for i, h in gauss_decompose(part, d).items():
            k = m - 2 * i
            c = Fraction(1, 2 * (i + 1) * (2 * i + 2 * k + d))
            out = poly_add(out, mul_r2(h, d, i + 1), c)
    return out


def poly_eval(p, x):
    """Evaluate at points ``x`` of shape ``(npts, d)``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    out = np.zeros(x.shape[0])
    for k, c in p.items():
        out += float(c) * np.prod(x ** np.array(k), axis=1)
    return out


def poly_grad(p, d):
    out = []
    for i in range(d):
        g = {}
        for k, c in p.items():
            if k[i]:
                kk = list(k)
                kk[i] -= 1
                g[tuple(kk)] = g.get(tuple(kk), 0) + c * k[i]
        out.append(_clean(g))
    return out


def power_series_solution(u_lin, a, p, d, order):
    """Formal solution of ``Delta u = a u^p`` around the harmonic polynomial ``u_lin``.

    Terms are ordered by powers of the data; ``u_n`` solves
    ``Delta u_n = a [u^p]_n`` through :func:`inverse_laplacian`.
    """
    a = Fraction(a)
    terms = {1: {k: Fraction(v) for k, v in u_lin.items()}}
    for n in range(2, order + 1):
        rhs = {}
        for combo in itertools.product(range(1, n), repeat=p):
            if sum(combo) != n or any(c not in terms for c in combo):
                continue
            prod = {(0,) * d: Fraction(1)}
            for c in combo:
                prod = poly_mul(prod, terms[c])
            rhs = poly_add(rhs, prod)
        if rhs:
            terms[n] = inverse_laplacian({k: a * v for k, v in rhs.items()}, d)
    total = {}
    for t in terms.values():
        total = poly_add(total, t)
    return total


PRESETS = {
    "critical_d3_p5": lambda: semilinear_power(3, 5, -1.0),
    "supercritical_d3_p7": lambda: semilinear_power(3, 7, 1.0),
    "cubic_d3": lambda: semilinear_power(3, 3, 1.0),
    "quadratic_d3": lambda: semilinear_power(3, 2, 1.0),
    "harmonic_map_d2": lambda: harmonic_map_sphere_chart(2, 2),
    "harmonic_map_d3": lambda: harmonic_map_sphere_chart(3, 2),
    "linear_d3": lambda: semilinear_power(3, 2, 0.0),
    "linear_d2": lambda: semilinear_power(2, 2, 0.0),
}


def get_preset(name, **kwargs):
    """Look up a preset by name; ``power`` and ``harmonic_map`` accept parameters."""
    if name == "power":
        return semilinear_power(kwargs["d"], kwargs["p"], kwargs.get("kappa", 1.0))
    if name == "harmonic_map":
        return harmonic_map_sphere_chart(kwargs["d"], kwargs.get("N", 2))
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}")
    return PRESETS[name]()
