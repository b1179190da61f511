"""Picard solvers for ``Delta u = f(u, grad u)`` in cylinder variables.

The unknown is split as ``v = v_L + w`` where ``v_L`` is a decaying linear
solution and ``w`` solves ``w = Phi(g(v_L + w))`` (scattering problems) or
``w = Phi^D(g(v_L + w))`` (Dirichlet problems).  Iterates start from
``w = 0`` and the time-derivative slot is always taken from the Duhamel
output.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .conformal import ConformalFrame, LinearData, linear_trajectory, physical_fields
from .duhamel import TailError, phi_detailed, phi_dirichlet
from .norms import log_y_norms, traj_norm, x_nu_norm
from .rates import fit_rate
from .sphere import SpectralField, SphereBasis
from .trajectory import TimeGrid, Trajectory

__all__ = [
    "Monomial",
    "NonlinearitySpec",
    "SolveConfig",
    "SolveReport",
    "Solution",
    "NonContractionError",
    "ChartError",
    "TailError",
    "eval_g",
    "nu_exponent",
    "nu_exponent_structured",
    "solve_scatter",
    "solve_scatter_refined",
    "solve_dirichlet",
    "solve_zero",
    "decay_samples",
    "radial_ode_oracle",
    "RadialProfile",
]

NODE_CHUNK = 64


class NonContractionError(RuntimeError):
    """The Picard increments stopped decreasing."""


class ChartError(RuntimeError):
    """An iterate left the admissible value range of the nonlinearity."""


@dataclass(frozen=True)
class Monomial:
    """Term ``a * u^p * (grad u)^q`` of component ``i``.

    ``p`` has length N and ``q`` is an N x d array of exponents of the
    entries ``d_k u^j``.
    """

    i: int
    p: tuple
    q: tuple
    a: float

    @property
    def deg_p(self):
        return int(sum(self.p))

    @property
    def deg_q(self):
        return int(np.sum(self.q))


@dataclass(frozen=True, eq=False)
class NonlinearitySpec:
    """Pointwise nonlinearity with optional monomial metadata.

    ``evaluator(u, grad)`` maps ``u`` of shape ``(N, P)`` and ``grad`` of
    shape ``(N, d, P)`` to an array of shape ``(N, P)``.  When
    ``metadata_complete`` is False the monomials only describe the leading
    terms (used for exponent bookkeeping, not for the consistency check).
    """

    ncomp: int
    evaluator: Callable
    monomials: Optional[Sequence[Monomial]] = None
    metadata_complete: bool = True
    scalar_product_structure: bool = False
    bracket_structure_2d: bool = False
    null_condition_2d: bool = False
    chart_radius: Optional[float] = None
    name: str = "custom"

    def __call__(self, u, grad):
        return self.evaluator(u, grad)

    def evaluate_monomials(self, u, grad):
        """Evaluate the metadata polynomial at the same inputs as the evaluator."""
        if not self.monomials:
            raise ValueError("no monomial metadata")
        N, d, P = grad.shape
        out = np.zeros((N, P))
        for mono in self.monomials:
            term = np.full(P, float(mono.a))
            for j, e in enumerate(mono.p):
                if e:
                    term = term * u[j] ** e
            q = np.asarray(mono.q).reshape(N, d)
            for j in range(N):
                for k in range(d):
                    if q[j, k]:
                        term = term * grad[j, k] ** q[j, k]
            out[mono.i] += term
        return out

    def check_consistency(self, d, n=64, scale=0.3, seed=0, tol=1e-9):
        """Compare evaluator and metadata on random inputs.

        Returns the maximal absolute discrepancy; raises if it exceeds
        ``tol`` (relative to the size of the values).
        """
        rng = np.random.default_rng(seed)
        u = scale * rng.uniform(-1, 1, (self.ncomp, n))
        g = scale * rng.uniform(-1, 1, (self.ncomp, d, n))
        a = np.asarray(self(u, g))
        b = self.evaluate_monomials(u, g)
        err = float(np.max(np.abs(a - b)))
        ref = max(1.0, float(np.max(np.abs(a))))
        if err > tol * ref:
            raise ValueError(f"metadata disagrees with evaluator (max error {err:.3e})")
        return err


def nu_exponent(spec, d):
    """``min (d-2)(|p|+|q|) - d`` over monomials with nonzero coefficient."""
    if not spec.monomials:
        raise ValueError("monomial metadata is required")
    vals = [(d - 2) * (m.deg_p + m.deg_q) - d for m in spec.monomials if m.a != 0]
    return float(min(vals)) if vals else math.inf


def nu_exponent_structured(spec, d):
    """``min (d-2)|p| + (d-1)|q| - d`` for scalar-product or bracket structure."""
    if not spec.monomials:
        raise ValueError("monomial metadata is required")
    vals = [(d - 2) * m.deg_p + (d - 1) * m.deg_q - d for m in spec.monomials if m.a != 0]
    return float(min(vals)) if vals else math.inf


@dataclass(frozen=True)
class SolveConfig:
    """Discretisation and iteration parameters.

    ``t_data`` anchors the linear data: ``v_L(t) = e^{-(t - t_data) D} u0``.
    It defaults to the frame's ``t0``.  ``span`` is ``T_max - t0``.
    """

    d: int = 3
    lmax: int = 8
    s: Optional[float] = None
    oversample: int = 4
    orientation: str = "infinity"
    r0: float = 1.0
    dt: float = 0.02
    span: float = 30.0
    eps_fp: float = 1e-10
    max_iter: int = 60
    mode: str = "scatter"
    t1: Optional[float] = None
    t_data: Optional[float] = None
    noise_rel: float = 1e-12
    threads: int = 1
    max_escalations: int = 4
    fit_window: Optional[tuple] = None
    zero_mean: bool = False

    def __post_init__(self):
        if self.s is None:
            object.__setattr__(self, "s", self.d / 2 + 1.6)
        if not self.s > self.d / 2 + 1.5:
            raise ValueError("s must exceed d/2 + 3/2")
        if self.mode not in ("scatter", "scatter_refined", "dirichlet", "zero_scatter", "zero_dirichlet"):
            raise ValueError(f"unknown mode {self.mode!r}")
        want = "zero" if self.mode.startswith("zero") else "infinity"
        if self.orientation != want:
            object.__setattr__(self, "orientation", want)

    @property
    def frame(self):
        return ConformalFrame(self.d, self.orientation, self.r0)

    @property
    def grid(self):
        return TimeGrid.span(self.frame.t0, self.span, self.dt)

    @property
    def window(self):
        """Radius window of the decay fit (orientation dependent by default)."""
        if self.fit_window is not None:
            return tuple(self.fit_window)
        return (2.0, 100.0) if self.orientation == "infinity" else (1e-6, 0.1)

    def basis(self):
        return SphereBasis(self.d, self.lmax, self.oversample)


@dataclass
class SolveReport:
    increments: list = field(default_factory=list)
    ratios: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    final_residual: float = float("nan")
    slope: float = float("nan")
    intercept: float = float("nan")
    fit_residual: float = float("nan")
    predicted_nu: Optional[float] = None
    predicted_nu_structured: Optional[float] = None
    tail: dict = field(default_factory=dict)
    escalations: int = 0
    t0: float = 0.0
    max_abs_u: float = 0.0
    first_iterate_rate: Optional[float] = None
    refined_slope: Optional[float] = None


@dataclass(eq=False)
class Solution:
    trajectory: Trajectory
    linear: Trajectory
    duhamel: Trajectory
    frame: ConformalFrame
    config: SolveConfig
    report: SolveReport
    first_iterate: Optional[Trajectory] = None
    v_plus: Optional[SpectralField] = None
    t_data: float = 0.0

    @property
    def scattering_error(self):
        """``v`` minus the linear flow it scatters to.

        For Dirichlet solves this is ``v - S(t) v_plus``; otherwise it is the
        Duhamel part ``v - v_L``.
        """
        if self.v_plus is None:
            return self.duhamel
        return self.trajectory - linear_trajectory(self.v_plus, self.trajectory.grid)

    def decay_samples(self, part=None):
        """``(r, ||.||_Z)`` samples of ``part`` (default: the scattering error)."""
        T = self.scattering_error if part is None else part
        return decay_samples(T, self.config.s, self.frame, self.t_data)


def eval_g(T, spec, frame, threads=1, return_max_u=False):
    """Cylinder forcing ``g`` for the trajectory ``T`` (which needs ``phi``).

    Per node the pair ``(v, dv/dt)`` is synthesised, turned into physical
    ``u`` and ``grad u``, passed to ``f``, rescaled by ``e^{+-(d+2)t/2}`` and
    analysed back.  Nodes are processed in fixed-size chunks, so the result
    does not depend on ``threads``.
    """
    phi = T.require_phi()
    b = T.basis
    d = frame.d
    if d != b.d:
        raise ValueError("frame and basis dimensions differ")
    n, N, nm = T.v.shape
    ts = T.times
    out = np.empty_like(T.v)
    maxu = np.zeros(max(1, -(-n // NODE_CHUNK)))
    A = b.analysis_matrix

    def work(ci):
        sl = slice(ci * NODE_CHUNK, min(n, (ci + 1) * NODE_CHUNK))
        u, grad = physical_fields(T.v[sl], phi[sl], ts[sl], frame, b)
        m = u.shape[0]
        P = b.npts
        maxu[ci] = float(np.max(np.abs(u))) if u.size else 0.0
        if spec.chart_radius is not None:
            rad = np.sqrt(np.sum(u**2, axis=1)).max() if u.size else 0.0
            if rad > spec.chart_radius:
                raise ChartError(
                    f"iterate leaves the chart: |u| = {rad:.4g} > {spec.chart_radius}"
                )
        uf = u.transpose(1, 0, 2).reshape(N, m * P)
        gf = grad.transpose(1, 2, 0, 3).reshape(N, d, m * P)
        with np.errstate(over="ignore", invalid="ignore"):
            f = np.asarray(spec(uf, gf), dtype=float).reshape(N, m, P).transpose(1, 0, 2)
            scale = np.exp(frame.sign * 0.5 * (d + 2) * ts[sl])[:, None, None]
            out[sl] = (scale * f) @ A

    chunks = range(len(maxu))
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            list(ex.map(work, chunks))
    else:
        for ci in chunks:
            work(ci)
    if not np.all(np.isfinite(out)):
        if spec.chart_radius is not None:
            raise ChartError("nonlinearity produced non-finite values")
        raise NonContractionError("nonlinearity overflowed: iterates diverge; raise t0 or shrink the data")
    G = Trajectory(T.grid, b, out)
    if return_max_u:
        return G, float(maxu.max())
    return G


def decay_samples(T, s, frame, t_data=0.0):
    """Radii and ``||T(t)||_{Y_{s, t - t_data}}`` for every node.

    With ``t_data = 0`` this equals ``||w(r .)||_{Z_{s,r}}`` for the physical
    field ``w`` at radius ``r = e^{+-t}``.
    """
    ts = T.times
    tau = np.maximum(ts - t_data, 0.0)
    vals = np.exp(log_y_norms(T.v, T.basis, s, tau))
    return frame.radius(ts), vals


def _picard(vL, spec, cfg, frame, dirichlet, report, keep_first=False):
    s = cfg.s
    t0 = vL.grid.t0
    w = Trajectory.zeros(vL.grid, vL.basis, vL.ncomp)
    first = None
    u_plus = None
    prev = None
    bad = 0
    diag = None
    for it in range(cfg.max_iter):
        G, mu = eval_g(w + vL, spec, frame, threads=cfg.threads, return_max_u=True)
        report.max_abs_u = mu
        if dirichlet:
            new, u_plus, diag = phi_dirichlet(G, noise_rel=cfg.noise_rel, return_diagnostics=True)
        else:
            new, diag = phi_detailed(G, noise_rel=cfg.noise_rel)
        if keep_first and it == 0:
            first = new
        inc = traj_norm(new - w, s, t0, t0)
        report.increments.append(inc)
        if prev is not None and prev > 0:
            ratio = inc / prev
            report.ratios.append(ratio)
            bad = bad + 1 if ratio >= 1 else 0
            if bad >= 3:
                raise NonContractionError(
                    f"increments grew for 3 consecutive iterations (last ratio {ratio:.3g}); raise t0"
                )
        prev = inc
        w = new
        report.iterations = it + 1
        if inc < cfg.eps_fp:
            report.converged = True
            break
    report.final_residual = report.increments[-1] if report.increments else 0.0
    if diag is not None:
        report.tail = {
            "noise_modes": diag.noise_modes,
            "dropped_tails": diag.dropped_tails,
            "tail_error_estimate": diag.tail_error_estimate,
        }
    return w, first, u_plus


def _predicted(spec, d, report):
    if spec.monomials:
        report.predicted_nu = nu_exponent(spec, d)
        if spec.scalar_product_structure or spec.bracket_structure_2d:
            report.predicted_nu_structured = nu_exponent_structured(spec, d)


def _fit_into(report, sol, window):
    r, vals = sol.decay_samples()
    lo, hi = window
    sel = (r >= min(lo, hi)) & (r <= max(lo, hi)) & (vals > 0)
    if sel.sum() >= 2:
        fit = fit_rate(r[sel], vals[sel])
        report.slope, report.intercept, report.fit_residual = fit.slope, fit.intercept, fit.residual


def _as_field(u0, basis):
    if u0.basis.same_as(basis):
        return u0
    raise ValueError("data basis does not match the solver configuration")


def _run(u0, spec, cfg, dirichlet, refined=False):
    basis = cfg.basis()
    u0 = _as_field(u0, basis)
    if u0.ncomp != spec.ncomp:
        raise ValueError("data and nonlinearity have different component counts")
    if cfg.zero_mean or (cfg.orientation == "zero" and not spec.metadata_complete):
        if np.any(u0.coeffs[:, basis.ell == 0] != 0):
            raise ValueError("data must have zero mean (no l = 0 component)")
    frame = cfg.frame
    t_data = frame.t0 if cfg.t_data is None else cfg.t_data
    escalations = 0
    t_start = frame.t0
    while True:
        report = SolveReport()
        _predicted(spec, cfg.d, report)
        grid = TimeGrid.span(t_start, cfg.span, cfg.dt)
        run_frame = replace(frame, r0=float(np.exp(frame.sign * t_start)))
        anchor = t_start if dirichlet else t_data
        vL = linear_trajectory(u0, grid, anchor)
        try:
            w, first, u_plus = _picard(vL, spec, cfg, run_frame, dirichlet, report, keep_first=refined)
        except NonContractionError:
            if dirichlet or escalations >= cfg.max_escalations:
                raise
            escalations += 1
            t_start = max(2.0 * t_start, t_start + 1.0)
            continue
        break
    report.escalations = escalations
    report.t0 = t_start
    sol = Solution(
        trajectory=w + vL,
        linear=vL,
        duhamel=w,
        frame=run_frame,
        config=cfg,
        report=report,
        first_iterate=first,
        t_data=0.0,
    )
    if dirichlet:
        sol.v_plus = u0 + u_plus
    _fit_into(report, sol, cfg.window)
    return sol


def solve_scatter(u0, spec, config):
    """Solution scattering to the linear flow of ``u0`` as ``t -> inf``."""
    cfg = replace(config, mode="scatter") if config.mode not in ("scatter", "scatter_refined") else config
    return _run(u0, spec, cfg, dirichlet=False, refined=cfg.mode == "scatter_refined")


def solve_scatter_refined(u0, spec, config, nu_check=None):
    """Scattering solve that also returns the first iterate ``Psi(0)``.

    The iteration ``w -> Psi(Psi(0) + w) - Psi(0)`` started at zero produces
    the same sequence as the plain Picard iteration shifted by ``Psi(0)``,
    so the plain iterates are used and ``Psi(0)`` is recorded.  The report
    holds the fitted decay rate of ``Psi(0)`` and the slope of
    ``v - v_L - Psi(0)``.
    """
    cfg = replace(config, mode="scatter_refined")
    sol = _run(u0, spec, cfg, dirichlet=False, refined=True)
    P0 = sol.first_iterate
    r, vals = decay_samples(P0, cfg.s, sol.frame)
    lo, hi = cfg.window
    sel = (r >= lo) & (r <= hi) & (vals > 0)
    if sel.sum() >= 2:
        sol.report.first_iterate_rate = fit_rate(r[sel], vals[sel]).slope
        if nu_check is not None and sol.report.first_iterate_rate > -nu_check * 0.5:
            raise RuntimeError(
                f"first iterate decays at r^{sol.report.first_iterate_rate:.3g}, "
                f"slower than the required rate {nu_check}"
            )
    rest = sol.duhamel - P0
    r, vals = decay_samples(rest, cfg.s, sol.frame)
    sel = (r >= lo) & (r <= hi) & (vals > 0)
    if sel.sum() >= 2:
        sol.report.refined_slope = fit_rate(r[sel], vals[sel]).slope
    return sol


def solve_dirichlet(u0, spec, config):
    """Solution with trace ``u0`` at ``r = r0`` (cylinder datum at ``t0``).

    ``Solution.v_plus`` is the trace at ``t0`` of the linear solution the
    result scatters to.
    """
    cfg = replace(config, mode="dirichlet") if config.orientation == "infinity" else replace(config, mode="zero_dirichlet")
    return _run(u0, spec, cfg, dirichlet=True)


def solve_zero(u0, spec, config, dirichlet=False):
    """Interior solution on ``B(0, r0) \\ {0}`` asymptotic to ``u_L`` at 0."""
    if spec.monomials and spec.metadata_complete and not (
        spec.scalar_product_structure or spec.bracket_structure_2d
    ):
        for m in spec.monomials:
            if m.a != 0 and (m.deg_q > 0 or m.deg_p < 2):
                raise ValueError("zero orientation needs q = 0 and |p| >= 2")
    mode = "zero_dirichlet" if dirichlet else "zero_scatter"
    cfg = replace(config, mode=mode, orientation="zero")
    return _run(u0, spec, cfg, dirichlet=dirichlet)


@dataclass
class RadialProfile:
    """Radial solution of ``u'' + (d-1)/r u' = kappa u^p`` on ``[r_min, r_max]``."""

    d: int
    p: int
    kappa: float
    c: float
    r_min: float
    r_max: float
    sol: object

    def __call__(self, r):
        return self.sol.sol(np.asarray(r, dtype=float))[0]

    def derivative(self, r):
        return self.sol.sol(np.asarray(r, dtype=float))[1]

    def linear(self, r):
        return self.c * np.asarray(r, dtype=float) ** (2.0 - self.d)


def _asymptotic_state(d, p, kappa, c, R):
    m = p * (d - 2)
    u = c * R ** (2.0 - d)
    du = (2.0 - d) * c * R ** (1.0 - d)
    if kappa != 0 and m != 2 and m != d:
        A = kappa * c**p / ((2.0 - m) * (d - m))
        u += A * R ** (2.0 - m)
        du += A * (2.0 - m) * R ** (1.0 - m)
    return np.array([u, du])


def radial_ode_oracle(d, p, kappa, boundary_value, r_min=1.0, r_max=1e4, rtol=1e-13, atol=1e-300):
    """Decaying radial solution with ``u(r_min) = boundary_value``.

    The ODE is integrated inward from ``r_max`` with the asymptotic state
    ``c r^{2-d}`` plus its first nonlinear correction, and ``c`` is found by
    root bracketing on the boundary value.
    """
    if d < 3:
        raise ValueError("radial oracle needs d >= 3")

    def rhs(r, y):
        return [y[1], kappa * y[0] ** p - (d - 1) / r * y[1]]

    def blowup(r, y):
        return 1e6 - abs(y[0])

    blowup.terminal = True

    def shoot(c, dense=False):
        res = solve_ivp(
            rhs, (r_max, r_min), _asymptotic_state(d, p, kappa, c, r_max),
            method="DOP853", rtol=rtol, atol=atol, events=blowup, dense_output=dense,
        )
        if res.status == 1:
            raise RuntimeError("radial profile blows up")
        return res

    def miss(c):
        return shoot(c).y[0, -1] - boundary_value

    c_lin = boundary_value * r_min ** (d - 2.0)
    if kappa == 0 or boundary_value == 0:
        c = c_lin
    else:
        lo, hi = 0.5 * c_lin, 2.0 * c_lin
        f_lo, f_hi = miss(lo), miss(hi)
        k = 0
        while f_lo * f_hi > 0 and k < 40:
            lo, hi = 0.5 * lo, 2.0 * hi
            f_lo, f_hi = miss(lo), miss(hi)
            k += 1
        if f_lo * f_hi > 0:
            raise RuntimeError("could not bracket the asymptotic coefficient")
        c = brentq(miss, lo, hi, xtol=1e-16 * abs(c_lin), rtol=1e-15, maxiter=200)
    res = shoot(c, dense=True)
    return RadialProfile(d, p, kappa, float(c), r_min, r_max, res)
