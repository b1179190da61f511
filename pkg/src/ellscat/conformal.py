"""Change of variables between physical functions and cylinder trajectories.

Near infinity ``v(t, y) = e^{(d-2)t/2} u(e^t y)`` and near the origin
``v(t, y) = e^{-(d-2)t/2} u(e^{-t} y)``.  In both cases harmonic functions
that decay (resp. stay bounded) become ``e^{-t D}`` applied to their trace.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .sphere import GridField, SpectralField
from .trajectory import TimeGrid, Trajectory

__all__ = [
    "ConformalFrame",
    "LinearData",
    "PhysicalSampler",
    "linear_flow",
    "linear_trajectory",
    "to_cylinder",
    "from_cylinder",
    "gradient_on_grid",
    "reconstruct_gradient",
    "harmonic_extension",
    "invert_2d",
]


@dataclass(frozen=True)
class ConformalFrame:
    """Orientation and anchor radius of the cylinder coordinates.

    ``t0`` is ``log r0`` near infinity and ``-log r0`` near zero, so that the
    cylinder half line ``t >= t0`` covers ``|x| >= r0`` (resp. ``|x| <= r0``).
    """

    d: int
    orientation: str = "infinity"
    r0: float = 1.0

    def __post_init__(self):
        if self.orientation not in ("infinity", "zero"):
            raise ValueError("orientation must be 'infinity' or 'zero'")
        if not self.r0 > 0:
            raise ValueError("r0 must be positive")

    @property
    def sign(self):
        return 1.0 if self.orientation == "infinity" else -1.0

    @property
    def t0(self):
        return self.sign * float(np.log(self.r0))

    def radius(self, t):
        return np.exp(self.sign * np.asarray(t, dtype=float))

    def time(self, r):
        return self.sign * np.log(np.asarray(r, dtype=float))

    def in_domain(self, r):
        r = np.asarray(r, dtype=float)
        tol = 1e-12 * self.r0
        if self.orientation == "infinity":
            return r >= self.r0 - tol
        return (r <= self.r0 + tol) & (r > 0)


@dataclass(frozen=True, eq=False)
class LinearData:
    """Decaying linear solution ``v_L(t) = e^{-(t - t_data) D} u0``."""

    u0: SpectralField
    t_data: float = 0.0

    def trajectory(self, grid):
        return linear_trajectory(self.u0, grid, self.t_data)


@dataclass(frozen=True)
class PhysicalSampler:
    """A physical field given by callables on points ``x`` of shape ``(npts, d)``.

    ``value`` returns ``(ncomp, npts)``; ``gradient`` (optional) returns
    ``(ncomp, d, npts)``.
    """

    value: Callable
    gradient: Optional[Callable] = None
    ncomp: int = 1

    def __call__(self, x):
        return self.value(x)


def linear_flow(u0, t, t0):
    """``S(t - t0)(u0, -D u0) = (e^{-(t-t0) D} u0, -D e^{-(t-t0) D} u0)``."""
    if t < t0:
        raise ValueError("linear flow is only defined for t >= t0")
    b = u0.basis
    decay = np.exp(-(t - t0) * b.lam)
    v = u0.coeffs * decay
    return SpectralField(b, v), SpectralField(b, -v * b.lam)


def linear_trajectory(u0, grid, t_data=None):
    """Linear flow sampled on every node of ``grid``."""
    b = u0.basis
    t_data = grid.t0 if t_data is None else t_data
    decay = np.exp(-np.outer(grid.nodes - t_data, b.lam))
    v = decay[:, None, :] * u0.coeffs[None]
    return Trajectory(grid, b, v, -v * b.lam)


def to_cylinder(u, frame, grid, basis, dt_fd=1e-4):
    """Sample a physical field on the cylinder nodes and analyse it.

    The derivative slot uses ``u.gradient`` when available and a fourth
    order centered difference in ``t`` otherwise.
    """
    d = frame.d
    y = basis.points
    sgn = frame.sign
    ts = grid.nodes
    r = frame.radius(ts)
    if not np.all(frame.in_domain(r)):
        raise ValueError("grid leaves the sampler's domain")
    ncomp = u.ncomp
    v = np.empty((grid.n, ncomp, basis.nmodes))
    ph = np.empty_like(v)
    A = basis.analysis_matrix

    def vals(t):
        rr = np.exp(sgn * t)
        return np.exp(sgn * 0.5 * (d - 2) * t) * np.atleast_2d(u.value(rr * y))

    for k, t in enumerate(ts):
        rr = r[k]
        val = np.atleast_2d(u.value(rr * y))
        scale = np.exp(sgn * 0.5 * (d - 2) * t)
        v[k] = (scale * val) @ A
        if u.gradient is not None:
            g = np.asarray(u.gradient(rr * y)).reshape(ncomp, d, -1)
            radial = rr * np.einsum("cip,pi->cp", g, y)
            dv = sgn * scale * (0.5 * (d - 2) * val + radial)
        else:
            h = dt_fd
            dv = (8 * (vals(t + h) - vals(t - h)) - (vals(t + 2 * h) - vals(t - 2 * h))) / (12 * h)
        ph[k] = dv @ A
    return Trajectory(grid, basis, v, ph)


def gradient_on_grid(v, dv, t, frame, basis):
    """Physical ``u`` and Cartesian ``grad u`` on the sphere ``|x| = e^{+-t}``.

    Parameters
    ----------
    v, dv : ndarray, shape (ncomp, nmodes)
        Coefficients of ``v`` and ``dv/dt`` at time ``t``.

    Returns
    -------
    u : ndarray, shape (ncomp, npts)
    grad : ndarray, shape (ncomp, d, npts)
    """
    u, g = physical_fields(v[None], dv[None], np.atleast_1d(t), frame, basis)
    return u[0], g[0]


def reconstruct_gradient(T, k, frame):
    """``grad u`` on the collocation grid at node ``k`` as a GridField.

    The returned values are ordered ``(component, axis)`` along the first
    axis, i.e. shape ``(ncomp * d, npts)``.
    """
    if T.phi is None:
        raise ValueError("trajectory has no derivative slot")
    b = T.basis
    _, grad = physical_fields(T.v[k : k + 1], T.phi[k : k + 1], T.times[k : k + 1], frame, b)
    return GridField(b, grad[0].reshape(-1, b.npts))


def physical_fields(v, dv, ts, frame, basis):
    """Physical ``u`` and ``grad u`` on the grid for a stack of nodes.

    Parameters
    ----------
    v, dv : ndarray, shape (n, ncomp, nmodes)
    ts : ndarray, shape (n,)

    Returns
    -------
    u : ndarray, shape (n, ncomp, npts)
    grad : ndarray, shape (n, ncomp, d, npts)
    """
    d = frame.d
    sgn = frame.sign
    ts = np.asarray(ts, dtype=float)
    S = basis.synthesis_matrix
    G = basis.gradient_matrix
    y = basis.points.T
    vg = v @ S
    dvg = dv @ S
    zg = np.einsum("ncm,imp->ncip", v, G)
    su = np.exp(-sgn * 0.5 * (d - 2) * ts)[:, None, None]
    sg = np.exp(-sgn * 0.5 * d * ts)[:, None, None, None]
    radial = -0.5 * (d - 2) * vg + sgn * dvg
    grad = sg * (radial[:, :, None, :] * y[None, None] + zg)
    return su * vg, grad


def from_cylinder(T, frame):
    """Physical sampler of the field encoded by a trajectory.

    Values between nodes use cubic Hermite interpolation in ``t`` built from
    the ``(v, phi)`` pair, so the sampler reproduces the trajectory exactly
    at the nodes.
    """
    if T.phi is None:
        raise ValueError("trajectory has no derivative slot")
    b = T.basis
    d = frame.d
    sgn = frame.sign
    ts = T.times
    n, N, nm = T.v.shape
    spline = CubicHermiteSpline(ts, T.v.reshape(n, -1), T.phi.reshape(n, -1), axis=0)
    dspline = spline.derivative()
    t_lo, t_hi = ts[0], ts[-1]

    def _coeffs(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        r = np.linalg.norm(x, axis=1)
        t = frame.time(r)
        if np.any(t < t_lo - 1e-9) or np.any(t > t_hi + 1e-9):
            raise ValueError("point outside the trajectory's annulus")
        t = np.clip(t, t_lo, t_hi)
        y = x / r[:, None]
        c = spline(t).reshape(-1, N, nm)
        dc = dspline(t).reshape(-1, N, nm)
        return t, y, c, dc

    def value(x):
        t, y, c, _ = _coeffs(x)
        vals = np.einsum("pcm,mp->cp", c, _basis_vals(b, y))
        return np.exp(-sgn * 0.5 * (d - 2) * t)[None, :] * vals

    def gradient(x):
        t, y, c, dc = _coeffs(x)
        B = _basis_vals(b, y)
        vg = np.einsum("pcm,mp->cp", c, B)
        dvg = np.einsum("pcm,mp->cp", dc, B)
        zg = np.stack([np.einsum("pcm,mp->cp", c, Gi) for Gi in _basis_grads(b, y)], axis=1)
        radial = -0.5 * (d - 2) * vg + sgn * dvg
        grad = radial[:, None, :] * y.T[None] + zg
        return np.exp(-sgn * 0.5 * d * t)[None, None, :] * grad

    return PhysicalSampler(value=value, gradient=gradient, ncomp=N)


def _basis_vals(b, y):
    eye = np.eye(b.nmodes)
    return b.evaluate(eye, y)


def _basis_grads(b, y):
    eye = np.eye(b.nmodes)
    g = b.evaluate_gradient(eye, y)
    return [g[:, i, :] for i in range(b.d)]


def harmonic_extension(u0, frame, r):
    """Coefficients of the harmonic function with trace ``u0`` on ``|x| = r0``.

    Exterior (decaying) branch: ``(r/r0)^{-(l + d - 2)}``; interior branch:
    ``(r/r0)^l``.
    """
    b = u0.basis
    rho = r / frame.r0
    if frame.orientation == "infinity":
        if rho < 1 - 1e-12:
            raise ValueError("exterior extension needs r >= r0")
        fac = rho ** (-(b.ell + b.d - 2.0))
    else:
        if rho > 1 + 1e-12 or r <= 0:
            raise ValueError("interior extension needs 0 < r <= r0")
        fac = rho ** b.ell.astype(float)
    return SpectralField(b, u0.coeffs * fac)


def invert_2d(u):
    """Kelvin-type inversion ``x -> x/|x|^2`` of a planar sampler.

    In ``d = 2`` it exchanges the zero and infinity cylinder pictures.  The
    gradient is carried through the (symmetric) Jacobian of the inversion
    when ``u`` provides one.
    """

    def value(x):
        x = np.atleast_2d(x)
        r2 = np.sum(x * x, axis=1)[:, None]
        return u.value(x / r2)

    gradient = None
    if u.gradient is not None:

        def gradient(x):
            x = np.atleast_2d(x)
            r2 = np.sum(x * x, axis=1)
            g = np.asarray(u.gradient(x / r2[:, None])).reshape(u.ncomp, 2, -1)
            xg = np.einsum("cip,pi->cp", g, x)
            return (g - 2 * x.T[None] * xg[:, None] / r2) / r2

    return PhysicalSampler(value=value, gradient=gradient, ncomp=u.ncomp)
