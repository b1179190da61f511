"""Mode-wise Duhamel operators on the half cylinder ``[t0, inf) x S^{d-1}``.

For a mode with eigenvalue ``lam`` the bounded solution of
``v'' - lam^2 v = F`` that vanishes at ``+inf`` is

    v(t)   = int_t^inf sinh(lam (tau - t)) / lam * F(tau) dtau = (B - A) / (2 lam)
    phi(t) = -int_t^inf cosh(lam (tau - t)) F(tau) dtau        = -(A + B) / 2

with ``A(t) = int_t^inf e^{-lam (tau - t)} F`` and
``B(t) = int_t^inf e^{lam (tau - t)} F``.  Both are accumulated backward
from the last node with closed-form per-interval weights, so no growing
integrand is ever sampled.  On each interval ``F`` is replaced by the
exponential through its two end values when they share a sign, and by the
linear interpolant otherwise.  The exponential choice is exact for
exponentially decaying forcing and second order in general.

Rounding noise in weak high modes is amplified by ``e^{lam tau}``.  Each mode
is therefore trusted only up to the last node where it stands above a
relative noise floor; beyond that node it is continued by an exponential
fitted to the trusted data.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .sphere import SpectralField
from .conformal import linear_trajectory
from .norms import log_y_norms
from .trajectory import TimeGrid, Trajectory

__all__ = [
    "TimeGrid",
    "Trajectory",
    "TailError",
    "TailDiagnostics",
    "phi",
    "phi_detailed",
    "phi_dirichlet",
    "ode_residual",
    "linear_weights",
]


class TailError(RuntimeError):
    """Raised when a mode's forcing cannot be closed by a decaying tail."""

    def __init__(self, message, mode=None):
        super().__init__(message)
        self.mode = mode


@dataclass
class TailDiagnostics:
    """Per-call record of the tail closure."""

    fitted_rates: dict = field(default_factory=dict)
    horizons: dict = field(default_factory=dict)
    noise_modes: int = 0
    dropped_tails: int = 0
    tail_error_estimate: float = 0.0


def _phi1(z):
    """``(e^z - 1)/z`` with the removable singularity filled in."""
    z = np.asarray(z, dtype=float)
    out = np.ones_like(z)
    nz = np.abs(z) > 1e-8
    out[nz] = np.expm1(z[nz]) / z[nz]
    out[~nz] = 1.0 + 0.5 * z[~nz]
    return out


def linear_weights(z):
    """Weights ``(w0, w1)`` with ``int_0^1 e^{z s} ((1-s) a + s b) ds = w0 a + w1 b``.

    ``w0 = (e^z - 1 - z)/z^2`` and ``w1 = (e^z (z - 1) + 1)/z^2``; a Taylor
    series is used for ``|z| < 0.5``.
    """
    z = np.asarray(z, dtype=float)
    w0 = np.empty_like(z)
    w1 = np.empty_like(z)
    small = np.abs(z) < 0.5
    zs = z[small]
    a0 = np.zeros_like(zs)
    a1 = np.zeros_like(zs)
    fact = 2.0
    zp = np.ones_like(zs)
    for n in range(18):
        a0 += zp / fact
        a1 += (n + 1) * zp / fact
        zp = zp * zs
        fact *= n + 3
    w0[small], w1[small] = a0, a1
    zl = z[~small]
    ez = np.exp(zl)
    w0[~small] = (ez - 1.0 - zl) / zl**2
    w1[~small] = (ez * (zl - 1.0) + 1.0) / zl**2
    return w0, w1


def _same_sign(a, b):
    """Strictly same sign, immune to underflow of ``a * b``."""
    sa, sb = np.sign(a), np.sign(b)
    return (sa == sb) & (sa != 0)


def _mode_label(basis, col):
    comp, k = divmod(col, basis.nmodes)
    ell, m = basis.modes[k]
    return f"component {comp}, mode (l={ell}, m={m})"


def _prepare_columns(F2, lam, h, basis, noise_rel, stride, diag):
    """Replace untrusted stretches by fitted exponential tails.

    Returns the cleaned forcing and the end-of-grid decay rate per column.
    """
    n, M = F2.shape
    Fe = F2.copy()
    kappa_end = np.zeros(M)
    absF = np.abs(F2)
    floor = noise_rel * absF.max(axis=1)
    trusted = absF > floor[:, None]
    any_trusted = trusted.any(axis=0)
    last = np.where(any_trusted, n - 1 - np.argmax(trusted[::-1], axis=0), -1)
    t_rel = h * np.arange(n)
    for j in range(M):
        K = int(last[j])
        if K < 1:
            if K == 0 or any_trusted[j]:
                diag.noise_modes += 1
            Fe[:, j] = 0.0
            continue
        if K == n - 1:
            f1, f2 = F2[n - 2, j], F2[n - 1, j]
            if not _same_sign(f1, f2):
                raise TailError(
                    f"forcing changes sign in the last interval for {_mode_label(basis, j)}",
                    mode=j,
                )
            kap = np.log(f1 / f2) / h
            if kap <= lam[j]:
                raise TailError(
                    f"non-integrable tail: fitted decay {kap:.6g} <= {lam[j]:.6g} "
                    f"for {_mode_label(basis, j)}",
                    mode=j,
                )
            kappa_end[j] = kap
            diag.fitted_rates[j] = float(kap)
            if n >= 3 and _same_sign(F2[n - 3, j], f1):
                kap2 = np.log(F2[n - 3, j] / f1) / h
                err = abs(f2) * abs(kap - kap2) / (kap - lam[j]) ** 2
                diag.tail_error_estimate = max(diag.tail_error_estimate, float(err))
            continue
        m = min(stride, K)
        f1, f2 = F2[K - m, j], F2[K, j]
        diag.horizons[j] = K
        if not _same_sign(f1, f2):
            diag.dropped_tails += 1
            Fe[K + 1 :, j] = 0.0
            continue
        kap = np.log(f1 / f2) / (m * h)
        if kap <= lam[j]:
            diag.dropped_tails += 1
            Fe[K + 1 :, j] = 0.0
            continue
        Fe[K + 1 :, j] = f2 * np.exp(-kap * (t_rel[K + 1 :] - t_rel[K]))
        kappa_end[j] = kap
        diag.fitted_rates[j] = float(kap)
    return Fe, kappa_end


def _local_integrals(Fe, mu, h):
    """``int_0^h e^{mu s} F(t_k + s) ds`` for every interval and column."""
    fa, fb = Fe[:-1], Fe[1:]
    same = _same_sign(fa, fb)
    out = np.empty_like(fa)
    mu = np.asarray(mu, dtype=float)
    mu_b = np.broadcast_to(mu, fa.shape)
    w0, w1 = linear_weights(mu * h)
    out[:] = h * (w0 * fa + w1 * fb)
    if np.any(same):
        with np.errstate(divide="ignore", invalid="ignore"):
            rho = np.log(fa[same] / fb[same]) / h
        out[same] = h * fa[same] * _phi1((mu_b[same] - rho) * h)
    return out


def _local_moment(Fe, h):
    """``int_0^h s F(t_k + s) ds`` (used by the ``lam = 0`` kernel)."""
    fa, fb = Fe[:-1], Fe[1:]
    same = _same_sign(fa, fb)
    out = h * h * (fa / 6.0 + fb / 3.0)
    if np.any(same):
        rho = np.log(fa[same] / fb[same]) / h
        _, w1 = linear_weights(-rho * h)
        out[same] = h * h * fa[same] * w1
    return out


def _backward_recurrence(a, last, incr):
    """Solve ``y[k] = a * y[k+1] + incr[k]`` backward from ``y[n-1] = last``.

    Columns sharing a factor ``a`` are filtered together.
    """
    out = np.empty_like(incr)
    for val in np.unique(a):
        cols = np.nonzero(a == val)[0]
        x = incr[::-1, cols]
        zi = (val * last[cols])[None, :]
        y, _ = lfilter([1.0], [1.0, -val], x, axis=0, zi=zi)
        out[:, cols] = y[::-1]
    return out


def phi_detailed(F, noise_rel=1e-12, stride=5):
    """Duhamel operator with tail diagnostics.

    Parameters
    ----------
    F : Trajectory
        Forcing; only the ``v`` slot is used.
    noise_rel : float
        Relative noise floor used to find each mode's trusted horizon.
    stride : int
        Node separation of the two-point fit beyond a noise horizon.

    Returns
    -------
    Trajectory, TailDiagnostics
    """
    basis = F.basis
    n, N, nm = F.v.shape
    h = F.grid.dt
    F2 = F.v.reshape(n, N * nm)
    lam = np.tile(basis.lam, N)
    diag = TailDiagnostics()
    Fe, kap = _prepare_columns(F2, lam, h, basis, noise_rel, stride, diag)

    v = np.zeros_like(Fe)
    ph = np.zeros_like(Fe)
    pos = lam > 0
    zero = ~pos
    if np.any(pos):
        lp = lam[pos]
        Fp = Fe[:, pos]
        kp = kap[pos]
        Im = _local_integrals(Fp, -lp, h)
        Ip = _local_integrals(Fp, lp, h)
        A = np.empty_like(Fp)
        B = np.empty_like(Fp)
        live = kp > 0
        A[-1] = np.where(live, Fp[-1] / np.where(live, kp + lp, 1.0), 0.0)
        B[-1] = np.where(live, Fp[-1] / np.where(live, kp - lp, 1.0), 0.0)
        A[:-1] = _backward_recurrence(np.exp(-lp * h), A[-1], Im)
        B[:-1] = _backward_recurrence(np.exp(lp * h), B[-1], Ip)
        v[:, pos] = (B - A) / (2.0 * lp)
        ph[:, pos] = -0.5 * (A + B)
    if np.any(zero):
        Fz = Fe[:, zero]
        kz = kap[zero]
        I0 = _local_integrals(Fz, np.zeros(Fz.shape[1]), h)
        I1 = _local_moment(Fz, h)
        live = kz > 0
        C0 = np.empty_like(Fz)
        C1 = np.empty_like(Fz)
        safe = np.where(live, kz, 1.0)
        C0[-1] = np.where(live, Fz[-1] / safe, 0.0)
        C1[-1] = np.where(live, Fz[-1] / safe**2, 0.0)
        for k in range(n - 2, -1, -1):
            C1[k] = C1[k + 1] + h * C0[k + 1] + I1[k]
            C0[k] = C0[k + 1] + I0[k]
        v[:, zero] = C1
        ph[:, zero] = -C0
    out = Trajectory(F.grid, basis, v.reshape(n, N, nm), ph.reshape(n, N, nm))
    return out, diag


def phi(F, noise_rel=1e-12, stride=5):
    """Duhamel operator: the decaying solution of ``v'' - D^2 v = F``."""
    return phi_detailed(F, noise_rel=noise_rel, stride=stride)[0]


def phi_dirichlet(F, noise_rel=1e-12, stride=5, return_diagnostics=False):
    """Dirichlet Duhamel operator, vanishing at the first node.

    Returns
    -------
    Trajectory
        ``Phi(F) + S(t - t0)(u_plus, -D u_plus)``.
    SpectralField
        ``u_plus = -Phi(F)(t0)``.
    """
    T, diag = phi_detailed(F, noise_rel=noise_rel, stride=stride)
    u_plus = SpectralField(F.basis, -T.v[0])
    out = T + linear_trajectory(u_plus, F.grid)
    if return_diagnostics:
        return out, u_plus, diag
    return out, u_plus


def ode_residual(T, F, s=1.0):
    """Normalised residual of ``v'' - D^2 v = F`` at interior nodes.

    The centered second difference of ``v`` is compared with
    ``D^2 v + F`` in ``H^{s-1}``; the maximum over nodes is divided by the
    largest ``H^{s-1}`` norm of ``F`` (or of ``D^2 v`` when ``F`` vanishes).
    """
    n = T.grid.n
    if n < 3:
        raise ValueError("need at least three nodes")
    h = T.grid.dt
    lam2 = T.basis.lam**2
    v = T.v
    dtt = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / h**2
    res = dtt - lam2 * v[1:-1] - F.v[1:-1]
    r = np.exp(log_y_norms(res, T.basis, s - 1, 0.0)).max()
    scale = np.exp(log_y_norms(F.v[1:-1], T.basis, s - 1, 0.0)).max()
    if scale == 0:
        scale = np.exp(log_y_norms(lam2 * v[1:-1], T.basis, s - 1, 0.0)).max()
    if scale == 0:
        return float(r)
    return float(r / scale)
