"""Exponentially weighted Sobolev norms on the sphere and on trajectories.

All weighted sums are accumulated in the log domain, so that weights such
as ``exp((l + (d-2)/2) t)`` never overflow on their own.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp

__all__ = [
    "LogMagnitude",
    "NormSpec",
    "japanese",
    "log_y_norms",
    "y_norm",
    "hs_norm",
    "z_norm",
    "traj_profile",
    "traj_norm",
    "x_nu_norm",
    "XNuNorm",
    "enumerate_Jq",
    "h1_partial",
]


@dataclass(frozen=True)
class LogMagnitude:
    """Signed number stored as ``sign * exp(log_abs)``."""

    sign: float
    log_abs: float

    @classmethod
    def from_float(cls, x):
        if x == 0:
            return cls(0.0, -np.inf)
        return cls(float(np.sign(x)), float(np.log(abs(x))))

    def __add__(self, other):
        if self.sign == 0:
            return other
        if other.sign == 0:
            return self
        val, sgn = logsumexp([self.log_abs, other.log_abs], b=[self.sign, other.sign], return_sign=True)
        if sgn == 0:
            return LogMagnitude(0.0, -np.inf)
        return LogMagnitude(float(sgn), float(val))

    def __mul__(self, other):
        return LogMagnitude(self.sign * other.sign, self.log_abs + other.log_abs)

    def to_float(self):
        return self.sign * float(np.exp(self.log_abs))


@dataclass(frozen=True)
class NormSpec:
    """Parameters of a weighted norm evaluation."""

    s: float
    t: float = 0.0
    orientation: str = "infinity"
    t0: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.s):
            raise ValueError("s must be finite")
        if self.orientation not in ("infinity", "zero"):
            raise ValueError("orientation must be 'infinity' or 'zero'")
        if self.t0 < 0:
            raise ValueError("offset t0 must be nonnegative")


def japanese(x):
    """``<x> = sqrt(1 + x^2)``."""
    x = np.asarray(x, dtype=float)
    return np.sqrt(1.0 + x * x)


def log_y_norms(coeffs, basis, s, t):
    """Natural log of ``||.||_{Y_{s,t}}`` for a stack of coefficient arrays.

    Parameters
    ----------
    coeffs : ndarray, shape (..., ncomp, nmodes)
    basis : SphereBasis
    s : float
    t : float or ndarray broadcastable to ``coeffs.shape[:-2]``

    Returns
    -------
    ndarray of shape ``coeffs.shape[:-2]`` (``-inf`` for zero fields)
    """
    c = np.asarray(coeffs, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("Y_{s,t} norms need t >= 0")
    lw = s * np.log(japanese(basis.ell)) + basis.lam * t[..., None]
    with np.errstate(divide="ignore"):
        la = np.log(np.abs(c))
    terms = 2.0 * (la + lw[..., None, :])
    terms = terms.reshape(terms.shape[:-2] + (-1,))
    return 0.5 * logsumexp(terms, axis=-1)


def y_norm(v, s, t):
    """``||v||_{Y_{s,t}} = ||e^{t D} v||_{H^s}``."""
    return float(np.exp(log_y_norms(v.coeffs, v.basis, s, t)))


def hs_norm(v, s):
    """Sobolev norm with weights ``<l>^s``."""
    return y_norm(v, s, 0.0)


def z_norm(v, s, r, orientation="infinity"):
    """``r^{(d-2)/2} ||v||_{Y_{s, +-log r}}`` according to the orientation."""
    if r <= 0:
        raise ValueError("r must be positive")
    if orientation == "infinity":
        if r < 1:
            raise ValueError("infinity orientation needs r >= 1")
        t = np.log(r)
    elif orientation == "zero":
        if r > 1:
            raise ValueError("zero orientation needs r <= 1")
        t = -np.log(r)
    else:
        raise ValueError("orientation must be 'infinity' or 'zero'")
    d = v.basis.d
    return float(np.exp(0.5 * (d - 2) * np.log(r) + log_y_norms(v.coeffs, v.basis, s, t)))


def traj_profile(T, s, t0):
    """Per-node ``||v(tau)||_{Y_{s,tau-t0}} + ||phi(tau)||_{Y_{s-1,tau-t0}}``."""
    tau = T.times - t0
    if np.any(tau < -1e-12):
        raise ValueError("offset t0 lies after the first node")
    tau = np.maximum(tau, 0.0)
    out = np.exp(log_y_norms(T.v, T.basis, s, tau))
    if T.phi is not None:
        out = out + np.exp(log_y_norms(T.phi, T.basis, s - 1, tau))
    return out


def traj_norm(T, s, t, t0, return_argsup=False):
    """Discrete sup over nodes ``tau >= t`` of the trajectory profile."""
    k0 = int(np.searchsorted(T.times, t - 1e-12 * max(1.0, abs(t))))
    if k0 >= T.grid.n:
        raise ValueError("no nodes at or after t")
    prof = traj_profile(T, s, t0)[k0:]
    j = int(np.argmax(prof))
    if return_argsup:
        return float(prof[j]), k0 + j
    return float(prof[j])


class XNuNorm(NamedTuple):
    value: float
    unbounded: bool
    argsup: int


def x_nu_norm(T, s, nu, t0, t1):
    """``sup_{t >= t0} e^{nu (t - t1)} ||T||_{Y^{t1}_{s,t}}`` on the grid.

    ``unbounded`` is set when the weighted sup is attained at the last
    node, i.e. the trajectory does not decay at rate ``nu`` on the grid.
    """
    if nu <= 0:
        raise ValueError("nu must be positive")
    prof = traj_profile(T, s, t1)
    suffix = np.maximum.accumulate(prof[::-1])[::-1]
    k0 = int(np.searchsorted(T.times, t0 - 1e-12 * max(1.0, abs(t0))))
    w = np.exp(nu * (T.times[k0:] - t1)) * suffix[k0:]
    j = int(np.argmax(w))
    unbounded = j == w.size - 1 and w.size > 1 and w[-1] > w[-2]
    return XNuNorm(float(w[j]), bool(unbounded), k0 + j)


def enumerate_Jq(q, d):
    """Index tuples produced by expanding ``prod_{j,k} varpi_{jk}^{q_{jk}}``.

    Each factor ``-(d-2)/2 v_j y_k + w_j y_k + z_{jk}`` contributes either a
    ``v_j y_k``, a ``w_j y_k`` or a ``z_{jk}`` monomial.  Terms whose
    coefficient vanishes (the ``v`` term when ``d = 2``) are dropped.

    Returns
    -------
    set of tuples ``(alpha, iota, gamma, delta)`` with ``delta`` flattened.
    """
    q = np.asarray(q, dtype=int)
    N = q.shape[0]
    choices = ("v", "w", "z") if d != 2 else ("w", "z")
    per_entry = []
    for j in range(N):
        for k in range(d):
            n = int(q[j, k])
            opts = []
            for combo in itertools.combinations_with_replacement(choices, n):
                opts.append((j, k, combo.count("v"), combo.count("w"), combo.count("z")))
            per_entry.append(opts)
    out = set()
    for pick in itertools.product(*per_entry):
        alpha = [0] * d
        iota = [0] * N
        gamma = [0] * N
        delta = [0] * (N * d)
        for j, k, nv, nw, nz in pick:
            alpha[k] += nv + nw
            iota[j] += nv
            gamma[j] += nw
            delta[j * d + k] += nz
        out.add((tuple(alpha), tuple(iota), tuple(gamma), tuple(delta)))
    return out


def h1_partial(monomials, sigma, s, d):
    """Finite partial sum of the smallness series for a polynomial ``f``.

    Parameters
    ----------
    monomials : sequence of Monomial
        Records with fields ``i``, ``p`` (length-N exponents of ``u``),
        ``q`` (N x d exponents of ``grad u``) and ``a``.
    sigma : float
    s : float
    d : int
    """
    if not monomials:
        raise ValueError("monomial metadata is required")
    groups = {}
    for mono in monomials:
        p = np.asarray(mono.p, dtype=int)
        q = np.asarray(mono.q, dtype=int).reshape(p.size, d)
        key_pq = (tuple(p), tuple(q.ravel()))
        for alpha, iota, gamma, delta in enumerate_Jq(q, d):
            beta = tuple(int(x) for x in p + np.asarray(iota))
            theta = (alpha, beta, gamma, delta, iota)
            groups.setdefault(theta, {})
            prev = groups[theta].get(key_pq, 0.0)
            groups[theta][key_pq] = max(prev, abs(float(mono.a)))
    total = 0.0
    for (alpha, beta, gamma, delta, iota), by_pq in sorted(groups.items()):
        B = (d / 2 + 1) ** (sum(iota) + sum(gamma) + sum(delta)) * sum(by_pq.values())
        n = sum(beta) + sum(gamma) + sum(delta)
        if n == 0:
            continue
        total += B * japanese(sum(alpha)) ** (s + 1) * n * sigma ** (n - 1)
    return float(total)
