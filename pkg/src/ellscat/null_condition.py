"""Bilinear forms on the two-dimensional cylinder and the null-condition toolkit.

A form ``A(theta)`` acts on gradients ``(d_t u, d_theta u)``.  Characteristic
directions of the cylinder Laplacian are ``zeta(k) = (-|k|, i k)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .norms import japanese
from .rates import fit_rate

__all__ = [
    "BilinearFormField",
    "FLAT_LEFT",
    "FLAT_RIGHT",
    "zeta",
    "form_value",
    "flat_transform",
    "is_null",
    "null_decay_probe",
    "NullProbeResult",
    "fourier_coefficients",
]

FLAT_LEFT = np.array([[-1, 1j], [-1, -1j]])
FLAT_RIGHT = np.array([[-1, -1], [1j, -1j]])


@dataclass(frozen=True, eq=False)
class BilinearFormField:
    """2x2 complex matrix whose entries are Fourier series in ``theta``.

    ``coeffs[a, b, j]`` multiplies ``exp(i k theta)`` with ``k = j - kmax``.
    """

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.ndim != 3 or c.shape[:2] != (2, 2) or c.shape[2] % 2 != 1:
            raise ValueError("coeffs must have shape (2, 2, 2*kmax + 1)")
        if not np.all(np.isfinite(c)):
            raise ValueError("coefficients must be finite")
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def constant(cls, M):
        M = np.asarray(M, dtype=complex)
        if M.shape != (2, 2):
            raise ValueError("constant form must be 2x2")
        return cls(M[:, :, None])

    @classmethod
    def from_function(cls, func, kmax, n=None):
        """Fourier-sample ``func(theta) -> (..., 2, 2)`` up to frequency ``kmax``."""
        n = n or 4 * kmax + 4
        th = 2 * np.pi * np.arange(n) / n
        vals = np.asarray(func(th), dtype=complex).reshape(n, 2, 2)
        ks = np.arange(-kmax, kmax + 1)
        E = np.exp(-1j * np.outer(th, ks)) / n
        return cls(np.einsum("nab,nk->abk", vals, E))

    @property
    def kmax(self):
        return (self.coeffs.shape[2] - 1) // 2

    @property
    def is_constant(self):
        return self.kmax == 0 or np.all(self.coeffs[:, :, np.arange(self.coeffs.shape[2]) != self.kmax] == 0)

    def evaluate(self, theta):
        """Matrix values at ``theta``; shape ``theta.shape + (2, 2)``."""
        theta = np.asarray(theta, dtype=float)
        ks = np.arange(-self.kmax, self.kmax + 1)
        E = np.exp(1j * theta[..., None] * ks)
        return np.einsum("...k,abk->...ab", E, self.coeffs)


def zeta(k):
    """Characteristic vector ``(-|k|, i k)``."""
    return np.array([-abs(k), 1j * k])


def form_value(A, xi, eta, theta=0.0):
    """``A(theta)(xi, eta) = xi^T A eta`` (no complex conjugation)."""
    M = A.evaluate(theta) if isinstance(A, BilinearFormField) else np.asarray(A, dtype=complex)
    return np.asarray(xi) @ M @ np.asarray(eta)


def flat_transform(A):
    """``A^flat = L A R`` applied coefficient-wise."""
    if not isinstance(A, BilinearFormField):
        A = BilinearFormField.constant(A)
    return BilinearFormField(np.einsum("ab,bck,cd->adk", FLAT_LEFT, A.coeffs, FLAT_RIGHT))


def is_null(A, tol=None):
    """True iff both diagonal entries of ``A^flat`` vanish up to ``tol``."""
    if not isinstance(A, BilinearFormField):
        A = BilinearFormField.constant(A)
    if tol is None:
        tol = 1e-12 if A.is_constant else 1e-10
    F = flat_transform(A).coeffs
    return bool(np.max(np.abs(F[0, 0])) <= tol and np.max(np.abs(F[1, 1])) <= tol)


@dataclass(frozen=True)
class NullProbeResult:
    times: np.ndarray
    norms: np.ndarray
    slope: float
    intercept: float
    residual: float
    output_modes: dict


def fourier_coefficients(f):
    """Complex Fourier coefficients ``{k: c_k}`` of a real field on the circle."""
    if isinstance(f, dict):
        return {int(k): complex(v) for k, v in f.items() if v != 0}
    b = f.basis
    if b.d != 2:
        raise ValueError("the null-condition probe is two-dimensional")
    if f.ncomp != 1:
        raise ValueError("expected a scalar field")
    c = f.coeffs[0]
    out = {}
    for idx, (ell, m) in enumerate(b.modes):
        a = c[idx]
        if a == 0:
            continue
        if ell == 0:
            out[0] = out.get(0, 0) + a / np.sqrt(2 * np.pi)
        elif m > 0:
            for k in (ell, -ell):
                out[k] = out.get(k, 0) + a / (2 * np.sqrt(np.pi))
        else:
            out[ell] = out.get(ell, 0) + a / (2j * np.sqrt(np.pi))
            out[-ell] = out.get(-ell, 0) - a / (2j * np.sqrt(np.pi))
    return out


def null_decay_probe(u0, v0, A, s=2.6, t_range=(1.0, 10.0), dt=0.25):
    """Decay of ``A(grad u, grad v)`` for the decaying linear flows of ``u0``, ``v0``.

    The gradient is ``(d_t, d_theta)`` on the cylinder, so the mode
    ``e^{-|k| t} e^{i k theta}`` has gradient ``zeta(k)`` times itself.  The
    product is assembled frequency by frequency with the exponent
    ``|j| + |k| - |n|`` of every interaction kept symbolic, measured in
    ``Y_{s-1,t}`` (real and imaginary parts together) and ``log norm`` is
    fitted against ``t``.

    Parameters
    ----------
    u0, v0 : SpectralField or dict
        Real fields on the circle or complex Fourier coefficients ``{k: c}``.
    A : BilinearFormField or array_like

    Returns
    -------
    NullProbeResult
        ``output_modes`` maps each output frequency ``n`` to the list of
        ``(exponent, weight)`` pairs contributing to it.
    """
    if not isinstance(A, BilinearFormField):
        A = BilinearFormField.constant(A)
    cu = fourier_coefficients(u0)
    cv = fourier_coefficients(v0)
    terms = {}
    for j, a in cu.items():
        for k, b in cv.items():
            for mi in range(A.coeffs.shape[2]):
                m = mi - A.kmax
                M = A.coeffs[:, :, mi]
                if not np.any(M):
                    continue
                w = a * b * (zeta(j) @ M @ zeta(k))
                if w == 0:
                    continue
                n = j + k + m
                terms.setdefault(n, []).append((abs(j) + abs(k) - abs(n), w))
    if not terms:
        raise ValueError("degenerate probe: the product vanishes identically")
    ts = np.arange(t_range[0], t_range[1] + 0.5 * dt, dt)
    total = np.zeros(ts.size)
    for n, lst in terms.items():
        e = np.array([x for x, _ in lst], dtype=float)
        w = np.array([y for _, y in lst])
        qn = np.exp(-np.outer(ts, e)) @ w
        total += 2 * np.pi * japanese(n) ** (2 * (s - 1)) * np.abs(qn) ** 2
    norms = np.sqrt(total)
    if not np.all(norms > 0):
        raise ValueError("degenerate probe: the product vanishes identically")
    fit = fit_rate(ts, norms, log_x=False)
    return NullProbeResult(ts, norms, fit.slope, fit.intercept, fit.residual, terms)
