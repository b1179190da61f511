"""Real spherical-harmonic analysis and synthesis on S^1 and S^2.

Fields are stored as real coefficients against an orthonormal basis
``phi_{l,m}``.  Modes are ordered by ascending ``(l, m)``:

* ``d = 2``: ``l = 0`` is the constant ``1/sqrt(2 pi)``; for ``l >= 1`` the
  pair ``m = -l`` (``sin(l theta)/sqrt(pi)``) and ``m = +l``
  (``cos(l theta)/sqrt(pi)``).
* ``d = 3``: ``m = -l, ..., l``; ``m < 0`` carries ``sin(|m| phi)`` and
  ``m > 0`` carries ``cos(m phi)``, both times the fully normalised
  associated Legendre function of the colatitude.

Quadrature uses a uniform grid on S^1 and Gauss-Legendre x uniform nodes on
S^2.  With ``K = oversample * lmax`` the rule integrates every polynomial of
total degree ``<= K`` exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "SphereBasis",
    "SpectralField",
    "GridField",
    "legendre_normalized",
    "analyze",
    "synthesize",
    "apply_D",
    "project",
    "multiply",
    "apply_Di",
    "apply_Ri",
    "poly_to_sh",
    "sogge_ratio",
]


def legendre_normalized(lmax, x, with_theta_derivative=False):
    """Fully normalised associated Legendre functions.

    Returns ``P[l, m, :]`` with ``int_{-1}^{1} P[l, m]^2 dx = 1`` and no
    Condon-Shortley phase, for ``0 <= m <= l <= lmax``.

    Parameters
    ----------
    lmax : int
    x : array_like
        Cosine of the colatitude.
    with_theta_derivative : bool
        Also return ``dP/dtheta`` (requires ``|x| < 1``).

    Returns
    -------
    P : ndarray, shape (lmax + 1, lmax + 1, n)
    dP : ndarray, optional
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    L = lmax + 1 if with_theta_derivative else lmax
    sin_t = np.sqrt(np.clip(1.0 - x * x, 0.0, None))
    P = np.zeros((L + 1, L + 1, x.size))
    P[0, 0] = np.sqrt(0.5)
    for m in range(1, L + 1):
        P[m, m] = np.sqrt((2 * m + 1) / (2.0 * m)) * sin_t * P[m - 1, m - 1]
    for m in range(0, L):
        P[m + 1, m] = np.sqrt(2 * m + 3.0) * x * P[m, m]
    for m in range(0, L + 1):
        for ell in range(m + 2, L + 1):
            a = np.sqrt((4.0 * ell * ell - 1) / (ell * ell - m * m))
            b = np.sqrt(((ell - 1.0) ** 2 - m * m) / (4.0 * (ell - 1) ** 2 - 1))
            P[ell, m] = a * (x * P[ell - 1, m] - b * P[ell - 2, m])
    if not with_theta_derivative:
        return P
    dP = np.zeros((lmax + 1, lmax + 1, x.size))
    for ell in range(lmax + 1):
        for m in range(ell + 1):
            c = np.sqrt((ell + 1.0 - m) * (ell + 1.0 + m) * (2 * ell + 1) / (2 * ell + 3))
            dP[ell, m] = (c * P[ell + 1, m] - (ell + 1) * x * P[ell, m]) / sin_t
    return P[: lmax + 1, : lmax + 1], dP


def _mode_list(d, lmax):
    if d == 2:
        modes = [(0, 0)]
        for ell in range(1, lmax + 1):
            modes += [(ell, -ell), (ell, ell)]
        return modes
    return [(ell, m) for ell in range(lmax + 1) for m in range(-ell, ell + 1)]


def _basis_values_2d(lmax, theta, modes, grad=False):
    theta = np.asarray(theta, dtype=float)
    vals = np.empty((len(modes), theta.size))
    dth = np.empty_like(vals)
    for k, (ell, m) in enumerate(modes):
        if ell == 0:
            vals[k] = 1.0 / np.sqrt(2 * np.pi)
            dth[k] = 0.0
        elif m < 0:
            vals[k] = np.sin(ell * theta) / np.sqrt(np.pi)
            dth[k] = ell * np.cos(ell * theta) / np.sqrt(np.pi)
        else:
            vals[k] = np.cos(ell * theta) / np.sqrt(np.pi)
            dth[k] = -ell * np.sin(ell * theta) / np.sqrt(np.pi)
    if grad:
        return vals, dth
    return vals


def _trig(m, phi):
    if m == 0:
        return np.full_like(phi, 1.0 / np.sqrt(2 * np.pi)), np.zeros_like(phi)
    if m < 0:
        k = -m
        return np.sin(k * phi) / np.sqrt(np.pi), k * np.cos(k * phi) / np.sqrt(np.pi)
    return np.cos(m * phi) / np.sqrt(np.pi), -m * np.sin(m * phi) / np.sqrt(np.pi)


def _basis_values_3d(lmax, theta, phi, modes, grad=False):
    x = np.cos(theta)
    if grad:
        P, dP = legendre_normalized(lmax, x, with_theta_derivative=True)
    else:
        P = legendre_normalized(lmax, x)
    vals = np.empty((len(modes), x.size))
    if grad:
        dth = np.empty_like(vals)
        dph_over_sin = np.empty_like(vals)
        sin_t = np.sin(theta)
    for k, (ell, m) in enumerate(modes):
        tr, dtr = _trig(m, phi)
        vals[k] = P[ell, abs(m)] * tr
        if grad:
            dth[k] = dP[ell, abs(m)] * tr
            dph_over_sin[k] = P[ell, abs(m)] / sin_t * dtr
    if grad:
        return vals, dth, dph_over_sin
    return vals


@dataclass(frozen=True, eq=False)
class SphereBasis:
    """Discrete orthonormal harmonic basis on S^{d-1} for d in {2, 3}.

    Parameters
    ----------
    d : int
        Ambient dimension (2 or 3).
    lmax : int
        Largest harmonic degree kept.
    oversample : int
        Grid degree ``K = oversample * lmax``; products of total degree up
        to ``K`` are integrated exactly.
    """

    d: int
    lmax: int
    oversample: int = 4

    def __post_init__(self):
        if self.d not in (2, 3):
            raise ValueError("only d = 2 and d = 3 are supported")
        if self.lmax < 0:
            raise ValueError("lmax must be nonnegative")
        if self.oversample < 1:
            raise ValueError("oversample must be >= 1")

    @property
    def grid_degree(self):
        return max(self.oversample * self.lmax, 2)

    @cached_property
    def modes(self):
        return _mode_list(self.d, self.lmax)

    @property
    def nmodes(self):
        return len(self.modes)

    @cached_property
    def ell(self):
        return np.array([m[0] for m in self.modes], dtype=int)

    @cached_property
    def lam(self):
        """Eigenvalues ``l + (d - 2)/2`` of the operator D per mode."""
        return self.ell + 0.5 * (self.d - 2)

    @cached_property
    def _grid(self):
        K = self.grid_degree
        if self.d == 2:
            n = K + 1
            theta = 2 * np.pi * np.arange(n) / n
            w = np.full(n, 2 * np.pi / n)
            pts = np.stack([np.cos(theta), np.sin(theta)], axis=1)
            return theta, None, w, pts
        nth = K // 2 + 1
        nph = K + 1
        x, wx = np.polynomial.legendre.leggauss(nth)
        order = np.argsort(-x)
        x, wx = x[order], wx[order]
        th1 = np.arccos(x)
        ph1 = 2 * np.pi * np.arange(nph) / nph
        TH, PH = np.meshgrid(th1, ph1, indexing="ij")
        theta, phi = TH.ravel(), PH.ravel()
        w = np.outer(wx, np.full(nph, 2 * np.pi / nph)).ravel()
        st = np.sin(theta)
        pts = np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=1)
        return theta, phi, w, pts

    @property
    def grid_theta(self):
        return self._grid[0]

    @property
    def grid_phi(self):
        return self._grid[1]

    @property
    def weights(self):
        return self._grid[2]

    @property
    def points(self):
        """Cartesian collocation nodes, shape ``(npts, d)``."""
        return self._grid[3]

    @property
    def npts(self):
        return self.weights.size

    @cached_property
    def _tables(self):
        if self.d == 2:
            vals, dth = _basis_values_2d(self.lmax, self.grid_theta, self.modes, grad=True)
            t = np.stack([-np.sin(self.grid_theta), np.cos(self.grid_theta)])
            grad = dth[None, :, :] * t[:, None, :]
        else:
            th, ph = self.grid_theta, self.grid_phi
            vals, dth, dph = _basis_values_3d(self.lmax, th, ph, self.modes, grad=True)
            e_th = np.stack([np.cos(th) * np.cos(ph), np.cos(th) * np.sin(ph), -np.sin(th)])
            e_ph = np.stack([-np.sin(ph), np.cos(ph), np.zeros_like(ph)])
            grad = dth[None] * e_th[:, None, :] + dph[None] * e_ph[:, None, :]
        return vals, grad

    @property
    def synthesis_matrix(self):
        """Basis values ``phi_k(y_j)``, shape ``(nmodes, npts)``."""
        return self._tables[0]

    @property
    def gradient_matrix(self):
        """Cartesian surface gradients of the basis, shape ``(d, nmodes, npts)``."""
        return self._tables[1]

    @cached_property
    def analysis_matrix(self):
        """Quadrature projection onto the basis, shape ``(npts, nmodes)``."""
        return (self.synthesis_matrix * self.weights).T.copy()

    @cached_property
    def _Di(self):
        return np.einsum("imp,pn->imn", self.gradient_matrix, self.analysis_matrix)

    @cached_property
    def _Yi(self):
        S = self.synthesis_matrix
        return np.stack(
            [(S * self.points[:, i]) @ self.analysis_matrix for i in range(self.d)]
        )

    def Di_matrix(self, i):
        """Matrix ``M`` with ``coeffs(D_i f) = coeffs(f) @ M`` (``i`` is 1-based)."""
        _check_axis(i, self.d)
        return self._Di[i - 1]

    def Ri_matrix(self, i):
        """Matrix of ``R_i = D_i + y_i (D - (d-2)/2)`` acting on coefficient rows."""
        _check_axis(i, self.d)
        return self._Di[i - 1] + self.ell[:, None] * self._Yi[i - 1]

    def yi_matrix(self, i):
        """Multiplication by the coordinate ``y_i`` (truncated to ``lmax``)."""
        _check_axis(i, self.d)
        return self._Yi[i - 1]

    def evaluate(self, coeffs, points):
        """Evaluate coefficient rows at arbitrary unit vectors.

        Parameters
        ----------
        coeffs : ndarray, shape (..., nmodes)
        points : ndarray, shape (npts, d)
        """
        pts = np.asarray(points, dtype=float)
        if self.d == 2:
            vals = _basis_values_2d(self.lmax, np.arctan2(pts[:, 1], pts[:, 0]), self.modes)
        else:
            theta = np.arccos(np.clip(pts[:, 2], -1.0, 1.0))
            phi = np.arctan2(pts[:, 1], pts[:, 0])
            vals = _basis_values_3d(self.lmax, theta, phi, self.modes)
        return np.asarray(coeffs) @ vals

    def evaluate_gradient(self, coeffs, points):
        """Cartesian surface gradient at arbitrary (non-polar) unit vectors.

        Returns an array of shape ``coeffs.shape[:-1] + (d, npts)``.
        """
        pts = np.asarray(points, dtype=float)
        if self.d == 2:
            theta = np.arctan2(pts[:, 1], pts[:, 0])
            _, dth = _basis_values_2d(self.lmax, theta, self.modes, grad=True)
            t = np.stack([-np.sin(theta), np.cos(theta)])
            g = dth[None] * t[:, None, :]
        else:
            theta = np.arccos(np.clip(pts[:, 2], -1.0, 1.0))
            phi = np.arctan2(pts[:, 1], pts[:, 0])
            _, dth, dph = _basis_values_3d(self.lmax, theta, phi, self.modes, grad=True)
            e_th = np.stack([np.cos(theta) * np.cos(phi), np.cos(theta) * np.sin(phi), -np.sin(theta)])
            e_ph = np.stack([-np.sin(phi), np.cos(phi), np.zeros_like(phi)])
            g = dth[None] * e_th[:, None, :] + dph[None] * e_ph[:, None, :]
        return np.einsum("...k,ikp->...ip", np.asarray(coeffs), g)

    def mode_index(self, ell, m=None):
        """Index of mode ``(ell, m)``; in d = 2, ``m`` defaults to ``+ell``."""
        if m is None:
            m = ell if self.d == 2 else 0
        try:
            return self.modes.index((ell, m))
        except ValueError:
            raise KeyError(f"mode ({ell}, {m}) not in basis") from None

    def same_as(self, other):
        return (
            self is other
            or (self.d, self.lmax, self.oversample) == (other.d, other.lmax, other.oversample)
        )


def _check_axis(i, d):
    if not (1 <= int(i) <= d):
        raise ValueError(f"axis index must lie in [1, {d}], got {i}")


@dataclass(frozen=True, eq=False)
class SpectralField:
    """N-component field on S^{d-1} stored as harmonic coefficients.

    ``coeffs`` has shape ``(ncomp, nmodes)``; ``truncation`` records the L2
    norm discarded when the field was produced by a truncating operation.
    """

    basis: SphereBasis
    coeffs: np.ndarray
    truncation: float = field(default=0.0)

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.coeffs, dtype=float))
        if c.shape[-1] != self.basis.nmodes:
            raise ValueError("coefficient length does not match the basis")
        if not np.all(np.isfinite(c)):
            raise ValueError("non-finite coefficients")
        object.__setattr__(self, "coeffs", c)

    @property
    def ncomp(self):
        return self.coeffs.shape[0]

    @classmethod
    def zeros(cls, basis, ncomp=1):
        return cls(basis, np.zeros((ncomp, basis.nmodes)))

    @classmethod
    def mode(cls, basis, ell, m=None, value=1.0, ncomp=1, comp=0):
        c = np.zeros((ncomp, basis.nmodes))
        c[comp, basis.mode_index(ell, m)] = value
        return cls(basis, c)

    def __add__(self, other):
        _same_basis(self, other)
        return SpectralField(self.basis, self.coeffs + other.coeffs)

    def __sub__(self, other):
        _same_basis(self, other)
        return SpectralField(self.basis, self.coeffs - other.coeffs)

    def __mul__(self, scalar):
        return SpectralField(self.basis, self.coeffs * float(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return SpectralField(self.basis, -self.coeffs)

    def l2(self):
        return float(np.sqrt(np.sum(self.coeffs**2)))


@dataclass(frozen=True, eq=False)
class GridField:
    """N-component field sampled on the collocation grid, shape ``(ncomp, npts)``."""

    basis: SphereBasis
    values: np.ndarray

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.values, dtype=float))
        if v.shape[-1] != self.basis.npts:
            raise ValueError("grid values do not match the basis grid")
        object.__setattr__(self, "values", v)

    @property
    def ncomp(self):
        return self.values.shape[0]


def _same_basis(a, b):
    if not a.basis.same_as(b.basis):
        raise ValueError("fields live on different bases")


def analyze(g):
    """Project grid values onto the harmonic basis by quadrature."""
    if not np.all(np.isfinite(g.values)):
        raise ValueError("non-finite grid values")
    return SpectralField(g.basis, g.values @ g.basis.analysis_matrix)


def synthesize(f):
    """Evaluate a spectral field on the collocation grid."""
    return GridField(f.basis, f.coeffs @ f.basis.synthesis_matrix)


def apply_D(f):
    """Apply ``D`` (eigenvalue ``l + (d-2)/2`` on degree ``l``)."""
    return SpectralField(f.basis, f.coeffs * f.basis.lam)


def project(f, ell):
    """Keep only the degree-``ell`` coefficients."""
    mask = f.basis.ell == ell
    return SpectralField(f.basis, f.coeffs * mask)


def multiply(f, g):
    """Pointwise product, computed on the grid and truncated to ``lmax``.

    When one factor has a single component it is broadcast over the other.
    The returned field carries the discarded L2 norm in ``truncation``.
    """
    _same_basis(f, g)
    b = f.basis
    prod = synthesize(f).values * synthesize(g).values
    coeffs = prod @ b.analysis_matrix
    total = np.sum(prod**2 * b.weights)
    kept = np.sum(coeffs**2)
    trunc = float(np.sqrt(max(total - kept, 0.0)))
    return SpectralField(b, coeffs, truncation=trunc)


def apply_Di(f, i):
    """Tangential derivative ``D_i = e_i . grad_S`` (``i`` is 1-based)."""
    return SpectralField(f.basis, f.coeffs @ f.basis.Di_matrix(i))


def apply_Ri(f, i):
    """``R_i = D_i + y_i (D - (d-2)/2)``, which lowers the degree by one."""
    return SpectralField(f.basis, f.coeffs @ f.basis.Ri_matrix(i))


def poly_to_sh(basis, alpha):
    """Harmonic coefficients of the monomial ``y^alpha`` restricted to the sphere."""
    alpha = tuple(int(a) for a in alpha)
    if len(alpha) != basis.d or min(alpha) < 0:
        raise ValueError("multi-index must have d nonnegative entries")
    if sum(alpha) > basis.lmax:
        raise ValueError("monomial degree exceeds lmax")
    vals = np.prod(basis.points ** np.array(alpha), axis=1)
    f = analyze(GridField(basis, vals[None, :]))
    # only degrees |alpha|, |alpha| - 2, ... can occur; drop quadrature noise elsewhere
    n = sum(alpha)
    keep = (basis.ell <= n) & ((n - basis.ell) % 2 == 0)
    return SpectralField(basis, f.coeffs * keep)


def sogge_ratio(basis, ell):
    """``sup |Y_{l,0}| / ||Y_{l,0}||_2`` over the grid and the poles."""
    if ell > basis.lmax:
        raise ValueError("degree exceeds lmax")
    k = basis.mode_index(ell, ell if basis.d == 2 else 0)
    c = np.zeros(basis.nmodes)
    c[k] = 1.0
    vals = np.abs(c @ basis.synthesis_matrix)
    if basis.d == 3:
        poles = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]])
        vals = np.concatenate([vals, np.abs(basis.evaluate(c, poles))])
    l2 = np.sqrt(np.sum((c @ basis.synthesis_matrix) ** 2 * basis.weights))
    return float(vals.max() / l2)
