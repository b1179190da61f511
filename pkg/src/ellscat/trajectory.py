"""Time grids and cylinder trajectories ``(v, dv/dt)``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sphere import SpectralField, SphereBasis

__all__ = ["TimeGrid", "Trajectory"]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_k = t0 + k*dt`` for ``k = 0, ..., n - 1``."""

    t0: float
    dt: float
    n: int

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("time step must be positive")
        if self.n < 2:
            raise ValueError("a time grid needs at least two nodes")

    @classmethod
    def span(cls, t0, length, dt):
        n = int(round(length / dt)) + 1
        return cls(float(t0), float(dt), n)

    @property
    def nodes(self):
        return self.t0 + self.dt * np.arange(self.n)

    @property
    def t_max(self):
        return self.t0 + self.dt * (self.n - 1)

    def index(self, t, tol=1e-9):
        k = int(round((t - self.t0) / self.dt))
        if k < 0 or k >= self.n or abs(self.t0 + k * self.dt - t) > tol * max(1.0, self.dt):
            raise KeyError(f"t = {t} is not a grid node")
        return k


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Per-node coefficients of ``v`` and of its time-derivative slot ``phi``.

    Arrays have shape ``(n_nodes, ncomp, nmodes)``.  ``phi`` may be ``None``
    for forcing terms, which only need the first slot.
    """

    grid: TimeGrid
    basis: SphereBasis
    v: np.ndarray
    phi: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.v, dtype=float)
        if v.ndim == 2:
            v = v[:, None, :]
        shape = (self.grid.n, v.shape[1], self.basis.nmodes)
        if v.shape != shape:
            raise ValueError(f"expected shape {shape}, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite trajectory values")
        object.__setattr__(self, "v", v)
        if self.phi is not None:
            p = np.asarray(self.phi, dtype=float)
            if p.ndim == 2:
                p = p[:, None, :]
            if p.shape != shape:
                raise ValueError("derivative slot shape mismatch")
            if not np.all(np.isfinite(p)):
                raise ValueError("non-finite trajectory values")
            object.__setattr__(self, "phi", p)

    @property
    def ncomp(self):
        return self.v.shape[1]

    @property
    def times(self):
        return self.grid.nodes

    @classmethod
    def zeros(cls, grid, basis, ncomp=1, with_phi=True):
        z = np.zeros((grid.n, ncomp, basis.nmodes))
        return cls(grid, basis, z, z.copy() if with_phi else None)

    def node(self, k):
        """Return ``(v, phi)`` at node ``k`` as spectral fields."""
        v = SpectralField(self.basis, self.v[k])
        p = None if self.phi is None else SpectralField(self.basis, self.phi[k])
        return v, p

    def require_phi(self):
        if self.phi is None:
            raise ValueError("trajectory has no derivative slot")
        return self.phi

    def _combine(self, other, sign):
        if self.grid != other.grid or not self.basis.same_as(other.basis):
            raise ValueError("trajectories live on different grids")
        phi = None
        if self.phi is not None and other.phi is not None:
            phi = self.phi + sign * other.phi
        return Trajectory(self.grid, self.basis, self.v + sign * other.v, phi)

    def __add__(self, other):
        return self._combine(other, 1.0)

    def __sub__(self, other):
        return self._combine(other, -1.0)

    def __mul__(self, scalar):
        phi = None if self.phi is None else self.phi * scalar
        return Trajectory(self.grid, self.basis, self.v * scalar, phi)

    __rmul__ = __mul__
