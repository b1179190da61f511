"""Least-squares decay-rate fits."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["RateFit", "fit_rate"]


@dataclass(frozen=True)
class RateFit:
    """Result of a log-linear fit ``log y = slope * x + intercept``."""

    x: np.ndarray
    y: np.ndarray
    slope: float
    intercept: float
    window: tuple
    residual: float
    log_x: bool


def fit_rate(x, y, window=None, log_x=True):
    """Fit ``log y`` against ``log x`` (or ``x`` when ``log_x`` is False).

    Parameters
    ----------
    x, y : array_like
        Sample abscissae (radii or times) and positive magnitudes.
    window : tuple, optional
        Inclusive ``(lo, hi)`` range of ``x`` used for the fit.
    log_x : bool
        Power-law fit in ``log x`` when True, exponential fit in ``x`` otherwise.

    Returns
    -------
    RateFit
        ``residual`` is the RMS deviation of ``log y`` from the line.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if window is None:
        window = (float(x.min()), float(x.max()))
    lo, hi = window
    tol = 1e-12 * max(1.0, abs(hi))
    sel = (x >= lo - tol) & (x <= hi + tol)
    if sel.sum() < 2:
        raise ValueError("fewer than two samples inside the fit window")
    xs, ys = x[sel], y[sel]
    if np.any(ys <= 0) or not np.all(np.isfinite(ys)):
        raise ValueError("samples must be positive and finite")
    X = np.log(xs) if log_x else xs
    Y = np.log(ys)
    A = np.stack([X, np.ones_like(X)], axis=1)
    coef, *_ = np.linalg.lstsq(A, Y, rcond=None)
    res = float(np.sqrt(np.mean((A @ coef - Y) ** 2)))
    return RateFit(xs, ys, float(coef[0]), float(coef[1]), (lo, hi), res, log_x)
