"""Error metrics used by the benchmark scenarios."""

from __future__ import annotations

import numpy as np


class MetricError(ValueError):
    pass


def _pair(u_h, u_an):
    u_h = np.asarray(u_h, dtype=float).ravel()
    u_an = np.asarray(u_an, dtype=float).ravel()
    if u_h.shape != u_an.shape:
        raise MetricError(f"size mismatch: {u_h.size} numerical vs {u_an.size} analytical values")
    span = float(u_an.max() - u_an.min()) if u_an.size else 0.0
    if span == 0.0:
        raise MetricError("analytical solution has zero range")
    return u_h, u_an, span


def nrmse(u_h, u_an) -> float:
    """Root-mean-square error normalised by the range of the analytical field."""
    u_h, u_an, span = _pair(u_h, u_an)
    return float(np.sqrt(np.mean((u_h - u_an) ** 2)) / span)


def nrmse_squared(u_h, u_an) -> float:
    """Mean squared error over the range, without the square root."""
    u_h, u_an, span = _pair(u_h, u_an)
    return float(np.mean((u_h - u_an) ** 2) / span)


def sre_w(mean_w: float, mean_w_ref: float) -> float:
    """Signed relative error in mean strain energy density."""
    if mean_w_ref == 0:
        raise MetricError("reference strain energy density is zero")
    return (float(mean_w) - float(mean_w_ref)) / float(mean_w_ref)
