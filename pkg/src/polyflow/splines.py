"""Monotone rational-quadratic spline transforms.

Piecewise rational-quadratic bijections on an interval, defined by knot
positions and positive knot derivatives. Each segment interpolates its end
knots and derivatives monotonically, and the inverse is available in closed
form (quadratic in the segment parameter). Inputs outside the interval are
rejected: upstream coordinates are always boxed, so an out-of-range value is
a bug, not a case to absorb with identity tails.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "RQSpline",
    "CircularSpline",
    "rq_forward",
    "rq_inverse",
    "circular_forward",
]

DEFAULT_BINS = 30


@dataclass(frozen=True)
class RQSpline:
    """Monotone rational-quadratic spline on [lo, hi].

    knots_x and knots_y are strictly increasing vectors of equal length
    (bins + 1) sharing their endpoints, so the map fixes lo and hi.
    derivs holds the positive derivative at each knot.
    """

    knots_x: np.ndarray
    knots_y: np.ndarray
    derivs: np.ndarray

    def __post_init__(self):
        kx = np.ascontiguousarray(np.asarray(self.knots_x, dtype=float))
        ky = np.ascontiguousarray(np.asarray(self.knots_y, dtype=float))
        d = np.ascontiguousarray(np.asarray(self.derivs, dtype=float))
        if kx.ndim != 1 or kx.shape != ky.shape or kx.shape != d.shape:
            raise ValueError("knots_x, knots_y, derivs must be equal-length vectors")
        if kx.size < 2:
            raise ValueError("need at least one bin")
        if not (np.all(np.isfinite(kx)) and np.all(np.isfinite(ky)) and np.all(np.isfinite(d))):
            raise ValueError("spline parameters must be finite")
        if np.any(np.diff(kx) <= 0) or np.any(np.diff(ky) <= 0):
            raise ValueError("knots must be strictly increasing")
        if np.any(d <= 0):
            raise ValueError("knot derivatives must be positive")
        scale = max(abs(kx[0]), abs(kx[-1]), 1.0)
        if abs(kx[0] - ky[0]) > 1e-12 * scale or abs(kx[-1] - ky[-1]) > 1e-12 * scale:
            raise ValueError("spline must fix the interval endpoints")
        object.__setattr__(self, "knots_x", kx)
        object.__setattr__(self, "knots_y", ky)
        object.__setattr__(self, "derivs", d)

    @property
    def lo(self) -> float:
        return float(self.knots_x[0])

    @property
    def hi(self) -> float:
        return float(self.knots_x[-1])

    @property
    def nbins(self) -> int:
        return self.knots_x.size - 1

    @classmethod
    def identity(cls, lo: float, hi: float, bins: int = DEFAULT_BINS) -> "RQSpline":
        knots = np.linspace(lo, hi, bins + 1)
        return cls(knots, knots.copy(), np.ones(bins + 1))


@dataclass(frozen=True)
class CircularSpline(RQSpline):
    """RQ spline on [-pi, pi] whose boundary derivatives match.

    Matching derivatives make the periodic extension continuously
    differentiable across the seam at +/-pi.
    """

    def __post_init__(self):
        super().__post_init__()
        if abs(self.lo + np.pi) > 1e-12 or abs(self.hi - np.pi) > 1e-12:
            raise ValueError("circular spline must cover [-pi, pi]")
        d = self.derivs
        if abs(d[0] - d[-1]) > 1e-12 * max(1.0, abs(d[0])):
            raise ValueError("boundary derivatives must match for periodicity")

    @classmethod
    def identity(cls, bins: int = DEFAULT_BINS) -> "CircularSpline":
        knots = np.linspace(-np.pi, np.pi, bins + 1)
        return cls(knots, knots.copy(), np.ones(bins + 1))


def _as_array(x):
    arr = np.asarray(x, dtype=float)
    return np.atleast_1d(arr), arr.ndim == 0


def _segments(knots, q, label):
    lo, hi = knots[0], knots[-1]
    span = hi - lo
    if np.any(q < lo - 1e-12 * span) or np.any(q > hi + 1e-12 * span):
        raise ValueError(f"{label} outside spline interval [{lo}, {hi}]")
    q = np.clip(q, lo, hi)
    k = np.searchsorted(knots, q, side="right") - 1
    return q, np.clip(k, 0, knots.size - 2)


def _bin_params(spline, k):
    x0 = spline.knots_x[k]
    y0 = spline.knots_y[k]
    w = spline.knots_x[k + 1] - x0
    dy = spline.knots_y[k + 1] - y0
    s = dy / w
    d0 = spline.derivs[k]
    d1 = spline.derivs[k + 1]
    return x0, y0, w, dy, s, d0, d1


def _eval_xi(s, d0, d1, dy, y0, xi):
    omx = 1.0 - xi
    denom = s + (d0 + d1 - 2.0 * s) * xi * omx
    y = y0 + dy * (s * xi * xi + d0 * xi * omx) / denom
    num = s * s * (d1 * xi * xi + 2.0 * s * xi * omx + d0 * omx * omx)
    return y, np.log(num) - 2.0 * np.log(denom)


def rq_forward(x, spline: RQSpline):
    """Evaluate the spline; returns (y, log dy/dx). Rejects out-of-range x."""
    xb, scalar = _as_array(x)
    xb, k = _segments(spline.knots_x, xb, "input")
    x0, y0, w, dy, s, d0, d1 = _bin_params(spline, k)
    xi = (xb - x0) / w
    y, logderiv = _eval_xi(s, d0, d1, dy, y0, xi)
    if scalar:
        return float(y[0]), float(logderiv[0])
    return y, logderiv


def rq_inverse(y, spline: RQSpline):
    """Invert the spline; returns (x, log dx/dy). Rejects out-of-range y."""
    yb, scalar = _as_array(y)
    yb, k = _segments(spline.knots_y, yb, "input")
    x0, y0, w, dy, s, d0, d1 = _bin_params(spline, k)
    yr = yb - y0
    m = d0 + d1 - 2.0 * s
    # a*xi^2 + b*xi + c = 0; the 2c/(-b - sqrt) root form is the one that
    # stays in [0, 1] without cancellation for this sign pattern (c <= 0)
    a = dy * (s - d0) + yr * m
    b = dy * d0 - yr * m
    c = -s * yr
    disc = b * b - 4.0 * a * c
    xi = 2.0 * c / (-b - np.sqrt(np.maximum(disc, 0.0)))
    xi = np.clip(xi, 0.0, 1.0)
    _, logderiv = _eval_xi(s, d0, d1, dy, y0, xi)
    xr = x0 + xi * w
    if scalar:
        return float(xr[0]), float(-logderiv[0])
    return xr, -logderiv


def wrap_angle(theta):
    """Map any angle into (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(theta, dtype=float), 2.0 * np.pi)


def circular_forward(theta, spline: CircularSpline):
    """Periodic spline on the circle; accepts any angle, wraps into (-pi, pi]."""
    tb, scalar = _as_array(theta)
    out, logderiv = rq_forward(wrap_angle(tb), spline)
    if scalar:
        return float(out[0]), float(logderiv[0])
    return out, logderiv
