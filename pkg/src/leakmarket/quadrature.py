"""Gauss-Legendre quadrature and monotone root finding used across the package."""

from __future__ import annotations

from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
import numpy.typing as npt

FloatArray = npt.NDArray[np.float64]

N_NODES = 64


@lru_cache(maxsize=8)
def _legendre(n: int) -> tuple[FloatArray, FloatArray]:
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def _panel_sums(func: Callable[[FloatArray], FloatArray], lo: FloatArray, hi: FloatArray, n: int) -> FloatArray:
    """Fixed n-point rule applied to every panel [lo_j, hi_j] with one vectorised call."""
    x, w = _legendre(n)
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    nodes = mid[:, None] + half[:, None] * x[None, :]
    vals = np.asarray(func(nodes.ravel()), dtype=float).reshape(nodes.shape)
    return half * (vals @ w)


def integrate(
    func: Callable[[FloatArray], FloatArray],
    a: float,
    b: float,
    *,
    breakpoints: Sequence[float] = (),
    rtol: float = 1e-8,
    atol: float = 1e-15,
    n: int = N_NODES,
    max_level: int = 40,
) -> float:
    """Adaptive composite Gauss-Legendre integral of a vectorised ``func`` over [a, b].

    Each panel is compared against the sum over its two halves and split until
    the two agree to ``rtol`` (relative to the running total) or ``atol``.
    Interior ``breakpoints`` (kinks, jumps) start as panel edges.
    """
    if b == a:
        return 0.0
    sign = 1.0
    if b < a:
        a, b, sign = b, a, -1.0
    edges = np.unique(np.clip(np.r_[a, [p for p in breakpoints if a < p < b], b], a, b))
    lo, hi = edges[:-1], edges[1:]
    coarse = _panel_sums(func, lo, hi, n)
    total = 0.0
    for _ in range(max_level):
        mid = 0.5 * (lo + hi)
        left = _panel_sums(func, lo, mid, n)
        right = _panel_sums(func, mid, hi, n)
        fine = left + right
        scale = abs(total) + np.abs(fine).sum()
        done = np.abs(fine - coarse) <= np.maximum(atol, rtol * scale)
        total += fine[done].sum()
        if done.all():
            return sign * total
        keep = ~done
        lo = np.r_[lo[keep], mid[keep]]
        hi = np.r_[mid[keep], hi[keep]]
        coarse = np.r_[left[keep], right[keep]]
    # panels that never settled contribute their finest estimate
    return sign * (total + coarse.sum())


def fixed_panels(a: float, b: float, panels: int, n: int = 20) -> tuple[FloatArray, FloatArray]:
    """Nodes and weights of a composite n-point rule with equal panels on [a, b]."""
    x, w = _legendre(n)
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def segment_integrals(func: Callable[[FloatArray], FloatArray], points: FloatArray, n: int = 20) -> FloatArray:
    """Integrals of ``func`` over consecutive segments [points[j], points[j+1]]."""
    points = np.asarray(points, dtype=float)
    if points.size < 2:
        return np.zeros(0)
    return _panel_sums(func, points[:-1], points[1:], n)


def bisect_increasing(
    func: Callable[[FloatArray], FloatArray],
    target: npt.ArrayLike,
    lo: npt.ArrayLike,
    hi: npt.ArrayLike,
    xtol: float = 1e-10,
    max_iter: int = 200,
) -> FloatArray:
    """Vectorised bisection for ``func(x) = target`` with ``func`` non-decreasing.

    Targets outside [func(lo), func(hi)] clamp to the nearer bracket end.
    Ties resolve toward the smaller root.
    """
    target = np.asarray(target, dtype=float)
    lo = np.broadcast_to(np.asarray(lo, dtype=float), target.shape).copy()
    hi = np.broadcast_to(np.asarray(hi, dtype=float), target.shape).copy()
    for _ in range(max_iter):
        if np.all(hi - lo <= xtol):
            break
        mid = 0.5 * (lo + hi)
        below = func(mid) < target
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def bisect_scalar(
    func: Callable[[float], float],
    lo: float,
    hi: float,
    xtol: float = 1e-10,
    max_iter: int = 200,
) -> float:
    """Root of a scalar function with a sign change on [lo, hi] by plain bisection.

    The sign of ``func(lo)`` is taken as the "left" side; the returned point
    brackets the sign change to within ``xtol``.
    """
    f_lo = func(lo)
    if f_lo == 0.0:
        return lo
    left_neg = f_lo < 0.0
    for _ in range(max_iter):
        if hi - lo <= xtol:
            break
        mid = 0.5 * (lo + hi)
        fm = func(mid)
        if (fm < 0.0) == left_neg and fm != 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
