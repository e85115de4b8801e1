"""Virtual costs, participation thresholds, regularity and the virtual-cost density."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
import numpy.typing as npt

from .errors import DomainError, RegularityError
from .market import CostDistribution, MarketConfig, ParticipationProfile, leakage_coefficient
from .quadrature import bisect_increasing, integrate

FloatArray = npt.NDArray[np.float64]
Func = Callable[[FloatArray], FloatArray]


def cost_threshold(dist: CostDistribution, rate: float) -> float:
    """tau with F(tau) = rate."""
    if not (0.0 < rate <= 1.0):
        raise DomainError("participation rate must lie in (0, 1]")
    return dist.c_max if rate == 1.0 else float(dist.quantile(rate))


@dataclass(frozen=True)
class VirtualCostCurve:
    """phi(c) = c - h(c) + (1 - b) F(c)/f(c) = (1 - b)(c + F/f) on [c_min, tau]."""

    group: int
    dist: CostDistribution
    b: float
    tau: float

    def __call__(self, c: npt.ArrayLike) -> FloatArray:
        c = np.asarray(c, dtype=float)
        return (1.0 - self.b) * (c + self.dist.hazard_ratio(c))

    @property
    def c_min(self) -> float:
        return self.dist.c_min

    @property
    def phi_min(self) -> float:
        return float(self(self.c_min))

    @property
    def phi_max(self) -> float:
        return float(self(self.tau))

    def derivative(self, c: npt.ArrayLike) -> FloatArray:
        """Central difference with step 1e-5 * width, one-sided at the ends of [c_min, tau]."""
        c = np.asarray(c, dtype=float)
        step = 1e-5 * self.dist.width
        lo = np.maximum(c - step, self.c_min)
        hi = np.minimum(c + step, self.tau)
        return (self(hi) - self(lo)) / (hi - lo)

    def inverse(self, phi: npt.ArrayLike) -> FloatArray:
        """Smallest c in [c_min, tau] with phi(c) >= target, clamped at the ends."""
        return bisect_increasing(self, phi, self.c_min, self.tau, xtol=1e-14 * max(1.0, self.tau))

    def sample(self, n: int = 500) -> tuple[FloatArray, FloatArray]:
        c = np.linspace(self.c_min, self.tau, n)
        return c, self(c)


def virtual_cost_curve(config: MarketConfig, profile: ParticipationProfile, i: int) -> VirtualCostCurve:
    grp = config.groups[i]
    return VirtualCostCurve(i, grp.cost_dist, leakage_coefficient(config, profile, i), profile.thresholds[i])


def virtual_cost_curves(config: MarketConfig, profile: ParticipationProfile) -> list[VirtualCostCurve]:
    return [virtual_cost_curve(config, profile, i) for i in range(config.n_groups)]


def virtual_cost(c: npt.ArrayLike, config: MarketConfig, profile: ParticipationProfile, i: int) -> FloatArray:
    curve = virtual_cost_curve(config, profile, i)
    c = np.asarray(c, dtype=float)
    tol = 1e-12 * max(1.0, curve.tau)
    if np.any(c < curve.c_min - tol) or np.any(c > curve.tau + tol):
        raise DomainError(f"cost outside participant range [{curve.c_min}, {curve.tau}]")
    return curve(c)


@dataclass
class RegularityReport:
    group: int
    passed: bool
    monotone: bool
    hazard_condition: bool
    first_violation: dict[str, Any] | None = None

    def to_dict(self) -> dict[str, Any]:
        return dict(self.__dict__)


def regularity_check(config: MarketConfig, profile: ParticipationProfile, i: int, n: int = 500) -> RegularityReport:
    """phi non-decreasing on an n-point grid of [c_min, tau] and F f' <= 2 f^2 pointwise."""
    curve = virtual_cost_curve(config, profile, i)
    d = curve.dist
    c = np.linspace(curve.c_min, curve.tau, n)
    F, f, fp = d.cdf(c), d.pdf(c), d.dpdf(c)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(F == 0.0, 0.0, F / f)
    phi = np.where(np.isfinite(ratio), (1.0 - curve.b) * (c + ratio), np.inf)
    lhs, rhs = F * fp, 2.0 * f * f
    hazard_ok = (lhs <= rhs * (1.0 + 1e-12) + 1e-300) | (F == 0.0)
    finite = np.isfinite(phi)
    steps = np.diff(phi)
    mono_ok = np.r_[True, steps >= -1e-12 * np.maximum(1.0, np.abs(phi[1:]))] & finite
    first = None
    if not hazard_ok.all() or not mono_ok.all():
        bad = np.flatnonzero(~(hazard_ok & mono_ok))[0]
        first = {
            "c": float(c[bad]),
            "phi": float(phi[bad]) if finite[bad] else None,
            "F_fprime": float(lhs[bad]),
            "two_f_squared": float(rhs[bad]),
            "reason": ("virtual cost unbounded (f = 0 where F > 0)" if not finite[bad]
                       else "virtual cost decreasing" if not mono_ok[bad] else "F f' > 2 f^2"),
        }
    return RegularityReport(i, bool(hazard_ok.all() and mono_ok.all()), bool(mono_ok.all()), bool(hazard_ok.all()), first)


@dataclass(frozen=True)
class _Component:
    """One mixture component: a variable c with density f on [lo, hi] mapped by phi."""

    weight: float
    phi: Func
    inverse: Func
    deriv: Func
    pdf: Func
    cdf: Func
    lo: float
    hi: float


def _identity(x: FloatArray) -> FloatArray:
    return np.asarray(x, dtype=float)


def _one(x: FloatArray) -> FloatArray:
    return np.ones_like(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class VirtualCostDensity:
    """omega(phi) = sum_i q_i omega_i(phi), the push-forward of participant costs.

    Integrals against omega are taken in the underlying cost variable, which
    avoids evaluating omega itself near points where phi' is small.
    """

    components: tuple[_Component, ...] = field(default_factory=tuple)

    @classmethod
    def from_pdf(cls, pdf: Func, lo: float, hi: float, cdf: Func | None = None, weight: float = 1.0) -> "VirtualCostDensity":
        """Density given directly on [lo, hi] (phi is its own variable)."""
        if cdf is None:
            def cdf(x: FloatArray) -> FloatArray:
                x = np.asarray(x, dtype=float)
                out = [integrate(pdf, lo, min(max(v, lo), hi)) for v in x.ravel()]
                return np.array(out).reshape(x.shape)

        def clamp(x: FloatArray) -> FloatArray:
            return np.clip(np.asarray(x, dtype=float), lo, hi)

        return cls((_Component(weight, _identity, clamp, _one, pdf, cdf, lo, hi),))

    @classmethod
    def from_curves(cls, masses: Sequence[float], curves: Sequence[VirtualCostCurve]) -> "VirtualCostDensity":
        comps = tuple(
            _Component(float(q), cv, cv.inverse, cv.derivative, cv.dist.pdf, cv.dist.cdf, cv.c_min, cv.tau)
            for q, cv in zip(masses, curves)
        )
        return cls(comps)

    @property
    def phi_min(self) -> float:
        return min(float(k.phi(np.array(k.lo))) for k in self.components)

    @property
    def phi_max(self) -> float:
        return max(float(k.phi(np.array(k.hi))) for k in self.components)

    @property
    def total_mass(self) -> float:
        return float(sum(k.weight * (k.cdf(np.array(k.hi)) - k.cdf(np.array(k.lo))) for k in self.components))

    def pdf(self, phi: npt.ArrayLike) -> FloatArray:
        phi = np.asarray(phi, dtype=float)
        out = np.zeros(phi.shape)
        for k in self.components:
            a, b = float(k.phi(np.array(k.lo))), float(k.phi(np.array(k.hi)))
            inside = (phi >= a) & (phi <= b)
            if not inside.any():
                continue
            c = k.inverse(phi[inside])
            out[inside] += k.weight * k.pdf(c) / k.deriv(c)
        return out

    def _limits(self, k: _Component, lo: float | None, hi: float | None) -> tuple[float, float]:
        a = k.lo if lo is None else float(k.inverse(np.array(lo)))
        b = k.hi if hi is None else float(k.inverse(np.array(hi)))
        return a, b

    def integrate(self, func: Func, lo: float | None = None, hi: float | None = None, rtol: float = 1e-12) -> float:
        """Integral of func(phi) omega(phi) over [lo, hi] (default: whole support)."""
        total = 0.0
        for k in self.components:
            a, b = self._limits(k, lo, hi)
            if b <= a:
                continue
            total += k.weight * integrate(lambda c, k=k: func(k.phi(c)) * k.pdf(c), a, b, rtol=rtol)
        return total

    def mass_between(self, lo: npt.ArrayLike, hi: npt.ArrayLike) -> FloatArray:
        """omega-mass of each interval [lo_j, hi_j] via component cdfs."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        out = np.zeros(np.broadcast(lo, hi).shape)
        for k in self.components:
            out += k.weight * (k.cdf(k.inverse(hi)) - k.cdf(k.inverse(lo)))
        return out


def virtual_cost_density(config: MarketConfig, profile: ParticipationProfile) -> VirtualCostDensity:
    curves = []
    for i in range(config.n_groups):
        rep = regularity_check(config, profile, i)
        if not rep.monotone:
            raise RegularityError(f"group {i}: virtual cost not monotone ({rep.first_violation})")
        curves.append(virtual_cost_curve(config, profile, i))
    return VirtualCostDensity.from_curves(profile.masses, curves)
