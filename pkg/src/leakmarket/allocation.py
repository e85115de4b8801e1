"""Optimal allocation rule for a fixed participation profile.

The analyst minimises the worst-case bias-variance objective subject to the
expected budget. The solution depends on where the budget ratio
rho_B = (B/s - l) / (gamma * theta_bar) falls against Q_c/R_c:

* below the ratio at phi_min: strictly decreasing, A proportional to 1/sqrt(phi);
* inside the range: a plateau chi up to a knee phi_hat, then chi*sqrt(phi_hat/phi);
* above the ratio at phi_max: constant allocation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Literal, Sequence

import numpy as np
import numpy.typing as npt

from .errors import DomainError, InfeasibleBudgetError
from .market import MarketConfig, ParticipationProfile, participation_benefit, threshold_gap
from .quadrature import bisect_scalar, integrate, segment_integrals
from .virtual_cost import VirtualCostCurve, VirtualCostDensity, virtual_cost_curves, virtual_cost_density

FloatArray = npt.NDArray[np.float64]
Structure = Literal["SD", "FtD", "FLAT"]


@dataclass(frozen=True)
class BudgetResidual:
    """l = sum_i q_i theta_i (h(tau_i) - g(tau_i) - w(theta_bar))."""

    value: float
    addends: tuple[float, ...]
    per_capita_budget: float

    @property
    def gap(self) -> float:
        """B/s - l, the budget left for buying data."""
        return self.per_capita_budget - self.value

    @property
    def feasible(self) -> bool:
        return self.gap > 0.0

    def require_feasible(self) -> float:
        if not self.feasible:
            raise InfeasibleBudgetError(self.gap)
        return self.gap


def budget_residual(config: MarketConfig, profile: ParticipationProfile) -> BudgetResidual:
    w = float(participation_benefit(profile.theta_bar, config.privacy_model))
    adds = tuple(
        q * t * (threshold_gap(config, profile, i) - w)
        for i, (q, t) in enumerate(zip(profile.masses, profile.rates))
    )
    return BudgetResidual(math.fsum(adds), adds, config.per_capita_budget)


@dataclass(frozen=True)
class SplitIntegrals:
    """Pieces of omega split at x: lower first moment, upper sqrt moment, upper mass."""

    x: float
    lower_phi: float
    upper_sqrt: float
    upper_mass: float


def split_integrals(x: float, density: VirtualCostDensity) -> SplitIntegrals:
    lower = density.integrate(lambda p: p, hi=x) if x > density.phi_min else 0.0
    if x < density.phi_max:
        upper_sqrt = density.integrate(np.sqrt, lo=x)
        upper_mass = float(density.mass_between(np.array(x), np.array(density.phi_max)))
    else:
        upper_sqrt = upper_mass = 0.0
    return SplitIntegrals(x, lower, upper_sqrt, upper_mass)


def q_c(x: float, density: VirtualCostDensity) -> float:
    """Q_c(x) = int_{phi_min}^x phi omega + sqrt(x) int_x^{phi_max} sqrt(phi) omega."""
    s = split_integrals(x, density)
    return s.lower_phi + math.sqrt(max(x, 0.0)) * s.upper_sqrt


def _objective_constant(gamma: float, theta_bar: float, s: int) -> float:
    return theta_bar**2 * (1.0 - theta_bar) * (1.0 - gamma) * s


def r_c(x: float, density: VirtualCostDensity, config: MarketConfig, profile: ParticipationProfile) -> float:
    """R_c(x) = 2 gamma (int^x phi omega / x + int_x omega) + theta_bar^2 (1 - theta_bar)(1 - gamma) s."""
    if x <= 0.0:
        raise DomainError("R_c is undefined at x <= 0")
    s = split_integrals(x, density)
    return _r_from(s, config.gamma, profile.theta_bar, config.population_size)


def _r_from(s: SplitIntegrals, gamma: float, theta_bar: float, pop: int) -> float:
    return 2.0 * gamma * (s.lower_phi / s.x + s.upper_mass) + _objective_constant(gamma, theta_bar, pop)


def sqrt_moment(density: VirtualCostDensity) -> float:
    """sum_i q_i int sqrt(phi_i) f_i over participants."""
    return density.integrate(np.sqrt)


def check_low_budget(
    config: MarketConfig, profile: ParticipationProfile, density: VirtualCostDensity | None = None
) -> bool:
    """True iff (B/s - l)(2 gamma + theta(1-theta)(1-gamma)s) < gamma sqrt(phi_min) sum q int sqrt(phi) f."""
    density = density or virtual_cost_density(config, profile)
    L = budget_residual(config, profile).require_feasible()
    th, g = profile.theta_bar, config.gamma
    lhs = L * (2.0 * g + th * (1.0 - th) * (1.0 - g) * config.population_size)
    rhs = g * math.sqrt(density.phi_min) * sqrt_moment(density)
    return lhs < rhs


class Allocation:
    """Selection probability A_i(c) on [c_min, c_max], with level epsilon above tau_i."""

    epsilon: float = 0.0
    thresholds: tuple[float, ...] = ()

    def value(self, i: int, c: npt.ArrayLike) -> FloatArray:
        raise NotImplementedError

    def breakpoints(self, i: int) -> list[float]:
        return [self.thresholds[i]]

    def tail_integral(self, i: int, x: npt.ArrayLike, c_max: float) -> FloatArray:
        """int_x^{c_max} A_i(z) dz for every x, using panels split at the breakpoints."""
        x = np.asarray(x, dtype=float)
        flat = x.ravel()
        pts = np.unique(np.r_[flat, self.breakpoints(i), c_max])
        pts = pts[pts <= c_max]
        seg = segment_integrals(lambda z: self.value(i, z), pts)
        tail = np.r_[np.cumsum(seg[::-1])[::-1], 0.0]
        return tail[np.searchsorted(pts, flat)].reshape(x.shape)


@dataclass(frozen=True)
class CallableAllocation(Allocation):
    """Allocation from per-group callables; used for deviations and hand-built rules."""

    funcs: tuple[Callable[[FloatArray], FloatArray], ...]
    thresholds: tuple[float, ...]
    epsilon: float = 0.0
    extra_breaks: tuple[tuple[float, ...], ...] = ()
    above_threshold: bool = False

    def value(self, i: int, c: npt.ArrayLike) -> FloatArray:
        c = np.asarray(c, dtype=float)
        a = np.clip(np.broadcast_to(self.funcs[i](c), c.shape), 0.0, 1.0)
        if self.above_threshold:
            return a
        return np.where(c <= self.thresholds[i], a, self.epsilon)

    def breakpoints(self, i: int) -> list[float]:
        extra = list(self.extra_breaks[i]) if self.extra_breaks else []
        return [self.thresholds[i], *extra]


@dataclass(frozen=True)
class AllocationRule(Allocation):
    """Optimal allocation: plateau chi for phi <= phi_hat, eta/sqrt(phi) beyond.

    For SD rules the plateau is empty (phi_hat = phi_min, chi = 0).
    """

    structure: Structure
    case: str
    chi: float
    phi_hat: float
    eta: float
    budget_gap: float
    curves: tuple[VirtualCostCurve, ...]
    epsilon: float = 0.0
    rho_b: float = math.inf
    phi_prime: float | None = None
    details: dict[str, Any] = field(default_factory=dict, compare=False)

    @property
    def thresholds(self) -> tuple[float, ...]:  # type: ignore[override]
        return tuple(cv.tau for cv in self.curves)

    def value_phi(self, phi: npt.ArrayLike) -> FloatArray:
        phi = np.asarray(phi, dtype=float)
        if self.structure == "FLAT":
            return np.full(phi.shape, self.chi)
        with np.errstate(divide="ignore"):
            tail = self.eta / np.sqrt(phi)
        if self.structure == "SD":
            return np.minimum(tail, 1.0)
        return np.where(phi <= self.phi_hat, self.chi, np.minimum(tail, self.chi))

    def value(self, i: int, c: npt.ArrayLike) -> FloatArray:
        cv = self.curves[i]
        c = np.asarray(c, dtype=float)
        inside = c <= cv.tau
        a = self.value_phi(cv(np.clip(c, cv.c_min, cv.tau)))
        return np.where(inside, a, self.epsilon)

    def knee_cost(self, i: int) -> float | None:
        cv = self.curves[i]
        if self.structure != "FtD" or not (cv.phi_min < self.phi_hat < cv.phi_max):
            return None
        return float(cv.inverse(np.array(self.phi_hat)))

    def breakpoints(self, i: int) -> list[float]:
        knee = self.knee_cost(i)
        return [self.thresholds[i]] + ([knee] if knee is not None else [])

    def on_plateau(self, i: int, c: npt.ArrayLike) -> npt.NDArray[np.bool_]:
        c = np.asarray(c, dtype=float)
        if self.structure == "SD":
            return np.zeros(c.shape, dtype=bool)
        if self.structure == "FLAT":
            return c <= self.thresholds[i]
        return (c <= self.thresholds[i]) & (self.curves[i](np.minimum(c, self.thresholds[i])) <= self.phi_hat)

    def header(self) -> dict[str, Any]:
        return {
            "structure": self.structure,
            "case": self.case,
            "chi": self.chi,
            "phi_hat": self.phi_hat,
            "eta": self.eta,
            "epsilon": self.epsilon,
            "budget_gap": self.budget_gap,
            "rho_b": self.rho_b if math.isfinite(self.rho_b) else None,
        }

    def table(self, n: int = 500) -> list[tuple[int, float, float]]:
        rows = []
        for i, cv in enumerate(self.curves):
            c = np.linspace(cv.c_min, cv.tau, n)
            rows.extend((i, float(x), float(a)) for x, a in zip(c, self.value(i, c)))
        return rows


def _ratio(x: float, density: VirtualCostDensity, gamma: float, theta_bar: float, pop: int) -> float:
    if x <= 0.0:
        return 0.0
    s = split_integrals(x, density)
    q = s.lower_phi + math.sqrt(x) * s.upper_sqrt
    return q / _r_from(s, gamma, theta_bar, pop)


def solve_allocation(
    config: MarketConfig,
    profile: ParticipationProfile,
    density: VirtualCostDensity | None = None,
    xtol: float = 1e-12,
) -> AllocationRule:
    """Closed-form optimal allocation via the three-case analysis on rho_B."""
    L = budget_residual(config, profile).require_feasible()
    density = density or virtual_cost_density(config, profile)
    curves = tuple(virtual_cost_curves(config, profile))
    gamma, th, pop = config.gamma, profile.theta_bar, config.population_size
    lo, hi = density.phi_min, density.phi_max
    first_moment = density.integrate(lambda p: p)
    rho = L / (gamma * th) if gamma > 0.0 else math.inf
    common = dict(budget_gap=L, curves=curves, epsilon=config.epsilon, rho_b=rho)

    if L >= first_moment:
        # budget covers selecting everyone: no trade-off left to make
        return AllocationRule("FLAT", "3", 1.0, hi, 0.0, details={"trivial": True}, **common)

    if rho < _ratio(lo, density, gamma, th, pop):
        eta = L / sqrt_moment(density)
        return AllocationRule("SD", "1", 0.0, lo, eta, **common)

    if rho >= _ratio(hi, density, gamma, th, pop):
        return AllocationRule("FLAT", "3", L / first_moment, hi, 0.0, **common)

    scale = max(1.0, hi)
    phi_p = bisect_scalar(lambda x: _ratio(x, density, gamma, th, pop) - rho, lo, hi, xtol=xtol * scale)
    chi = L / q_c(phi_p, density)
    if chi <= 1.0:
        case, phi_hat = "2a", phi_p
    else:
        case, chi = "2b", 1.0
        phi_hat = bisect_scalar(lambda x: q_c(x, density) - L, phi_p, hi, xtol=xtol * scale)
    s = split_integrals(phi_hat, density)
    eta = (L - chi * s.lower_phi) / s.upper_sqrt
    return AllocationRule("FtD", case, chi, phi_hat, eta, phi_prime=phi_p, **common)


def unified_knee(
    config: MarketConfig, profile: ParticipationProfile, density: VirtualCostDensity | None = None, xtol: float = 1e-12
) -> float:
    """phi_hat from Q_c(phi) / max(1, R_c(phi)/(gamma theta_bar)) = B/s - l, both sub-cases at once."""
    L = budget_residual(config, profile).require_feasible()
    density = density or virtual_cost_density(config, profile)
    gamma, th = config.gamma, profile.theta_bar
    lo, hi = max(density.phi_min, 1e-300), density.phi_max

    def lhs(x: float) -> float:
        return q_c(x, density) / max(1.0, r_c(x, density, config, profile) / (gamma * th))

    return bisect_scalar(lambda x: lhs(x) - L, lo, hi, xtol=xtol * max(1.0, hi))


def budget_spent(rule: Allocation, config: MarketConfig, profile: ParticipationProfile) -> float:
    """s (sum_i q_i int phi_i A_i f_i + l), the virtual-cost form of expected spend."""
    curves = virtual_cost_curves(config, profile)
    total = 0.0
    for i, cv in enumerate(curves):
        f = cv.dist.pdf
        total += profile.masses[i] * integrate(
            lambda c, i=i, cv=cv, f=f: cv(c) * rule.value(i, c) * f(c),
            cv.c_min,
            cv.tau,
            breakpoints=[b for b in rule.breakpoints(i) if cv.c_min < b < cv.tau],
            rtol=1e-12,
        )
    return config.population_size * (total + budget_residual(config, profile).value)

