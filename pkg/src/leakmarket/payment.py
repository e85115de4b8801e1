"""Truthful payments, budget accounting and incentive audits.

With expected transfer T_i(c) = A_i(c) P_i(c), the payment rule is

    T_i(c) = A_i(c) (c - h(c)) + (1 - b_i) int_c^{c_max} A_i + kappa_i,
    kappa_i = h(tau_i) - g(tau_i) - (1 - b_i) int_{tau_i}^{c_max} A_i - w(theta_bar),

and an agent with true cost c reporting c~ gets
U_i(c~; c) = T_i(c~) - A_i(c~)(c - h(c)) - h(c) + w.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import numpy as np
import numpy.typing as npt

from .allocation import Allocation, budget_spent, solve_allocation
from .errors import UndefinedPaymentError
from .market import MarketConfig, ParticipationProfile, leakage_coefficient, participation_benefit, threshold_gap
from .quadrature import bisect_scalar, integrate

FloatArray = npt.NDArray[np.float64]


def payment_constant(i: int, allocation: Allocation, profile: ParticipationProfile, config: MarketConfig) -> float:
    """kappa_i = h(tau_i) - g(tau_i) - (1 - b) int_{tau_i}^{c_max} A - w(theta_bar)."""
    b = leakage_coefficient(config, profile, i)
    c_max = config.groups[i].cost_dist.c_max
    tau = profile.thresholds[i]
    tail = float(allocation.tail_integral(i, np.array([tau]), c_max)[0])
    w = float(participation_benefit(profile.theta_bar, config.privacy_model))
    return threshold_gap(config, profile, i) - (1.0 - b) * tail - w


@dataclass(frozen=True)
class PaymentRule:
    allocation: Allocation
    kappa: tuple[float, ...]
    b: tuple[float, ...]
    c_max: tuple[float, ...]

    def transfer(self, i: int, c: npt.ArrayLike) -> FloatArray:
        """Expected transfer A_i(c) P_i(c); finite even where A_i(c) = 0."""
        c = np.asarray(c, dtype=float)
        b = self.b[i]
        a = self.allocation.value(i, c)
        tail = self.allocation.tail_integral(i, c, self.c_max[i])
        return a * c * (1.0 - b) + (1.0 - b) * tail + self.kappa[i]

    def value(self, i: int, c: npt.ArrayLike) -> FloatArray:
        """P_i(c); raises where the selection probability is zero."""
        c = np.asarray(c, dtype=float)
        a = self.allocation.value(i, c)
        if np.any(a <= 0.0):
            raise UndefinedPaymentError("payment undefined where A_i(c) = 0")
        return self.transfer(i, c) / a


def build_payment(allocation: Allocation, config: MarketConfig, profile: ParticipationProfile) -> PaymentRule:
    n = config.n_groups
    return PaymentRule(
        allocation,
        tuple(payment_constant(i, allocation, profile, config) for i in range(n)),
        tuple(leakage_coefficient(config, profile, i) for i in range(n)),
        tuple(g.cost_dist.c_max for g in config.groups),
    )


@dataclass(frozen=True)
class Mechanism:
    allocation: Allocation
    payment: PaymentRule
    profile: ParticipationProfile
    config: MarketConfig = field(repr=False)

    @property
    def structure(self) -> str:
        return getattr(self.allocation, "structure", "custom")

    def with_kappa_shift(self, shift: Sequence[float] | float) -> "Mechanism":
        kap = tuple(np.asarray(self.payment.kappa) + np.broadcast_to(shift, (len(self.payment.kappa),)))
        return replace(self, payment=replace(self.payment, kappa=tuple(float(k) for k in kap)))

    def table(self, n: int = 500) -> list[tuple[int, float, float, float]]:
        rows = []
        for i, tau in enumerate(self.profile.thresholds):
            c = np.linspace(self.config.groups[i].cost_dist.c_min, tau, n)
            a = self.allocation.value(i, c)
            t = self.payment.transfer(i, c)
            with np.errstate(divide="ignore", invalid="ignore"):
                p = np.where(a > 0.0, t / a, np.nan)
            rows.extend((i, float(x), float(pp), float(aa)) for x, pp, aa in zip(c, p, a))
        return rows


def build_mechanism(
    config: MarketConfig, profile: ParticipationProfile, allocation: Allocation | None = None
) -> Mechanism:
    allocation = allocation or solve_allocation(config, profile)
    return Mechanism(allocation, build_payment(allocation, config, profile), profile, config)


def payment(c_tilde: npt.ArrayLike, i: int, mech: Mechanism) -> FloatArray:
    return mech.payment.value(i, c_tilde)


def utility(mech: Mechanism, i: int, report: npt.ArrayLike, cost: npt.ArrayLike) -> FloatArray:
    """U_i(report; cost) for participants; broadcasts report against cost."""
    cfg = mech.config
    b = mech.payment.b[i]
    report = np.asarray(report, dtype=float)
    cost = np.asarray(cost, dtype=float)
    h = cfg.privacy_model.h(cost, b)
    w = float(participation_benefit(mech.profile.theta_bar, cfg.privacy_model))
    a = mech.allocation.value(i, report)
    return mech.payment.transfer(i, report) - a * (cost - h) - h + w


def truthful_utility(mech: Mechanism, i: int, cost: npt.ArrayLike) -> FloatArray:
    return utility(mech, i, cost, cost)


@dataclass
class PaymentTotals:
    direct: float
    virtual: float

    @property
    def identity_gap(self) -> float:
        return abs(self.direct - self.virtual)


def expected_total_payment(mech: Mechanism, config: MarketConfig | None = None, rtol: float = 1e-12) -> PaymentTotals:
    """Direct s sum q int A P f against the virtual-cost form s (sum q int phi A f + l).

    The direct side is integrated adaptively: cost densities may have
    integrable endpoint singularities (beta shapes below 2).
    """
    config = config or mech.config
    total = 0.0
    for i, grp in enumerate(config.groups):
        d = grp.cost_dist
        tau = mech.profile.thresholds[i]
        val = integrate(lambda c, i=i, d=d: mech.payment.transfer(i, c) * d.pdf(c), d.c_min, tau,
                        breakpoints=mech.allocation.breakpoints(i), rtol=rtol)
        total += grp.mass * val
    direct = config.population_size * total
    virtual = budget_spent(mech.allocation, config, mech.profile)
    return PaymentTotals(direct, virtual)


@dataclass
class TruthfulnessVerdict:
    samples: int
    violations: list[dict[str, Any]]
    strict_failures: list[dict[str, Any]]
    structure: str

    @property
    def passed(self) -> bool:
        return not self.violations

    @property
    def strict(self) -> bool:
        return not self.strict_failures

    @property
    def strict_failures_on_plateau_only(self) -> bool:
        return all(f["on_plateau"] for f in self.strict_failures)

    def to_dict(self) -> dict[str, Any]:
        return {
            "samples": self.samples,
            "structure": self.structure,
            "passed": self.passed,
            "strict": self.strict,
            "strict_failures_on_plateau_only": self.strict_failures_on_plateau_only,
            "violations": self.violations,
            "strict_failures": self.strict_failures,
        }


def truthfulness_audit(
    mech: Mechanism,
    config: MarketConfig | None = None,
    samples: int = 100,
    grid: int = 1000,
    seed: int = 0,
    tol: float = 1e-10,
) -> TruthfulnessVerdict:
    """Grid search over reports for random (group, cost) participants.

    A violation is a report whose utility beats truth-telling by more than
    ``tol`` (relative). A strictness failure is a report more than one grid
    step away whose utility is not strictly below truth-telling.
    """
    config = config or mech.config
    rng = np.random.default_rng(seed)
    groups = rng.choice(config.n_groups, size=samples, p=config.masses)
    plateau = getattr(mech.allocation, "on_plateau", None)
    violations: list[dict[str, Any]] = []
    strict_fail: list[dict[str, Any]] = []
    for i in range(config.n_groups):
        idx = np.flatnonzero(groups == i)
        if idx.size == 0:
            continue
        d = config.groups[i].cost_dist
        tau = mech.profile.thresholds[i]
        reports = np.linspace(d.c_min, d.c_max, grid)
        step = reports[1] - reports[0]
        costs = rng.uniform(d.c_min, tau, idx.size)
        truth = truthful_utility(mech, i, costs)
        U = utility(mech, i, reports[None, :], costs[:, None])
        scale = np.maximum(1.0, np.abs(truth))
        gain = U.max(axis=1) - truth
        far = np.abs(reports[None, :] - costs[:, None]) > step
        near_tie = np.where(far, U - truth[:, None], -np.inf).max(axis=1)
        for j, c in enumerate(costs):
            if gain[j] > tol * scale[j]:
                violations.append({"group": i, "c": float(c), "argmax": float(reports[np.argmax(U[j])]),
                                   "gain": float(gain[j])})
            if near_tie[j] >= -1e-13 * scale[j]:
                on_plat = bool(plateau(i, np.array(c))) if plateau is not None else False
                strict_fail.append({"group": i, "c": float(c), "on_plateau": on_plat, "margin": float(near_tie[j])})
    return TruthfulnessVerdict(samples, violations, strict_fail, mech.structure)


@dataclass
class ParticipationVerdict:
    groups: list[dict[str, Any]]

    @property
    def passed(self) -> bool:
        return all(g["threshold_ok"] and g["fixed_point_ok"] for g in self.groups)

    def to_dict(self) -> dict[str, Any]:
        return {"passed": self.passed, "groups": self.groups}


def participation_audit(
    mech: Mechanism,
    config: MarketConfig | None = None,
    n_cost: int = 2000,
    n_report: int = 1000,
    rate_tol: float = 1e-3,
    tie_tol: float = 1e-12,
) -> ParticipationVerdict:
    """Best-response join decisions on a cost grid against the threshold structure.

    An agent joins when the best report's utility is at least -g(c); ties join.
    Each grid cost also considers its own truthful report.
    """
    config = config or mech.config
    out = []
    for i, grp in enumerate(config.groups):
        d = grp.cost_dist
        tau = mech.profile.thresholds[i]
        b = mech.payment.b[i]
        edges = np.linspace(d.c_min, d.c_max, n_cost + 1)
        costs = 0.5 * (edges[:-1] + edges[1:])
        step = edges[1] - edges[0]
        reports = np.linspace(d.c_min, d.c_max, n_report)
        best = np.maximum(
            utility(mech, i, reports[None, :], costs[:, None]).max(axis=1),
            truthful_utility(mech, i, costs),
        )
        outside = -config.privacy_model.g(costs, b)
        joins = best >= outside - tie_tol * np.maximum(1.0, np.abs(outside))
        should = costs <= tau
        mismatch = joins != should
        ambiguous = np.abs(costs - tau) <= step
        bad = mismatch & ~ambiguous
        mass = float(np.sum(joins * np.diff(d.cdf(edges))))
        first = float(costs[np.argmax(bad)]) if bad.any() else None
        out.append({
            "group": i,
            "tau": tau,
            "theta": mech.profile.rates[i],
            "empirical_theta": mass,
            "threshold_ok": not bad.any(),
            "fixed_point_ok": abs(mass - mech.profile.rates[i]) <= rate_tol,
            "first_contradiction": first,
        })
    return ParticipationVerdict(out)


def decision_threshold(mech: Mechanism, i: int, config: MarketConfig | None = None) -> float:
    """Largest cost at which joining (truthfully) weakly beats staying out."""
    config = config or mech.config
    d = config.groups[i].cost_dist
    b = mech.payment.b[i]

    def margin(c: float) -> float:
        u = float(truthful_utility(mech, i, np.array([c]))[0])
        return u + float(config.privacy_model.g(c, b))

    if margin(d.c_max) >= 0.0:
        return d.c_max
    if margin(d.c_min) < 0.0:
        return d.c_min
    return bisect_scalar(lambda c: -margin(c), d.c_min, d.c_max, xtol=1e-13 * max(1.0, d.c_max))


def envelope_residual(mech: Mechanism, i: int, costs: npt.ArrayLike, step: float = 1e-6) -> FloatArray:
    """Relative gap between dU(c;c)/dc by central differences and -(1-b)A(c) - b."""
    costs = np.asarray(costs, dtype=float)
    b = mech.payment.b[i]
    num = (truthful_utility(mech, i, costs + step) - truthful_utility(mech, i, costs - step)) / (2.0 * step)
    exact = -(1.0 - b) * mech.allocation.value(i, costs) - b
    return np.abs(num - exact) / np.maximum(1e-12, np.abs(exact))


def no_leakage_payment(mech: Mechanism, i: int, c: npt.ArrayLike) -> FloatArray:
    """P_i(c) for the same allocation with the leakage coefficient forced to zero (h = g = 0)."""
    cfg = mech.config
    c = np.asarray(c, dtype=float)
    a = mech.allocation.value(i, c)
    c_max = cfg.groups[i].cost_dist.c_max
    tau = mech.profile.thresholds[i]
    w = float(participation_benefit(mech.profile.theta_bar, cfg.privacy_model))
    kappa0 = -float(mech.allocation.tail_integral(i, np.array([tau]), c_max)[0]) - w
    if np.any(a <= 0.0):
        raise UndefinedPaymentError("payment undefined where A_i(c) = 0")
    return c + (mech.allocation.tail_integral(i, c, c_max) + kappa0) / a

