"""Worst-case variance, bias and their weighted trade-off for a mechanism.

Binary data x with P(x = 1 | c, group i) = p_i(c). Non-participants are pinned
at x = 1, the orientation that maximises bias under positive correlation.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
import numpy.typing as npt

from .allocation import (
    AllocationRule,
    budget_residual,
    check_low_budget,
    r_c,
    sqrt_moment,
)
from .discrete import discretize, solve_discrete
from .errors import DomainError, InfeasibleBudgetError, RegimeError, RegularityError
from .market import MarketConfig, ParticipationProfile, threshold_gap
from .payment import Mechanism, expected_total_payment
from .quadrature import bisect_scalar, fixed_panels, integrate
from .virtual_cost import virtual_cost_curves, virtual_cost_density

FloatArray = npt.NDArray[np.float64]


@dataclass(frozen=True)
class AdversaryProfile:
    """Per-group data-cost link p_i(c) on participant costs."""

    funcs: tuple[Callable[[FloatArray], FloatArray], ...]
    breaks: tuple[tuple[float, ...], ...] = ()
    label: str = "custom"

    def value(self, i: int, c: npt.ArrayLike) -> FloatArray:
        c = np.asarray(c, dtype=float)
        return np.clip(np.broadcast_to(self.funcs[i](c), c.shape), 0.0, 1.0)

    def breakpoints(self, i: int) -> list[float]:
        return list(self.breaks[i]) if self.breaks else []

    @classmethod
    def constant(cls, value: float, n_groups: int) -> "AdversaryProfile":
        return cls(tuple((lambda c, v=value: np.full(np.shape(c), v)) for _ in range(n_groups)), label=f"constant {value}")


def _moments(mech: Mechanism, adversary: AdversaryProfile, panels: int = 48) -> tuple[float, float]:
    """(sum q int p/A f, sum q int p f) over participants."""
    cfg = mech.config
    e_inv, e_p = 0.0, 0.0
    for i, grp in enumerate(cfg.groups):
        d = grp.cost_dist
        tau = mech.profile.thresholds[i]
        cuts = sorted({d.c_min, tau, *[x for x in (*mech.allocation.breakpoints(i), *adversary.breakpoints(i))
                                       if d.c_min < x < tau]})
        for a, b in zip(cuts[:-1], cuts[1:]):
            x, w = fixed_panels(a, b, panels)
            p = adversary.value(i, x)
            A = mech.allocation.value(i, x)
            f = d.pdf(x)
            if np.any((A <= 0.0) & (p > 0.0) & (f > 0.0)):
                raise DomainError("selection probability zero on a set where p > 0: variance is infinite")
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(p > 0.0, p / A, 0.0)
            e_inv += grp.mass * float(w @ (ratio * f))
            e_p += grp.mass * float(w @ (p * f))
    return e_inv, e_p


def ht_variance(mech: Mechanism, adversary: AdversaryProfile, config: MarketConfig | None = None) -> float:
    """(1/(s th)) (E[p/A | joined] - E[p | joined]^2)."""
    config = config or mech.config
    th = mech.profile.theta_bar
    e_inv, e_p = _moments(mech, adversary)
    return (e_inv / th - (e_p / th) ** 2) / (config.population_size * th)


def worst_case_bias(profile: ParticipationProfile, adversary: AdversaryProfile, config: MarketConfig) -> float:
    """(1 - th)(1 - E[p | joined])."""
    th = profile.theta_bar
    e_p = 0.0
    for i, grp in enumerate(config.groups):
        d = grp.cost_dist
        e_p += grp.mass * integrate(
            lambda c, i=i, d=d: adversary.value(i, c) * d.pdf(c),
            d.c_min, profile.thresholds[i],
            breakpoints=adversary.breakpoints(i), rtol=1e-12,
        )
    return (1.0 - th) * (1.0 - e_p / th)


def objective(mech: Mechanism, adversary: AdversaryProfile) -> tuple[float, float, float]:
    """(variance, bias, gamma V + (1 - gamma) bias) sharing one set of moments."""
    cfg = mech.config
    th = mech.profile.theta_bar
    e_inv, e_p = _moments(mech, adversary)
    var = (e_inv / th - (e_p / th) ** 2) / (cfg.population_size * th)
    bias = (1.0 - th) * (1.0 - e_p / th)
    return var, bias, cfg.gamma * var + (1.0 - cfg.gamma) * bias


# --- adversary best responses ---------------------------------------------------


def _ramp(curves, phi_ref: float, scale: float, label: str) -> AdversaryProfile:
    """p_i(c) = min(1, scale * phi_i(c) / phi_ref)."""
    funcs = tuple(
        (lambda c, cv=cv: np.minimum(1.0, scale * cv(np.clip(c, cv.c_min, cv.tau)) / phi_ref)) for cv in curves
    )
    breaks = []
    for cv in curves:
        target = phi_ref / scale
        breaks.append((float(cv.inverse(np.array(target))),) if cv.phi_min < target < cv.phi_max else ())
    return AdversaryProfile(funcs, tuple(breaks), label)


def equilibrium_adversary(mech: Mechanism) -> AdversaryProfile:
    """Closed-form continuous counterpart of the discrete saddle's p for an optimal rule."""
    rule = mech.allocation
    if not isinstance(rule, AllocationRule):
        raise TypeError("equilibrium adversary needs an optimal AllocationRule")
    cfg, prof = mech.config, mech.profile
    curves = rule.curves
    n = cfg.n_groups
    if rule.case == "1":
        return AdversaryProfile.constant(1.0, n)
    if rule.case == "2a":
        return _ramp(curves, rule.phi_hat, 1.0, "ramp to phi_hat")
    density = virtual_cost_density(cfg, prof)
    g, th = cfg.gamma, prof.theta_bar
    if rule.case == "2b":
        target = g * th
        lo, hi = density.phi_min, rule.phi_prime if rule.phi_prime is not None else rule.phi_hat
        phi_k = bisect_scalar(lambda x: target - r_c(x, density, cfg, prof), max(lo, 1e-300), hi,
                              xtol=1e-12 * max(1.0, hi))
        return _ramp(curves, phi_k, 1.0, "ramp to R_c root")
    if rule.details.get("trivial"):
        return best_response_threshold(mech)
    first = density.integrate(lambda p: p)
    const = th**2 * (1.0 - th) * (1.0 - g) * cfg.population_size
    if g == 0.0:
        return AdversaryProfile.constant(0.0 if th < 1.0 else 1.0, n)
    z = (g * th * first / rule.budget_gap - const) * density.phi_max / (2.0 * g * first)
    z = min(max(z, 0.0), 1.0)
    return _ramp(curves, density.phi_max, z, "scaled ramp") if z > 0.0 else AdversaryProfile.constant(0.0, n)


def discrete_adversary(mech: Mechanism, K: int = 1000) -> AdversaryProfile:
    """p from the K-panel discrete saddle, lifted back to costs through phi_i."""
    cfg, prof = mech.config, mech.profile
    inst = discretize(cfg, prof, K)
    sad = solve_discrete(inst)
    curves = virtual_cost_curves(cfg, prof)
    phi_k, p_k = inst.phi, np.asarray(sad.p)
    funcs = tuple(
        (lambda c, cv=cv: np.interp(cv(np.clip(c, cv.c_min, cv.tau)), phi_k, p_k)) for cv in curves
    )
    return AdversaryProfile(funcs, label=f"discrete K={K}")


def best_response_threshold(mech: Mechanism, panels: int = 400) -> AdversaryProfile:
    """Exact adversary best response to an arbitrary allocation.

    For a fixed mass S = E[p], the variance term is largest when p fills the
    smallest selection probabilities first, so p = 1{A < t} with a fractional
    level on ties; S is then chosen by maximising the concave 1-D objective.
    """
    cfg, prof = mech.config, mech.profile
    g, th, s = cfg.gamma, prof.theta_bar, cfg.population_size
    a_coef = g / (s * th**2)
    d_coef = (1.0 - th) * (1.0 - g) / th
    vals, mass = [], []
    for i, grp in enumerate(cfg.groups):
        d = grp.cost_dist
        x, w = fixed_panels(d.c_min, prof.thresholds[i], panels)
        vals.append(mech.allocation.value(i, x))
        mass.append(grp.mass * w * d.pdf(x))
    A = np.concatenate(vals)
    m = np.concatenate(mass)
    order = np.argsort(A, kind="stable")
    A, m = A[order], m[order]
    if np.any(A <= 0.0):
        raise DomainError("selection probability zero on participants")
    cum_m = np.r_[0.0, np.cumsum(m)]
    # marginal value of adding mass at position j given the mass already filled
    marg = a_coef * (1.0 / A - 2.0 * cum_m[:-1] / th) - d_coef
    if marg[0] <= 0.0:
        t, level = A[0], 0.0
    elif np.all(marg > 0.0):
        t, level = np.inf, 1.0
    else:
        j = int(np.argmax(marg <= 0.0))
        t = A[j]
        # mass filled at level t solves a(1/t - 2 S/th) - d = 0
        S = th / 2.0 * (1.0 / t - d_coef / a_coef) if a_coef > 0.0 else cum_m[j]
        tie = np.isclose(A, t, rtol=1e-12, atol=0.0)
        below = cum_m[np.argmax(tie)] if tie.any() else cum_m[j]
        tie_mass = m[tie].sum()
        level = float(np.clip((S - below) / tie_mass, 0.0, 1.0)) if tie_mass > 0.0 else 0.0

    def make(i: int):
        def f(c: FloatArray) -> FloatArray:
            a = mech.allocation.value(i, c)
            return np.where(np.isclose(a, t, rtol=1e-12, atol=0.0), level, (a < t).astype(float))
        return f

    return AdversaryProfile(tuple(make(i) for i in range(cfg.n_groups)), label="threshold best response")


def adversary_best_response(mech: Mechanism, config: MarketConfig | None = None, method: str = "auto") -> AdversaryProfile:
    """Worst-case p for the mechanism.

    ``auto`` uses the closed-form equilibrium for optimal rules and the exact
    threshold best response otherwise; ``discrete`` lifts the K=1000 saddle.
    """
    if method == "discrete":
        return discrete_adversary(mech)
    if method == "threshold":
        return best_response_threshold(mech)
    if isinstance(mech.allocation, AllocationRule):
        return equilibrium_adversary(mech)
    return best_response_threshold(mech)


@dataclass
class TradeoffReport:
    worst_case_variance: float
    worst_case_bias: float
    combined: float
    gamma: float
    budget_used: float
    adversary: AdversaryProfile = field(repr=False)
    reduced_objective: float | None = None
    reduced_u: float | None = None
    upper_bound_note: str = "for non-binary data in [0, 1] the value is an upper bound on the trade-off"

    def to_dict(self) -> dict[str, Any]:
        return {
            "worst_case_variance": self.worst_case_variance,
            "worst_case_bias": self.worst_case_bias,
            "combined": self.combined,
            "gamma": self.gamma,
            "budget_used": self.budget_used,
            "adversary": self.adversary.label,
            "reduced_objective": self.reduced_objective,
            "reduced_u": self.reduced_u,
            "note": self.upper_bound_note,
        }


def worst_case_tradeoff(mech: Mechanism, config: MarketConfig | None = None, adversary: AdversaryProfile | None = None) -> TradeoffReport:
    config = config or mech.config
    adversary = adversary or adversary_best_response(mech)
    var, bias, total = objective(mech, adversary)
    t_star = u = None
    if isinstance(mech.allocation, AllocationRule) and mech.allocation.case == "1":
        t_star, u = reduced_objective(config, mech.profile)
    return TradeoffReport(var, bias, total, config.gamma, expected_total_payment(mech).direct, adversary, t_star, u)


# --- reduced objective and full-participation conditions -----------------------


def _reduced_parts(config: MarketConfig, profile: ParticipationProfile) -> tuple[float, float, float]:
    """(r, L, theta_bar) with r = (sum q int sqrt(phi) f)^2, L = B/s - l."""
    density = virtual_cost_density(config, profile)
    L = budget_residual(config, profile).gap
    return sqrt_moment(density) ** 2, L, profile.theta_bar


def _reduced_value(config: MarketConfig, profile: ParticipationProfile) -> float:
    r, L, th = _reduced_parts(config, profile)
    return config.gamma / config.population_size * (r / (th**2 * L) - 1.0 / th)


def reduced_objective(config: MarketConfig, profile: ParticipationProfile) -> tuple[float, float]:
    """(T*, U) with U = r/(th^2 (B/s - l)) and T* = (gamma/s)(U - 1/th), valid in the low-budget regime."""
    if not check_low_budget(config, profile):
        raise RegimeError("low-budget condition fails; use worst_case_tradeoff on the solved mechanism")
    r, L, th = _reduced_parts(config, profile)
    U = r / (th**2 * L)
    return config.gamma / config.population_size * (U - 1.0 / th), U


def _partial(func: Callable[[FloatArray], float], x: FloatArray, i: int, h: float) -> float:
    """d func / d x_i: central difference, one-sided second order at x_i = 1."""
    e = np.zeros_like(x)
    e[i] = h
    if x[i] + h <= 1.0:
        return (func(x + e) - func(x - e)) / (2.0 * h)
    return (3.0 * func(x) - 4.0 * func(x - e) + func(x - 2.0 * e)) / (2.0 * h)


@dataclass
class FullParticipationReport:
    points: list[dict[str, Any]]
    prop1: bool
    prop2: bool
    derivative_scan_ok: bool | None

    def to_dict(self) -> dict[str, Any]:
        return {"prop1_holds": self.prop1, "prop2_holds": self.prop2,
                "derivative_scan_ok": self.derivative_scan_ok, "points": self.points}


def condition_functions(config: MarketConfig, rates: Sequence[float], h: float = 1e-5) -> dict[str, Any]:
    """D_i, delta_i and the ingredients at one profile, with partials by central differences."""
    x = np.asarray(rates, dtype=float)
    n = config.n_groups
    q = config.masses
    prof = config.profile(x, enforce_floor=False)
    r, L, th = _reduced_parts(config, prof)
    w = float(config.privacy_model.w(th))
    w_prime = config.privacy_model.w1

    def gap_j(j: int) -> Callable[[FloatArray], float]:
        return lambda y: threshold_gap(config, config.profile(y, enforce_floor=False), j)

    def r_of(y: FloatArray) -> float:
        return _reduced_parts(config, config.profile(y, enforce_floor=False))[0]

    def t_of(y: FloatArray) -> float:
        return _reduced_value(config, config.profile(y, enforce_floor=False))

    D, delta, dgap, dT = [], [], [], []
    for i in range(n):
        gap_i = threshold_gap(config, prof, i)
        d_own = _partial(gap_j(i), x, i, h)
        d_r = _partial(r_of, x, i, h)
        cross = sum(q[j] * x[j] * _partial(gap_j(j), x, i, h) for j in range(n) if j != i)
        D.append((x[i] * d_own + gap_i - w) / th + d_r * L / (th * q[i] * r) - 2.0 * L / th**2
                 + L**2 / (th * r) + cross / (q[i] * th))
        delta.append((w + th * w_prime - gap_i) / x[i] - d_r * L / (x[i] * q[i] * r) + 2.0 * L / (x[i] * th)
                     - L**2 / (x[i] * r) - cross / (q[i] * x[i]))
        dgap.append(d_own)
        dT.append(_partial(t_of, x, i, h))
    return {"D": D, "delta": delta, "dgap": dgap, "w_prime": w_prime, "dT": dT, "r": r, "L": L, "theta_bar": th}


def full_participation_check(config: MarketConfig, n_grid: int = 5, h: float = 1e-5, tol: float = 1e-9) -> FullParticipationReport:
    """Scan a product grid of rates in [theta_min, 1] for the two sufficient conditions.

    Each proposition holds when, at every grid point, the low-budget condition
    holds and its condition (ii) holds for every group. The numerical scan of
    dT*/dtheta_i is reported alongside as an independent check.
    """
    axis = np.linspace(config.theta_min, 1.0, n_grid)
    points = []
    p1 = p2 = True
    for rates in itertools.product(axis, repeat=config.n_groups):
        rec: dict[str, Any] = {"rates": list(map(float, rates))}
        try:
            prof = config.profile(rates)
            rec["regime"] = bool(check_low_budget(config, prof))
        except (InfeasibleBudgetError, RegularityError) as exc:
            rec["regime"] = False
            rec["error"] = str(exc)
            points.append(rec)
            p1 = p2 = False
            continue
        cf = condition_functions(config, rates, h)
        rec.update(cf)
        rec["prop1_ii"] = [cf["w_prime"] >= d for d in cf["D"]]
        rec["prop2_ii"] = [dg <= dl for dg, dl in zip(cf["dgap"], cf["delta"])]
        rec["dT_nonpositive"] = [v <= tol for v in cf["dT"]]
        p1 &= rec["regime"] and all(rec["prop1_ii"])
        p2 &= rec["regime"] and all(rec["prop2_ii"])
        points.append(rec)
    scan = None
    if p1 or p2:
        scan = all(all(pt["dT_nonpositive"]) for pt in points)
    return FullParticipationReport(points, p1, p2, scan)


def budget_sweep(config: MarketConfig, profile_rates: Sequence[float], budgets: Sequence[float]) -> list[dict[str, Any]]:
    """Optimal worst-case trade-off along a budget axis (profile held fixed)."""
    from .payment import build_mechanism

    rows = []
    for B in budgets:
        cfg = config.replace(budget=float(B))
        prof = cfg.profile(profile_rates)
        mech = build_mechanism(cfg, prof)
        rep = worst_case_tradeoff(mech)
        rows.append({"budget": float(B), "structure": mech.structure, "T": rep.combined,
                     "T_reduced": rep.reduced_objective})
    return rows

