"""Market instances: groups, cost distributions, privacy-cost and benefit families."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Literal, Sequence

import numpy as np
import numpy.typing as npt
from scipy import special

from .errors import ConfigError, DomainError

FloatArray = npt.NDArray[np.float64]
ArrayLike = npt.ArrayLike

FAMILIES = ("uniform", "truncated-exponential", "beta-on-interval")


@dataclass(frozen=True)
class CorrelationStrength:
    """Leakage per unit of within-group and outside-group participation."""

    intra: float = 0.0
    inter: float = 0.0

    def __post_init__(self) -> None:
        for name in ("intra", "inter"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0.0):
                raise ConfigError("must be finite and >= 0", f"correlation.{name}")


@dataclass(frozen=True)
class CostDistribution:
    """Cost marginal on [c_min, c_max]. ``params`` holds family parameters.

    truncated-exponential takes ``rate``; beta-on-interval takes ``a`` and ``b``.
    """

    family: str
    c_min: float
    c_max: float
    params: tuple[tuple[str, float], ...] = ()

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}; expected one of {FAMILIES}", "cost_dist.family")
        if not (math.isfinite(self.c_min) and math.isfinite(self.c_max)):
            raise ConfigError("support bounds must be finite", "cost_dist")
        if not (0.0 <= self.c_min < self.c_max):
            raise ConfigError("need 0 <= c_min < c_max", "cost_dist")
        p = dict(self.params)
        if self.family == "truncated-exponential":
            if "rate" not in p or not math.isfinite(p["rate"]) or p["rate"] == 0.0:
                raise ConfigError("truncated-exponential needs a finite nonzero 'rate'", "cost_dist.params.rate")
        elif self.family == "beta-on-interval":
            for k in ("a", "b"):
                if k not in p or not (p[k] > 0.0):
                    raise ConfigError("beta-on-interval needs positive 'a' and 'b'", f"cost_dist.params.{k}")

    @classmethod
    def uniform(cls, c_min: float, c_max: float) -> "CostDistribution":
        return cls("uniform", c_min, c_max)

    @classmethod
    def truncated_exponential(cls, c_min: float, c_max: float, rate: float) -> "CostDistribution":
        return cls("truncated-exponential", c_min, c_max, (("rate", float(rate)),))

    @classmethod
    def beta(cls, c_min: float, c_max: float, a: float, b: float) -> "CostDistribution":
        return cls("beta-on-interval", c_min, c_max, (("a", float(a)), ("b", float(b))))

    def param(self, name: str) -> float:
        return dict(self.params)[name]

    @property
    def width(self) -> float:
        return self.c_max - self.c_min

    def _beta_pdf(self, c: FloatArray) -> FloatArray:
        a, b = self.param("a"), self.param("b")
        y = np.clip((c - self.c_min) / self.width, 0.0, 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            logp = special.xlogy(a - 1.0, y) + special.xlog1py(b - 1.0, -y) - special.betaln(a, b)
        return np.exp(logp) / self.width

    def pdf(self, c: ArrayLike) -> FloatArray:
        c = np.asarray(c, dtype=float)
        inside = (c >= self.c_min) & (c <= self.c_max)
        if self.family == "uniform":
            out = np.full(c.shape, 1.0 / self.width)
        elif self.family == "truncated-exponential":
            lam = self.param("rate")
            out = lam * np.exp(-lam * (c - self.c_min)) / (-np.expm1(-lam * self.width))
        else:
            out = self._beta_pdf(c)
        return np.where(inside, out, 0.0)

    def cdf(self, c: ArrayLike) -> FloatArray:
        c = np.clip(np.asarray(c, dtype=float), self.c_min, self.c_max)
        if self.family == "uniform":
            return (c - self.c_min) / self.width
        if self.family == "truncated-exponential":
            lam = self.param("rate")
            return np.expm1(-lam * (c - self.c_min)) / np.expm1(-lam * self.width)
        return special.betainc(self.param("a"), self.param("b"), (c - self.c_min) / self.width)

    def quantile(self, u: ArrayLike) -> FloatArray:
        u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
        if self.family == "uniform":
            return self.c_min + u * self.width
        if self.family == "truncated-exponential":
            lam = self.param("rate")
            c = self.c_min - np.log1p(u * np.expm1(-lam * self.width)) / lam
            return np.clip(c, self.c_min, self.c_max)
        return self.c_min + self.width * special.betaincinv(self.param("a"), self.param("b"), u)

    def dpdf(self, c: ArrayLike) -> FloatArray:
        """Analytic derivative f'(c) on the open support."""
        c = np.asarray(c, dtype=float)
        if self.family == "uniform":
            return np.zeros(c.shape)
        if self.family == "truncated-exponential":
            return -self.param("rate") * self.pdf(c)
        a, b = self.param("a"), self.param("b")
        y = np.clip((c - self.c_min) / self.width, 1e-300, 1.0 - 1e-16)
        with np.errstate(divide="ignore", invalid="ignore"):
            slope = ((a - 1.0) / y - (b - 1.0) / (1.0 - y)) / self.width
            return np.nan_to_num(self.pdf(c) * slope)

    def hazard_ratio(self, c: ArrayLike) -> FloatArray:
        """F(c)/f(c), continuous at c_min where it vanishes."""
        c = np.asarray(c, dtype=float)
        F = self.cdf(c)
        f = self.pdf(c)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = F / f
        r = np.where(F == 0.0, 0.0, r)
        if np.any(~np.isfinite(r)):
            raise DomainError("f(c) = 0 at a cost with F(c) > 0; virtual cost undefined")
        return r

    def sample(self, rng: np.random.Generator, size: int) -> FloatArray:
        return self.quantile(rng.random(size))


@dataclass(frozen=True)
class DataLink:
    """p(c) = clamp(p0 + slope * (c - c_min) / (c_max - c_min), 0, 1)."""

    p0: float = 0.5
    slope: float = 0.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.p0) and math.isfinite(self.slope)):
            raise ConfigError("data link parameters must be finite", "data_link")

    def prob(self, c: ArrayLike, dist: CostDistribution) -> FloatArray:
        c = np.asarray(c, dtype=float)
        return np.clip(self.p0 + self.slope * (c - dist.c_min) / dist.width, 0.0, 1.0)


GFamily = Literal["ratio", "offset"]


@dataclass(frozen=True)
class PrivacyCostModel:
    """b = min(b_cap, a_intra*theta_i + a_inter*theta_out), h = c*b, w = w0 + w1*theta_bar.

    ``g_family='ratio'`` gives g = rho*h. ``g_family='offset'`` gives
    g = h - kappa*c, so h - g = kappa*c does not depend on correlation.
    """

    b_cap: float = 0.9
    rho: float = 0.0
    w0: float = 0.0
    w1: float = 0.0
    g_family: GFamily = "ratio"
    kappa: float = 0.0

    def __post_init__(self) -> None:
        if not (0.0 < self.b_cap < 1.0):
            raise ConfigError("must lie in (0, 1)", "privacy_model.b_cap")
        # rho = 1 (g = h) is admitted for degenerate checks; validate_assumptions flags it
        if not (0.0 <= self.rho <= 1.0):
            raise ConfigError("must lie in [0, 1)", "privacy_model.rho")
        if not (self.w0 >= 0.0 and math.isfinite(self.w0)):
            raise ConfigError("must be finite and >= 0", "privacy_model.w0")
        if not (self.w1 >= 0.0 and math.isfinite(self.w1)):
            raise ConfigError("must be finite and >= 0", "privacy_model.w1")
        if self.g_family not in ("ratio", "offset"):
            raise ConfigError("must be 'ratio' or 'offset'", "privacy_model.g_family")
        if not (0.0 <= self.kappa < 1.0):
            raise ConfigError("must lie in [0, 1)", "privacy_model.kappa")

    def b(self, alpha: CorrelationStrength, theta_i: ArrayLike, theta_out: ArrayLike) -> FloatArray:
        raw = alpha.intra * np.asarray(theta_i, dtype=float) + alpha.inter * np.asarray(theta_out, dtype=float)
        return np.minimum(self.b_cap, raw)

    def h(self, c: ArrayLike, b: ArrayLike) -> FloatArray:
        return np.asarray(c, dtype=float) * b

    def g(self, c: ArrayLike, b: ArrayLike) -> FloatArray:
        c = np.asarray(c, dtype=float)
        if self.g_family == "ratio":
            return self.rho * c * b
        return c * (np.asarray(b, dtype=float) - self.kappa)

    def gap(self, c: ArrayLike, b: ArrayLike) -> FloatArray:
        """h - g."""
        c = np.asarray(c, dtype=float)
        if self.g_family == "ratio":
            return (1.0 - self.rho) * c * b
        return self.kappa * c + 0.0 * np.asarray(b, dtype=float)

    def w(self, theta_bar: ArrayLike) -> FloatArray:
        return self.w0 + self.w1 * np.asarray(theta_bar, dtype=float)


@dataclass(frozen=True)
class GroupSpec:
    mass: float
    cost_dist: CostDistribution
    correlation: CorrelationStrength = field(default_factory=CorrelationStrength)
    data_link: DataLink = field(default_factory=DataLink)

    def __post_init__(self) -> None:
        if not (0.0 < self.mass <= 1.0):
            raise ConfigError("must lie in (0, 1]", "groups[].mass")


@dataclass(frozen=True)
class MarketConfig:
    population_size: int
    budget: float
    gamma: float
    groups: tuple[GroupSpec, ...]
    privacy_model: PrivacyCostModel = field(default_factory=PrivacyCostModel)
    theta_min: float = 0.1
    epsilon: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "groups", tuple(self.groups))
        if int(self.population_size) != self.population_size or self.population_size < 1:
            raise ConfigError("must be a positive integer", "population_size")
        if not (self.budget > 0.0 and math.isfinite(self.budget)):
            raise ConfigError("must be positive", "budget")
        if not (0.0 <= self.gamma <= 1.0):
            raise ConfigError("must lie in [0, 1]", "gamma")
        if not self.groups:
            raise ConfigError("at least one group required", "groups")
        total = math.fsum(g.mass for g in self.groups)
        if abs(total - 1.0) > 1e-12:
            raise ConfigError(f"masses sum to {total!r}, expected 1", "groups[].mass")
        if not (0.0 < self.theta_min <= 1.0):
            raise ConfigError("must lie in (0, 1]", "theta_min")
        if not (0.0 <= self.epsilon <= 1.0):
            raise ConfigError("must lie in [0, 1]", "epsilon")

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    @property
    def masses(self) -> FloatArray:
        return np.array([g.mass for g in self.groups])

    @property
    def per_capita_budget(self) -> float:
        return self.budget / self.population_size

    def profile(self, rates: Sequence[float] | float, enforce_floor: bool = True) -> "ParticipationProfile":
        return ParticipationProfile.build(self, rates, enforce_floor=enforce_floor)

    def replace(self, **changes: Any) -> "MarketConfig":
        from dataclasses import replace

        return replace(self, **changes)


@dataclass(frozen=True)
class ParticipationProfile:
    """Per-group equilibrium participation rates with their averages and cost thresholds."""

    rates: tuple[float, ...]
    masses: tuple[float, ...]
    thresholds: tuple[float, ...]

    @classmethod
    def build(cls, config: MarketConfig, rates: Sequence[float] | float, enforce_floor: bool = True) -> "ParticipationProfile":
        r = np.broadcast_to(np.asarray(rates, dtype=float), (config.n_groups,))
        if np.any(~(r > 0.0)) or np.any(r > 1.0):
            raise ConfigError("rates must lie in (0, 1]", "profile.rates")
        if enforce_floor and np.any(r < config.theta_min - 1e-15):
            raise ConfigError(f"rates must be >= theta_min = {config.theta_min}", "profile.rates")
        taus = tuple(float(g.cost_dist.quantile(t)) for g, t in zip(config.groups, r))
        taus = tuple(g.cost_dist.c_max if t == 1.0 else tau for g, t, tau in zip(config.groups, r, taus))
        return cls(tuple(float(x) for x in r), tuple(g.mass for g in config.groups), taus)

    @property
    def theta(self) -> FloatArray:
        return np.array(self.rates)

    @property
    def theta_bar(self) -> float:
        return math.fsum(q * t for q, t in zip(self.masses, self.rates))

    def outside_rate(self, i: int) -> float:
        """Mass-weighted average rate of the other groups (0 for a one-group market)."""
        q = np.array(self.masses)
        t = np.array(self.rates)
        mask = np.arange(len(q)) != i
        if not mask.any():
            return 0.0
        return float(q[mask] @ t[mask] / q[mask].sum())


def leakage_coefficient(config: MarketConfig, profile: ParticipationProfile, i: int) -> float:
    group = config.groups[i]
    return float(config.privacy_model.b(group.correlation, profile.rates[i], profile.outside_rate(i)))


def _check_support(c: ArrayLike, dist: CostDistribution) -> FloatArray:
    c = np.asarray(c, dtype=float)
    tol = 1e-12 * max(1.0, dist.c_max)
    if np.any(c < dist.c_min - tol) or np.any(c > dist.c_max + tol):
        raise DomainError(f"cost outside support [{dist.c_min}, {dist.c_max}]")
    return c


def privacy_cost_participant(c: ArrayLike, config: MarketConfig, profile: ParticipationProfile, i: int) -> FloatArray:
    """h(c) = c*b."""
    c = _check_support(c, config.groups[i].cost_dist)
    return config.privacy_model.h(c, leakage_coefficient(config, profile, i))


def privacy_cost_outsider(c: ArrayLike, config: MarketConfig, profile: ParticipationProfile, i: int) -> FloatArray:
    c = _check_support(c, config.groups[i].cost_dist)
    return config.privacy_model.g(c, leakage_coefficient(config, profile, i))


def participation_benefit(theta_bar: ArrayLike, model: PrivacyCostModel) -> FloatArray:
    tb = np.asarray(theta_bar, dtype=float)
    if np.any(tb < 0.0) or np.any(tb > 1.0):
        raise DomainError("theta_bar must lie in [0, 1]")
    return model.w(tb)


def threshold_gap(config: MarketConfig, profile: ParticipationProfile, i: int) -> float:
    """Delta_i = h(tau_i) - g(tau_i)."""
    b = leakage_coefficient(config, profile, i)
    return float(config.privacy_model.gap(profile.thresholds[i], b))


@dataclass
class ValidationReport:
    passed: bool
    violations: list[dict[str, Any]]
    checks: dict[str, bool]

    def to_dict(self) -> dict[str, Any]:
        return {"passed": self.passed, "checks": self.checks, "violations": self.violations}


def validate_assumptions(
    config: MarketConfig,
    n_cost: int = 200,
    n_rate: int = 20,
    alpha_scales: Sequence[float] = (0.0, 0.5, 1.0, 1.5, 2.0),
) -> ValidationReport:
    """Grid check of boundedness and monotonicity of h, g, b and the data links.

    Grid: ``n_cost`` costs x ``n_rate`` own rates x ``n_rate`` outside rates per group,
    with correlation strengths scaled by ``alpha_scales``. Reports the first
    violating grid point of each failing check.
    """
    m = config.privacy_model
    rates = np.linspace(0.0, 1.0, n_rate)
    scales = np.asarray(sorted(alpha_scales), dtype=float)
    checks: dict[str, bool] = {}
    violations: list[dict[str, Any]] = []

    def record(name: str, ok: npt.NDArray[np.bool_], coords: dict[str, FloatArray], group: int) -> None:
        good = bool(np.all(ok))
        checks[name] = checks.get(name, True) and good
        if not good:
            idx = np.unravel_index(np.argmin(ok), ok.shape)
            where = {k: float(v[idx]) for k, v in coords.items()}
            violations.append({"check": name, "group": group, "point": where})

    tol = 1e-12
    for gi, grp in enumerate(config.groups):
        d = grp.cost_dist
        c = np.linspace(d.c_min, d.c_max, n_cost)
        # axes: scale, theta_i, theta_out, cost
        S, TI, TO, C = np.meshgrid(scales, rates, rates, c, indexing="ij")
        a = CorrelationStrength(grp.correlation.intra, grp.correlation.inter)
        B = np.minimum(m.b_cap, S * (a.intra * TI + a.inter * TO))
        H = m.h(C, B)
        G = m.g(C, B)
        coords = {"alpha_scale": S, "theta_i": TI, "theta_out": TO, "c": C}
        record("bounded 0<=g<=h<=c", (G >= -tol) & (G <= H + tol) & (H <= C + tol), coords, gi)
        for axis, label in ((3, "c"), (1, "theta_i"), (2, "theta_out"), (0, "alpha")):
            sl = [slice(None)] * 4
            sl[axis] = slice(0, -1)
            sub = {k: v[tuple(sl)] for k, v in coords.items()}
            record(f"h non-decreasing in {label}", np.diff(H, axis=axis) >= -tol, sub, gi)
            record(f"g non-decreasing in {label}", np.diff(G, axis=axis) >= -tol, sub, gi)
            if axis != 3:
                record(f"b non-decreasing in {label}", np.diff(B, axis=axis) >= -tol, sub, gi)
        gap = H - G
        sub = {k: v[..., :-1] for k, v in coords.items()}
        positive_b = B[..., :-1] > 0.0
        record("h-g strictly increasing in c where b>0", ~positive_b | (np.diff(gap, axis=3) > 0.0), sub, gi)
        p = grp.data_link.prob(c, d)
        record("p(c) non-decreasing (data link)", np.r_[np.diff(p) >= -tol], {"c": c[:-1]}, gi)
        record("p(c) in [0,1]", (p >= 0.0) & (p <= 1.0), {"c": c}, gi)
    return ValidationReport(all(checks.values()), violations, checks)
