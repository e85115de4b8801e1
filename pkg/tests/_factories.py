"""Reusable market instances and random generators for the test suite."""

from __future__ import annotations

import numpy as np

from leakmarket import (
    CorrelationStrength,
    CostDistribution,
    GroupSpec,
    MarketConfig,
    PrivacyCostModel,
    build_mechanism,
)
from leakmarket.allocation import budget_residual
from leakmarket.discrete import DiscreteInstance
from leakmarket.errors import LeakMarketError
from leakmarket.virtual_cost import virtual_cost_density

RATES = (0.7, 0.6)


def two_group_config(budget: float = 19.0, population: int = 10, gamma: float = 0.5, rho: float = 0.3,
                     **model) -> MarketConfig:
    """Uniform and truncated-exponential groups with mild leakage."""
    g1 = GroupSpec(0.6, CostDistribution.uniform(0.5, 1.5), CorrelationStrength(0.3, 0.2))
    g2 = GroupSpec(0.4, CostDistribution.truncated_exponential(0.5, 2.0, 1.0), CorrelationStrength(0.2, 0.4))
    pm = PrivacyCostModel(rho=rho, w0=model.pop("w0", 0.01), w1=model.pop("w1", 0.02), **model)
    return MarketConfig(population, budget, gamma, (g1, g2), pm)


def single_uniform(budget: float, population: int = 10, gamma: float = 0.5, lo: float = 0.0, hi: float = 1.0,
                   **model) -> MarketConfig:
    return MarketConfig(population, budget, gamma, (GroupSpec(1.0, CostDistribution.uniform(lo, hi)),),
                        PrivacyCostModel(**model))


def _random_dist(rng: np.random.Generator) -> CostDistribution:
    lo = float(rng.uniform(0.1, 1.0))
    hi = lo + float(rng.uniform(0.3, 2.0))
    kind = rng.integers(3)
    if kind == 0:
        return CostDistribution.uniform(lo, hi)
    if kind == 1:
        return CostDistribution.truncated_exponential(lo, hi, float(rng.uniform(0.2, 3.0)))
    a = float(rng.uniform(1.0, 3.0))
    return CostDistribution.beta(lo, hi, a, float(rng.uniform(1.0, 3.0)))


def random_market(rng: np.random.Generator, spend_fraction: tuple[float, float] = (0.02, 0.95)):
    """A random two-group market whose budget buys a given fraction of the 'select everyone' spend.

    Returns (config, rates) or None when the draw is irregular or infeasible.
    """
    q = float(rng.uniform(0.2, 0.8))
    groups = (
        GroupSpec(q, _random_dist(rng), CorrelationStrength(*rng.uniform(0.0, 0.4, 2))),
        GroupSpec(1.0 - q, _random_dist(rng), CorrelationStrength(*rng.uniform(0.0, 0.4, 2))),
    )
    pm = PrivacyCostModel(rho=float(rng.uniform(0.0, 0.8)), w0=float(rng.uniform(0.0, 0.02)),
                          w1=float(rng.uniform(0.0, 0.05)))
    s = int(rng.integers(5, 60))
    rates = tuple(float(r) for r in rng.uniform(0.3, 1.0, 2))
    cfg = MarketConfig(s, 1.0, float(rng.uniform(0.3, 0.95)), groups, pm)
    try:
        prof = cfg.profile(rates)
        density = virtual_cost_density(cfg, prof)
    except LeakMarketError:
        return None
    l = budget_residual(cfg, prof).value
    full = density.integrate(lambda p: p)
    L = float(rng.uniform(*spend_fraction)) * full
    if l + L <= 0.0:
        return None
    return cfg.replace(budget=s * (l + L)), rates


def random_mechanisms(n: int, seed: int, spend_fraction: tuple[float, float] = (0.02, 0.95)):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        drawn = random_market(rng, spend_fraction)
        if drawn is None:
            continue
        cfg, rates = drawn
        try:
            out.append(build_mechanism(cfg, cfg.profile(rates)))
        except LeakMarketError:
            continue
    return out


def random_discrete(rng: np.random.Generator, k_max: int = 6) -> DiscreteInstance:
    """Small game instance with distinct atoms and masses bounded away from zero."""
    while True:
        K = int(rng.integers(1, k_max + 1))
        phi = np.sort(rng.uniform(0.2, 3.0, K))
        if K > 1 and np.min(np.diff(phi)) < 1e-2:
            continue
        th = float(rng.uniform(0.3, 1.0))
        pi = (0.1 + rng.dirichlet(np.ones(K))) / (1.0 + 0.1 * K) * th
        gap = float(rng.uniform(0.3, 0.999)) * float(pi @ phi)
        return DiscreteInstance(phi, pi, float(rng.uniform(0.9, 1.0)), float(rng.choice([1, 5])), th, gap)
