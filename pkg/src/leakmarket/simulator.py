"""Monte Carlo playout of the marketplace.

Each replication draws its own Philox stream keyed by (seed, replication), so
results do not depend on how replications are batched. Within a replication
the agent index is the position in that stream.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterator, Literal, Sequence

import numpy as np
import numpy.typing as npt

from .errors import EmptyMarketError
from .market import MarketConfig
from .payment import Mechanism, decision_threshold, expected_total_payment
from .tradeoff import AdversaryProfile, ht_variance, worst_case_bias

FloatArray = npt.NDArray[np.float64]
NonParticipantData = Literal["adversarial", "extended"]


def replication_rng(seed: int, rep: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(rep)])))


@dataclass(frozen=True)
class AgentSample:
    group: int
    cost: float
    x: int
    joined: bool = False
    selected: bool = False
    payment: float = 0.0


@dataclass
class Population:
    """Columnar agent table; indexing yields AgentSample records."""

    group: npt.NDArray[np.int64]
    cost: FloatArray
    x: npt.NDArray[np.int8]
    joined: npt.NDArray[np.bool_] | None = None
    selected: npt.NDArray[np.bool_] | None = None
    payment: FloatArray | None = None

    def __len__(self) -> int:
        return int(self.group.size)

    def __getitem__(self, k: int) -> AgentSample:
        return AgentSample(
            int(self.group[k]), float(self.cost[k]), int(self.x[k]),
            bool(self.joined[k]) if self.joined is not None else False,
            bool(self.selected[k]) if self.selected is not None else False,
            float(self.payment[k]) if self.payment is not None else 0.0,
        )

    def __iter__(self) -> Iterator[AgentSample]:
        return (self[k] for k in range(len(self)))


def _link(config: MarketConfig, adversary: AdversaryProfile | None, i: int, c: FloatArray, tau: float | None) -> FloatArray:
    """p_i(c), continued above tau by its value at tau."""
    if adversary is None:
        grp = config.groups[i]
        return grp.data_link.prob(c, grp.cost_dist)
    cc = np.minimum(c, tau) if tau is not None else c
    return adversary.value(i, cc)


def sample_population(
    config: MarketConfig,
    adversary: AdversaryProfile | None = None,
    seed: int = 0,
    thresholds: Sequence[float] | None = None,
    rep: int = 0,
) -> Population:
    """s agents: group ~ q, cost ~ f_i, x ~ Bernoulli(p_i(c)).

    Without an adversary the per-group data links from the config are used.
    """
    rng = replication_rng(seed, rep)
    s = config.population_size
    u = rng.random((3, s))
    group = np.searchsorted(np.cumsum(config.masses)[:-1], u[0], side="right")
    cost = np.empty(s)
    x = np.empty(s, dtype=np.int8)
    for i, grp in enumerate(config.groups):
        m = group == i
        cost[m] = grp.cost_dist.quantile(u[1, m])
        tau = thresholds[i] if thresholds is not None else None
        x[m] = u[2, m] < _link(config, adversary, i, cost[m], tau)
    return Population(group, cost, x)


@dataclass
class ReplicationLedger:
    participants: int
    selected: int
    spend: float
    join_rates: tuple[float, ...]
    participant_mean: float
    population_mean: float


def run_replication(population: Population, mech: Mechanism, config: MarketConfig | None = None, seed: int = 0, rep: int = 0) -> tuple[float, ReplicationLedger]:
    """Join by threshold, report truthfully, select with A_i(c), pay P_i(c) on selection."""
    config = config or mech.config
    rng = replication_rng(seed, rep + (1 << 32))
    thr = np.asarray(mech.profile.thresholds)
    joined = population.cost <= thr[population.group]
    sel_u = rng.random(len(population))
    A = np.zeros(len(population))
    pay = np.zeros(len(population))
    for i in range(config.n_groups):
        m = joined & (population.group == i)
        A[m] = mech.allocation.value(i, population.cost[m])
    selected = joined & (sel_u < A)
    for i in range(config.n_groups):
        m = selected & (population.group == i)
        if m.any():
            pay[m] = mech.payment.value(i, population.cost[m])
    population.joined, population.selected, population.payment = joined, selected, pay
    N = int(joined.sum())
    if N == 0:
        raise EmptyMarketError("no agent joined")
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(selected, population.x / A, 0.0)
    estimate = float(w.sum() / N)
    rates = tuple(
        float(joined[population.group == i].mean()) if np.any(population.group == i) else float("nan")
        for i in range(config.n_groups)
    )
    ledger = ReplicationLedger(N, int(selected.sum()), float(pay.sum()), rates,
                               float(population.x[joined].mean()), float(population.x.mean()))
    return estimate, ledger


@dataclass
class SimulationReport:
    replications: int
    mean_estimate: float
    variance: float
    variance_se: float
    participant_mean: float
    bias: float
    bias_se: float
    average_payment: float
    payment_se: float
    participation_rates: tuple[float, ...]
    unbiasedness_gap: float
    unbiasedness_se: float
    analytic_variance: float
    analytic_bias: float
    expected_payment: float
    selection_only_variance: float
    seed: int
    notes: dict[str, Any] = field(default_factory=dict)

    def within(self, k: float = 3.0) -> dict[str, bool]:
        return {
            "variance": bool(abs(self.variance - self.analytic_variance) <= k * self.variance_se),
            "bias": bool(abs(self.bias - self.analytic_bias) <= k * self.bias_se),
            "unbiased": bool(abs(self.unbiasedness_gap) <= k * self.unbiasedness_se),
            "payment": bool(abs(self.average_payment - self.expected_payment) <= k * self.payment_se),
        }

    def to_dict(self) -> dict[str, Any]:
        d = dict(self.__dict__)
        d["participation_rates"] = list(self.participation_rates)
        d["checks"] = self.within()
        return d


def _mean_se(v: FloatArray) -> tuple[float, float]:
    return float(v.mean()), float(v.std(ddof=1) / np.sqrt(v.size))


def _variance_se(v: FloatArray) -> tuple[float, float]:
    """Sample variance and its large-sample standard error sqrt((m4 - var^2)/R)."""
    d = v - v.mean()
    var = float(d @ d / (v.size - 1))
    m4 = float(np.mean(d**4))
    return var, float(np.sqrt(max(m4 - var**2, 0.0) / v.size))


def _participant_draws(mech: Mechanism, adversary: AdversaryProfile, n: int, seeds: tuple[int, range]) -> FloatArray:
    """HT estimates from n i.i.d. participants per replication (conditional-on-N check)."""
    config, prof = mech.config, mech.profile
    seed, reps = seeds
    q = np.asarray(prof.masses) * prof.theta
    cum = np.cumsum(q / q.sum())[:-1]
    U = np.stack([replication_rng(seed, r).random((4, n)) for r in reps])  # (R, 4, n)
    group = np.searchsorted(cum, U[:, 0], side="right")
    A = np.empty(group.shape)
    x = np.empty(group.shape)
    for i, grp in enumerate(config.groups):
        m = group == i
        c = grp.cost_dist.quantile(U[:, 1][m] * prof.theta[i])
        A[m] = mech.allocation.value(i, c)
        x[m] = U[:, 2][m] < adversary.value(i, c)
    sel = U[:, 3] < A
    return np.where(sel, x / A, 0.0).sum(axis=1) / n


def _population_uniforms(config: MarketConfig, seed: int, reps: range) -> tuple[FloatArray, FloatArray]:
    """Stacked streams of sample_population and run_replication for the given replications."""
    s = config.population_size
    pop_u = np.stack([replication_rng(seed, r).random((3, s)) for r in reps])
    sel_u = np.stack([replication_rng(seed, r + (1 << 32)).random(s) for r in reps])
    return pop_u, sel_u


def _decode(config: MarketConfig, pop_u: FloatArray) -> tuple[npt.NDArray[np.int64], FloatArray]:
    group = np.searchsorted(np.cumsum(config.masses)[:-1], pop_u[:, 0], side="right")
    cost = np.empty(group.shape)
    for i, grp in enumerate(config.groups):
        m = group == i
        cost[m] = grp.cost_dist.quantile(pop_u[:, 1][m])
    return group, cost


def _play_batch(
    mech: Mechanism, adversary: AdversaryProfile, seed: int, reps: range, non_participants: NonParticipantData
) -> tuple[FloatArray, FloatArray, FloatArray, FloatArray]:
    """Vectorised run_replication over full populations: (estimate, true mean, participant mean, spend)."""
    config = mech.config
    thr = np.asarray(mech.profile.thresholds)
    pop_u, sel_u = _population_uniforms(config, seed, reps)
    group, cost = _decode(config, pop_u)
    joined = cost <= thr[group]
    A = np.zeros(group.shape)
    x = np.zeros(group.shape)
    pay = np.zeros(group.shape)
    for i in range(config.n_groups):
        m = group == i
        x[m] = pop_u[:, 2][m] < _link(config, adversary, i, cost[m], thr[i])
        mj = m & joined
        A[mj] = mech.allocation.value(i, cost[mj])
    selected = joined & (sel_u < A)
    for i in range(config.n_groups):
        m = selected & (group == i)
        if m.any():
            pay[m] = mech.payment.value(i, cost[m])
    N = joined.sum(axis=1)
    if np.any(N == 0):
        raise EmptyMarketError("no agent joined in some replication")
    with np.errstate(divide="ignore", invalid="ignore"):
        est = np.where(selected, x / A, 0.0).sum(axis=1) / N
    pmean = np.where(joined, x, 0.0).sum(axis=1) / N
    truth = np.where(joined, x, 1.0 if non_participants == "adversarial" else x).mean(axis=1)
    return est, truth, pmean, pay.sum(axis=1)


def _pooled_rates(config: MarketConfig, seed: int, cut: FloatArray, replications: int, batch: int) -> FloatArray:
    joined = np.zeros(config.n_groups)
    count = np.zeros(config.n_groups)
    for r0 in range(0, replications, batch):
        pop_u, _ = _population_uniforms(config, seed, range(r0, min(r0 + batch, replications)))
        group, cost = _decode(config, pop_u)
        ok = cost <= cut[group]
        for i in range(config.n_groups):
            m = group == i
            joined[i] += ok[m].sum()
            count[i] += m.sum()
    return joined / np.maximum(count, 1)


def estimate_bias_variance(
    config: MarketConfig,
    mech: Mechanism,
    adversary: AdversaryProfile,
    replications: int,
    seed: int = 0,
    non_participants: NonParticipantData = "adversarial",
    batch: int = 2000,
) -> SimulationReport:
    """Monte Carlo estimates of the estimator's variance, bias and spend.

    Variance is conditional on the participant count: each replication draws
    N = round(s * theta_bar) participants afresh and fresh selection coins.
    Bias, HT unbiasedness and spend come from fresh full populations, with
    non-participants' data pinned at 1 by default.
    """
    if replications < 2:
        raise ValueError("need at least two replications")
    prof = mech.profile
    thr = np.asarray(prof.thresholds)
    s = config.population_size
    n_part = max(1, int(round(s * prof.theta_bar)))
    pop_batch = max(1, min(batch, 1_000_000 // s))

    cond = np.concatenate([
        _participant_draws(mech, adversary, n_part, (seed, range(r0, min(r0 + batch, replications))))
        for r0 in range(0, replications, batch)
    ])
    var, var_se = _variance_se(cond)

    est, truth, pmean, spend = (np.concatenate(a) for a in zip(*(
        _play_batch(mech, adversary, seed + 1, range(r0, min(r0 + pop_batch, replications)), non_participants)
        for r0 in range(0, replications, pop_batch)
    )))
    rates = _pooled_rates(config, seed + 1, thr, replications, pop_batch)
    mean_est, _ = _mean_se(est)
    bias, bias_se = _mean_se(truth - est)
    gap, gap_se = _mean_se(est - pmean)
    pay, pay_se = _mean_se(spend)

    # variance from selection alone on one fixed participant set, for reference
    fixed = sample_population(config, adversary, seed + 2, thr)
    A_fix = np.zeros(len(fixed))
    joined = fixed.cost <= thr[fixed.group]
    for i in range(config.n_groups):
        m = joined & (fixed.group == i)
        A_fix[m] = mech.allocation.value(i, fixed.cost[m])
    n_fix = max(int(joined.sum()), 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        sel_var = float(np.sum(np.where(joined, fixed.x * (1.0 / A_fix - 1.0), 0.0)) / n_fix**2)

    analytic_var = ht_variance(mech, adversary, config) * (s * prof.theta_bar) / n_part
    analytic_bias = worst_case_bias(prof, adversary, config) if non_participants == "adversarial" else float("nan")
    return SimulationReport(
        replications=replications,
        mean_estimate=mean_est,
        variance=var,
        variance_se=var_se,
        participant_mean=float(pmean.mean()),
        bias=bias,
        bias_se=bias_se,
        average_payment=pay,
        payment_se=pay_se,
        participation_rates=tuple(float(v) for v in rates),
        unbiasedness_gap=gap,
        unbiasedness_se=gap_se,
        analytic_variance=float(analytic_var),
        analytic_bias=float(analytic_bias),
        expected_payment=expected_total_payment(mech).direct,
        selection_only_variance=sel_var,
        seed=seed,
        notes={"participants_per_replication": n_part, "non_participants": non_participants},
    )


@dataclass
class EquilibriumVerdict:
    passed: bool
    target: tuple[float, ...]
    empirical: tuple[float, ...]
    bounds: tuple[float, ...]
    decision_thresholds: tuple[float, ...]
    replications: int

    def to_dict(self) -> dict[str, Any]:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


def verify_equilibrium_empirical(config: MarketConfig, mech: Mechanism, replications: int = 1, seed: int = 0) -> EquilibriumVerdict:
    """Pooled join rates under best-response joining against 3-sigma binomial bands.

    Agents join when the truthful utility weakly beats the outside option, so
    any shift of the payment constants moves the realised rates.
    """
    target = mech.profile.theta
    cut = np.array([decision_threshold(mech, i, config) for i in range(config.n_groups)])
    emp = _pooled_rates(config, seed, cut, replications, batch=max(1, 2_000_000 // config.population_size))
    count = config.masses * config.population_size * replications
    bounds = 3.0 * np.sqrt(target * (1.0 - target) / np.maximum(count, 1))
    passed = bool(np.all(np.abs(emp - target) <= bounds))
    return EquilibriumVerdict(passed, tuple(map(float, target)), tuple(map(float, emp)), tuple(map(float, bounds)),
                              tuple(map(float, cut)), replications)
