"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the verdict lines are printed
even when output capture is on.
"""

import time

import numpy as np
import pytest

from _factories import random_discrete, random_mechanisms
from leakmarket import (
    CorrelationStrength,
    CostDistribution,
    GroupSpec,
    MarketConfig,
    PrivacyCostModel,
    adversary_best_response,
    brute_force_saddle,
    build_mechanism,
    check_low_budget,
    default_config,
    estimate_bias_variance,
    expected_total_payment,
    full_participation_check,
    participation_audit,
    solve_discrete,
    truthfulness_audit,
    verify_equilibrium_empirical,
    verify_saddle,
)
from leakmarket.discrete import convergence_table, q_curve, q_disc, r_curve, r_disc
from leakmarket.payment import no_leakage_payment, payment
from leakmarket.tradeoff import budget_sweep


def _verdict(capsys, n: int, ok: bool, detail: str) -> None:
    with capsys.disabled():
        print(f"\nCRITERION {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def mechanisms():
    """100 solved random two-group mechanisms spanning SD, FtD and FLAT rules."""
    return random_mechanisms(100, seed=0, spend_fraction=(0.01, 0.6))


def test_criterion_01_discrete_oracle_equivalence(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    pools: dict[str, list] = {"1": [], "2a": [], "2b": [], "3": []}
    while min(len(v) for v in pools.values()) < 12:
        inst = random_discrete(rng)
        case = solve_discrete(inst).case
        if len(pools[case]) < 13:
            pools[case].append(inst)
    instances = [x for case in pools for x in pools[case]][:50]

    worst_a = worst_p = 0.0
    failures = []
    for inst in instances:
        sad, ora = solve_discrete(inst), brute_force_saddle(inst)
        worst_a = max(worst_a, float(np.max(np.abs(ora.A - sad.A))))
        if sad.case == "2b":
            # where A = 1 the value sees p only through sum pi p over that block
            k = sad.k_star
            dp = max(float(np.max(np.abs(ora.p[k:] - sad.p[k:]), initial=0.0)),
                     abs(float(inst.pi[:k] @ (ora.p[:k] - sad.p[:k]))))
        else:
            dp = float(np.max(np.abs(ora.p - sad.p)))
        worst_p = max(worst_p, dp)
        if not verify_saddle(sad, inst, tol=1e-8).passed:
            failures.append(inst)
    elapsed = time.perf_counter() - t0
    cases = {c: sum(solve_discrete(i).case == c for i in instances) for c in pools}
    ok = worst_a <= 1e-6 and worst_p <= 1e-6 and not failures and elapsed < 10.0 and all(cases.values())
    _verdict(capsys, 1, ok, f"{len(instances)} instances {cases}, max|dA|={worst_a:.1e}, max|dp|={worst_p:.1e}, "
                            f"saddle checks failed={len(failures)}, {elapsed:.1f}s")


def test_criterion_02_continuous_discrete_convergence(capsys):
    t0 = time.perf_counter()
    rows = []
    for mech in random_mechanisms(10, seed=0):
        gaps = [r["sup_gap"] for r in convergence_table(mech.config, mech.profile, mech.allocation)]
        rows.append((mech.allocation.case, gaps))
    elapsed = time.perf_counter() - t0
    bad = [(c, g) for c, g in rows if not (g[0] > g[1] > g[2] and g[2] < 1e-2)]
    ok = not bad and elapsed < 60.0
    worst = max(g[2] for _, g in rows)
    detail = f"10 configs, max gap at K=1000 {worst:.1e}, non-monotone/large={len(bad)}, {elapsed:.1f}s"
    if bad:
        detail += "; " + "; ".join(f"case {c}: " + ", ".join(f"{v:.2e}" for v in g) for c, g in bad)
    _verdict(capsys, 2, ok, detail)


def test_criterion_03_budget_binding(capsys, mechanisms):
    worst_identity = worst_binding = 0.0
    binding = 0
    for mech in mechanisms:
        tot = expected_total_payment(mech)
        B = mech.config.budget
        worst_identity = max(worst_identity, tot.identity_gap / B)
        if mech.allocation.case in ("1", "2a", "2b"):
            binding += 1
            worst_binding = max(worst_binding, abs(tot.direct - B) / B)
    ok = worst_identity < 1e-6 and worst_binding <= 1e-6 and binding > 0
    _verdict(capsys, 3, ok, f"{len(mechanisms)} mechanisms ({binding} in cases 1-2), "
                            f"max identity gap/B={worst_identity:.1e}, max |spend-B|/B={worst_binding:.1e}")


def test_criterion_04_truthfulness(capsys, mechanisms):
    sample = mechanisms[:20]
    violations = 0
    strict_sd = off_plateau = plateau_ties = 0
    n_sd = 0
    for mech in sample:
        v = truthfulness_audit(mech, samples=100)
        violations += len(v.violations)
        if mech.structure == "SD":
            n_sd += 1
            strict_sd += v.strict
        else:
            off_plateau += not v.strict_failures_on_plateau_only
            plateau_ties += len(v.strict_failures)
    ok = violations == 0 and strict_sd == n_sd and off_plateau == 0 and n_sd > 0
    structures = {s: sum(m.structure == s for m in sample) for s in ("SD", "FtD", "FLAT")}
    _verdict(capsys, 4, ok, f"20 mechanisms {structures}, violations={violations}, strict SD {strict_sd}/{n_sd}, "
                            f"ties off plateaus={off_plateau}, ties on plateaus={plateau_ties}")


def test_criterion_05_threshold_equilibrium(capsys, mechanisms):
    failed = []
    worst_rate = 0.0
    for mech in mechanisms:
        verdict = participation_audit(mech)
        worst_rate = max(worst_rate, max(abs(g["empirical_theta"] - g["theta"]) for g in verdict.groups))
        if not verdict.passed:
            failed.append(verdict.to_dict())
    # large-market replays of the default market and a few random ones
    empirical = []
    cfg, rates = default_config()
    markets = [(cfg, rates)] + [(m.config, m.profile.rates) for m in mechanisms[:4]]
    for base, r in markets:
        big = base.replace(population_size=100_000, budget=base.budget * 100_000 / base.population_size)
        mech = build_mechanism(big, big.profile(r))
        empirical.append(verify_equilibrium_empirical(big, mech, seed=3).passed)
    ok = not failed and all(empirical)
    _verdict(capsys, 5, ok, f"participation audit {len(mechanisms) - len(failed)}/{len(mechanisms)} "
                            f"(max rate error {worst_rate:.1e}), s=1e5 equilibrium {sum(empirical)}/{len(empirical)}")


def test_criterion_06_estimator_formulas_vs_monte_carlo(capsys):
    t0 = time.perf_counter()
    cfg, _ = default_config()
    cases = [((0.3, 0.3), 1.0), ((0.7, 0.7), 4.0), ((1.0, 1.0), 16.0), ((0.7, 0.6), 4.0), ((0.5, 0.9), 6.0)]
    rows = []
    for rates, per20 in cases:
        c = cfg.replace(population_size=100, budget=per20 * 5)
        mech = build_mechanism(c, c.profile(rates))
        rep = estimate_bias_variance(c, mech, adversary_best_response(mech), 100_000, seed=3)
        chk = rep.within(3.0)
        rows.append((mech.profile.theta_bar, mech.structure, chk["variance"] and chk["bias"],
                     (rep.variance - rep.analytic_variance) / max(rep.variance_se, 1e-300),
                     (rep.bias - rep.analytic_bias) / max(rep.bias_se, 1e-300)))
    elapsed = time.perf_counter() - t0
    ok = all(r[2] for r in rows) and elapsed < 300.0
    detail = ", ".join(f"theta_bar={t:.2f} {s} z_var={zv:+.2f} z_bias={zb:+.2f}" for t, s, _, zv, zb in rows)
    _verdict(capsys, 6, ok, f"{detail}; {elapsed:.0f}s")


def test_criterion_07_q_r_claims(capsys):
    rng = np.random.default_rng(7)
    mono = ident = 0
    worst = 0.0
    for _ in range(1000):
        inst = random_discrete(rng, k_max=30)
        Q, R = q_curve(inst), r_curve(inst)
        mono += bool(np.all(np.diff(Q) > 0.0) and (inst.K == 1 or np.all(np.diff(R) < 0.0)))
        good = True
        for m in range(1, inst.K):
            z = inst.phi[m - 1] / inst.phi[m]
            for a, b in ((q_disc(m, z, inst), Q[m]), (r_disc(m, z, inst), R[m])):
                err = abs(a - b) / max(1.0, abs(b))
                worst = max(worst, err)
                good &= err <= 1e-12
        ident += good
    ok = mono == 1000 and ident == 1000
    _verdict(capsys, 7, ok, f"monotone {mono}/1000, identities {ident}/1000, max rel error {worst:.1e}")


def test_criterion_08_budget_monotonicity(capsys):
    cfg, rates = default_config()
    budgets = np.linspace(3.0, 5.0, 10)
    regime = [check_low_budget(cfg.replace(budget=float(B)), cfg.profile(rates)) for B in budgets]
    T = [r["T"] for r in budget_sweep(cfg, rates, budgets)]
    steps = np.diff(T)
    ok = all(regime) and bool(np.all(steps <= 0.0))
    _verdict(capsys, 8, ok, f"B in [3, 5], low-budget regime at {sum(regime)}/10 points, "
                            f"T from {T[0]:.5g} to {T[-1]:.5g}, largest step {steps.max():+.2e}")


def _two_group_family(w1: float) -> MarketConfig:
    groups = (GroupSpec(0.5, CostDistribution.uniform(1.0, 1.1), CorrelationStrength(0.3, 0.3)),
              GroupSpec(0.5, CostDistribution.uniform(1.0, 1.15), CorrelationStrength(0.3, 0.3)))
    return MarketConfig(20, 0.2, 0.95, groups, PrivacyCostModel(rho=1.0, w1=w1), theta_min=0.5)


def test_criterion_09_full_participation(capsys):
    verified = []
    for w1 in (0.0, 0.01, 0.05, 0.1, 0.2):
        rep = full_participation_check(_two_group_family(w1), n_grid=5)
        if rep.prop1 or rep.prop2:
            worst = max(max(p["dT"]) for p in rep.points)
            verified.append((w1, rep.derivative_scan_ok, worst))
    cfg, _ = default_config()
    other = full_participation_check(cfg.replace(privacy_model=PrivacyCostModel(rho=0.0), theta_min=0.3))
    unverified_note = "hypotheses fail, no assertion" if not (other.prop1 or other.prop2) else "hypotheses hold"
    ok = bool(verified) and all(s for _, s, _ in verified) and (other.prop1 or other.prop2) == bool(other.derivative_scan_ok)
    detail = ", ".join(f"w1={w:g}: max dT={m:+.3f}" for w, _, m in verified)
    _verdict(capsys, 9, ok, f"{len(verified)} markets with verified hypotheses ({detail}); default market: {unverified_note}")


def test_criterion_10_leakage_underpayment(capsys):
    """Same allocation, with and without leakage.

    With A fixed, P_b(c) - P_0(c) = (b/A(c)) [(1 - rho) tau - c A(c) - int_c^tau A].
    The bracket is non-decreasing in c, so P_b <= P_0 on the whole participant
    range exactly when A(tau) >= 1 - rho. The check below is run as stated;
    the characterisation is reported next to it.
    """
    violating = explained = 0
    for mech in random_mechanisms(20, seed=0):
        rho = mech.config.privacy_model.rho
        bad = predicted = False
        for i, grp in enumerate(mech.config.groups):
            if mech.payment.b[i] <= 0.0:
                continue
            tau = mech.profile.thresholds[i]
            c = np.linspace(grp.cost_dist.c_min, tau, 200)
            p_b = payment(c, i, mech)
            gap = p_b - no_leakage_payment(mech, i, c)
            bad |= bool(np.any(gap > 1e-12 * np.maximum(1.0, np.abs(p_b))))
            predicted |= float(mech.allocation.value(i, tau)) < 1.0 - rho
        violating += bad
        explained += bad == predicted
    ok = violating == 0
    _verdict(capsys, 10, ok, f"{violating}/20 configs pay more under leakage somewhere on the grid; "
                             f"the A(tau) >= 1 - rho characterisation predicts {explained}/20 outcomes")
