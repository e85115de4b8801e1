import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate as sp_integrate

from _factories import random_market, random_mechanisms, single_uniform, two_group_config
from leakmarket import InfeasibleBudgetError, check_low_budget, solve_allocation
from leakmarket.allocation import budget_residual, budget_spent, q_c, r_c, unified_knee
from leakmarket.discrete import convergence_table
from leakmarket.virtual_cost import VirtualCostDensity, virtual_cost_density

UNIT_ON_1_2 = VirtualCostDensity.from_pdf(lambda x: np.ones_like(x), 1.0, 2.0)


def sd_market(budget=0.4):
    # phi = 2c - 0.5 on [0.5, 1.3]; mass 0.8; no leakage so l = 0
    cfg = single_uniform(budget, population=10, gamma=0.5, lo=0.5, hi=1.5)
    return cfg, cfg.profile(0.8)


class TestQc:
    def test_at_right_end(self):
        assert q_c(2.0, UNIT_ON_1_2) == pytest.approx(1.5, rel=1e-12)

    def test_at_left_end(self):
        assert q_c(1.0, UNIT_ON_1_2) == pytest.approx(2.0 / 3.0 * (2.0 * math.sqrt(2.0) - 1.0), rel=1e-12)

    def test_zero_left_end(self):
        dens = VirtualCostDensity.from_pdf(lambda x: np.ones_like(x), 0.0, 1.0)
        assert q_c(0.0, dens) == 0.0

    def test_matches_quad_inside(self):
        x = 1.37
        ref = sp_integrate.quad(lambda p: p, 1.0, x)[0] + math.sqrt(x) * sp_integrate.quad(math.sqrt, x, 2.0)[0]
        assert q_c(x, UNIT_ON_1_2) == pytest.approx(ref, rel=1e-12)


class TestRc:
    def setup_method(self):
        self.cfg = single_uniform(1.0, gamma=1.0, lo=1.0, hi=2.0)
        self.prof = self.cfg.profile(1.0)

    def test_left_end(self):
        assert r_c(1.0, UNIT_ON_1_2, self.cfg, self.prof) == pytest.approx(2.0, rel=1e-12)

    def test_right_end(self):
        assert r_c(2.0, UNIT_ON_1_2, self.cfg, self.prof) == pytest.approx(2.0 * 1.5 / 2.0, rel=1e-12)

    def test_no_variance_weight_is_constant(self):
        cfg = single_uniform(1.0, population=7, gamma=0.0, lo=1.0, hi=2.0)
        prof = cfg.profile(0.5)
        vals = [r_c(x, UNIT_ON_1_2, cfg, prof) for x in (1.0, 1.5, 2.0)]
        np.testing.assert_allclose(vals, 0.25 * 0.5 * 7, rtol=1e-14)

    def test_zero_rejected(self):
        with pytest.raises(Exception):
            r_c(0.0, UNIT_ON_1_2, self.cfg, self.prof)


class TestLowBudget:
    def test_tiny_budget(self):
        cfg, prof = sd_market(1e-9)
        assert check_low_budget(cfg, prof)

    def test_no_variance_weight(self):
        cfg = single_uniform(0.4, gamma=0.0, lo=0.5, hi=1.5)
        assert not check_low_budget(cfg, cfg.profile(0.8))

    @pytest.mark.parametrize("budget", [0.4, 1.5, 3.0])
    def test_matches_direct_sides(self, budget):
        cfg, prof = sd_market(budget)
        # both sides by adaptive quad in cost space; phi(c) = 2c - 0.5, f = 1 on [0.5, 1.3]
        L, th, g, s = budget / 10, 0.8, 0.5, 10
        lhs = L * (2 * g + th * (1 - th) * (1 - g) * s)
        rhs = g * math.sqrt(0.5) * sp_integrate.quad(lambda c: math.sqrt(2 * c - 0.5), 0.5, 1.3)[0]
        assert check_low_budget(cfg, prof) == (lhs < rhs)


class TestSolve:
    def test_strictly_decreasing_rule(self):
        cfg, prof = sd_market()
        rule = solve_allocation(cfg, prof)
        assert rule.structure == "SD"
        # frozen from mpmath: eta = L / int sqrt(phi) = 0.04 / 0.896545242...
        assert rule.eta == pytest.approx(0.044615707188612815, rel=1e-10)
        np.testing.assert_allclose(
            rule.value(0, np.array([0.5, 0.8, 1.3])),
            [0.063096138201003034, 0.042539407697077959, 0.030787762936564795],
            rtol=1e-10,
        )
        assert budget_spent(rule, cfg, prof) == pytest.approx(0.4, rel=1e-9)

    def test_sd_agrees_with_discrete_oracle(self):
        cfg, prof = sd_market()
        rule = solve_allocation(cfg, prof)
        row = convergence_table(cfg, prof, rule, Ks=(1000,))[0]
        assert row["case"] == "1"
        assert row["sup_gap"] < 1e-2

    def test_flat_budget(self):
        # int phi omega = int_{0.5}^{1.3} (2c - 0.5) dc = 1.04
        cfg, prof = sd_market(9.0)
        rule = solve_allocation(cfg, prof)
        assert rule.structure == "FLAT"
        assert rule.chi == pytest.approx(0.9 / 1.04, rel=1e-12)
        assert rule.chi < 1.0
        np.testing.assert_allclose(rule.value(0, np.linspace(0.5, 1.3, 7)), rule.chi)

    def test_mid_budget_has_plateau(self):
        cfg, prof = sd_market(2.5)
        rule = solve_allocation(cfg, prof)
        assert rule.structure == "FtD"
        knee = rule.knee_cost(0)
        left = float(rule.value(0, knee - 1e-10))
        right = float(rule.value(0, knee + 1e-10))
        assert left == pytest.approx(rule.chi)
        assert abs(left - right) < 1e-8
        assert budget_spent(rule, cfg, prof) == pytest.approx(2.5, rel=1e-6)

    def test_budget_covering_everyone(self):
        cfg, prof = sd_market(12.0)
        rule = solve_allocation(cfg, prof)
        assert rule.structure == "FLAT" and rule.chi == 1.0

    def test_infeasible_budget(self):
        cfg = two_group_config(budget=0.01, w0=0.0, w1=0.0)
        assert not budget_residual(cfg, cfg.profile([0.7, 0.6])).feasible
        with pytest.raises(InfeasibleBudgetError) as exc:
            solve_allocation(cfg, cfg.profile([0.7, 0.6]))
        assert exc.value.exit_code == 3

    def test_csv_table_shape(self):
        cfg = two_group_config()
        rule = solve_allocation(cfg, cfg.profile([0.7, 0.6]))
        rows = rule.table()
        assert len(rows) == 1000
        assert set(rule.header()) >= {"structure", "chi", "phi_hat", "epsilon"}


def _ftd_mechanisms():
    return [m for m in random_mechanisms(6, seed=11, spend_fraction=(0.05, 0.4)) if m.structure == "FtD"]


def test_unified_knee_agrees_with_split_cases():
    mechs = _ftd_mechanisms()
    assert mechs
    for m in mechs:
        rule = m.allocation
        assert unified_knee(m.config, m.profile) == pytest.approx(rule.phi_hat, rel=1e-8, abs=1e-10)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31))
def test_case_ratio_is_monotone(seed):
    drawn = random_market(np.random.default_rng(seed))
    if drawn is None:
        return
    cfg, rates = drawn
    prof = cfg.profile(rates)
    dens = virtual_cost_density(cfg, prof)
    x = np.linspace(max(dens.phi_min, 1e-9), dens.phi_max, 20)
    ratio = np.array([q_c(v, dens) / r_c(v, dens, cfg, prof) for v in x])
    assert np.all(np.diff(ratio) >= -1e-10 * np.abs(ratio[1:]))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.02, 0.6))
def test_rule_shape_and_budget_identity(seed, frac):
    drawn = random_market(np.random.default_rng(seed), spend_fraction=(frac, frac))
    if drawn is None:
        return
    cfg, rates = drawn
    prof = cfg.profile(rates)
    rule = solve_allocation(cfg, prof)
    for i, g in enumerate(cfg.groups):
        c = np.linspace(g.cost_dist.c_min, prof.thresholds[i], 60)
        a = rule.value(i, c)
        assert np.all((a >= 0.0) & (a <= 1.0))
        assert np.all(np.diff(a) <= 1e-13)
        if rule.structure == "SD" and check_low_budget(cfg, prof):
            assert np.all(np.diff(a) < 0.0)
    assert budget_spent(rule, cfg, prof) == pytest.approx(cfg.budget, rel=1e-6)
