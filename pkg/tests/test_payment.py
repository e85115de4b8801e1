from dataclasses import dataclass, replace

import numpy as np
import pytest

from _factories import random_mechanisms, single_uniform, two_group_config
from leakmarket import (
    CallableAllocation,
    CorrelationStrength,
    CostDistribution,
    GroupSpec,
    MarketConfig,
    PrivacyCostModel,
    UndefinedPaymentError,
    build_mechanism,
    expected_total_payment,
    participation_audit,
    truthfulness_audit,
)
from leakmarket.payment import (
    PaymentRule,
    envelope_residual,
    no_leakage_payment,
    payment,
    payment_constant,
    truthful_utility,
)

UNIT = CostDistribution.uniform(0.0, 1.0)


def const_alloc(level, tau, epsilon=0.0, everywhere=False, n=1):
    return CallableAllocation(tuple(lambda c: np.full_like(c, level) for _ in range(n)), tuple(tau),
                              epsilon=epsilon, above_threshold=everywhere)


def half_market(alpha=0.5, rho=0.2, w0=0.0, budget=1.0):
    g = GroupSpec(1.0, UNIT, CorrelationStrength(alpha, 0.0))
    return MarketConfig(10, budget, 0.5, (g,), PrivacyCostModel(rho=rho, w0=w0))


class TestPaymentConstant:
    def test_vanishes_without_net_leakage(self):
        cfg = two_group_config(rho=1.0, w0=0.0, w1=0.0)
        prof = cfg.profile([0.7, 0.6])
        alloc = const_alloc(0.3, prof.thresholds, n=2)
        assert payment_constant(0, alloc, prof, cfg) == pytest.approx(0.0, abs=1e-15)
        assert payment_constant(1, alloc, prof, cfg) == pytest.approx(0.0, abs=1e-15)

    def test_arithmetic(self):
        # b = 0.25, tau = 0.5, h - g = 0.5 * 0.25 * 0.8 = 0.1; w = 0.02
        cfg = half_market(w0=0.02)
        prof = cfg.profile(0.5)
        assert payment_constant(0, const_alloc(0.4, prof.thresholds), prof, cfg) == pytest.approx(0.08)

    def test_non_participant_level(self):
        cfg = half_market(alpha=0.0)
        prof = cfg.profile(0.5)
        kappa = payment_constant(0, const_alloc(0.4, prof.thresholds, epsilon=0.1), prof, cfg)
        assert kappa == pytest.approx(-0.5 * 0.1, rel=1e-12)


class TestPaymentRule:
    def test_posted_price_from_constant_allocation(self):
        cfg = half_market(alpha=0.0)
        prof = cfg.profile(0.4)
        mech = build_mechanism(cfg, prof, const_alloc(0.3, prof.thresholds, everywhere=True))
        c = np.linspace(0.0, 0.4, 9)
        np.testing.assert_allclose(payment(c, 0, mech), 0.4, rtol=1e-12)

    def test_marginal_participant_paid_cost(self):
        cfg = single_uniform(0.4, population=10, gamma=0.5, lo=0.5, hi=1.5, rho=1.0)
        prof = cfg.profile(0.8)
        mech = build_mechanism(cfg, prof)
        assert float(payment(1.3, 0, mech)) == pytest.approx(1.3, rel=1e-12)

    def test_zero_selection_is_undefined(self):
        cfg = half_market()
        prof = cfg.profile(0.5)
        mech = build_mechanism(cfg, prof, const_alloc(0.0, prof.thresholds))
        with pytest.raises(UndefinedPaymentError):
            payment(0.2, 0, mech)
        tot = expected_total_payment(mech)
        assert tot.direct == pytest.approx(cfg.population_size * mech.payment.kappa[0] * 0.5)
        assert tot.identity_gap < 1e-12


class TestBudget:
    def test_identity_and_binding(self):
        for mech in random_mechanisms(8, seed=21, spend_fraction=(0.02, 0.5)):
            tot = expected_total_payment(mech)
            B = mech.config.budget
            assert tot.identity_gap < 1e-6 * B
            if mech.allocation.case in ("1", "2a", "2b"):
                assert tot.direct == pytest.approx(B, rel=1e-6)


class TestTruthfulness:
    def test_strict_under_decreasing_rule(self):
        cfg = single_uniform(0.4, population=10, gamma=0.5, lo=0.5, hi=1.5)
        mech = build_mechanism(cfg, cfg.profile(0.8))
        assert mech.structure == "SD"
        verdict = truthfulness_audit(mech, samples=100)
        assert verdict.passed and verdict.strict

    def test_plateau_ties_only(self):
        cfg = single_uniform(2.5, population=10, gamma=0.5, lo=0.5, hi=1.5)
        mech = build_mechanism(cfg, cfg.profile(0.8))
        assert mech.structure == "FtD"
        verdict = truthfulness_audit(mech, samples=100)
        assert verdict.passed
        assert verdict.strict_failures_on_plateau_only

    def test_inflated_payments_detected(self):
        @dataclass(frozen=True)
        class Inflated(PaymentRule):
            cut: float = 1.0

            def transfer(self, i, c):
                c = np.asarray(c, dtype=float)
                t = super().transfer(i, c)
                return np.where(c > self.cut, 1.1 * t, t)

        cfg = single_uniform(0.4, population=10, gamma=0.5, lo=0.5, hi=1.5)
        mech = build_mechanism(cfg, cfg.profile(0.8))
        broken = replace(mech, payment=Inflated(**mech.payment.__dict__, cut=0.9))
        verdict = truthfulness_audit(broken, samples=100)
        assert not verdict.passed
        assert all(v["argmax"] > 0.9 for v in verdict.violations)


class TestParticipation:
    def test_threshold_and_fixed_point(self):
        cfg = two_group_config()
        mech = build_mechanism(cfg, cfg.profile([0.7, 0.6]))
        verdict = participation_audit(mech)
        assert verdict.passed, verdict.to_dict()

    def test_kappa_shift_extends_participation(self):
        cfg = two_group_config()
        mech = build_mechanism(cfg, cfg.profile([0.7, 0.6])).with_kappa_shift(0.05)
        verdict = participation_audit(mech)
        assert not verdict.passed
        g = verdict.groups[0]
        assert g["empirical_theta"] > g["theta"] + 1e-3
        assert g["first_contradiction"] > g["tau"]

    def test_full_participation_group(self):
        cfg = single_uniform(2.0, population=10, gamma=0.5, lo=0.5, hi=1.5)
        mech = build_mechanism(cfg, cfg.profile(1.0))
        g = participation_audit(mech).groups[0]
        assert g["threshold_ok"] and g["empirical_theta"] == pytest.approx(1.0)


class TestEnvelope:
    def test_derivative_of_truthful_utility(self):
        cfg = two_group_config()
        mech = build_mechanism(cfg, cfg.profile([0.7, 0.6]))
        for i in range(2):
            tau = mech.profile.thresholds[i]
            c = np.linspace(cfg.groups[i].cost_dist.c_min + 1e-3, tau - 1e-3, 40)
            kinks = [k for k in mech.allocation.breakpoints(i) if k < tau]
            c = c[np.all([np.abs(c - k) > 1e-4 for k in kinks], axis=0)] if kinks else c
            assert np.max(envelope_residual(mech, i, c)) < 1e-6

    def test_marginal_participant_indifferent(self):
        cfg = two_group_config()
        mech = build_mechanism(cfg, cfg.profile([0.7, 0.6]))
        for i in range(2):
            tau = mech.profile.thresholds[i]
            g = float(cfg.privacy_model.g(tau, mech.payment.b[i]))
            assert float(truthful_utility(mech, i, np.array([tau]))[0]) == pytest.approx(-g, abs=1e-8)


class TestLeakageAndPayments:
    """With A held fixed, P_b(c) - P_0(c) = (b/A)[(1 - rho) tau - c A(c) - int_c^tau A].

    The bracket is non-decreasing in c, so P_b <= P_0 on the whole participant
    range exactly when it holds at tau, i.e. when A(tau) >= 1 - rho.
    """

    @staticmethod
    def _gap(mech, i, c):
        return payment(c, i, mech) - no_leakage_payment(mech, i, c)

    def test_sign_at_threshold_matches_characterisation(self):
        for mech in random_mechanisms(10, seed=31):
            rho = mech.config.privacy_model.rho
            for i in range(2):
                tau = mech.profile.thresholds[i]
                if mech.payment.b[i] <= 0.0:
                    continue
                a_tau = float(mech.allocation.value(i, tau))
                gap = float(self._gap(mech, i, np.array(tau)))
                assert np.sign(gap) == np.sign(1.0 - rho - a_tau) or abs(1.0 - rho - a_tau) < 1e-9

    def test_underpayment_when_selection_is_high(self):
        cfg = two_group_config(budget=19.0, rho=0.9)
        mech = build_mechanism(cfg, cfg.profile([0.7, 0.6]))
        for i in range(2):
            tau = mech.profile.thresholds[i]
            assert float(mech.allocation.value(i, tau)) >= 0.1
            c = np.linspace(cfg.groups[i].cost_dist.c_min, tau, 200)
            assert np.all(self._gap(mech, i, c) <= 1e-12)

    def test_overpayment_when_selection_is_low(self):
        cfg = single_uniform(3.0, population=10, gamma=0.5, lo=0.5, hi=1.5)
        g = GroupSpec(1.0, cfg.groups[0].cost_dist, CorrelationStrength(0.3, 0.0))
        cfg = cfg.replace(groups=(g,), privacy_model=PrivacyCostModel(rho=0.3))
        mech = build_mechanism(cfg, cfg.profile(0.8))
        assert float(mech.allocation.value(0, 1.3)) < 0.7
        assert float(self._gap(mech, 0, np.array(1.3))) > 0.0
