"""
Checking the formulas by simulation
===================================

The analytic variance and worst-case bias of the Horvitz-Thompson estimate
are compared with a Monte Carlo market: draw agents, let them join, flip the
selection coins, pay, and estimate. The adversary's correlation between data
and cost is the one that maximises the analyst's loss.
"""

from leakmarket import adversary_best_response, build_mechanism, default_config, estimate_bias_variance, worst_case_tradeoff

cfg, rates = default_config()
cfg = cfg.replace(population_size=100, budget=20.0)
mech = build_mechanism(cfg, cfg.profile(rates))
adv = adversary_best_response(mech)

report = worst_case_tradeoff(mech, adversary=adv)
print(f"{mech.structure} rule: variance {report.worst_case_variance:.5f}, bias {report.worst_case_bias:.5f}, "
      f"weighted loss {report.combined:.5f}")

# 20000 replications keep this under a few seconds; the acceptance suite runs 10^5.
rep = estimate_bias_variance(cfg, mech, adv, 20_000, seed=1)
print(f"variance: simulated {rep.variance:.5f} +/- {rep.variance_se:.5f}, formula {rep.analytic_variance:.5f}")
print(f"bias:     simulated {rep.bias:.5f} +/- {rep.bias_se:.5f}, formula {rep.analytic_bias:.5f}")
print(f"spend:    simulated {rep.average_payment:.3f} +/- {rep.payment_se:.3f}, budget {cfg.budget}")
print("within 3 standard errors:", rep.within(3.0))
