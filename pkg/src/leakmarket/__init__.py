"""Budget-constrained data acquisition with information leakage.

Optimal allocation and payment rules, the discrete minimax game behind them,
bias-variance evaluation and a Monte Carlo simulator of the marketplace.
"""

from .allocation import AllocationRule, CallableAllocation, budget_residual, check_low_budget, solve_allocation
from .discrete import DiscreteInstance, brute_force_saddle, discretize, solve_discrete, verify_saddle
from .errors import (
    ConfigError,
    DomainError,
    EmptyMarketError,
    InfeasibleBudgetError,
    LeakMarketError,
    PreconditionError,
    RegimeError,
    RegularityError,
    UndefinedPaymentError,
)
from .io import config_from_dict, config_to_dict, default_config, load_config, save_config
from .market import (
    CorrelationStrength,
    CostDistribution,
    DataLink,
    GroupSpec,
    MarketConfig,
    ParticipationProfile,
    PrivacyCostModel,
    validate_assumptions,
)
from .payment import (
    Mechanism,
    build_mechanism,
    expected_total_payment,
    participation_audit,
    truthfulness_audit,
)
from .simulator import estimate_bias_variance, sample_population, verify_equilibrium_empirical
from .tradeoff import (
    AdversaryProfile,
    adversary_best_response,
    full_participation_check,
    ht_variance,
    reduced_objective,
    worst_case_bias,
    worst_case_tradeoff,
)
from .virtual_cost import virtual_cost, virtual_cost_density

__version__ = "0.1.0"
