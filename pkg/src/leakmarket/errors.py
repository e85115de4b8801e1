"""Exception types. Each maps to a documented CLI exit code."""


class LeakMarketError(Exception):
    """Base class for package errors."""

    exit_code = 1


class ConfigError(LeakMarketError, ValueError):
    """Malformed or invariant-violating market configuration."""

    exit_code = 2

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class DomainError(LeakMarketError, ValueError):
    """Argument outside the domain of a function (cost off support, x = 0, ...)."""

    exit_code = 2


class RegularityError(LeakMarketError):
    """Virtual cost is not monotone, so the push-forward density is undefined."""

    exit_code = 2


class InfeasibleBudgetError(LeakMarketError):
    """Per-capita budget does not exceed the budget residual."""

    exit_code = 3

    def __init__(self, gap: float):
        self.gap = gap
        super().__init__(f"budget infeasible: B/s - l = {gap:.6g} <= 0")


class PreconditionError(LeakMarketError):
    """A solver precondition (named in the message) does not hold."""

    exit_code = 3


class RegimeError(LeakMarketError):
    """Low-budget regime required but not satisfied."""

    exit_code = 5


class UndefinedPaymentError(LeakMarketError):
    """Payment requested at a report with zero selection probability."""

    exit_code = 4


class EmptyMarketError(LeakMarketError):
    """No agent joined in a simulated replication."""

    exit_code = 4


class ConvergenceError(LeakMarketError):
    """Iterative oracle failed to settle."""

    exit_code = 1
