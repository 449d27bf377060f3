"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of a distribution or special function."""


class InvalidParametrizationError(ValueError):
    """Rates imply a follow-up/adherence cell probability outside [0, 1]."""


class InfeasibleHypothesisError(ValueError):
    """The null or alternative hypothesis region is empty."""


class SigmaFloorError(ValueError):
    """A standard deviation at or below the hypothesis floor was supplied."""


class UnattainableTargetError(ValueError):
    """A requested error rate cannot be reached by any critical value."""


class NumericGuardError(RuntimeError):
    """A computation would exceed the configured size limits."""
