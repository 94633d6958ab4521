"""Exception types shared across the package."""


class PomdpValidationError(ValueError):
    """Raised when a model breaks a stochasticity invariant.

    ``violations`` lists one human readable message per offending row/index.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        head = "; ".join(self.violations[:5])
        more = f" (+{len(self.violations) - 5} more)" if len(self.violations) > 5 else ""
        super().__init__(f"invalid POMDP: {head}{more}")


class DimensionMismatchError(ValueError):
    pass


class ImpossibleObservationError(ValueError):
    """The observation has zero probability under the predicted belief."""


class InfoStateMismatchError(ValueError):
    pass


class ZeroProbabilityActionError(ValueError):
    """Score function requested for an action the policy never takes."""


class BeliefSetSizeError(RuntimeError):
    def __init__(self, count, cap):
        self.count = count
        self.cap = cap
        super().__init__(f"belief set exceeded size cap {cap} (partial count {count})")


class BeliefSetClosureError(RuntimeError):
    pass


class EnumerationCapError(RuntimeError):
    pass


class NonFiniteGradientError(FloatingPointError):
    pass


class DisconnectedLayoutError(ValueError):
    pass
