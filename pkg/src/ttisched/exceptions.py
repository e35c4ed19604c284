"""Exception hierarchy shared by the scheduling modules."""


class TTISchedError(Exception):
    """Base class for all library errors."""


class InvalidInputError(TTISchedError, ValueError):
    """An argument violates an operation's precondition."""


class ConstraintViolationError(TTISchedError, ValueError):
    """A schedule decision breaks one or more feasibility constraints."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


class NotFlatError(InvalidInputError):
    """The flat-channel solver was handed an instance with heterogeneous CSI."""


class BudgetExceededError(TTISchedError, RuntimeError):
    """An exact search would exceed its configured work budget."""


class NotReducibleError(InvalidInputError):
    """A Partition multiset with an odd sum cannot be mapped to a scheduling instance."""
