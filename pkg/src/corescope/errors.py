"""Exception types raised across the toolkit."""


class CoreScopeError(Exception):
    """Base class for all domain errors."""


class GenerationFailed(CoreScopeError):
    def __init__(self, message: str, attempts: int):
        super().__init__(f"{message} (after {attempts} attempts)")
        self.attempts = attempts


class InconsistentTransitions(CoreScopeError):
    pass


class NoPath(CoreScopeError):
    pass


class Unschedulable(CoreScopeError):
    pass


class InapplicableMalfunction(CoreScopeError):
    pass


class InfeasibleFreeze(CoreScopeError):
    pass


class Infeasible(CoreScopeError):
    pass


class TooLarge(CoreScopeError):
    pass


class InvalidRange(CoreScopeError):
    pass


class EmptyAgenda(CoreScopeError):
    pass
