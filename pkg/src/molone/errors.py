"""Exception hierarchy shared across the package."""


class MoloneError(Exception):
    """Base class for all package errors."""


class ContractError(MoloneError, ValueError):
    """An argument violates an operation's contract (shape, kind, count)."""


class DomainError(MoloneError, ValueError):
    """A design point lies outside the unit hypercube."""


class DataError(MoloneError, ValueError):
    """Training data is unusable (non-finite targets, empty directory)."""


class ConditioningError(MoloneError, RuntimeError):
    """Cholesky factorization failed even after jitter escalation."""


class InferenceError(MoloneError, RuntimeError):
    """Iterative inference (Laplace Newton solve) did not converge."""


class StateError(MoloneError, RuntimeError):
    """An operation was requested in a session phase that forbids it."""


class StalePairError(MoloneError, RuntimeError):
    """A choice referenced a pair id that is not the pending pair."""
