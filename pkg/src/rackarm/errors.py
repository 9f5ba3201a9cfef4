"""Exception types shared across the package."""


class RackArmError(Exception):
    """Base class for all package errors."""


class InvalidInputError(RackArmError):
    """An argument is non-finite, mis-sized, or out of its documented domain."""


class BoundViolationError(InvalidInputError):
    """A joint vector violates the hard rack limits.

    Carries the offending flat indices in ``indices``.
    """

    def __init__(self, message, indices=()):
        super().__init__(message)
        self.indices = tuple(int(i) for i in indices)


class NumericFaultError(RackArmError):
    """A non-finite value appeared mid-computation.

    ``where`` names the stage (e.g. network layer) that produced it.
    """

    def __init__(self, message, where=None):
        super().__init__(message)
        self.where = where


class UsageError(RackArmError):
    """API called out of order (e.g. backward before forward)."""


class InfeasiblePlanError(RackArmError):
    """The shape planner could not satisfy its hard constraints."""


class ConfigError(RackArmError):
    """Configuration file is malformed, has unknown keys, or fails invariants."""


class InternalFaultError(RackArmError):
    """An internal assertion failed (should never happen on valid input)."""
