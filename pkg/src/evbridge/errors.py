"""Exception hierarchy shared by every evbridge module."""


class EvBridgeError(Exception):
    """Base class for all library errors."""


class DomainError(EvBridgeError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class DimensionError(EvBridgeError, ValueError):
    """Shapes of two operands disagree, or a shape is too small."""


class ValidationError(EvBridgeError, ValueError):
    """Input data violates a documented invariant."""


class UsageError(EvBridgeError, ValueError):
    """An operation was called in a way its contract forbids."""
