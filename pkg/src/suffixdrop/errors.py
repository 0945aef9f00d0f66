"""Exception types shared across the package."""


class SuffixdropError(Exception):
    """Base class for package errors."""


class ShapeError(SuffixdropError, ValueError):
    """Operand dimensions violate an operation's contract."""


class ConfigError(SuffixdropError, ValueError):
    """Invalid or contradictory configuration."""


class CacheError(SuffixdropError, ValueError):
    """Cached key/value state is inconsistent with the live input."""


class ReconcileError(SuffixdropError, ValueError):
    """A decode trace does not match the configuration a prediction models."""
