"""Exception types shared across the package."""


class PreconditionError(ValueError):
    """An operation was called with inputs violating its stated hypothesis."""


class DomainError(ValueError):
    """A parameter left the mathematical domain of a formula (e.g. eta >= 1)."""


class CertificationError(RuntimeError):
    """A soundness check that should hold by theorem failed numerically."""
