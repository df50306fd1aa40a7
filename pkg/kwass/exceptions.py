"""
Error types.

Every error raised on purpose by the library derives from KwassError and
carries the process exit code the CLI reports for it:

- 2: usage or configuration problems (bad scenario, mismatched inputs)
- 3: numerical failures (no root, capacity exceeded, NaN fields)
"""


class KwassError(Exception):
    """Base class; `detail` is the human-readable message."""

    exit_code = 3

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class ConfigError(KwassError):
    exit_code = 2


class StructuralError(KwassError):
    """A coupling refers to particles that do not exist."""

    exit_code = 2


class GridMismatchError(KwassError):
    """Measured series and bound curve are sampled on different times."""

    exit_code = 2


class CapacityError(KwassError):
    pass


class DomainError(KwassError):
    """An input lies outside the domain where a formula is defined."""


class NoRootError(DomainError):
    pass


class LipschitzViolation(DomainError):
    pass


class NumericalError(KwassError):
    pass
