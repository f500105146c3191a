"""Exception hierarchy shared by every module of the engine."""


class BachelierError(Exception):
    """Base class for all engine errors."""


class DomainError(BachelierError, ValueError):
    """An argument lies outside the domain where the quantity is defined."""


class SingularityError(DomainError):
    """The requested formula is singular at the given arguments."""


class ConfigError(BachelierError, ValueError):
    """Invalid simulation, grid or run configuration."""


class ConsistencyError(BachelierError, ValueError):
    """Inputs that are supposed to satisfy an identity do not."""


class NumericalError(BachelierError, ArithmeticError):
    """A numerical routine failed to reach its tolerance."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})
