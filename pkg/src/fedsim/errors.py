"""Exception types shared across the simulator."""


class DimensionMismatchError(ValueError):
    """Raised when vector or feature dimensions disagree."""


class ConfigError(ValueError):
    """Raised for invalid experiment configuration (maps to CLI exit code 1)."""


class DiagnosticError(RuntimeError):
    """Raised when a runtime theory check fails (maps to CLI exit code 2).

    A diagnostic failure means either an implementation bug (a step bound or
    reconstruction identity that should hold exactly was violated) or a run
    that produced non-finite numbers.
    """
