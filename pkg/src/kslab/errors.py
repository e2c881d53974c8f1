"""Exception types shared across the package."""


class UsageError(ValueError):
    """An operation was called with arguments outside its contract."""


class ConfigurationError(ValueError):
    """A required ingredient (derivative callable, preset, config field) is missing or invalid."""

    def __init__(self, message, field=None, line=None):
        super().__init__(message)
        self.field = field
        self.line = line


class SolverError(RuntimeError):
    """A numerical solver failed (instability, weight collapse)."""

    def __init__(self, message, path_index=None, diagnostics=None):
        super().__init__(message)
        self.path_index = path_index
        self.diagnostics = diagnostics or {}
