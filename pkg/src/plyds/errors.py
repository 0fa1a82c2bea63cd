"""Exception types shared across the toolkit."""


class PlydsError(Exception):
    """Base class for all toolkit errors."""


class InputError(PlydsError, ValueError):
    """Invalid argument: dimension mismatch, bad degree, unsupported kind."""


class ParseError(PlydsError, ValueError):
    """Malformed dataset file; carries path and (if known) line number."""

    def __init__(self, message, path=None, line=None):
        detail = message
        if path is not None:
            detail = f"{path}: {detail}"
        if line is not None:
            detail = f"{detail} (line {line})"
        super().__init__(detail)
        self.path = path
        self.line = line


class ValidationError(PlydsError, ValueError):
    """Dataset violates a trajectory assumption; names the offending demo."""

    def __init__(self, message, demo_index=None):
        if demo_index is not None:
            message = f"demonstration {demo_index}: {message}"
        super().__init__(message)
        self.demo_index = demo_index


class SolverError(PlydsError, RuntimeError):
    """Conic solver failed to converge to the requested accuracy."""


class InfeasibleError(SolverError):
    """Conic subproblem is infeasible; carries the violated constraint rows."""

    def __init__(self, message, rows=()):
        super().__init__(message)
        self.rows = tuple(rows)


class LearningError(PlydsError, RuntimeError):
    """No certified policy could be produced; carries a diagnostic."""
