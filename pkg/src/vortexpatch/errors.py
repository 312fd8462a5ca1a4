"""Typed failures. Every error carries a stable machine-readable ``code``."""

from __future__ import annotations


class PatchError(Exception):
    """Base class; ``code`` is what the CLI writes into its error field."""

    code = "ERROR"

    def __init__(self, code: str | None = None, message: str = "") -> None:
        if code is not None:
            self.code = code
        self.message = message
        super().__init__(f"{self.code}: {message}" if message else self.code)


class ParameterError(PatchError):
    """Parameters outside the admissible window (DOMAIN, B_TOO_LARGE, PARAM_WINDOW, ...)."""

    code = "PARAM_WINDOW"


class NestingError(PatchError):
    """Boundary curves cross, touch the origin, or a point sits on a boundary."""

    code = "NESTING_VIOLATION"


class QuadratureError(PatchError):
    code = "QUADRATURE_UNDERRESOLVED"


class SolverError(PatchError):
    """Newton / Nash-Moser failure (NO_CONVERGENCE, SINGULAR_JACOBIAN, T_S_SINGULAR)."""

    code = "NO_CONVERGENCE"
