"""Exception types shared across the package.

Every error a caller might want to branch on carries a stable ``code``
string, so the CLI can map failures onto exit codes without string-matching
messages.
"""

from __future__ import annotations


class ZsladaError(Exception):
    """Base class for all package errors."""

    code = "ERROR"


class ConfigError(ZsladaError):
    """Invalid user-supplied configuration or specification."""

    code = "CONFIG"


class DataError(ZsladaError):
    """Dataset file or schema problem; ``code`` identifies the violation."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


class DimensionMismatch(ZsladaError):
    """Shape disagreement, annotated with the layer where it happened."""

    code = "DIM_MISMATCH"

    def __init__(self, layer: int, expected: int, got: int):
        super().__init__(
            f"layer {layer}: expected width {expected}, got {got}"
        )
        self.layer = layer
        self.expected = expected
        self.got = got


class StaleCache(ZsladaError):
    """Backward called with activations from a different forward pass."""

    code = "STALE_CACHE"


class NonFiniteGradient(ZsladaError):
    """Gradient contains NaN/Inf entries; names the offending slice."""

    code = "NONFINITE_GRAD"

    def __init__(self, where: str):
        super().__init__(f"non-finite gradient entries in {where}")
        self.where = where


class NumericalDivergence(ZsladaError):
    """Training produced a non-finite loss."""

    code = "DIVERGED"

    def __init__(self, message: str, iteration: int | None = None,
                 breakdown: dict | None = None):
        super().__init__(message)
        self.iteration = iteration
        self.breakdown = breakdown or {}


class UnknownClass(ZsladaError):
    """A class id is missing from the attribute table or split."""

    code = "UNKNOWN_CLASS"
