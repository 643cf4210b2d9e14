"""Shared exception types.

Every operational failure carries a short machine-readable ``code`` (e.g.
``"not_found"``, ``"bad_transition"``) so callers and the HTTP layer can map
errors without parsing messages.
"""

from __future__ import annotations


class ZCurateError(Exception):
    """Base error with a stable string code."""

    def __init__(self, code: str, message: str | None = None):
        self.code = code
        super().__init__(message or code)


class StoreError(ZCurateError):
    pass


class ProfileError(ZCurateError):
    pass


class VectorError(ZCurateError):
    pass


class GraphError(ZCurateError):
    pass


class PairError(ZCurateError):
    pass


class PlanError(ZCurateError):
    pass


class CurationError(ZCurateError):
    pass


class ConfigError(ZCurateError):
    pass
