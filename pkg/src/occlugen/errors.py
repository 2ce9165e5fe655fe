"""Exception types shared across the package.

The split mirrors the CLI exit-code contract: configuration and input
validation problems are reported before any work starts, runtime failures
happen mid-generation.
"""

from __future__ import annotations

__all__ = ["OcclugenError", "InputError", "ConfigError", "GenerationError"]


class OcclugenError(Exception):
    """Base class for all package-specific errors."""


class InputError(OcclugenError):
    """A function received arguments that violate its preconditions."""


class ConfigError(OcclugenError):
    """A run configuration failed validation.

    Carries every violation found, not just the first one.
    """

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class GenerationError(OcclugenError):
    """A sample or run could not be produced at runtime."""
