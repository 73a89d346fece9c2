"""Exception types raised across the package."""

from __future__ import annotations


class MapParseError(ValueError):
    """A map document could not be parsed."""

    def __init__(self, message: str, *, line: int, column: int) -> None:
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class UnreachableError(ValueError):
    """No obstacle-free path connects the requested cells."""


class ConfigurationError(ValueError):
    """A configuration value is invalid or cannot be satisfied."""


class ContractViolation(RuntimeError):
    """A numeric-substrate contract was broken by the caller."""
