"""Exception types shared across the package."""

from __future__ import annotations


class InvalidArgument(ValueError):
    """An argument violates an operation's precondition."""


class ParseError(ValueError):
    """A binary input file does not follow its declared format."""

    def __init__(self, field: str, message: str) -> None:
        super().__init__(f"{message} (field: {field})")
        self.field = field


class ConfigError(ValueError):
    """A configuration key is unknown, mistyped or violates a constraint."""

    def __init__(self, key: str, message: str) -> None:
        super().__init__(f"{key}: {message}")
        self.key = key


class DivergedError(RuntimeError):
    """A model picked up non-finite values during training."""

    def __init__(self, step: int, detail: str = "") -> None:
        msg = f"non-finite model parameters at step {step}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.step = step
