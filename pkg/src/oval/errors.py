"""Exception hierarchy shared by all oval modules."""

from __future__ import annotations

from pathlib import Path


class OvalError(Exception):
    """Base class for fatal robot errors (reported, exit status 2)."""


class ParseError(OvalError):
    """An OvalFile could not be parsed."""

    def __init__(self, path: Path | str, line: int, message: str):
        self.path = Path(path)
        self.line = line
        self.message = message
        super().__init__(f"{path}:{line}: {message}")


class VersionError(OvalError):
    """The requested oval version cannot be dispatched to."""


class UnknownToolError(OvalError):
    """No adapter could be found for a tool name."""

    def __init__(self, name: str, probed: list[Path]):
        self.name = name
        self.probed = probed
        lines = "\n".join(f"  {p}" for p in probed)
        super().__init__(f"unknown tool {name!r}; probed:\n{lines}" if probed else f"unknown tool {name!r}")


class ValidateError(OvalError):
    """There is no log to register as a reference."""
