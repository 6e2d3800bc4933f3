"""Error types shared across the engine."""

from __future__ import annotations


class HealthDialError(Exception):
    """Base class for all engine errors."""


class EditError(HealthDialError):
    """A rejected edit command. ``code`` is a stable machine-readable slug."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


class PlayError(HealthDialError):
    """A rejected playthrough operation."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


class ProviderError(HealthDialError):
    """The text-completion provider could not be reached or answered garbage."""


class InvalidStructuredOutputError(HealthDialError):
    """The provider never produced parseable structured output within the
    repair budget. Carries the full exchange audit trail."""

    def __init__(self, role: str, exchanges, message: str = ""):
        super().__init__(message or f"{role} output failed after all repair attempts")
        self.role = role
        self.exchanges = list(exchanges)


class EmptyDialogueError(InvalidStructuredOutputError):
    """The designer returned a document with no dialogue states."""


class NoNovelOptionsError(HealthDialError):
    """Every suggested response option duplicated an existing label."""

    def __init__(self, exchanges, message: str = "all suggestions duplicated existing option labels"):
        super().__init__(message)
        self.exchanges = list(exchanges)


class ParseFailure(HealthDialError):
    """Raised by the markup and plan parsers. ``errors`` is the full list of
    :class:`healthdial.markup.ParseError` found in one pass."""

    def __init__(self, errors):
        self.errors = list(errors)
        first = self.errors[0] if self.errors else None
        detail = f"{first.line}:{first.column} {first.message}" if first else "no errors?"
        super().__init__(f"{len(self.errors)} parse error(s); first: {detail}")


class SerializeError(HealthDialError):
    """Refusal to serialize a document containing invalid dialogues."""

    def __init__(self, message: str, defects=()):
        super().__init__(message)
        self.defects = list(defects)


class StoreError(HealthDialError):
    """Project store failure (missing project, corrupt files)."""
