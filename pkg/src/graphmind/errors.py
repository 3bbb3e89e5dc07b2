"""Exception hierarchy shared by every graphmind module."""

from __future__ import annotations


class GraphMindError(Exception):
    """Base class for all errors raised by graphmind."""


# graph store


class EmptyText(GraphMindError, ValueError):
    pass


class KindMismatch(GraphMindError, ValueError):
    pass


class UnknownVertex(GraphMindError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its argument otherwise
        return str(self.args[0]) if self.args else "unknown vertex"


class CorruptSnapshot(GraphMindError):
    pass


# vector index


class UnknownNamespace(GraphMindError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "unknown namespace"


class EmptyIndex(GraphMindError):
    pass


# llm gateway


class UnknownTemplate(GraphMindError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "unknown template"


class UnboundPlaceholder(GraphMindError, ValueError):
    pass


class UnparsableBool(GraphMindError, ValueError):
    pass


class BackendUnreachable(GraphMindError):
    pass


class BackendError(GraphMindError):
    def __init__(self, status: int, message: str = "") -> None:
        super().__init__(f"backend returned status {status}: {message}".rstrip(": "))
        self.status = status


# configuration / input


class ConfigError(GraphMindError, ValueError):
    pass


class InvalidDocument(GraphMindError, ValueError):
    pass
