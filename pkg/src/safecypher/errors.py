"""Exception hierarchy.

Every error carries an ``exit_code`` so the CLI can map failures onto its
stable exit-status contract (0 ok, 2 input, 3 store, 4 backend, 5 policy).
"""
from __future__ import annotations


class SafeCypherError(Exception):
    exit_code = 1


# -- input (2) ---------------------------------------------------------------

class InputError(SafeCypherError):
    exit_code = 2


class ParseError(InputError):
    """A document or data file could not be parsed.

    ``line`` and ``field`` locate the problem when known.
    """

    def __init__(self, message: str, *, line: int | None = None, field: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.line = line
        self.field = field


class EmptySchemaError(InputError):
    pass


class ReferentialIntegrityError(InputError):
    pass


class UnknownLabelError(InputError):
    pass


class AmbiguityError(InputError):
    """A surface form was mapped to two different canonicals."""

    def __init__(self, surface: str, first: str, second: str):
        super().__init__(f"synonym {surface!r} maps to both {first!r} and {second!r}")
        self.surface = surface
        self.canonicals = (first, second)


class AnnotationError(InputError):
    """Unbalanced or malformed ``[...]`` entity annotation."""


class NotAQueryError(InputError):
    pass


class EmptyEvalError(InputError):
    pass


# -- store (3) ---------------------------------------------------------------

class StoreError(SafeCypherError):
    exit_code = 3


class StoreUnavailableError(StoreError):
    pass


class ExecutionError(StoreError):
    """The store rejected or failed to run a statement."""


# -- backend (4) -------------------------------------------------------------

class BackendError(SafeCypherError):
    exit_code = 4


class TransportError(BackendError):
    pass


class BackendUnavailableError(TransportError):
    pass


class BackendTimeoutError(BackendUnavailableError):
    pass


class ConfigurationError(BackendError):
    pass


# -- policy (5) --------------------------------------------------------------

class PolicyError(SafeCypherError):
    exit_code = 5


class UnresolvedPlaceholderError(PolicyError):
    def __init__(self, placeholders):
        self.placeholders = sorted(set(placeholders))
        super().__init__("unresolved placeholder(s): " + ", ".join(self.placeholders))


class UnsafePositionError(PolicyError):
    """A placeholder occurs outside a string literal."""


class LeakError(PolicyError):
    """Outgoing text still contains a sensitive catalog value."""


class StrictValidationError(PolicyError):
    pass
