"""Exception types shared across the package."""
from __future__ import annotations


class SandtableError(Exception):
    """Base class for every error this package raises deliberately."""


class KindMismatch(SandtableError, TypeError):
    """Two property values of different kinds were compared."""


class UnknownSubject(SandtableError, KeyError):
    """A reference named a container, link, fact, rule, or goal that does not exist."""

    def __str__(self) -> str:  # KeyError quotes its arg; keep the plain message
        return Exception.__str__(self)


class ModelMismatch(SandtableError):
    """Two world states that do not belong to the same model were combined."""


class ModelValidationError(SandtableError):
    """An operation required a valid model and got one with violations."""

    def __init__(self, violations):
        self.violations = list(violations)
        lines = "; ".join(str(v) for v in self.violations[:5])
        more = "" if len(self.violations) <= 5 else f" (+{len(self.violations) - 5} more)"
        super().__init__(f"model failed validation: {lines}{more}")


class RuleNotEnabled(SandtableError):
    """A rule was fired at a site where its preconditions or run-once budget forbid it."""


class ClosureBudgetExceeded(SandtableError):
    """Automatic rules kept firing past the round budget; the rule set likely oscillates."""


class InvalidGoal(SandtableError):
    """The requested goal id is not declared by the model."""


class ReplayDivergence(SandtableError):
    """A recorded path no longer reproduces against the given model.

    ``step`` is the 1-based index of the first firing that failed;
    one past the last step means the terminal state hash did not match.
    """

    def __init__(self, step: int, reason: str):
        super().__init__(f"replay diverged at step {step}: {reason}")
        self.step = step
        self.reason = reason


class InvalidEdit(SandtableError):
    """A change-group edit could not be applied or broke model validity."""

    def __init__(self, group_id: str, reason: str):
        super().__init__(f"change group {group_id!r}: {reason}")
        self.group_id = group_id
        self.reason = reason


class NonUnknownTarget(SandtableError):
    """Extrapolation targeted a property whose value is already known."""


class EmptyFocus(SandtableError):
    """Spot extraction was asked for an empty focus set."""


class ParseError(SandtableError):
    """Input bytes were not syntactically parseable; carries a location string."""

    def __init__(self, location: str, message: str):
        super().__init__(f"{location}: {message}")
        self.location = location


class SchemaError(SandtableError):
    """A parsed document failed schema checks; carries the offending path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class StaleDiscrepancies(SandtableError):
    """A discrepancy report was applied to a model it was not computed against."""


class UnknownSession(SandtableError, KeyError):
    """No session with the given id exists."""

    def __str__(self) -> str:
        return Exception.__str__(self)


class PermissionDenied(SandtableError):
    """The acting role lacks the permission (or visibility) the action needs."""


class InvalidSequence(SandtableError):
    """An undo target did not name a valid point in the event log."""
