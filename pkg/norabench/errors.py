"""
Exception hierarchy for norabench.
Every library error derives from NoraError; input-shaped errors are also ValueErrors.
"""

from typing import Any, Dict, Optional


class NoraError(Exception):
    """Base class for all norabench errors."""


class ParseError(NoraError, ValueError):
    """Syntax error in a rule or story file."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.message = message
        self.line = line
        self.column = column


class ArityConflictError(ParseError):
    """The same predicate is used with two different arities."""

    def __init__(self, predicate: str, first: int, second: int, line: int, column: int):
        super().__init__(
            f"predicate '{predicate}' used with arity {second} but declared with arity {first}",
            line,
            column,
        )
        self.predicate = predicate


class CardinalityError(ParseError):
    """Cardinality fact with bounds or choices outside the supported shapes."""


class UnknownPredicateError(NoraError, ValueError):
    """A rule body mentions a predicate that nothing defines or declares."""


class StoryError(NoraError, ValueError):
    """A story violates its structural invariants."""


class RefinementOverflowError(NoraError):
    """The number of refinements exceeds the configured cap."""

    def __init__(self, count: int, cap: int):
        super().__init__(f"story has {count} refinements, cap is {cap}")
        self.count = count
        self.cap = cap


class InconsistentStoryError(NoraError):
    """The story has no answer set."""


class GoalNotDerivableError(NoraError):
    """A proof was requested for an atom outside the closure."""


class GenerationError(NoraError):
    """Story generation gave up after exhausting its attempt caps."""

    def __init__(self, message: str, stats: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.stats = stats or {}


class StitchError(NoraError):
    """Base class for stitching failures."""


class LemmaMismatchError(StitchError, ValueError):
    """The donor does not supply the lemma fact of the base."""


class RenamingCollisionError(StitchError, ValueError):
    """A renaming is not injective or merges entities outside the alignment points."""


class InconsistentStitchError(StitchError):
    """The united story has no answer set, or lost the base query."""


class LabelClosureError(NoraError):
    """A test split uses a label never seen in training."""

    def __init__(self, split: str, labels):
        labels = sorted(labels)
        super().__init__(f"split '{split}' has labels unseen in training: {', '.join(labels)}")
        self.split = split
        self.labels = labels


class DatasetIOError(NoraError, OSError):
    """Reading or writing a dataset file failed."""

    def __init__(self, message: str, path):
        super().__init__(f"{message}: {path}")
        self.path = str(path)


class ConfigError(NoraError, ValueError):
    """Invalid configuration."""
